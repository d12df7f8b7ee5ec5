//! Gauss–Hermite rules for expectations under a standard normal.
//!
//! Rules are normalized so that `Σ w_i f(u_i) ≈ E[f(u)]` with `u ~ N(0, 1)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("node_count", "must be at least 1"));
        }
        let (nodes, weights) = probabilists_rule(n)?;
        Ok(Self { nodes, weights })
    }

    /// Shared rule of size n, built once per process.
    pub fn cached(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&n) {
            return Ok(rule.clone());
        }
        let rule = Arc::new(Self::new(n)?);
        cache
            .lock()
            .expect("quadrature cache poisoned")
            .insert(n, rule.clone());
        Ok(rule)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E[f(u)]` for `u ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(u, w)| w * f(u)).sum()
    }
}

/// Nodes from the eigenvalues of the Jacobi matrix (Golub–Welsch), then one
/// or two Newton steps on the orthonormal recurrence to polish nodes and get
/// weights to full relative precision.
fn probabilists_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let mut x: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    x.sort_by(f64::total_cmp);
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for (xi, wi) in x.iter_mut().zip(w.iter_mut()) {
        let mut converged = false;
        for _ in 0..8 {
            let (pn, pn1, log_scale) = orthonormal_pair(n, *xi);
            let step = pn / (nf.sqrt() * pn1);
            *xi -= step;
            *wi = (-nf.ln() - 2.0 * (pn1.abs().ln() + log_scale)).exp();
            if step.abs() <= 1e-15 * xi.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged || !xi.is_finite() {
            return Err(Error::Quadrature(format!(
                "Hermite node near {xi} of {n} did not converge"
            )));
        }
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    // symmetrize against rounding
    for i in 0..n / 2 {
        let (a, b) = (x[n - 1 - i], -x[i]);
        x[n - 1 - i] = 0.5 * (a + b);
        x[i] = -x[n - 1 - i];
        let wm = 0.5 * (w[i] + w[n - 1 - i]);
        w[i] = wm;
        w[n - 1 - i] = wm;
    }
    Ok((x, w))
}

/// (p_n(x), p_{n-1}(x), s) for the orthonormal probabilists' Hermite
/// polynomials, with both values scaled by e^{-s} to avoid overflow.
fn orthonormal_pair(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut log_scale = 0.0;
    for j in 0..n {
        let jf = j as f64;
        let next = (x * cur - jf.sqrt() * prev) / (jf + 1.0).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= 1e-150;
            prev *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    (cur, prev, log_scale)
}
