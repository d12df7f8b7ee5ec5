use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// Entries i.i.d. N(0, 1).
    #[serde(alias = "gaussian")]
    GaussianIid,
    /// Orthogonal columns of squared norm p, so that FᵀF/p = I_p.
    #[serde(alias = "isometry")]
    DeterministicIsometry,
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ensemble::GaussianIid => "gaussian_iid",
            Ensemble::DeterministicIsometry => "deterministic_isometry",
        })
    }
}

impl FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian_iid" | "gaussian" | "iid" => Ok(Ensemble::GaussianIid),
            "deterministic_isometry" | "isometry" | "isometric" => {
                Ok(Ensemble::DeterministicIsometry)
            }
            other => Err(Error::param(
                "ensemble",
                format!("unknown ensemble `{other}` (expected gaussian_iid or isometry)"),
            )),
        }
    }
}

/// The d×p matrix F mapping latent coordinates into ambient space.
///
/// Stored row-major so that row `f_j` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    d: usize,
    p: usize,
    ensemble: Ensemble,
    entries: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Builds F for the requested ensemble. The isometry is obtained by a QR
    /// factorization of a seeded Gaussian d×p matrix with columns rescaled to
    /// norm √p.
    pub fn build(d: usize, p: usize, ensemble: Ensemble, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(Error::param("p", "manifold dimension must be at least 1"));
        }
        if p > d {
            return Err(Error::param(
                "p",
                format!("manifold dimension {p} exceeds ambient dimension {d}"),
            ));
        }
        let mut rng = rng::stream(seed, domain::EMBEDDING);
        let mut entries = vec![0.0; d * p];
        rng::fill_normal(&mut rng, &mut entries);
        if ensemble == Ensemble::DeterministicIsometry {
            let g = DMatrix::from_row_slice(d, p, &entries);
            let q = g.qr().q();
            let scale = (p as f64).sqrt();
            for j in 0..d {
                for l in 0..p {
                    entries[j * p + l] = q[(j, l)] * scale;
                }
            }
        }
        Ok(Self {
            d,
            p,
            ensemble,
            entries,
        })
    }

    /// Wraps an explicit row-major d×p matrix.
    pub fn from_row_major(
        d: usize,
        p: usize,
        ensemble: Ensemble,
        entries: Vec<f64>,
    ) -> Result<Self> {
        if p == 0 || p > d {
            return Err(Error::param(
                "p",
                format!("need 1 <= p <= d, got p = {p}, d = {d}"),
            ));
        }
        if entries.len() != d * p {
            return Err(Error::param(
                "entries",
                format!("expected {} values, got {}", d * p, entries.len()),
            ));
        }
        Ok(Self {
            d,
            p,
            ensemble,
            entries,
        })
    }

    /// F = √p · [I_p; 0], the identity embedding scaled so that FᵀF/p = I_p.
    pub fn scaled_identity(d: usize, p: usize) -> Result<Self> {
        let mut entries = vec![0.0; d * p];
        let s = (p as f64).sqrt();
        for l in 0..p.min(d) {
            entries[l * p + l] = s;
        }
        Self::from_row_major(d, p, Ensemble::DeterministicIsometry, entries)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn ensemble(&self) -> Ensemble {
        self.ensemble
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.p..(j + 1) * self.p]
    }

    /// θ_{jl} = f_jᵀ f_l / p.
    pub fn theta(&self, j: usize, l: usize) -> f64 {
        dot(self.row(j), self.row(l)) / self.p as f64
    }

    /// Writes F ξ / √p into `out` (length d).
    pub fn project_into(&self, xi: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (self.p as f64).sqrt();
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(j), xi) * inv;
        }
    }

    pub fn project(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.project_into(xi, &mut out);
        out
    }

    /// Fᵀ v / √p for an ambient vector v.
    pub fn project_back(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (j, &vj) in v.iter().enumerate() {
            for (o, &f) in out.iter_mut().zip(self.row(j)) {
                *o += f * vj;
            }
        }
        let inv = 1.0 / (self.p as f64).sqrt();
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.p, &self.entries)
    }

    /// FᵀF / p.
    pub fn gram(&self) -> DMatrix<f64> {
        let f = self.to_dmatrix();
        f.transpose() * &f / self.p as f64
    }

    /// F Fᵀ / p.
    pub fn outer_gram(&self) -> DMatrix<f64> {
        let f = self.to_dmatrix();
        &f * f.transpose() / self.p as f64
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
