//! Ψ(q): expected log-evidence of the scalar Gaussian channel
//!
//! ```text
//! Y₀ = a_t φ(√q V + √(m²+ρ−q) W) + √h_t Z,    V, W, Z ~ N(0,1),
//! Ψ(q) = E_{V,Y₀} log ∫ Dw N(Y₀; a_t φ(√q V + √(m²+ρ−q) w), h_t).
//! ```
//!
//! Given V, Y₀ is distributed with exactly the density inside the log, so
//! Ψ(q) = E_V ∫ p(y|V) log p(y|V) dy is minus an averaged entropy. The default
//! route evaluates that entropy on a y-grid; a literal nested Gauss–Hermite
//! route is kept as an independent check.

use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::model::Activation;
use crate::quadrature::GaussHermite;
use crate::stats::log_sum_exp;

/// Resolution of the entropy-grid route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiOptions {
    /// Gauss–Hermite nodes over V.
    pub v_nodes: usize,
    /// Divides both the w-atom spacing and the y-grid spacing.
    pub refine: f64,
    /// Half-width of the w-grid in standard deviations.
    pub w_range: f64,
}

impl Default for PsiOptions {
    fn default() -> Self {
        Self {
            v_nodes: 40,
            refine: 1.0,
            w_range: 7.5,
        }
    }
}

impl PsiOptions {
    /// Twice the resolution in every direction.
    pub fn doubled(&self) -> Self {
        Self {
            v_nodes: 2 * self.v_nodes,
            refine: 2.0 * self.refine,
            w_range: self.w_range,
        }
    }
}

/// Sizes of the literal nested route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NestedOptions {
    pub outer_nodes: usize,
    pub inner_nodes: usize,
}

impl Default for NestedOptions {
    fn default() -> Self {
        Self {
            outer_nodes: 24,
            inner_nodes: 96,
        }
    }
}

/// Channel parameters shared by both routes.
#[derive(Debug, Clone)]
pub struct Channel<'a> {
    pub t: f64,
    pub m: f64,
    pub rho: f64,
    pub activation: &'a Activation,
}

impl Channel<'_> {
    fn total(&self) -> f64 {
        self.m * self.m + self.rho
    }

    fn check(&self, q: f64) -> Result<DiffusionSchedule> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::param(
                "t",
                format!("must be positive, got {}", self.t),
            ));
        }
        let total = self.total();
        if !(q >= 0.0 && q <= total * (1.0 + 1e-12)) {
            return Err(Error::param(
                "q",
                format!("must lie in [0, {total}], got {q}"),
            ));
        }
        Ok(DiffusionSchedule::at(self.t))
    }
}

/// Closed form for φ(y) = y: −½ − ½log(2π(a_t²(m²+ρ−q) + h_t)).
pub fn psi_big_linear(q: f64, t: f64, m: f64, rho: f64) -> f64 {
    let s = DiffusionSchedule::at(t);
    let var = s.a * s.a * (m * m + rho - q).max(0.0) + s.h;
    -0.5 - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

/// Entropy-grid evaluation of Ψ(q).
pub fn psi_big(q: f64, ch: &Channel<'_>, opts: &PsiOptions) -> Result<f64> {
    let sched = ch.check(q)?;
    let rule = GaussHermite::cached(opts.v_nodes)?;
    let spread = (ch.total() - q).max(0.0).sqrt();
    let sq = q.sqrt();
    let mut scratch = Scratch::default();
    let mut acc = 0.0;
    for (v, wv) in rule.iter() {
        let neg_entropy = scratch.neg_entropy(sq * v, spread, sched, ch.activation, opts)?;
        acc += wv * neg_entropy;
    }
    Ok(acc)
}

#[derive(Default)]
struct Scratch {
    atoms: Vec<(f64, f64)>,
    u: Vec<f64>,
    pi: Vec<f64>,
}

impl Scratch {
    /// ∫ p log p for p(y) = Σ_k π_k N(y; a φ(c + s w_k), h), the w_k being a
    /// uniform grid carrying normalized Gaussian weights.
    ///
    /// Atoms sit at most 0.8√h apart and the y-grid has the same spacing; for
    /// Gaussian kernels both discretizations then err by about e^{-2π²/0.64}.
    fn neg_entropy(
        &mut self,
        c: f64,
        s: f64,
        sched: DiffusionSchedule,
        act: &Activation,
        opts: &PsiOptions,
    ) -> Result<f64> {
        let (a, h) = (sched.a, sched.h);
        let sd = h.sqrt();
        self.atoms.clear();
        let slope = a * s * act.lipschitz();
        if slope * opts.w_range < 1e-3 * sd {
            // the channel output does not depend on w to visible precision
            self.atoms.push((a * act.eval(c), 1.0));
        } else {
            let kink = if act.is_smooth() { 1.0 } else { 4.0 };
            let dw = (0.25f64).min(0.8 * sd / slope) / (opts.refine * kink);
            let half = (opts.w_range / dw).ceil() as usize;
            if half > 2_000_000 {
                return Err(Error::Quadrature(format!(
                    "w-grid of {} atoms is too fine (t = {})",
                    2 * half + 1,
                    sched.t
                )));
            }
            let mut total = 0.0;
            for k in 0..=2 * half {
                let w = (k as f64 - half as f64) * dw;
                let pk = (-0.5 * w * w).exp();
                total += pk;
                self.atoms.push((a * act.eval(c + s * w), pk));
            }
            self.atoms.iter_mut().for_each(|at| at.1 /= total);
            self.atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        }
        self.u.clear();
        self.pi.clear();
        self.u.extend(self.atoms.iter().map(|a| a.0));
        self.pi.extend(self.atoms.iter().map(|a| a.1));

        let reach = 9.0 * sd;
        let lo = self.u[0] - reach;
        let hi = self.u[self.u.len() - 1] + reach;
        let dy = 0.8 * sd / opts.refine;
        let ny = ((hi - lo) / dy).ceil() as usize + 1;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * h).sqrt();
        let inv2h = 1.0 / (2.0 * h);
        let mut acc = 0.0;
        for i in 0..ny {
            let y = lo + i as f64 * dy;
            let start = self.u.partition_point(|&u| u < y - reach);
            let end = self.u.partition_point(|&u| u <= y + reach);
            let mut p = 0.0;
            for k in start..end {
                let d = y - self.u[k];
                p += self.pi[k] * (-d * d * inv2h).exp();
            }
            p *= norm;
            if p > 0.0 {
                acc += p * p.ln();
            }
        }
        Ok(acc * dy)
    }
}

/// Literal nested quadrature: tensor Gauss–Hermite over (V, W, Z) outside,
/// log-space Gauss–Hermite over w inside. Accurate only while h_t is not
/// small (the inner integrand sharpens as t → 0).
pub fn psi_big_nested(q: f64, ch: &Channel<'_>, opts: &NestedOptions) -> Result<f64> {
    let sched = ch.check(q)?;
    let outer = GaussHermite::cached(opts.outer_nodes)?;
    let inner = GaussHermite::cached(opts.inner_nodes)?;
    let (a, h) = (sched.a, sched.h);
    let sd = h.sqrt();
    let spread = (ch.total() - q).max(0.0).sqrt();
    let sq = q.sqrt();
    let log_w: Vec<f64> = inner.weights().iter().map(|w| w.ln()).collect();
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * h).ln();
    let mut terms = vec![0.0; inner.len()];
    let mut acc = 0.0;
    for (v, wv) in outer.iter() {
        let c = sq * v;
        let channel: Vec<f64> = inner
            .nodes()
            .iter()
            .map(|&w| a * ch.activation.eval(c + spread * w))
            .collect();
        for (wn, ww) in outer.iter() {
            let signal = a * ch.activation.eval(c + spread * wn);
            for (z, wz) in outer.iter() {
                let y0 = signal + sd * z;
                for ((tk, &uk), &lw) in terms.iter_mut().zip(&channel).zip(&log_w) {
                    let d = y0 - uk;
                    *tk = lw - d * d / (2.0 * h);
                }
                acc += wv * ww * wz * (log_sum_exp(&terms) + log_norm);
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(t: f64, act: &Activation) -> Channel<'_> {
        Channel {
            t,
            m: 1.0,
            rho: 1.0,
            activation: act,
        }
    }

    #[test]
    fn linear_matches_closed_form() {
        let act = Activation::Linear;
        for &t in &[0.02, 0.1, 0.5, 2.0] {
            for &q in &[0.0, 0.3, 1.0, 1.7, 2.0] {
                let v = psi_big(q, &ch(t, &act), &PsiOptions::default()).unwrap();
                let e = psi_big_linear(q, t, 1.0, 1.0);
                assert!((v - e).abs() < 1e-6, "t={t} q={q}: {v} vs {e}");
            }
        }
    }

    #[test]
    fn endpoint_is_pure_noise_entropy() {
        let t = 0.4;
        let h = DiffusionSchedule::at(t).h;
        let v = psi_big(2.0, &ch(t, &Activation::Tanh), &PsiOptions::default()).unwrap();
        let e = -0.5 - 0.5 * (2.0 * std::f64::consts::PI * h).ln();
        assert!((v - e).abs() < 1e-9);
    }

    #[test]
    fn nested_route_agrees_at_moderate_time() {
        let act = Activation::Tanh;
        let c = ch(0.8, &act);
        let a = psi_big(0.5, &c, &PsiOptions::default()).unwrap();
        let b = psi_big_nested(0.5, &c, &NestedOptions::default()).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    #[test]
    fn rejects_out_of_range_overlap() {
        let act = Activation::Linear;
        assert!(psi_big(2.5, &ch(0.5, &act), &PsiOptions::default()).is_err());
        assert!(psi_big(-0.1, &ch(0.5, &act), &PsiOptions::default()).is_err());
        assert!(psi_big(0.5, &ch(0.0, &act), &PsiOptions::default()).is_err());
    }
}
