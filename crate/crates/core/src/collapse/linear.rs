//! Linear manifold (φ(y) = y): closed forms for the collapse time.
//!
//! For φ linear, P_t^+ is Gaussian and the collapse condition reduces to
//! α = ½·(1/d)log det(η_t FFᵀ/p + I_d). The functions in this file take the
//! latent variance to be 1, as the closed forms do.

use nalgebra::DMatrix;

use super::{solve_time, CollapseMethod, CollapseResult, TimeBracket};
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::model::{Activation, ManifoldModel};

fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(
            "alpha",
            format!("must be positive, got {alpha}"),
        ));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::param(
            "beta",
            format!("must lie in (0, 1], got {beta}"),
        ));
    }
    Ok(())
}

/// (1/d) log det(η FFᵀ/p + I_d) = β log(1 + η) when FᵀF/p = I_p.
pub fn logdet_isometry(eta: f64, beta: f64) -> f64 {
    beta * eta.ln_1p()
}

/// t_C = ½ log(1 + (e^{2α/β} − 1)^{-1}) for an isometric embedding.
pub fn collapse_time_linear_isometry(alpha: f64, beta: f64) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    let em1 = (2.0 * alpha / beta).exp_m1();
    Ok(0.5 * (1.0 / em1).ln_1p())
}

pub fn collapse_result_linear_isometry(alpha: f64, beta: f64) -> Result<CollapseResult> {
    let t_c = collapse_time_linear_isometry(alpha, beta)?;
    let eta = DiffusionSchedule::at(t_c).eta();
    Ok(CollapseResult {
        t_c,
        method: CollapseMethod::LinearIsometryClosedForm,
        residual: alpha - 0.5 * logdet_isometry(eta, beta),
    })
}

/// Marchenko–Pastur auxiliary function
/// h(x, z) = (√(x(1+√z)² + 1) − √(x(1−√z)² + 1))².
pub fn mp_h(x: f64, z: f64) -> f64 {
    let r = z.sqrt();
    let hi = (x * (1.0 + r).powi(2) + 1.0).sqrt();
    let lo = (x * (1.0 - r).powi(2) + 1.0).sqrt();
    (hi - lo).powi(2)
}

/// Large-d limit of (1/d) log det(η FFᵀ/p + I_d) for F with i.i.d. N(0,1)
/// entries and p/d = β.
pub fn mp_logdet(eta: f64, beta: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    let hh = mp_h(eta / beta, beta);
    beta * (1.0 + eta / beta - 0.25 * hh).ln() + (1.0 + eta - 0.25 * hh).ln()
        - beta / (4.0 * eta) * hh
}

/// Solves α = ½ mp_logdet(η_t, β) for t.
pub fn collapse_time_linear_rmt(alpha: f64, beta: f64) -> Result<CollapseResult> {
    check_alpha_beta(alpha, beta)?;
    let residual = |t: f64| alpha - 0.5 * mp_logdet(DiffusionSchedule::at(t).eta(), beta);
    let (t_c, res) = solve_time(residual, TimeBracket::default(), 1e-12)?;
    Ok(CollapseResult {
        t_c,
        method: CollapseMethod::LinearRmt,
        residual: res,
    })
}

/// Exact (1/d) log det(η FFᵀ/p + I_d) for an explicit F, through the p×p
/// identity det(I_d + c FFᵀ) = det(I_p + c FᵀF).
pub fn logdet_exact(model: &ManifoldModel, eta: f64) -> Result<f64> {
    let gram = model.embedding().gram();
    let p = gram.nrows();
    let m = DMatrix::<f64>::identity(p, p) + gram * eta;
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Solver("log-determinant: matrix not positive definite".into()))?;
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(logdet / model.d() as f64)
}

/// (1/d) E_{x∼P_t^+} log P_t^+(x) for a linear model, in closed form:
/// P_t^+ = N(a_t Fμ/√p, a_t²ρ FFᵀ/p + h_t I_d), hence
/// −½log(2π) − ½(1/d)log det Σ − ½.
pub fn linear_free_energy_exact(model: &ManifoldModel, t: f64) -> Result<f64> {
    if !model.activation().is_linear() {
        return Err(Error::Unsupported(
            "exact free energy needs a linear activation".into(),
        ));
    }
    if !(t > 0.0) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let s = DiffusionSchedule::at(t);
    let ld = logdet_exact(model, s.eta() * model.rho())? + s.h.ln();
    Ok(-0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * ld - 0.5)
}

/// Same quantity from the limiting spectrum (ρ = 1 for the Marchenko–Pastur
/// and isometric closed forms).
pub fn linear_free_energy_limit(t: f64, beta: f64, isometric: bool) -> f64 {
    let s = DiffusionSchedule::at(t);
    let ld = if isometric {
        logdet_isometry(s.eta(), beta)
    } else {
        mp_logdet(s.eta(), beta)
    };
    -0.5 * (2.0 * std::f64::consts::PI * s.h).ln() - 0.5 * ld - 0.5
}

pub(crate) fn require_linear(activation: &Activation) -> Result<()> {
    if activation.is_linear() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "closed form needs a linear activation, got {}",
            activation.name()
        )))
    }
}
