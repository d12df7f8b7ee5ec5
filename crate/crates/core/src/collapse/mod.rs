//! Collapse: the time below which the planted training sample dominates the
//! empirical partition function.
//!
//! The collapse condition is α + ½log(2πh_t) + β f*(t) = −½, where f*(t) is
//! the replica-symmetric free energy of the generalized linear model
//! x = a_t φ(Fξ/√p) + √h_t z with prior ξ ~ N(m1_p, ρI_p):
//!
//! ```text
//! f*(t) = sup_{q ∈ [0, m²+ρ]} inf_{r ≥ 0} ψ(r) + β⁻¹Ψ(q) − rq/2.
//! ```

mod channel;
mod linear;

use serde::Serialize;

pub use channel::{
    psi_big as psi_big_grid, psi_big_linear, psi_big_nested, Channel, NestedOptions, PsiOptions,
};
pub use linear::{
    collapse_result_linear_isometry, collapse_time_linear_isometry, collapse_time_linear_rmt,
    linear_free_energy_exact, linear_free_energy_limit, logdet_exact, logdet_isometry, mp_h,
    mp_logdet,
};

use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::model::{Activation, Ensemble, ManifoldModel};
use crate::quadrature::GaussHermite;
use crate::scalar::{brent, expand_positive_bracket, golden_section_max};
use crate::stats::log_sum_exp;

/// ψ(r) = r(m²+ρ)/2 − ½log(1+rρ).
pub fn psi(r: f64, m: f64, rho: f64) -> f64 {
    0.5 * r * (m * m + rho) - 0.5 * (r * rho).ln_1p()
}

/// dψ/dr = (m²+ρ)/2 − ρ/(2(1+rρ)); strictly increasing in r.
pub fn psi_derivative(r: f64, m: f64, rho: f64) -> f64 {
    0.5 * (m * m + rho) - 0.5 * rho / (1.0 + r * rho)
}

/// ψ(r) from its integral definition
/// E_{X₀,Z₀} log ∫ dw N(w; m, ρ) e^{r w X₀ + √r w Z₀ − r w²/2},
/// X₀ ~ N(m, ρ), Z₀ ~ N(0, 1), by Gauss–Hermite in all three variables. The
/// inner rule is centered and scaled on the w-integrand's Gaussian envelope.
pub fn psi_quadrature_check(r: f64, m: f64, rho: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::param("r", format!("must be non-negative, got {r}")));
    }
    if !(rho > 0.0) {
        return Err(Error::param("rho", format!("must be positive, got {rho}")));
    }
    let outer = GaussHermite::cached(16)?;
    let inner = GaussHermite::cached(32)?;
    let precision = 1.0 / rho + r;
    let sigma = precision.sqrt().recip();
    let log_prior_norm = -0.5 * (2.0 * std::f64::consts::PI * rho).ln();
    let log_scale = (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let sr = r.sqrt();
    let mut terms = vec![0.0; inner.len()];
    let mut acc = 0.0;
    for (x, wx) in outer.iter() {
        let x0 = m + rho.sqrt() * x;
        for (z0, wz) in outer.iter() {
            let b = r * x0 + sr * z0;
            let center = (m / rho + b) / precision;
            for (tk, (u, wu)) in terms.iter_mut().zip(inner.iter()) {
                let w = center + sigma * u;
                let g = log_prior_norm - (w - m).powi(2) / (2.0 * rho) + b * w - 0.5 * r * w * w;
                *tk = wu.ln() + g + 0.5 * u * u;
            }
            acc += wx * wz * (log_scale + log_sum_exp(&terms));
        }
    }
    Ok(acc)
}

/// How Ψ(q) is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiMethod {
    /// Exact for φ(y) = y.
    LinearClosedForm,
    /// Entropy-grid quadrature (default for nonlinear φ).
    Grid(PsiOptions),
    /// Literal nested Gauss–Hermite.
    Nested(NestedOptions),
}

impl PsiMethod {
    pub fn default_for(activation: &Activation) -> Self {
        if activation.is_linear() {
            PsiMethod::LinearClosedForm
        } else {
            PsiMethod::Grid(PsiOptions::default())
        }
    }
}

/// Ψ(q) with default resolution.
pub fn psi_big(q: f64, t: f64, m: f64, rho: f64, activation: &Activation) -> Result<f64> {
    channel::psi_big(
        q,
        &Channel {
            t,
            m,
            rho,
            activation,
        },
        &PsiOptions::default(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyResult {
    pub t: f64,
    pub q_star: f64,
    pub r_star: f64,
    pub f_star: f64,
    /// Set when the maximizing overlap sits on an end of [0, m²+ρ).
    pub boundary: Option<Boundary>,
    pub refinement_rounds: usize,
    /// ∂f_RS/∂q at the optimum (finite difference of Ψ).
    pub stationarity_q: f64,
    /// ∂f_RS/∂r at the optimum.
    pub stationarity_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseMethod {
    GlmGeneral,
    LinearIsometryClosedForm,
    LinearRmt,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseResult {
    pub t_c: f64,
    pub method: CollapseMethod,
    /// Collapse condition evaluated at t_c.
    pub residual: f64,
}

/// Initial search interval for t_C and the limits it may be widened to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeBracket {
    pub lo: f64,
    pub hi: f64,
    pub min_lo: f64,
    pub max_hi: f64,
}

impl Default for TimeBracket {
    fn default() -> Self {
        Self {
            lo: 1e-3,
            hi: 5.0,
            min_lo: 1e-6,
            max_hi: 20.0,
        }
    }
}

/// Root of `residual` in t with geometric bracket expansion; returns the root
/// and the residual there.
pub(crate) fn solve_time<F: FnMut(f64) -> f64>(
    mut residual: F,
    bracket: TimeBracket,
    xtol: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = expand_positive_bracket(
        &mut residual,
        bracket.lo,
        bracket.hi,
        bracket.min_lo,
        bracket.max_hi,
        10.0,
    )
    .ok_or(Error::NoCollapseTime {
        lo: bracket.min_lo,
        hi: bracket.max_hi,
    })?;
    let root = brent(&mut residual, lo, hi, xtol)?;
    Ok((root.x, root.fx))
}

const Q_GRID: usize = 64;
const Q_REFINE: usize = 16;
const Q_ROUNDS: usize = 2;

/// Replica-symmetric GLM free energy at given (β, m, ρ, φ).
#[derive(Debug, Clone)]
pub struct GlmFreeEnergy {
    pub beta: f64,
    pub m: f64,
    pub rho: f64,
    pub activation: Activation,
    pub method: PsiMethod,
}

impl GlmFreeEnergy {
    pub fn new(beta: f64, m: f64, rho: f64, activation: Activation) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::param(
                "beta",
                format!("must lie in (0, 1], got {beta}"),
            ));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("must be positive, got {rho}")));
        }
        if !m.is_finite() {
            return Err(Error::param("m", "must be finite"));
        }
        let method = PsiMethod::default_for(&activation);
        Ok(Self {
            beta,
            m,
            rho,
            activation,
            method,
        })
    }

    /// Uses the model's β, m = ‖μ‖/√p, ρ and φ. The replica formula assumes
    /// F with i.i.d. Gaussian entries, so isometric embeddings are refused.
    pub fn from_model(model: &ManifoldModel) -> Result<Self> {
        if model.ensemble() != Ensemble::GaussianIid {
            return Err(Error::Unsupported(format!(
                "the replica free energy assumes F with i.i.d. Gaussian entries, got {}",
                model.ensemble()
            )));
        }
        Self::new(
            model.beta(),
            model.m(),
            model.rho(),
            model.activation().clone(),
        )
    }

    pub fn with_method(mut self, method: PsiMethod) -> Self {
        self.method = method;
        self
    }

    /// Upper end m² + ρ of the overlap interval.
    pub fn q_max(&self) -> f64 {
        self.m * self.m + self.rho
    }

    pub fn psi_big(&self, q: f64, t: f64) -> Result<f64> {
        let ch = Channel {
            t,
            m: self.m,
            rho: self.rho,
            activation: &self.activation,
        };
        match self.method {
            PsiMethod::LinearClosedForm => {
                linear::require_linear(&self.activation)?;
                if !(t > 0.0) {
                    return Err(Error::param("t", format!("must be positive, got {t}")));
                }
                Ok(psi_big_linear(q, t, self.m, self.rho))
            }
            PsiMethod::Grid(opts) => channel::psi_big(q, &ch, &opts),
            PsiMethod::Nested(opts) => psi_big_nested(q, &ch, &opts),
        }
    }

    pub fn f_rs(&self, q: f64, r: f64, t: f64) -> Result<f64> {
        Ok(psi(r, self.m, self.rho) + self.psi_big(q, t)? / self.beta - 0.5 * r * q)
    }

    /// argmin over r ≥ 0 of ψ(r) − rq/2, by a bracketed root solve of the
    /// monotone stationarity condition dψ/dr = q/2.
    pub fn inner_r(&self, q: f64) -> Result<f64> {
        let g = |r: f64| psi_derivative(r, self.m, self.rho) - 0.5 * q;
        if g(0.0) >= 0.0 {
            return Ok(0.0);
        }
        if q >= self.q_max() {
            return Err(Error::param(
                "q",
                "the infimum over r diverges at q = m² + ρ",
            ));
        }
        let mut hi = 1.0;
        while g(hi) <= 0.0 {
            hi *= 4.0;
            if hi > 1e300 {
                return Err(Error::Solver("no finite stationary r".into()));
            }
        }
        Ok(brent(g, 0.0, hi, 1e-15 * hi)?.x)
    }

    /// inf_r f_RS(q, ·) together with the minimizer.
    pub fn inner_inf(&self, q: f64, t: f64) -> Result<(f64, f64)> {
        let r = self.inner_r(q)?;
        Ok((self.f_rs(q, r, t)?, r))
    }

    /// sup over q of inf over r. A 64-point scan locates the best cell, two
    /// 16-point rounds narrow it, and golden-section finishes.
    pub fn f_star(&self, t: f64) -> Result<FreeEnergyResult> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::param("t", format!("must be positive, got {t}")));
        }
        let qmax = self.q_max();
        let q_hi = qmax * (1.0 - 1e-9);
        let mut first_err = None;
        let mut objective = |q: f64| match self.inner_inf(q, t) {
            Ok((v, _)) => v,
            Err(e) => {
                first_err.get_or_insert(e);
                f64::NEG_INFINITY
            }
        };
        let grid: Vec<f64> = (0..Q_GRID)
            .map(|k| qmax * k as f64 / Q_GRID as f64)
            .collect();
        let (mut lo, mut hi) = best_cell(&grid, &mut objective, 0.0, q_hi);
        for _ in 0..Q_ROUNDS {
            let sub: Vec<f64> = (0..Q_REFINE)
                .map(|k| lo + (hi - lo) * k as f64 / (Q_REFINE - 1) as f64)
                .collect();
            (lo, hi) = best_cell(&sub, &mut objective, 0.0, q_hi);
        }
        let (mut q_star, mut f_star) = golden_section_max(&mut objective, lo, hi, 1e-10 * qmax);
        // golden-section never evaluates the ends; compare them explicitly
        for end in [lo, hi] {
            let v = objective(end);
            if v > f_star {
                q_star = end;
                f_star = v;
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        if !f_star.is_finite() {
            return Err(Error::Solver(format!(
                "free energy is not finite at t = {t}"
            )));
        }
        let r_star = self.inner_r(q_star)?;
        let boundary = if q_star <= 1e-8 * qmax {
            Some(Boundary::Lower)
        } else if q_star >= qmax * (1.0 - 1e-8) {
            Some(Boundary::Upper)
        } else {
            None
        };
        let dq = 1e-4 * qmax;
        let (qa, qb) = ((q_star - dq).max(0.0), (q_star + dq).min(q_hi));
        let dpsi = (self.psi_big(qb, t)? - self.psi_big(qa, t)?) / (qb - qa);
        Ok(FreeEnergyResult {
            t,
            q_star,
            r_star,
            f_star,
            boundary,
            refinement_rounds: Q_ROUNDS,
            stationarity_q: dpsi / self.beta - 0.5 * r_star,
            stationarity_r: if r_star > 0.0 {
                psi_derivative(r_star, self.m, self.rho) - 0.5 * q_star
            } else {
                0.0
            },
        })
    }

    /// α + ½log(2πh_t) + βf*(t) + ½.
    pub fn collapse_residual(&self, alpha: f64, t: f64) -> Result<f64> {
        let h = DiffusionSchedule::at(t).h;
        Ok(alpha
            + 0.5 * (2.0 * std::f64::consts::PI * h).ln()
            + self.beta * self.f_star(t)?.f_star
            + 0.5)
    }

    pub fn collapse_time(&self, alpha: f64, bracket: TimeBracket) -> Result<CollapseResult> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(
                "alpha",
                format!("must be positive, got {alpha}"),
            ));
        }
        let mut first_err = None;
        let residual = |t: f64| match self.collapse_residual(alpha, t) {
            Ok(v) => v,
            Err(e) => {
                first_err.get_or_insert(e);
                f64::NAN
            }
        };
        let out = solve_time(residual, bracket, 1e-7);
        if let Some(e) = first_err {
            return Err(e);
        }
        let (t_c, res) = out?;
        Ok(CollapseResult {
            t_c,
            method: CollapseMethod::GlmGeneral,
            residual: res,
        })
    }
}

/// Index of the grid maximum, returned as the bracket formed by its
/// neighbours (clipped to `[lo, hi]`).
fn best_cell<F: FnMut(f64) -> f64>(grid: &[f64], f: &mut F, lo: f64, hi: f64) -> (f64, f64) {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, &q) in grid.iter().enumerate() {
        let v = f(q.min(hi));
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    let step = if grid.len() > 1 {
        grid[1] - grid[0]
    } else {
        0.0
    };
    let a = if best == 0 { grid[0] } else { grid[best - 1] };
    let b = if best + 1 < grid.len() {
        grid[best + 1]
    } else {
        grid[best] + step
    };
    (a.max(lo), b.min(hi))
}

pub fn f_rs(q: f64, r: f64, t: f64, model: &ManifoldModel) -> Result<f64> {
    GlmFreeEnergy::from_model(model)?.f_rs(q, r, t)
}

pub fn f_star(t: f64, model: &ManifoldModel) -> Result<FreeEnergyResult> {
    GlmFreeEnergy::from_model(model)?.f_star(t)
}

/// Solves the collapse condition with the replica free energy of the model.
pub fn collapse_time_glm(model: &ManifoldModel, alpha: f64) -> Result<CollapseResult> {
    GlmFreeEnergy::from_model(model)?.collapse_time(alpha, TimeBracket::default())
}
