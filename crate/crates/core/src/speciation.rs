//! Speciation: the time at which backward trajectories commit to one of the
//! two mixture classes.
//!
//! For opposite centers ±μ and an odd activation the leading-order score
//! depends on x only through q = Σ_j x_j Γ₀(λ_j), λ_j = f_jᵀμ/√p, which moves
//! in the potential V(q,t) = ½q² − 2Σ_jΓ₀(λ_j)² log cosh(e^{-t}q). The
//! curvature of V at the origin changes sign at t_S = ½log(2Σ_jΓ₀(λ_j)²).

use std::sync::Arc;

use serde::Serialize;

use crate::diffusion::{DiffusionSchedule, Score};
use crate::error::{Error, Result};
use crate::model::{Activation, ManifoldModel};
use crate::quadrature::GaussHermite;
use crate::rng::{self, domain};

pub const DEFAULT_NODES: usize = 64;
pub const MAX_NODES: usize = 512;
pub const NODE_TOL: f64 = 1e-10;

/// Probe points used to decide quadrature convergence.
const PROBES: [f64; 7] = [-3.0, -1.0, -0.25, 0.0, 0.5, 1.5, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaKind {
    /// Γ₀(y) = E φ(√ρ u + y)
    Zero,
    /// Γ₁(y) = E φ(√ρ u + y) u
    One,
    /// Γ⁽²⁾(y) = E φ(√ρ u + y)²
    Second,
}

impl TryFrom<u8> for GammaKind {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(GammaKind::Zero),
            1 => Ok(GammaKind::One),
            2 => Ok(GammaKind::Second),
            _ => Err(Error::param(
                "which",
                format!("expected 0, 1 or 2, got {v}"),
            )),
        }
    }
}

/// Gaussian smoothings of the activation at latent variance ρ.
#[derive(Debug, Clone)]
pub struct GammaFunctions {
    rho: f64,
    activation: Activation,
    rule: Arc<GaussHermite>,
    converged: bool,
}

impl GammaFunctions {
    /// Picks the node count by doubling from 64 until the three functions
    /// change by less than 1e-10 on a probe grid (capped at 512 nodes; the
    /// cap is reported through [`GammaFunctions::converged`]).
    pub fn new(rho: f64, activation: Activation) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("must be positive, got {rho}")));
        }
        let mut gf = Self::with_nodes(rho, activation, DEFAULT_NODES)?;
        while gf.node_count() < MAX_NODES {
            let finer = Self::with_nodes(rho, gf.activation.clone(), 2 * gf.node_count())?;
            let diff = PROBES
                .iter()
                .flat_map(|&y| {
                    [GammaKind::Zero, GammaKind::One, GammaKind::Second]
                        .map(|k| (gf.eval(k, y) - finer.eval(k, y)).abs())
                })
                .fold(0.0, f64::max);
            gf = finer;
            if diff < NODE_TOL {
                gf.converged = true;
                return Ok(gf);
            }
        }
        gf.converged = false;
        Ok(gf)
    }

    pub fn with_nodes(rho: f64, activation: Activation, nodes: usize) -> Result<Self> {
        Ok(Self {
            rho,
            activation,
            rule: GaussHermite::cached(nodes)?,
            converged: true,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn node_count(&self) -> usize {
        self.rule.len()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn eval(&self, which: GammaKind, y: f64) -> f64 {
        let s = self.rho.sqrt();
        let phi = |u: f64| self.activation.eval(s * u + y);
        match which {
            GammaKind::Zero => self.rule.expect(phi),
            GammaKind::One => self.rule.expect(|u| phi(u) * u),
            GammaKind::Second => self.rule.expect(|u| phi(u).powi(2)),
        }
    }

    pub fn gamma0(&self, y: f64) -> f64 {
        self.eval(GammaKind::Zero, y)
    }

    pub fn gamma1(&self, y: f64) -> f64 {
        self.eval(GammaKind::One, y)
    }

    pub fn gamma2(&self, y: f64) -> f64 {
        self.eval(GammaKind::Second, y)
    }
}

pub fn gamma_eval(which: GammaKind, y: f64, gf: &GammaFunctions) -> f64 {
    gf.eval(which, y)
}

/// Gaussian-equivalence constants of Γ₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GepConstants {
    pub rho0: f64,
    pub rho1: f64,
    pub rho_star_sq: f64,
}

/// ϱ₀ = E Γ₀(u), ϱ₁ = E Γ₀(u)u, ϱ*² = E Γ₀(u)² − ϱ₀² − ϱ₁² for u ~ N(0,1).
pub fn gep_constants(gf: &GammaFunctions) -> Result<GepConstants> {
    require_odd(gf.activation())?;
    let outer = GaussHermite::cached(gf.node_count().max(DEFAULT_NODES))?;
    let (mut e0, mut e1, mut e2) = (0.0, 0.0, 0.0);
    for (u, w) in outer.iter() {
        let g = gf.gamma0(u);
        e0 += w * g;
        e1 += w * g * u;
        e2 += w * g * g;
    }
    let mut rho_star_sq = e2 - e0 * e0 - e1 * e1;
    if rho_star_sq < 0.0 {
        if rho_star_sq < -1e-10 {
            return Err(Error::Quadrature(format!(
                "negative residual variance {rho_star_sq}"
            )));
        }
        rho_star_sq = 0.0;
    }
    Ok(GepConstants {
        rho0: e0,
        rho1: e1,
        rho_star_sq,
    })
}

fn require_odd(activation: &Activation) -> Result<()> {
    if !activation.is_odd() {
        return Err(Error::Activation {
            name: activation.name().to_string(),
            reason: "speciation analysis requires an odd activation".into(),
        });
    }
    Ok(())
}

/// Per-coordinate quantities entering the reduced speciation dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciationState {
    /// λ_j = f_jᵀμ/√p
    pub lambdas: Vec<f64>,
    /// γ_j = Γ₀(λ_j), the direction of the reduced coordinate q = γᵀx.
    pub gamma0: Vec<f64>,
    pub gamma0_sq_sum: f64,
}

impl SpeciationState {
    pub fn new(model: &ManifoldModel, gf: &GammaFunctions) -> Self {
        let lambdas = model.embedding().project(model.mu());
        let gamma0: Vec<f64> = if gf.activation().is_linear() {
            lambdas.clone()
        } else {
            lambdas.iter().map(|&l| gf.gamma0(l)).collect()
        };
        let gamma0_sq_sum = gamma0.iter().map(|g| g * g).sum();
        Self {
            lambdas,
            gamma0,
            gamma0_sq_sum,
        }
    }

    pub fn from_model(model: &ManifoldModel) -> Result<Self> {
        let gf = GammaFunctions::new(model.rho(), model.activation().clone())?;
        Ok(Self::new(model, &gf))
    }

    /// Reduced coordinate q = Σ_j x_j Γ₀(λ_j).
    pub fn q(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.gamma0).map(|(a, b)| a * b).sum()
    }
}

/// t_S = ½log(2Σ_jΓ₀(λ_j)²) from the model's actual F and μ.
pub fn speciation_time_finite(model: &ManifoldModel) -> Result<f64> {
    require_odd(model.activation())?;
    let state = SpeciationState::from_model(model)?;
    speciation_time_from_sum(state.gamma0_sq_sum)
}

pub fn speciation_time_from_sum(gamma0_sq_sum: f64) -> Result<f64> {
    if !(gamma0_sq_sum > 0.0) {
        return Err(Error::NoSpeciationSignal(gamma0_sq_sum));
    }
    Ok(0.5 * (2.0 * gamma0_sq_sum).ln())
}

/// Large-d form t_S = ½log[2(ϱ₁²βd‖μ̃‖² + ϱ*²)].
pub fn speciation_time_asymptotic(
    beta: f64,
    d: usize,
    mu_tilde_norm_sq: f64,
    gep: &GepConstants,
) -> Result<f64> {
    let arg = gep.rho1 * gep.rho1 * beta * d as f64 * mu_tilde_norm_sq + gep.rho_star_sq;
    if !(arg > 0.0) {
        return Err(Error::NoSpeciationSignal(arg));
    }
    Ok(0.5 * (2.0 * arg).ln())
}

/// log cosh without overflow.
fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// V(q,t) = ½q² − 2S·log cosh(e^{-t}q) with S = Σ_jΓ₀(λ_j)².
pub fn potential(q: f64, t: f64, gamma0_sq_sum: f64) -> f64 {
    0.5 * q * q - 2.0 * gamma0_sq_sum * log_cosh((-t).exp() * q)
}

/// ∂²V/∂q² at q = 0: 1 − 2e^{-2t}S.
pub fn potential_curvature_at_zero(t: f64, gamma0_sq_sum: f64) -> f64 {
    1.0 - 2.0 * (-2.0 * t).exp() * gamma0_sq_sum
}

/// Sub-leading part Υ_j(x) of the score, returned per coordinate. The
/// reduced dynamics drops e^{-2t}Υ; this lets callers measure what is dropped.
pub fn upsilon(
    x: &[f64],
    t: f64,
    model: &ManifoldModel,
    state: &SpeciationState,
    gf: &GammaFunctions,
) -> Vec<f64> {
    let h = DiffusionSchedule::at(t).h;
    let f = model.embedding();
    let p = f.p() as f64;
    let g1: Vec<f64> = state.lambdas.iter().map(|&l| gf.gamma1(l)).collect();
    // v = Σ_l x_l Γ₁(λ_l) f_l
    let mut v = vec![0.0; f.p()];
    for (l, (&xl, &gl)) in x.iter().zip(&g1).enumerate() {
        for (vk, &fk) in v.iter_mut().zip(f.row(l)) {
            *vk += xl * gl * fk;
        }
    }
    let inv_h2 = 1.0 / (h * h);
    (0..x.len())
        .map(|j| {
            let lam = state.lambdas[j];
            let diag = (gf.gamma2(lam) - state.gamma0[j].powi(2)) * x[j];
            let fj = f.row(j);
            let full: f64 = fj.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / p;
            let cross = g1[j] * (full - x[j] * f.theta(j, j) * g1[j]);
            inv_h2 * (diag + 4.0 * cross)
        })
        .collect()
}

/// Leading-order score −x/h + (e^{-t}/h) γ tanh(e^{-t} γᵀx).
#[derive(Debug, Clone)]
pub struct ReducedScore {
    gamma0: Vec<f64>,
}

impl ReducedScore {
    pub fn new(state: &SpeciationState) -> Self {
        Self {
            gamma0: state.gamma0.clone(),
        }
    }
}

impl Score for ReducedScore {
    fn dim(&self) -> usize {
        self.gamma0.len()
    }

    fn eval_into(&self, x: &[f64], t: f64, grad: &mut [f64]) -> Result<f64> {
        let s = DiffusionSchedule::at(t);
        let q: f64 = x.iter().zip(&self.gamma0).map(|(a, b)| a * b).sum();
        let th = (s.a * q).tanh() * s.a / s.h;
        for ((g, &xj), &gj) in grad.iter_mut().zip(x).zip(&self.gamma0) {
            *g = -xj / s.h + th * gj;
        }
        Ok(f64::NAN)
    }
}

/// One Euler–Maruyama step of the reduced dynamics, backward from t by `step`:
/// q ← q + (−q + 2e^{-t}S tanh(e^{-t}q))·step + √(2S·step)·z.
#[inline]
fn reduced_step<R: rand::Rng + ?Sized>(q: f64, t: f64, step: f64, s: f64, rng: &mut R) -> f64 {
    let a = (-t).exp();
    q + (-q + 2.0 * a * s * (a * q).tanh()) * step + (2.0 * s * step).sqrt() * rng::normal(rng)
}

/// Ensemble of reduced-coordinate trajectories on a common decreasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedEnsemble {
    pub times: Vec<f64>,
    /// paths[k][i] is trajectory k at times[i].
    pub paths: Vec<Vec<f64>>,
}

impl ReducedEnsemble {
    pub fn endpoints(&self) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| *p.last().unwrap_or(&0.0))
            .collect()
    }

    /// Fraction of trajectories whose sign at each time equals their final sign.
    pub fn agreement_with_end(&self) -> Vec<f64> {
        let n = self.paths.len() as f64;
        (0..self.times.len())
            .map(|i| {
                self.paths
                    .iter()
                    .filter(|p| p[i].signum() == p.last().unwrap().signum())
                    .count() as f64
                    / n
            })
            .collect()
    }

    /// Fraction of trajectories whose sign changes at some grid time after
    /// (below) `t`.
    pub fn flip_fraction_after(&self, t: f64) -> f64 {
        let start = self
            .times
            .iter()
            .position(|&s| s <= t)
            .unwrap_or(self.times.len());
        let flips = self
            .paths
            .iter()
            .filter(|p| {
                p[start..]
                    .windows(2)
                    .any(|w| w[0].signum() != w[1].signum())
            })
            .count();
        flips as f64 / self.paths.len() as f64
    }
}

/// Simulates the reduced SDE from t_start to t_end; trajectories start from
/// the stationary law N(0, S) of q when Y ~ N(0, I).
pub fn reduced_sde_simulate(
    t_start: f64,
    t_end: f64,
    dt: f64,
    gamma0_sq_sum: f64,
    n_traj: usize,
    seed: u64,
) -> Result<ReducedEnsemble> {
    let grid = crate::diffusion::backward_grid(t_start, t_end, dt)?;
    if n_traj == 0 {
        return Err(Error::param("n_traj", "must be at least 1"));
    }
    if !(gamma0_sq_sum >= 0.0) {
        return Err(Error::param("gamma0_sq_sum", "must be non-negative"));
    }
    let s = gamma0_sq_sum;
    let paths = (0..n_traj)
        .map(|k| {
            let mut r = rng::stream(seed, domain::REDUCED + k as u64);
            let mut q = s.sqrt() * rng::normal(&mut r);
            let mut path = Vec::with_capacity(grid.len());
            path.push(q);
            for w in grid.windows(2) {
                q = reduced_step(q, w[0], w[0] - w[1], s, &mut r);
                path.push(q);
            }
            path
        })
        .collect();
    Ok(ReducedEnsemble { times: grid, paths })
}

/// Cloning protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommitmentProtocol {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_clones: usize,
    /// Clone agreement required to call a trajectory committed.
    pub threshold: f64,
}

impl Default for CommitmentProtocol {
    fn default() -> Self {
        Self {
            t_start: 10.0,
            t_end: 0.05,
            dt: 0.01,
            n_clones: 32,
            threshold: 0.95,
        }
    }
}

/// For every trajectory, the commitment time: the largest t on `t_grid` from
/// which the trajectory is committed at every later grid time. A trajectory is
/// committed at t when at least `threshold` of its clones, continued from q(t)
/// with fresh noise, end at t_end with the sign of q(t). Trajectories never
/// committed get NaN.
pub fn commitment_times(
    gamma0_sq_sum: f64,
    t_grid: &[f64],
    n_traj: usize,
    protocol: &CommitmentProtocol,
    seed: u64,
) -> Result<Vec<f64>> {
    if t_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("t_grid", "must be strictly decreasing"));
    }
    if protocol.n_clones < 2 {
        return Err(Error::param("n_clones", "need at least 2 clones"));
    }
    let s = gamma0_sq_sum;
    let mut out = Vec::with_capacity(n_traj);
    for k in 0..n_traj {
        let mut r = rng::stream(seed, domain::REDUCED + k as u64);
        let mut q = s.sqrt() * rng::normal(&mut r);
        let mut t = protocol.t_start;
        let mut committed = Vec::with_capacity(t_grid.len());
        for (g, &tg) in t_grid.iter().enumerate() {
            q = advance(q, t, tg, protocol.dt, s, &mut r);
            t = tg;
            let sign = q.signum();
            let mut agree = 0;
            for c in 0..protocol.n_clones {
                let id = domain::CLONE + ((k as u64) << 24) + ((g as u64) << 12) + c as u64;
                let mut cr = rng::stream(seed, id);
                let end = advance(q, tg, protocol.t_end, protocol.dt, s, &mut cr);
                if end.signum() == sign {
                    agree += 1;
                }
            }
            committed.push(agree as f64 / protocol.n_clones as f64 >= protocol.threshold);
        }
        let mut tc = f64::NAN;
        for i in (0..t_grid.len()).rev() {
            if committed[i] {
                tc = t_grid[i];
            } else {
                break;
            }
        }
        out.push(tc);
    }
    Ok(out)
}

fn advance<R: rand::Rng + ?Sized>(
    mut q: f64,
    from: f64,
    to: f64,
    dt: f64,
    s: f64,
    rng: &mut R,
) -> f64 {
    let mut t = from;
    while t - to > 1e-12 {
        let step = dt.min(t - to);
        q = reduced_step(q, t, step, s, rng);
        t -= step;
    }
    q
}

/// Summary of the speciation predictions for one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciationSummary {
    pub t_s_finite: f64,
    pub t_s_asymptotic: f64,
    pub rho1: f64,
    pub rho_star_sq: f64,
    pub gamma0_sq_sum: f64,
    pub quadrature_nodes: usize,
}

pub fn summarize(model: &ManifoldModel) -> Result<SpeciationSummary> {
    require_odd(model.activation())?;
    let gf = GammaFunctions::new(model.rho(), model.activation().clone())?;
    let gep = gep_constants(&gf)?;
    let state = SpeciationState::new(model, &gf);
    Ok(SpeciationSummary {
        t_s_finite: speciation_time_from_sum(state.gamma0_sq_sum)?,
        t_s_asymptotic: speciation_time_asymptotic(
            model.beta(),
            model.d(),
            model.mu_tilde_norm_sq(),
            &gep,
        )?,
        rho1: gep.rho1,
        rho_star_sq: gep.rho_star_sq,
        gamma0_sq_sum: state.gamma0_sq_sum,
        quadrature_nodes: gf.node_count(),
    })
}
