//! Stochastic experiments that measure the speciation and collapse transitions
//! on sampled datasets and compare them with the theory.
//!
//! Every replicate draws from its own random stream addressed by
//! `(seed, replicate id)`, so results are reproducible bit-for-bit and do not
//! depend on evaluation order.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    backward_grid, integrate_endpoint, integrate_on_grid, DiffusionSchedule, EmpiricalScore,
};
use crate::error::{Error, Result};
use crate::model::{sample_dataset, Class, Dataset, ManifoldModel};
use crate::rng::{self, domain};
use crate::speciation::{self, SpeciationState};
use crate::stats::{self, first_crossing, jackknife_stderr, log_sum_exp, mean_stderr, sign_change};

// Sub-namespaces inside `domain::EXPERIMENT`.
const PLANTED_NOISE: u64 = domain::EXPERIMENT;
const OUTER: u64 = domain::EXPERIMENT + (1 << 40);
const INNER: u64 = domain::EXPERIMENT + (2 << 40);
const REM: u64 = domain::EXPERIMENT + (3 << 40);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "speciation_agreement")]
    SpeciationAgreement,
    #[serde(rename = "logZ_gap")]
    LogZGap,
    #[serde(rename = "free_energy_mc")]
    FreeEnergyMc,
    #[serde(rename = "rem_derivative")]
    RemDerivative,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SpeciationAgreement => "speciation_agreement",
            Self::LogZGap => "logZ_gap",
            Self::FreeEnergyMc => "free_energy_mc",
            Self::RemDerivative => "rem_derivative",
        }
    }

    /// What `value` measures, with units.
    pub fn describes(self) -> &'static str {
        match self {
            Self::SpeciationAgreement => {
                "mean pairwise class agreement of clones (fraction, 0.5 = independent)"
            }
            Self::LogZGap => "(log Z1 - log Z2)/d (nats per ambient dimension)",
            Self::FreeEnergyMc => "(1/d) E log P_t^+(x) (nats per ambient dimension)",
            Self::RemDerivative => {
                "-g_t'(1) = E|x - a_t x1|^2/(2 h_t d) (nats per ambient dimension)"
            }
        }
    }
}

/// One measured quantity at one time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub kind: ExperimentKind,
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
    pub n_rep: usize,
    pub model_hash: String,
    pub seed: u64,
}

impl ExperimentRecord {
    pub fn new(
        kind: ExperimentKind,
        t: f64,
        value: f64,
        stderr: f64,
        n_rep: usize,
        model_hash: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFiniteState {
                step: n_rep,
                time: t,
            });
        }
        if !(stderr >= 0.0) {
            return Err(Error::Solver(format!(
                "{}: negative or NaN standard error at t = {t}",
                kind.as_str()
            )));
        }
        if n_rep == 0 {
            return Err(Error::param("n_rep", "need at least one replicate"));
        }
        Ok(Self {
            kind,
            t,
            value,
            stderr,
            n_rep,
            model_hash: model_hash.into(),
            seed,
        })
    }
}

/// Writes records as CSV: a comment line describing the measured quantity and
/// its units, then a header row.
pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], mut w: W) -> Result<()> {
    let mut kinds: Vec<ExperimentKind> = Vec::new();
    for r in records {
        if !kinds.contains(&r.kind) {
            kinds.push(r.kind);
        }
    }
    let tags: Vec<String> = kinds
        .iter()
        .map(|k| format!("{}: {}", k.as_str(), k.describes()))
        .collect();
    writeln!(w, "# t in diffusion time units; {}", tags.join("; "))?;
    writeln!(w, "kind,t,value,stderr,n_rep,model_hash,seed")?;
    for r in records {
        writeln!(
            w,
            "{},{:.9},{:.12e},{:.6e},{},{},{}",
            r.kind.as_str(),
            r.t,
            r.value,
            r.stderr,
            r.n_rep,
            r.model_hash,
            r.seed
        )?;
    }
    Ok(())
}

fn check_decreasing(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::param("t_grid", "must not be empty"));
    }
    if t_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("t_grid", "must be strictly decreasing"));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::param("t_grid", "times must be positive and finite"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// speciation cloning

/// Integration settings of the cloning experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloningOptions {
    /// Start of the backward process.
    pub t_start: f64,
    pub dt: f64,
    /// Clones are integrated down to this time and then classified.
    pub t_end: f64,
    pub threshold: f64,
}

impl Default for CloningOptions {
    fn default() -> Self {
        Self {
            t_start: 10.0,
            dt: 0.02,
            t_end: 0.1,
            threshold: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciationExperiment {
    pub records: Vec<ExperimentRecord>,
    /// Largest t at which the agreement reaches the threshold, interpolated.
    pub t_s_empirical: Option<f64>,
    pub t_s_finite: f64,
    pub t_s_asymptotic: f64,
}

/// Fraction of clone pairs that end in the same class.
pub fn pairwise_agreement(n_plus: usize, n: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let m = n - n_plus;
    let same = n_plus * n_plus.saturating_sub(1) + m * m.saturating_sub(1);
    same as f64 / (n * (n - 1)) as f64
}

/// Cloning experiment with the empirical score of a fresh dataset of
/// `n_data` samples.
///
/// Each trajectory starts from N(0, I_d) at `opts.t_start`. At every grid time
/// it spawns `n_clones` continuations with independent noise, integrated to
/// `opts.t_end` and classified by the sign of γᵀx, where γ_j = Γ₀(λ_j) is the
/// direction of the reduced speciation coordinate.
pub fn speciation_experiment(
    model: &ManifoldModel,
    n_data: usize,
    t_grid: &[f64],
    n_traj: usize,
    n_clones: usize,
    seed: u64,
    opts: &CloningOptions,
) -> Result<SpeciationExperiment> {
    check_decreasing(t_grid)?;
    if n_clones < 2 {
        return Err(Error::param("n_clones", "need at least 2 clones"));
    }
    if n_traj == 0 {
        return Err(Error::param("n_traj", "need at least one trajectory"));
    }
    if t_grid[t_grid.len() - 1] <= opts.t_end {
        return Err(Error::param(
            "t_grid",
            format!("times must exceed the clone end time {}", opts.t_end),
        ));
    }
    let summary = speciation::summarize(model)?;
    let state = SpeciationState::from_model(model)?;
    if !(state.gamma0_sq_sum > 0.0) {
        return Err(Error::NoSpeciationSignal(state.gamma0_sq_sum));
    }
    let data = sample_dataset(model, n_data, seed)?;
    let score = EmpiricalScore::new(&data)?;
    let d = model.d();

    let mut agreement = vec![Vec::with_capacity(n_traj); t_grid.len()];
    for k in 0..n_traj {
        let mut r = rng::stream(seed, domain::TRAJECTORY + k as u64);
        let mut y = vec![0.0; d];
        rng::fill_normal(&mut r, &mut y);
        let mut t = opts.t_start;
        for (g, &tg) in t_grid.iter().enumerate() {
            if tg < t {
                let grid = backward_grid(t, tg, opts.dt)?;
                integrate_on_grid(
                    &mut y,
                    &grid,
                    &score,
                    |_, step, dw| {
                        let s = step.sqrt();
                        dw.iter_mut().for_each(|w| *w = s * rng::normal(&mut r));
                    },
                    |_, _, _| {},
                )?;
                t = tg;
            }
            let mut n_plus = 0;
            for c in 0..n_clones {
                let id = domain::CLONE + ((k as u64) << 32) + ((g as u64) << 16) + c as u64;
                let mut cr = rng::stream(seed, id);
                let end = integrate_endpoint(&y, t, opts.t_end, opts.dt, &score, &mut cr)?;
                if state.q(&end) > 0.0 {
                    n_plus += 1;
                }
            }
            agreement[g].push(pairwise_agreement(n_plus, n_clones));
        }
    }

    let hash = model.fingerprint();
    let mut records = Vec::with_capacity(t_grid.len());
    let mut means = Vec::with_capacity(t_grid.len());
    for (g, &tg) in t_grid.iter().enumerate() {
        let (m, se) = mean_stderr(&agreement[g]);
        means.push(m);
        records.push(ExperimentRecord::new(
            ExperimentKind::SpeciationAgreement,
            tg,
            m,
            se,
            n_traj,
            &hash,
            seed,
        )?);
    }
    Ok(SpeciationExperiment {
        records,
        t_s_empirical: first_crossing(t_grid, &means, opts.threshold, true),
        t_s_finite: summary.t_s_finite,
        t_s_asymptotic: summary.t_s_asymptotic,
    })
}

// ---------------------------------------------------------------------------
// Z₁ / Z₂ split of the empirical partition function

/// log Z = log Σ_i exp(−‖x − a_t x_i‖²/2h_t) split into the planted sample,
/// the rest of its class, and the other class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionSplit {
    /// −‖x − a_t x₁‖²/2h_t, i.e. −‖z‖²/2 for x = a_t x₁ + √h_t z.
    pub log_z1: f64,
    pub log_z2_plus: f64,
    pub log_z2_minus: f64,
}

impl PartitionSplit {
    pub fn log_z2(&self) -> f64 {
        stats::log_add_exp(self.log_z2_plus, self.log_z2_minus)
    }

    pub fn log_total(&self) -> f64 {
        log_sum_exp(&[self.log_z1, self.log_z2_plus, self.log_z2_minus])
    }
}

/// Sample energies split by membership.
struct Split {
    z1: f64,
    same: Vec<f64>,
    other: Vec<f64>,
}

fn split_energies(
    score: &EmpiricalScore<'_>,
    planted: usize,
    x: &[f64],
    t: f64,
    buf: &mut Vec<f64>,
) -> Result<Split> {
    let data = score.data();
    buf.resize(data.len(), 0.0);
    score.energies_into(x, t, buf)?;
    let class = data.label(planted);
    let mut same = Vec::with_capacity(data.len() / 2 + 1);
    let mut other = Vec::with_capacity(data.len() / 2 + 1);
    for (i, &e) in buf.iter().enumerate() {
        if i == planted {
            continue;
        }
        if data.label(i) == class {
            same.push(e);
        } else {
            other.push(e);
        }
    }
    Ok(Split {
        z1: buf[planted],
        same,
        other,
    })
}

/// Partition split at x with sample `planted` playing the role of x₁.
pub fn partition_split(
    score: &EmpiricalScore<'_>,
    planted: usize,
    x: &[f64],
    t: f64,
) -> Result<PartitionSplit> {
    if planted >= score.data().len() {
        return Err(Error::param(
            "planted",
            format!("index {planted} out of range"),
        ));
    }
    let s = split_energies(score, planted, x, t, &mut Vec::new())?;
    Ok(PartitionSplit {
        log_z1: s.z1,
        log_z2_plus: log_sum_exp(&s.same),
        log_z2_minus: log_sum_exp(&s.other),
    })
}

/// x = a_t x₁ + √h_t z with z from noise replicate k; z is shared across t.
pub fn planted_point(x1: &[f64], t: f64, seed: u64, k: usize) -> Vec<f64> {
    let s = DiffusionSchedule::at(t);
    let mut r = rng::stream(seed, PLANTED_NOISE + k as u64);
    let sh = s.h.sqrt();
    x1.iter()
        .map(|&v| s.a * v + sh * rng::normal(&mut r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseCrossing {
    pub records: Vec<ExperimentRecord>,
    /// Sign change of the mean gap, interpolated.
    pub t_c_empirical: Option<f64>,
    /// (log Z₂⁺ − log Z₂⁻)/d: mean and standard error per grid time.
    pub class_gap: Vec<(f64, f64)>,
    pub warning: Option<String>,
}

fn check_dataset(model: &ManifoldModel, data: &Dataset) -> Result<()> {
    if data.d() != model.d() {
        return Err(Error::param(
            "dataset",
            format!("dimension {} does not match d = {}", data.d(), model.d()),
        ));
    }
    if data.len() < 2 {
        return Err(Error::param(
            "dataset",
            "need the planted sample and at least one more",
        ));
    }
    Ok(())
}

/// Mean (log Z₁ − log Z₂)/d over `n_noise` (sample, noise) pairs; pair k
/// plants sample k mod n with its own noise draw.
pub fn collapse_crossing_experiment(
    model: &ManifoldModel,
    data: &Dataset,
    t_grid: &[f64],
    n_noise: usize,
    seed: u64,
) -> Result<CollapseCrossing> {
    check_decreasing(t_grid)?;
    check_dataset(model, data)?;
    if n_noise == 0 {
        return Err(Error::param("n_noise", "need at least one noise draw"));
    }
    let score = EmpiricalScore::new(data)?;
    let d = model.d() as f64;
    let hash = model.fingerprint();
    let mut records = Vec::with_capacity(t_grid.len());
    let mut means = Vec::with_capacity(t_grid.len());
    let mut class_gap = Vec::with_capacity(t_grid.len());
    let mut buf = Vec::new();
    for &t in t_grid {
        let mut gaps = Vec::with_capacity(n_noise);
        let mut cls = Vec::with_capacity(n_noise);
        for k in 0..n_noise {
            let i = k % data.len();
            let x = planted_point(data.point(i), t, seed, k);
            let s = split_energies(&score, i, &x, t, &mut buf)?;
            let split = PartitionSplit {
                log_z1: s.z1,
                log_z2_plus: log_sum_exp(&s.same),
                log_z2_minus: log_sum_exp(&s.other),
            };
            gaps.push((split.log_z1 - split.log_z2()) / d);
            cls.push((split.log_z2_plus - split.log_z2_minus) / d);
        }
        let (m, se) = mean_stderr(&gaps);
        means.push(m);
        class_gap.push(mean_stderr(&cls));
        records.push(ExperimentRecord::new(
            ExperimentKind::LogZGap,
            t,
            m,
            se,
            n_noise,
            &hash,
            seed,
        )?);
    }
    let t_c_empirical = sign_change(t_grid, &means);
    let warning = t_c_empirical.is_none().then(|| {
        "log Z1 - log Z2 keeps one sign on the whole grid; widen the time grid".to_string()
    });
    Ok(CollapseCrossing {
        records,
        t_c_empirical,
        class_gap,
        warning,
    })
}

// ---------------------------------------------------------------------------
// λ-tilted bulk partition function and the condensation time

fn tilted_terms(
    model: &ManifoldModel,
    data: &Dataset,
    t: f64,
    n_noise: usize,
    seed: u64,
    mut per_draw: impl FnMut(&[f64]) -> f64,
) -> Result<(f64, f64)> {
    check_dataset(model, data)?;
    if n_noise == 0 {
        return Err(Error::param("n_noise", "need at least one noise draw"));
    }
    let score = EmpiricalScore::new(data)?;
    let mut buf = Vec::new();
    let mut vals = Vec::with_capacity(n_noise);
    for k in 0..n_noise {
        let i = k % data.len();
        let x = planted_point(data.point(i), t, seed, k);
        let s = split_energies(&score, i, &x, t, &mut buf)?;
        if s.same.is_empty() {
            return Err(Error::param(
                "dataset",
                "no other sample shares the planted sample's class",
            ));
        }
        vals.push(per_draw(&s.same) / model.d() as f64);
    }
    Ok(mean_stderr(&vals))
}

/// (1/d)E_x log Σ exp(−λ‖x − a_t x_i‖²/2h_t) over the samples other than x₁
/// in x₁'s class, with x = a_t x₁ + √h_t z and x₁ running over the samples as
/// in the crossing experiment. Returns (mean, stderr).
pub fn tilted_log_partition(
    model: &ManifoldModel,
    data: &Dataset,
    t: f64,
    lambda: f64,
    n_noise: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(
            "lambda",
            format!("must be positive, got {lambda}"),
        ));
    }
    let mut scaled = Vec::new();
    tilted_terms(model, data, t, n_noise, seed, |e| {
        scaled.clear();
        scaled.extend(e.iter().map(|v| lambda * v));
        log_sum_exp(&scaled)
    })
}

/// (1/d)E_x of the Gibbs mean of ‖x − a_t x_i‖²/2h_t over the same bulk at
/// λ = 1; minus the λ-derivative of [`tilted_log_partition`] at λ = 1.
pub fn tilted_mean_energy(
    model: &ManifoldModel,
    data: &Dataset,
    t: f64,
    n_noise: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    tilted_terms(model, data, t, n_noise, seed, gibbs_mean_energy)
}

fn gibbs_mean_energy(e: &[f64]) -> f64 {
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for &v in e {
        let w = (v - max).exp();
        num += w * (-v);
        den += w;
    }
    num / den
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condensation {
    pub t_grid: Vec<f64>,
    /// Φ_t(1) + ½ with Φ_t(λ) = (1/d)log Σ exp(−λE_i) over the bulk: mean and
    /// standard error per grid time.
    pub condition: Vec<(f64, f64)>,
    /// Gibbs entropy density Φ_t(1) − Φ_t'(1) of the bulk at λ = 1, for
    /// diagnostics. It is nonnegative for any finite sample set and only tends
    /// to zero below the condensation time.
    pub entropy: Vec<(f64, f64)>,
    /// Sign change of the condition, interpolated.
    pub t_star: Option<f64>,
}

/// Locates the condensation time of the bulk sum from Φ_t(1) − g_t'(1) = 0,
/// using the identity g_t'(1) = −½ (see [`rem_derivative_check`]).
///
/// Φ_t already contains the sample-count rate and the (2πh_t)^{d/2} factor
/// that separate the bulk sum from the prior-averaged P⁺_{t,λ}.
pub fn condensation_experiment(
    model: &ManifoldModel,
    data: &Dataset,
    t_grid: &[f64],
    n_noise: usize,
    seed: u64,
) -> Result<Condensation> {
    check_decreasing(t_grid)?;
    let mut condition = Vec::with_capacity(t_grid.len());
    let mut entropy = Vec::with_capacity(t_grid.len());
    let half_d = 0.5 * model.d() as f64;
    for &t in t_grid {
        condition.push(tilted_terms(model, data, t, n_noise, seed, |e| {
            log_sum_exp(e) + half_d
        })?);
        entropy.push(tilted_terms(model, data, t, n_noise, seed, |e| {
            log_sum_exp(e) + gibbs_mean_energy(e)
        })?);
    }
    let means: Vec<f64> = condition.iter().map(|e| e.0).collect();
    Ok(Condensation {
        t_grid: t_grid.to_vec(),
        condition,
        entropy,
        t_star: sign_change(t_grid, &means),
    })
}

// ---------------------------------------------------------------------------
// Monte-Carlo free energy

/// Largest manifold dimension accepted by the free-energy estimator.
pub const FREE_ENERGY_MAX_P: usize = 24;
pub const FREE_ENERGY_MIN_LATENT: usize = 10_000;
/// Inner effective sample size below which an estimate is flagged.
pub const MIN_ESS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyEstimate {
    pub record: ExperimentRecord,
    /// Class of the inner prior (Plus is the matched one).
    pub inner_prior: Class,
    /// Smallest inner effective sample size over the outer draws.
    pub min_ess: f64,
    /// Fraction of outer draws whose inner effective sample size is below
    /// [`MIN_ESS`].
    pub low_ess_fraction: f64,
    /// Set when any outer draw has a low effective sample size.
    pub unreliable: bool,
    /// Delta-method estimate of the downward bias of log-mean-exp, per
    /// dimension; the reported value is not corrected for it.
    pub bias_estimate: f64,
    /// Per-draw estimates (1/d) log P̂(x_k).
    #[serde(skip)]
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedFreeEnergy {
    pub matched: FreeEnergyEstimate,
    pub mismatched: FreeEnergyEstimate,
    /// matched − mismatched on the same outer draws.
    pub difference: f64,
    pub difference_stderr: f64,
}

/// (1/d)E_{x∼P_t^+} log P_t^+(x) by nested Monte Carlo with the matched prior.
pub fn free_energy_mc(
    model: &ManifoldModel,
    t: f64,
    n_x: usize,
    n_latent: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    free_energy_mc_with_prior(model, t, n_x, n_latent, seed, Class::Plus)
}

/// Same estimator with the inner prior q₊ (matched) or q₋ (mismatched); outer
/// draws are always x ∼ P_t^+ and are shared between the two choices.
pub fn free_energy_mc_with_prior(
    model: &ManifoldModel,
    t: f64,
    n_x: usize,
    n_latent: usize,
    seed: u64,
    inner_prior: Class,
) -> Result<FreeEnergyEstimate> {
    let (p, d) = (model.p(), model.d());
    if p > FREE_ENERGY_MAX_P {
        return Err(Error::param(
            "p",
            format!("free-energy estimator needs p <= {FREE_ENERGY_MAX_P}, got {p}"),
        ));
    }
    if n_latent < FREE_ENERGY_MIN_LATENT {
        return Err(Error::param(
            "n_latent",
            format!("need at least {FREE_ENERGY_MIN_LATENT}, got {n_latent}"),
        ));
    }
    if n_x < 2 {
        return Err(Error::param("n_x", "need at least 2 outer draws"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let s = DiffusionSchedule::at(t);
    let sh = s.h.sqrt();
    let sd = model.rho().sqrt();
    let mu = model.mu();
    let sign = inner_prior.sign();
    let log_prefactor = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * s.h).ln();

    let mut samples = Vec::with_capacity(n_x);
    let mut min_ess = f64::INFINITY;
    let mut bias = 0.0;
    let mut low = 0usize;
    let mut xi = vec![0.0; p];
    let mut image = vec![0.0; d];
    let mut energies = vec![0.0; n_latent];
    for k in 0..n_x {
        let mut r = rng::stream(seed, OUTER + k as u64);
        for (v, &m) in xi.iter_mut().zip(mu) {
            *v = m + sd * rng::normal(&mut r);
        }
        model.embed_into(&xi, &mut image);
        let x: Vec<f64> = image
            .iter()
            .map(|&v| s.a * v + sh * rng::normal(&mut r))
            .collect();

        let mut ir = rng::stream(seed, INNER + k as u64);
        for e in energies.iter_mut() {
            for (v, &m) in xi.iter_mut().zip(mu) {
                *v = sign * m + sd * rng::normal(&mut ir);
            }
            model.embed_into(&xi, &mut image);
            let dist: f64 = x
                .iter()
                .zip(&image)
                .map(|(xv, iv)| (xv - s.a * iv).powi(2))
                .sum();
            *e = -dist / (2.0 * s.h);
        }
        let lse = log_sum_exp(&energies);
        let (mut w1, mut w2) = (0.0, 0.0);
        for &e in &energies {
            let w = (e - lse).exp();
            w1 += w;
            w2 += w * w;
        }
        let ess = w1 * w1 / w2;
        min_ess = min_ess.min(ess);
        if ess < MIN_ESS {
            low += 1;
        }
        bias += -0.5 * (1.0 / ess - 1.0 / n_latent as f64);
        samples.push((lse - (n_latent as f64).ln() + log_prefactor) / d as f64);
    }
    let (value, _) = mean_stderr(&samples);
    let stderr = jackknife_stderr(&samples);
    let record = ExperimentRecord::new(
        ExperimentKind::FreeEnergyMc,
        t,
        value,
        stderr,
        n_x,
        model.fingerprint(),
        seed,
    )?;
    Ok(FreeEnergyEstimate {
        record,
        inner_prior,
        min_ess,
        low_ess_fraction: low as f64 / n_x as f64,
        unreliable: min_ess < MIN_ESS,
        bias_estimate: bias / (n_x as f64 * d as f64),
        samples,
    })
}

/// Matched and mismatched estimates on common outer draws.
pub fn free_energy_mc_paired(
    model: &ManifoldModel,
    t: f64,
    n_x: usize,
    n_latent: usize,
    seed: u64,
) -> Result<PairedFreeEnergy> {
    let matched = free_energy_mc_with_prior(model, t, n_x, n_latent, seed, Class::Plus)?;
    let mismatched = free_energy_mc_with_prior(model, t, n_x, n_latent, seed, Class::Minus)?;
    let diffs: Vec<f64> = matched
        .samples
        .iter()
        .zip(&mismatched.samples)
        .map(|(a, b)| a - b)
        .collect();
    let (difference, _) = mean_stderr(&diffs);
    let difference_stderr = jackknife_stderr(&diffs);
    Ok(PairedFreeEnergy {
        matched,
        mismatched,
        difference,
        difference_stderr,
    })
}

// ---------------------------------------------------------------------------
// REM derivative identity

/// Estimates −g_t'(1) = (1/d)E‖x − a_t x₁‖²/2h_t by drawing x₁ from the model
/// and x = a_t x₁ + √h_t z. The expected value is ½ for every model and t.
pub fn rem_derivative_check(
    model: &ManifoldModel,
    t: f64,
    n_rep: usize,
    seed: u64,
) -> Result<ExperimentRecord> {
    if n_rep == 0 {
        return Err(Error::param("n_rep", "need at least one replicate"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let (p, d) = (model.p(), model.d());
    let s = DiffusionSchedule::at(t);
    let sh = s.h.sqrt();
    let sd = model.rho().sqrt();
    let mut xi = vec![0.0; p];
    let mut x1 = vec![0.0; d];
    let mut vals = Vec::with_capacity(n_rep);
    for k in 0..n_rep {
        let mut r = rng::stream(seed, REM + k as u64);
        let class = if rng::normal(&mut r) >= 0.0 {
            1.0
        } else {
            -1.0
        };
        for (v, &m) in xi.iter_mut().zip(model.mu()) {
            *v = class * m + sd * rng::normal(&mut r);
        }
        model.embed_into(&xi, &mut x1);
        let mut sq = 0.0;
        for &v in &x1 {
            let x = s.a * v + sh * rng::normal(&mut r);
            sq += (x - s.a * v).powi(2);
        }
        vals.push(sq / (2.0 * s.h * d as f64));
    }
    let (m, se) = mean_stderr(&vals);
    ExperimentRecord::new(
        ExperimentKind::RemDerivative,
        t,
        m,
        se,
        n_rep,
        model.fingerprint(),
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Center, Ensemble};

    fn small(d: usize, p: usize, act: Activation) -> ManifoldModel {
        ManifoldModel::new(
            d,
            p,
            0.3,
            1.0,
            Center::Scale(1.0),
            act,
            Ensemble::GaussianIid,
            3,
        )
        .unwrap()
    }

    #[test]
    fn pairwise_agreement_limits() {
        assert_eq!(pairwise_agreement(10, 10), 1.0);
        assert_eq!(pairwise_agreement(0, 10), 1.0);
        assert!((pairwise_agreement(5, 10) - 40.0 / 90.0).abs() < 1e-15);
    }

    #[test]
    fn record_invariants() {
        assert!(
            ExperimentRecord::new(ExperimentKind::LogZGap, 1.0, f64::NAN, 0.0, 1, "h", 0).is_err()
        );
        assert!(ExperimentRecord::new(ExperimentKind::LogZGap, 1.0, 0.0, -1.0, 1, "h", 0).is_err());
        assert!(ExperimentRecord::new(ExperimentKind::LogZGap, 1.0, 0.0, 0.0, 0, "h", 0).is_err());
        let r = ExperimentRecord::new(ExperimentKind::LogZGap, 1.0, 0.5, 0.1, 3, "h", 0).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"logZ_gap\""));
    }

    #[test]
    fn split_matches_score_normalizer() {
        let m = small(8, 4, Activation::Tanh);
        let data = sample_dataset(&m, 50, 1).unwrap();
        let score = EmpiricalScore::new(&data).unwrap();
        for &t in &[0.05, 0.5, 3.0] {
            let x = planted_point(data.point(0), t, 9, 0);
            let split = partition_split(&score, 0, &x, t).unwrap();
            let full = score.eval(&x, t).unwrap().log_norm;
            assert!((split.log_total() - full).abs() < 1e-10);
        }
    }

    #[test]
    fn tilted_at_one_is_same_class_bulk() {
        let m = small(6, 3, Activation::Linear);
        let data = sample_dataset(&m, 40, 2).unwrap();
        let score = EmpiricalScore::new(&data).unwrap();
        let t = 0.7;
        let (v, _) = tilted_log_partition(&m, &data, t, 1.0, 5, 4).unwrap();
        let direct: f64 = (0..5)
            .map(|k| {
                partition_split(&score, k, &planted_point(data.point(k), t, 4, k), t)
                    .unwrap()
                    .log_z2_plus
            })
            .sum::<f64>()
            / (5.0 * 6.0);
        assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn tilted_derivative_is_minus_gibbs_energy() {
        let m = small(6, 3, Activation::Tanh);
        let data = sample_dataset(&m, 60, 3).unwrap();
        let t = 0.4;
        let eps = 1e-5;
        let (up, _) = tilted_log_partition(&m, &data, t, 1.0 + eps, 8, 1).unwrap();
        let (dn, _) = tilted_log_partition(&m, &data, t, 1.0 - eps, 8, 1).unwrap();
        let (e, _) = tilted_mean_energy(&m, &data, t, 8, 1).unwrap();
        assert!(((up - dn) / (2.0 * eps) + e).abs() < 1e-8);
    }

    #[test]
    fn rem_identity_in_one_dimension() {
        let m = ManifoldModel::new(
            1,
            1,
            0.3,
            1.0,
            Center::Scale(1.0),
            Activation::Linear,
            Ensemble::GaussianIid,
            0,
        )
        .unwrap();
        let r = rem_derivative_check(&m, 0.5, 20_000, 5).unwrap();
        assert!((r.value - 0.5).abs() < 4.0 * r.stderr);
    }

    #[test]
    fn free_energy_guards() {
        let m = small(30, 25, Activation::Linear);
        assert!(free_energy_mc(&m, 0.5, 10, 10_000, 0).is_err());
        let m = small(8, 4, Activation::Linear);
        assert!(free_energy_mc(&m, 0.5, 10, 100, 0).is_err());
    }

    #[test]
    fn crossing_rejects_bad_grid() {
        let m = small(4, 2, Activation::Linear);
        let data = sample_dataset(&m, 10, 0).unwrap();
        assert!(collapse_crossing_experiment(&m, &data, &[0.1, 0.5], 3, 0).is_err());
        assert!(collapse_crossing_experiment(&m, &data, &[0.5, 0.1], 0, 0).is_err());
    }

    #[test]
    fn speciation_rejects_even_activation() {
        let m = small(4, 2, Activation::Relu);
        assert!(
            speciation_experiment(&m, 10, &[1.0], 1, 2, 0, &CloningOptions::default()).is_err()
        );
    }
}
