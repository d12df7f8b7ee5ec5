//! Forward Ornstein–Uhlenbeck noising, the empirical score, and the
//! Euler–Maruyama integrator for the time-reversed SDE
//!
//! ```text
//! -dY = (Y + 2 ∇log P_t(Y)) dt + √2 dW,
//! ```
//!
//! integrated from t = T down to t = t_min.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::{self, domain};

/// Default start of the backward process (a_T ≈ 4.5e-5).
pub const DEFAULT_T: f64 = 10.0;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// The pair (a_t, h_t) = (e^{-t}, 1 - e^{-2t}) at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSchedule {
    pub t: f64,
    pub a: f64,
    pub h: f64,
}

impl DiffusionSchedule {
    pub fn at(t: f64) -> Self {
        let a = (-t).exp();
        // -expm1(-2t) keeps h accurate for small t
        let h = -(-2.0 * t).exp_m1();
        Self { t, a, h }
    }

    /// Signal-to-noise ratio η_t = a_t² / h_t.
    pub fn eta(&self) -> f64 {
        self.a * self.a / self.h
    }
}

/// Draws a_t x0 + √h_t z.
pub fn forward_sample_with<R: Rng + ?Sized>(x0: &[f64], t: f64, rng: &mut R) -> Vec<f64> {
    let s = DiffusionSchedule::at(t);
    let sh = s.h.sqrt();
    x0.iter()
        .map(|&x| s.a * x + sh * rng::normal(rng))
        .collect()
}

pub fn forward_sample(x0: &[f64], t: f64, noise_seed: u64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::param("t", format!("must be non-negative, got {t}")));
    }
    let mut r = rng::stream(noise_seed, domain::FORWARD);
    Ok(forward_sample_with(x0, t, &mut r))
}

/// A score field (x, t) ↦ (∇log P_t(x), log-normalizer).
pub trait Score {
    fn dim(&self) -> usize;

    /// Writes the score into `grad` and returns the log-normalizer, or NaN
    /// when the field has none.
    fn eval_into(&self, x: &[f64], t: f64, grad: &mut [f64]) -> Result<f64>;
}

/// Adapter turning a closure into a [`Score`] without a log-normalizer.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64, &mut [f64])> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64, &mut [f64])> Score for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], t: f64, grad: &mut [f64]) -> Result<f64> {
        (self.f)(x, t, grad);
        Ok(f64::NAN)
    }
}

/// Output of one empirical-score evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    pub grad: Vec<f64>,
    /// log Σ_i exp(-‖x - a_t x_i‖² / 2h_t)
    pub log_norm: f64,
}

/// Score of the noised empirical measure of a dataset,
/// P_t^e(x) ∝ Σ_i exp(-‖x - a_t x_i‖² / 2h_t).
///
/// Squared norms of the samples are cached so that each evaluation costs one
/// pass of inner products.
#[derive(Debug, Clone)]
pub struct EmpiricalScore<'a> {
    data: &'a Dataset,
    sq_norms: Vec<f64>,
}

impl<'a> EmpiricalScore<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::param("data", "dataset is empty"));
        }
        let sq_norms = (0..data.len())
            .map(|i| data.point(i).iter().map(|v| v * v).sum())
            .collect();
        Ok(Self { data, sq_norms })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Log-weights e_i = -‖x - a_t x_i‖² / 2h_t for every sample.
    pub fn energies_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let s = schedule_checked(t)?;
        let x_sq: f64 = x.iter().map(|v| v * v).sum();
        let inv = 1.0 / (2.0 * s.h);
        for (i, e) in out.iter_mut().enumerate() {
            let xi = self.data.point(i);
            let cross: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
            let dist = (x_sq - 2.0 * s.a * cross + s.a * s.a * self.sq_norms[i]).max(0.0);
            *e = -dist * inv;
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<ScoreEval> {
        let mut grad = vec![0.0; x.len()];
        let log_norm = self.eval_into(x, t, &mut grad)?;
        Ok(ScoreEval { grad, log_norm })
    }

    /// Softmax weights over samples at (x, t).
    pub fn weights(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.data.len()];
        self.energies_into(x, t, &mut e)?;
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in e.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        e.iter_mut().for_each(|v| *v /= total);
        Ok(e)
    }
}

impl Score for EmpiricalScore<'_> {
    fn dim(&self) -> usize {
        self.data.d()
    }

    fn eval_into(&self, x: &[f64], t: f64, grad: &mut [f64]) -> Result<f64> {
        let s = schedule_checked(t)?;
        let n = self.data.len();
        let mut e = vec![0.0; n];
        self.energies_into(x, t, &mut e)?;
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (i, &ei) in e.iter().enumerate() {
            let w = (ei - max).exp();
            if w == 0.0 {
                continue;
            }
            total += w;
            for (g, &v) in grad.iter_mut().zip(self.data.point(i)) {
                *g += w * v;
            }
        }
        let scale = s.a / total;
        for (g, &xv) in grad.iter_mut().zip(x) {
            *g = (scale * *g - xv) / s.h;
        }
        Ok(max + total.ln())
    }
}

fn schedule_checked(t: f64) -> Result<DiffusionSchedule> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(
            "t",
            format!("score is singular at t <= 0 (got {t})"),
        ));
    }
    Ok(DiffusionSchedule::at(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    Empirical,
    ReducedSpeciation,
    Other,
}

/// Times and states of one backward trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Strictly decreasing, from T to t_min.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
    pub score_mode: ScoreMode,
}

impl TrajectoryRecord {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// CSV with a time column followed either by all coordinates or by the
    /// inner products with the given projection directions.
    pub fn write_csv<W: Write>(&self, mut w: W, projections: Option<&[Vec<f64>]>) -> Result<()> {
        writeln!(
            w,
            "# backward Euler-Maruyama trajectory; t in diffusion time units"
        )?;
        let mut header = vec!["t".to_string()];
        match projections {
            Some(ps) => header.extend((1..=ps.len()).map(|k| format!("proj_{k}"))),
            None => header
                .extend((1..=self.states.first().map_or(0, Vec::len)).map(|j| format!("y_{j}"))),
        }
        writeln!(w, "{}", header.join(","))?;
        for (t, y) in self.times.iter().zip(&self.states) {
            let mut row = vec![format!("{t:.9}")];
            match projections {
                Some(ps) => {
                    row.extend(ps.iter().map(|p| {
                        format!("{:.12e}", p.iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
                    }))
                }
                None => row.extend(y.iter().map(|v| format!("{v:.12e}"))),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Uniform backward grid T = t_0 > t_1 > … > t_K = t_min with spacing dt
/// (the final step absorbs the remainder).
pub fn backward_grid(t_start: f64, t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_start > t_end) || !(t_end > 0.0) {
        return Err(Error::param(
            "t_min",
            format!("need T > t_min > 0, got T = {t_start}, t_min = {t_end}"),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let ratio = (t_start - t_end) / dt;
    let steps = ((ratio - 1e-9).ceil() as usize).max(1);
    let mut grid: Vec<f64> = (0..steps).map(|k| t_start - k as f64 * dt).collect();
    grid.push(t_end);
    Ok(grid)
}

/// Runs Euler–Maruyama steps over a decreasing time grid, updating `state` in
/// place. `noise` fills the Brownian increment ΔW (variance = step length)
/// for each step; `observe` sees the state after every step.
pub fn integrate_on_grid<S, N, O>(
    state: &mut [f64],
    grid: &[f64],
    score: &S,
    mut noise: N,
    mut observe: O,
) -> Result<()>
where
    S: Score + ?Sized,
    N: FnMut(usize, f64, &mut [f64]),
    O: FnMut(usize, f64, &[f64]),
{
    let d = state.len();
    let mut grad = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let sqrt2 = std::f64::consts::SQRT_2;
    for k in 0..grid.len().saturating_sub(1) {
        let (t, t_next) = (grid[k], grid[k + 1]);
        let step = t - t_next;
        score.eval_into(state, t, &mut grad)?;
        noise(k, step, &mut dw);
        for ((y, g), w) in state.iter_mut().zip(&grad).zip(&dw) {
            *y += (*y + 2.0 * g) * step + sqrt2 * w;
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                step: k + 1,
                time: t_next,
            });
        }
        observe(k + 1, t_next, state);
    }
    Ok(())
}

/// Integrates from `start` at time `t_start` to `t_min`, with noise from `rng`,
/// returning only the endpoint.
pub fn integrate_endpoint<S: Score + ?Sized, R: Rng + ?Sized>(
    start: &[f64],
    t_start: f64,
    t_min: f64,
    dt: f64,
    score: &S,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let grid = backward_grid(t_start, t_min, dt)?;
    let mut state = start.to_vec();
    integrate_on_grid(
        &mut state,
        &grid,
        score,
        |_, step, dw| {
            let s = step.sqrt();
            dw.iter_mut().for_each(|w| *w = s * rng::normal(rng));
        },
        |_, _, _| {},
    )?;
    Ok(state)
}

/// Backward Euler–Maruyama trajectory from `start` at T to t_min, with
/// per-step noise √(2dt)·z drawn from the stream of `seed`.
pub fn backward_integrate<S: Score + ?Sized>(
    start: &[f64],
    t_start: f64,
    t_min: f64,
    dt: f64,
    score: &S,
    seed: u64,
    score_mode: ScoreMode,
) -> Result<TrajectoryRecord> {
    let mut r = rng::stream(seed, domain::TRAJECTORY);
    let grid = backward_grid(t_start, t_min, dt)?;
    let mut state = start.to_vec();
    let mut states = Vec::with_capacity(grid.len());
    states.push(state.clone());
    integrate_on_grid(
        &mut state,
        &grid,
        score,
        |_, step, dw| {
            let s = step.sqrt();
            dw.iter_mut().for_each(|w| *w = s * rng::normal(&mut r));
        },
        |_, _, y| states.push(y.to_vec()),
    )?;
    Ok(TrajectoryRecord {
        times: grid,
        states,
        seed,
        score_mode,
    })
}

/// Like [`backward_integrate`] but driven by caller-supplied Brownian
/// increments, one vector per step.
pub fn backward_integrate_with_increments<S: Score + ?Sized>(
    start: &[f64],
    t_start: f64,
    t_min: f64,
    dt: f64,
    score: &S,
    increments: &[Vec<f64>],
) -> Result<TrajectoryRecord> {
    let grid = backward_grid(t_start, t_min, dt)?;
    if increments.len() + 1 < grid.len() {
        return Err(Error::param(
            "increments",
            format!(
                "need {} increments, got {}",
                grid.len() - 1,
                increments.len()
            ),
        ));
    }
    let mut state = start.to_vec();
    let mut states = vec![state.clone()];
    integrate_on_grid(
        &mut state,
        &grid,
        score,
        |k, _, dw| dw.copy_from_slice(&increments[k]),
        |_, _, y| states.push(y.to_vec()),
    )?;
    Ok(TrajectoryRecord {
        times: grid,
        states,
        seed: 0,
        score_mode: ScoreMode::Other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Class;

    fn toy(points: &[&[f64]]) -> Dataset {
        let d = points[0].len();
        let ambient = points.iter().flat_map(|p| p.iter().copied()).collect();
        let labels = (0..points.len())
            .map(|i| {
                if i % 2 == 0 {
                    Class::Plus
                } else {
                    Class::Minus
                }
            })
            .collect();
        Dataset::from_ambient(d, ambient, labels).unwrap()
    }

    #[test]
    fn schedule_identity() {
        for &t in &[1e-8, 1e-3, 0.1, 1.0, 5.0, 30.0] {
            let s = DiffusionSchedule::at(t);
            assert!((s.a * s.a + s.h - 1.0).abs() < 1e-14);
        }
        let ts = [0.01, 0.1, 1.0, 3.0];
        for w in ts.windows(2) {
            let (s0, s1) = (DiffusionSchedule::at(w[0]), DiffusionSchedule::at(w[1]));
            assert!(s1.h > s0.h);
            assert!(s1.eta() < s0.eta());
        }
    }

    #[test]
    fn forward_at_zero_is_identity() {
        let x0 = [1.0, -2.0, 3.5];
        assert_eq!(forward_sample(&x0, 0.0, 1).unwrap(), x0.to_vec());
        assert!(forward_sample(&x0, -1.0, 1).is_err());
    }

    #[test]
    fn forward_at_large_t_forgets_origin() {
        let d = 4;
        let x0 = vec![5.0; d];
        let mut r = rng::stream(3, 0);
        let n = 10_000;
        let mut mean = vec![0.0; d];
        for _ in 0..n {
            for (m, v) in mean.iter_mut().zip(forward_sample_with(&x0, 50.0, &mut r)) {
                *m += v / n as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 4.0 * (d as f64 / n as f64).sqrt());
    }

    #[test]
    fn forward_variance_matches_h() {
        let t = 0.3;
        let h = DiffusionSchedule::at(t).h;
        let mut r = rng::stream(4, 0);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_sample_with(&[0.0], t, &mut r)[0])
            .collect();
        let var = xs.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var / h - 1.0).abs() < 0.05);
    }

    #[test]
    fn single_sample_score_is_exact() {
        let ds = toy(&[&[1.0, 2.0]]);
        let sc = EmpiricalScore::new(&ds).unwrap();
        let t = 0.7;
        let s = DiffusionSchedule::at(t);
        let x = [0.3, -0.4];
        let out = sc.eval(&x, t).unwrap();
        for j in 0..2 {
            let expect = (s.a * ds.point(0)[j] - x[j]) / s.h;
            assert!((out.grad[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn score_vanishes_at_isolated_well() {
        let ds = toy(&[&[1.0, 1.0], &[100.0, -100.0], &[-100.0, 80.0]]);
        let sc = EmpiricalScore::new(&ds).unwrap();
        let t = 0.01;
        let a = DiffusionSchedule::at(t).a;
        let x = [a, a];
        let g = sc.eval(&x, t).unwrap().grad;
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn symmetric_pair_gives_zero_score_at_origin() {
        let ds = toy(&[&[1.0], &[-1.0]]);
        let sc = EmpiricalScore::new(&ds).unwrap();
        assert!(sc.eval(&[0.0], 0.4).unwrap().grad[0].abs() < 1e-15);
    }

    #[test]
    fn score_rejects_nonpositive_time() {
        let ds = toy(&[&[1.0]]);
        let sc = EmpiricalScore::new(&ds).unwrap();
        assert!(sc.eval(&[0.0], 0.0).is_err());
    }

    #[test]
    fn extreme_inputs_do_not_overflow() {
        let ds = toy(&[&[1e3, 0.0], &[0.0, 1e3]]);
        let sc = EmpiricalScore::new(&ds).unwrap();
        let out = sc.eval(&[-1e4, 5e3], 1e-4).unwrap();
        assert!(out.grad.iter().all(|v| v.is_finite()));
        assert!(out.log_norm.is_finite());
        let w = sc.weights(&[-1e4, 5e3], 1e-4).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn large_time_score_is_pure_noise() {
        let ds = toy(&[&[1.0, 0.5], &[-0.3, 2.0], &[0.2, -1.0]]);
        let sc = EmpiricalScore::new(&ds).unwrap();
        let t = 12.0;
        let s = DiffusionSchedule::at(t);
        let x = [0.7, -1.1];
        let g = sc.eval(&x, t).unwrap().grad;
        for j in 0..2 {
            assert!((g[j] + x[j] / s.h).abs() < 10.0 * s.a);
        }
    }

    #[test]
    fn grid_lengths() {
        let g = backward_grid(1.001, 1e-3, 1.0).unwrap();
        assert_eq!(g.len(), 2);
        let g = backward_grid(1.0, 0.1, 0.25).unwrap();
        assert_eq!(g, vec![1.0, 0.75, 0.5, 0.25, 0.1]);
        assert!(backward_grid(0.1, 0.2, 0.01).is_err());
        assert!(backward_grid(1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn one_step_when_t_is_t_min_plus_dt() {
        let sc = FnScore::new(1, |y: &[f64], _t, g: &mut [f64]| g[0] = -y[0]);
        let rec =
            backward_integrate(&[0.5], 0.01 + 0.02, 0.01, 0.02, &sc, 1, ScoreMode::Other).unwrap();
        assert_eq!(rec.times.len(), 2);
        assert_eq!(rec.states.len(), 2);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let sc = FnScore::new(1, |_: &[f64], _t, g: &mut [f64]| g[0] = f64::INFINITY);
        let err = backward_integrate(&[0.0], 1.0, 0.5, 0.1, &sc, 0, ScoreMode::Other).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { step: 1, .. }));
    }

    #[test]
    fn trajectory_csv_projection() {
        let sc = FnScore::new(2, |y: &[f64], _t, g: &mut [f64]| {
            g[0] = -y[0];
            g[1] = -y[1];
        });
        let rec = backward_integrate(&[1.0, 0.0], 0.5, 0.1, 0.2, &sc, 3, ScoreMode::Other).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf, Some(&[vec![1.0, 0.0]])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "t,proj_1");
        assert_eq!(text.lines().count(), 2 + rec.times.len());
    }
}
