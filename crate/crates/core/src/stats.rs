//! Small numerical helpers shared by the theory and experiment modules.

/// Compensated (Kahan–Babuška) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().copied().collect::<KahanSum>().value() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .collect::<KahanSum>()
        .value()
        / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Leave-one-out jackknife estimate of the standard error of the mean.
pub fn jackknife_stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let total = xs.iter().copied().collect::<KahanSum>().value();
    let loo: Vec<f64> = xs.iter().map(|x| (total - x) / (n - 1) as f64).collect();
    let loo_mean = loo.iter().copied().collect::<KahanSum>().value() / n as f64;
    let ss = loo
        .iter()
        .map(|m| (m - loo_mean) * (m - loo_mean))
        .collect::<KahanSum>()
        .value();
    ((n - 1) as f64 / n as f64 * ss).sqrt()
}

/// Max-subtracted `log Σ exp(v_i)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Location where a sampled curve first reaches `level`, scanning the grid in
/// the given order and interpolating linearly between the bracketing points.
///
/// Returns `None` if the curve never reaches the level. If the first point
/// already satisfies it, that point's abscissa is returned.
pub fn first_crossing(xs: &[f64], ys: &[f64], level: f64, rising: bool) -> Option<f64> {
    let reached = |y: f64| if rising { y >= level } else { y <= level };
    for i in 0..xs.len().min(ys.len()) {
        if reached(ys[i]) {
            if i == 0 {
                return Some(xs[0]);
            }
            let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
            if y1 == y0 {
                return Some(x1);
            }
            return Some(x0 + (level - y0) * (x1 - x0) / (y1 - y0));
        }
    }
    None
}

/// Zero of a sampled curve by linear interpolation at the first sign change.
pub fn sign_change(xs: &[f64], ys: &[f64]) -> Option<f64> {
    for i in 1..xs.len().min(ys.len()) {
        let (y0, y1) = (ys[i - 1], ys[i]);
        if y0 == 0.0 {
            return Some(xs[i - 1]);
        }
        if y0.signum() != y1.signum() {
            return Some(xs[i - 1] - y0 * (xs[i] - xs[i - 1]) / (y1 - y0));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut s = KahanSum::new();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn jackknife_matches_classical_stderr_for_the_mean() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let (_, se) = mean_stderr(&xs);
        assert!((jackknife_stderr(&xs) - se).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_overflow_safe() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_add_exp(-1000.0, -1000.0) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn crossings_interpolate() {
        let xs = [3.0, 2.0, 1.0];
        let ys = [0.5, 0.7, 1.0];
        assert!((first_crossing(&xs, &ys, 0.85, true).unwrap() - 1.5).abs() < 1e-12);
        assert!((sign_change(&[0.0, 1.0], &[-1.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(sign_change(&[0.0, 1.0], &[1.0, 2.0]).is_none());
    }
}
