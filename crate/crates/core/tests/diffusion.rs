use manifold_diffusion::diffusion::*;
use manifold_diffusion::model::{
    sample_dataset, Activation, Center, Class, Dataset, Ensemble, ManifoldModel,
};
use manifold_diffusion::rng;
use proptest::prelude::*;

fn toy(d: usize, pts: &[f64]) -> Dataset {
    let n = pts.len() / d;
    let labels = (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Class::Plus
            } else {
                Class::Minus
            }
        })
        .collect();
    Dataset::from_ambient(d, pts.to_vec(), labels).unwrap()
}

/// With the score of N(0, I) the backward SDE leaves N(0, I) invariant.
#[test]
fn standard_normal_is_stationary() {
    let d = 2;
    let score = FnScore::new(d, |x: &[f64], _t: f64, g: &mut [f64]| {
        g.iter_mut().zip(x).for_each(|(g, x)| *g = -x);
    });
    let runs = 1000;
    let mut ends = Vec::with_capacity(runs * d);
    for k in 0..runs {
        let mut r = rng::stream(17, k as u64);
        let mut start = vec![0.0; d];
        rng::fill_normal(&mut r, &mut start);
        let end = integrate_endpoint(&start, 2.0, 0.01, 0.01, &score, &mut r).unwrap();
        ends.extend(end);
    }
    let n = ends.len() as f64;
    let mean = ends.iter().sum::<f64>() / n;
    let var = ends.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // 2000 draws: stderr of the mean ≈ 0.022, of the variance ≈ 0.032
    assert!(mean.abs() < 0.1, "mean {mean}");
    assert!((var - 1.0).abs() < 0.13, "variance {var}");
}

/// For a single data point the backward SDE is linear. Halving the step with
/// the same Brownian path must shrink the pathwise error against a fine
/// reference.
#[test]
fn strong_error_decreases_with_step() {
    let data = toy(1, &[1.5]);
    let score = EmpiricalScore::new(&data).unwrap();
    let (t0, t1) = (1.0f64, 0.2f64);
    let fine_dt = 1e-4f64;
    let fine_steps = ((t0 - t1) / fine_dt).round() as usize;
    let mut err = [0.0f64; 2];
    let paths = 200;
    for k in 0..paths {
        let mut r = rng::stream(5, k as u64);
        let inc: Vec<Vec<f64>> = (0..fine_steps)
            .map(|_| vec![fine_dt.sqrt() * rng::normal(&mut r)])
            .collect();
        let start = [0.3];
        let reference =
            backward_integrate_with_increments(&start, t0, t1, fine_dt, &score, &inc).unwrap();
        let reference = reference.endpoint()[0];
        for (slot, &factor) in err.iter_mut().zip(&[400usize, 200]) {
            let coarse: Vec<Vec<f64>> = inc
                .chunks(factor)
                .map(|c| vec![c.iter().map(|v| v[0]).sum()])
                .collect();
            let dt = fine_dt * factor as f64;
            let y =
                backward_integrate_with_increments(&start, t0, t1, dt, &score, &coarse).unwrap();
            *slot += (y.endpoint()[0] - reference).powi(2);
        }
    }
    let (e_coarse, e_fine) = (
        (err[0] / paths as f64).sqrt(),
        (err[1] / paths as f64).sqrt(),
    );
    assert!(e_fine < 0.75 * e_coarse, "{e_coarse} -> {e_fine}");
}

#[test]
fn trajectory_record_is_reproducible_and_csv_has_units() {
    let model = ManifoldModel::new(
        4,
        2,
        0.5,
        1.0,
        Center::Scale(1.0),
        Activation::Tanh,
        Ensemble::GaussianIid,
        0,
    )
    .unwrap();
    let data = sample_dataset(&model, 16, 1).unwrap();
    let score = EmpiricalScore::new(&data).unwrap();
    let a =
        backward_integrate(&[0.0; 4], 1.0, 0.05, 0.05, &score, 9, ScoreMode::Empirical).unwrap();
    let b =
        backward_integrate(&[0.0; 4], 1.0, 0.05, 0.05, &score, 9, ScoreMode::Empirical).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.times.len(), a.states.len());
    let mut buf = Vec::new();
    a.write_csv(&mut buf, None).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with('#'));
    assert_eq!(lines.next().unwrap(), "t,y_1,y_2,y_3,y_4");
}

#[test]
fn grid_ends_exactly_at_t_min() {
    let g = backward_grid(1.0, 0.013, 0.1).unwrap();
    assert_eq!(*g.last().unwrap(), 0.013);
    assert!(g.windows(2).all(|w| w[1] < w[0]));
    assert!(backward_grid(0.1, 0.2, 0.01).is_err());
    assert!(backward_grid(1.0, 0.1, 0.0).is_err());
}

fn dataset_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..4, 2usize..7)
        .prop_flat_map(|(d, n)| (Just(d), prop::collection::vec(-3.0f64..3.0, d * n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Shifting every sample by v and x by a_t v leaves the score unchanged.
    #[test]
    fn score_translation_consistency((d, pts) in dataset_strategy(), shift in -2.0f64..2.0, t in 0.05f64..3.0) {
        let data = toy(d, &pts);
        let moved: Vec<f64> = pts.iter().map(|v| v + shift).collect();
        let moved = toy(d, &moved);
        let a = DiffusionSchedule::at(t).a;
        let x: Vec<f64> = (0..d).map(|j| 0.3 * j as f64 - 0.2).collect();
        let xm: Vec<f64> = x.iter().map(|v| v + a * shift).collect();
        let s0 = EmpiricalScore::new(&data).unwrap().eval(&x, t).unwrap();
        let s1 = EmpiricalScore::new(&moved).unwrap().eval(&xm, t).unwrap();
        for (g0, g1) in s0.grad.iter().zip(&s1.grad) {
            prop_assert!((g0 - g1).abs() < 1e-8 * (1.0 + g0.abs()));
        }
        prop_assert!((s0.log_norm - s1.log_norm).abs() < 1e-8 * (1.0 + s0.log_norm.abs()));
    }

    /// Softmax weights are a probability vector and reproduce the score.
    #[test]
    fn weights_form_a_distribution((d, pts) in dataset_strategy(), t in 0.01f64..5.0) {
        let data = toy(d, &pts);
        let score = EmpiricalScore::new(&data).unwrap();
        let x = vec![0.5; d];
        let w = score.weights(&x, t).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let s = DiffusionSchedule::at(t);
        let eval = score.eval(&x, t).unwrap();
        for j in 0..d {
            let mean: f64 = (0..data.len()).map(|i| w[i] * data.point(i)[j]).sum();
            let expect = (s.a * mean - x[j]) / s.h;
            prop_assert!((eval.grad[j] - expect).abs() < 1e-8 * (1.0 + expect.abs()));
        }
    }
}
