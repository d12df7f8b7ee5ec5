use manifold_diffusion::diffusion::EmpiricalScore;
use manifold_diffusion::experiments::*;
use manifold_diffusion::model::{sample_dataset, Activation, Center, Ensemble, ManifoldModel};
use proptest::prelude::*;

fn model(d: usize, p: usize, act: Activation, ens: Ensemble) -> ManifoldModel {
    ManifoldModel::new(d, p, 0.25, 1.0, Center::Scale(1.0), act, ens, 2).unwrap()
}

#[test]
fn collapse_experiment_is_bit_reproducible() {
    let m = model(12, 6, Activation::Tanh, Ensemble::GaussianIid);
    let data = sample_dataset(&m, 200, 4).unwrap();
    let grid = [0.6, 0.3, 0.1, 0.03];
    let a = collapse_crossing_experiment(&m, &data, &grid, 20, 8).unwrap();
    let b = collapse_crossing_experiment(&m, &data, &grid, 20, 8).unwrap();
    assert_eq!(a.records, b.records);
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    write_records_csv(&a.records, &mut csv_a).unwrap();
    write_records_csv(&b.records, &mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("# t in diffusion time units"));
    assert!(text.lines().nth(1).unwrap() == "kind,t,value,stderr,n_rep,model_hash,seed");
    let c = collapse_crossing_experiment(&m, &data, &grid, 20, 9).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn gap_grows_as_time_decreases() {
    let m = model(16, 8, Activation::Linear, Ensemble::DeterministicIsometry);
    let data = sample_dataset(&m, 300, 1).unwrap();
    let out = collapse_crossing_experiment(&m, &data, &[1.0, 0.1, 0.01], 40, 3).unwrap();
    let v: Vec<f64> = out.records.iter().map(|r| r.value).collect();
    assert!(v[0] < v[1] && v[1] < v[2], "{v:?}");
}

/// At small t the rest of the planted sample's own class carries at least as
/// much mass as the other class, up to noise.
#[test]
fn same_class_dominates_other_class() {
    let m = model(16, 8, Activation::Tanh, Ensemble::GaussianIid);
    let data = sample_dataset(&m, 400, 1).unwrap();
    let out = collapse_crossing_experiment(&m, &data, &[0.5, 0.2], 60, 5).unwrap();
    for &(mean, se) in &out.class_gap {
        assert!(mean > -2.0 * se, "{mean} ± {se}");
    }
}

#[test]
fn rem_identity_and_variance_scaling() {
    let m = model(20, 10, Activation::Tanh, Ensemble::GaussianIid);
    let a = rem_derivative_check(&m, 0.5, 8000, 1).unwrap();
    let b = rem_derivative_check(&m, 0.5, 4000, 1).unwrap();
    for r in [&a, &b] {
        assert!((r.value - 0.5).abs() < 4.0 * r.stderr);
        // each replicate is ‖z‖²/2d, with variance 1/2d
        let scaled = r.stderr.powi(2) * r.n_rep as f64 * 20.0;
        assert!((scaled - 0.5).abs() < 0.05, "{scaled}");
    }
    assert!((b.stderr / a.stderr - 2f64.sqrt()).abs() < 0.08);
}

#[test]
fn matched_prior_is_not_worse_than_mismatched() {
    let m = model(12, 6, Activation::Tanh, Ensemble::GaussianIid);
    let pair = free_energy_mc_paired(&m, 0.5, 100, 10_000, 2).unwrap();
    assert!(
        pair.difference > -2.0 * pair.difference_stderr,
        "{} ± {}",
        pair.difference,
        pair.difference_stderr
    );
    assert_eq!(pair.matched.record.kind, ExperimentKind::FreeEnergyMc);
}

#[test]
fn speciation_agreement_starts_near_half() {
    let m = ManifoldModel::new(
        16,
        8,
        0.25,
        1.0,
        Center::Scale(1.0),
        Activation::Linear,
        Ensemble::DeterministicIsometry,
        0,
    )
    .unwrap();
    let opts = CloningOptions::default();
    let exp = speciation_experiment(&m, 256, &[4.0, 0.5], 24, 16, 3, &opts).unwrap();
    let early = &exp.records[0];
    let late = &exp.records[1];
    assert_eq!(early.kind, ExperimentKind::SpeciationAgreement);
    // random classes give pairwise agreement (n/2 − 1)/(n − 1) ≈ 0.47
    assert!((early.value - 0.5).abs() < 0.15, "{}", early.value);
    assert!(late.value > early.value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_parts_sum_to_normalizer(t in 0.02f64..3.0, planted in 0usize..40, seed in 0u64..1000) {
        let m = model(6, 3, Activation::Tanh, Ensemble::GaussianIid);
        let data = sample_dataset(&m, 40, seed).unwrap();
        let score = EmpiricalScore::new(&data).unwrap();
        let x = planted_point(data.point(planted), t, seed, 0);
        let s = partition_split(&score, planted, &x, t).unwrap();
        let full = score.eval(&x, t).unwrap().log_norm;
        prop_assert!((s.log_total() - full).abs() < 1e-10);
        prop_assert!(s.log_z2() >= s.log_z2_plus.max(s.log_z2_minus));
        prop_assert!(s.log_z1 <= 0.0);
    }
}
