use manifold_diffusion::model::{Activation, Center, Ensemble, ManifoldModel};
use manifold_diffusion::rng;
use manifold_diffusion::speciation::*;
use manifold_diffusion::Error;
use proptest::prelude::*;

/// Plain Monte Carlo estimates of the three smoothings, with standard errors.
fn mc_gammas(rho: f64, y: f64, n: usize, seed: u64) -> [(f64, f64); 3] {
    let mut r = rng::stream(seed, 0);
    let mut sums = [[0.0f64; 2]; 3];
    for _ in 0..n {
        let u = rng::normal(&mut r);
        let phi = (rho.sqrt() * u + y).tanh();
        for (s, v) in sums.iter_mut().zip([phi, phi * u, phi * phi]) {
            s[0] += v;
            s[1] += v * v;
        }
    }
    let nf = n as f64;
    sums.map(|[s, s2]| {
        let m = s / nf;
        (m, ((s2 / nf - m * m) / nf).sqrt())
    })
}

#[test]
fn tanh_gammas_match_monte_carlo() {
    let gf = GammaFunctions::new(0.8, Activation::Tanh).unwrap();
    assert!(gf.converged());
    for (i, &y) in [-1.3, 0.0, 0.4, 2.5].iter().enumerate() {
        let mc = mc_gammas(0.8, y, 2_000_000, i as u64);
        let quad = [gf.gamma0(y), gf.gamma1(y), gf.gamma2(y)];
        for ((m, se), q) in mc.iter().zip(quad) {
            assert!(
                (m - q).abs() < 4.0 * se + 1e-12,
                "y={y}: quadrature {q} vs {m} ± {se}"
            );
        }
    }
}

#[test]
fn tanh_gep_constants_match_monte_carlo() {
    let gf = GammaFunctions::new(1.0, Activation::Tanh).unwrap();
    let gep = gep_constants(&gf).unwrap();
    let mut r = rng::stream(3, 0);
    let n = 200_000;
    let (mut e0, mut e1, mut e2) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let u = rng::normal(&mut r);
        let g = gf.gamma0(u);
        e0 += g;
        e1 += g * u;
        e2 += g * g;
    }
    let nf = n as f64;
    let (e0, e1, e2) = (e0 / nf, e1 / nf, e2 / nf);
    assert!(e0.abs() < 5e-3 && gep.rho0.abs() < 1e-12);
    assert!((e1 - gep.rho1).abs() < 5e-3, "{e1} vs {}", gep.rho1);
    assert!((e2 - e0 * e0 - e1 * e1 - gep.rho_star_sq).abs() < 3e-3);
    assert!(gep.rho_star_sq > 0.0);
}

#[test]
fn linear_gep_has_no_residual() {
    let gf = GammaFunctions::new(1.0, Activation::Linear).unwrap();
    let gep = gep_constants(&gf).unwrap();
    assert!((gep.rho1 - 1.0).abs() < 1e-12);
    assert!(gep.rho_star_sq.abs() < 1e-12);
}

#[test]
fn relu_is_rejected() {
    let model = ManifoldModel::new(
        8,
        4,
        0.5,
        1.0,
        Center::Scale(1.0),
        Activation::Relu,
        Ensemble::GaussianIid,
        0,
    )
    .unwrap();
    assert!(matches!(
        speciation_time_finite(&model),
        Err(Error::Activation { .. })
    ));
    let gf = GammaFunctions::new(1.0, Activation::Relu).unwrap();
    assert!(matches!(gep_constants(&gf), Err(Error::Activation { .. })));
}

/// Σ_j Γ₀(λ_j)²/d fluctuates less across embedding draws as d grows.
#[test]
fn gamma_sum_concentrates() {
    let spread = |d: usize| {
        let vals: Vec<f64> = (0..12)
            .map(|seed| {
                let m = ManifoldModel::new(
                    d,
                    d / 2,
                    0.5,
                    1.0,
                    Center::Scale(1.0),
                    Activation::Tanh,
                    Ensemble::GaussianIid,
                    seed,
                )
                .unwrap();
                SpeciationState::from_model(&m).unwrap().gamma0_sq_sum / d as f64
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        var.sqrt() / mean
    };
    let (small, large) = (spread(16), spread(256));
    assert!(large < 0.5 * small, "{small} -> {large}");
}

/// For an isometric linear embedding Σ_jλ_j² = ‖μ‖², so t_S = ½log(2pm²).
#[test]
fn linear_isometric_speciation_time() {
    let m = ManifoldModel::new(
        64,
        32,
        0.5,
        1.0,
        Center::Scale(1.0),
        Activation::Linear,
        Ensemble::DeterministicIsometry,
        0,
    )
    .unwrap();
    let t = speciation_time_finite(&m).unwrap();
    assert!((t - 0.5 * 64f64.ln()).abs() < 1e-10, "{t}");
}

#[test]
fn curvature_changes_sign_at_speciation_time() {
    let s = 12.5;
    let ts = speciation_time_from_sum(s).unwrap();
    assert!(potential_curvature_at_zero(ts, s).abs() < 1e-12);
    assert!(potential_curvature_at_zero(ts + 0.1, s) > 0.0);
    assert!(potential_curvature_at_zero(ts - 0.1, s) < 0.0);
    assert!(matches!(
        speciation_time_from_sum(0.0),
        Err(Error::NoSpeciationSignal(_))
    ));
}

#[test]
fn reduced_dynamics_commit_after_speciation() {
    let s = 40.0;
    let ts = speciation_time_from_sum(s).unwrap();
    let ens = reduced_sde_simulate(8.0, 0.05, 0.01, s, 400, 1).unwrap();
    let agree = ens.agreement_with_end();
    let at = |t: f64| agree[ens.times.iter().position(|&g| g <= t).unwrap()];
    assert!(
        (at(ts + 2.0) - 0.5).abs() < 0.12,
        "well before t_S: {}",
        at(ts + 2.0)
    );
    assert!(at(ts - 1.0) > 0.95, "well after t_S: {}", at(ts - 1.0));
    assert!(ens.flip_fraction_after(ts - 1.0) < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gamma0_is_odd_for_odd_activations(y in -6.0f64..6.0, rho in 0.05f64..4.0) {
        let gf = GammaFunctions::with_nodes(rho, Activation::Tanh, 128).unwrap();
        prop_assert!((gf.gamma0(y) + gf.gamma0(-y)).abs() < 1e-12);
        prop_assert!((gf.gamma1(y) - gf.gamma1(-y)).abs() < 1e-12);
        prop_assert!((gf.gamma2(y) - gf.gamma2(-y)).abs() < 1e-12);
    }

    #[test]
    fn gamma0_is_monotone_for_tanh(y in -5.0f64..5.0, dy in 0.01f64..1.0) {
        let gf = GammaFunctions::with_nodes(1.0, Activation::Tanh, 128).unwrap();
        prop_assert!(gf.gamma0(y + dy) > gf.gamma0(y));
    }
}
