use phsub::calibration::{
    fit_loss_model, residual_profile, sign_runs_test, synthetic_origin_data, FitOptions,
    FreeParams, OriginCurveData,
};
use phsub::tomography::linspace;
use phsub::ModelConfig;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAPS: [f64; 3] = [0.01, 0.05, 0.10];
const NOISE: f64 = 0.005;

fn z_grid() -> Vec<f64> {
    linspace(0.05, 0.9, 12)
}

fn noisy(seed: u64) -> OriginCurveData {
    synthetic_origin_data(&ModelConfig::default(), &TAPS, &z_grid(), NOISE, seed).unwrap()
}

/// Starting configuration away from the truth, so recovery is not by construction.
fn start_cfg() -> ModelConfig {
    ModelConfig::default().with_loss(0.85, 0.5)
}

fn frozen_kappa() -> FitOptions {
    FitOptions {
        free: FreeParams {
            tau_s0: true,
            kappa: false,
            tau_h: false,
        },
        ..FitOptions::default()
    }
}

#[test]
fn noisy_round_trip_recovers_loss_parameters() {
    let seeds = 20;
    let mut hits = 0;
    for seed in 0..seeds {
        let fit = fit_loss_model(&noisy(seed), &start_cfg(), &FitOptions::default()).unwrap();
        if (fit.tau_s0 - 0.95).abs() <= 0.02 && (fit.kappa - 0.93).abs() <= 0.05 {
            hits += 1;
        }
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
    assert!(hits as f64 >= 0.9 * seeds as f64, "{hits}/{seeds}");
}

#[test]
fn normalized_residuals_are_unit_scale() {
    let mut inside = 0;
    let mut total = 0;
    for seed in 100..110 {
        let data = noisy(seed);
        let fit = fit_loss_model(&data, &start_cfg(), &FitOptions::default()).unwrap();
        let res = residual_profile(&fit, &data, &start_cfg()).unwrap();
        assert_eq!(res, fit.residuals);
        inside += res.iter().filter(|r| r.normalized.abs() <= 1.0).count();
        total += res.len();
        let mean = res.iter().map(|r| r.normalized).sum::<f64>() / res.len() as f64;
        assert!(mean.abs() < 3.0 / (res.len() as f64).sqrt(), "seed {seed}: mean {mean}");
    }
    let frac = inside as f64 / total as f64;
    assert!((0.60..=0.76).contains(&frac), "{frac}");
}

#[test]
fn constant_loss_fit_is_rejected() {
    let data = noisy(7);
    let free = fit_loss_model(&data, &start_cfg(), &FitOptions::default()).unwrap();
    let frozen = fit_loss_model(&data, &start_cfg().with_loss(0.9, 0.0), &frozen_kappa()).unwrap();
    assert_eq!(frozen.kappa, 0.0);
    assert!(frozen.rss > 10.0 * free.rss, "{} vs {}", frozen.rss, free.rss);
    // the misfit is systematic in z, so residual signs cluster into few runs
    let runs = sign_runs_test(&frozen.residuals);
    assert!(runs.z_score < -2.33, "{runs:?}");
    let ok = sign_runs_test(&free.residuals);
    assert!(ok.z_score > -2.33, "{ok:?}");
}

#[test]
fn fit_ignores_point_order() {
    let data = noisy(3);
    let mut shuffled = data.points.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let shuffled = OriginCurveData::new(shuffled).unwrap();
    let a = fit_loss_model(&data, &start_cfg(), &FitOptions::default()).unwrap();
    let b = fit_loss_model(&shuffled, &start_cfg(), &FitOptions::default()).unwrap();
    assert!((a.tau_s0 - b.tau_s0).abs() < 1e-7);
    assert!((a.kappa - b.kappa).abs() < 1e-7);
    assert!((a.chi2 - b.chi2).abs() < 1e-9 * a.chi2.max(1.0));
}

#[test]
fn sigma_rescaling_rescales_covariance_only() {
    let data = noisy(4);
    let c = 3.0;
    let mut scaled = data.clone();
    scaled.points.iter_mut().for_each(|p| p.sigma *= c);
    let a = fit_loss_model(&data, &start_cfg(), &FitOptions::default()).unwrap();
    let b = fit_loss_model(&scaled, &start_cfg(), &FitOptions::default()).unwrap();
    assert!((a.tau_s0 - b.tau_s0).abs() < 1e-7);
    assert!((a.kappa - b.kappa).abs() < 1e-7);
    assert!((a.chi2 / (c * c) - b.chi2).abs() < 1e-6 * b.chi2);
    for (ra, rb) in a.covariance.iter().zip(&b.covariance) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x * c * c - y).abs() < 1e-4 * y.abs().max(1e-12), "{x} vs {y}");
        }
    }
}
