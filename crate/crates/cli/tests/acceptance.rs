//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

// golden values keep every digit of the high-precision reference
#![allow(clippy::excessive_precision)]

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_PI, PI};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use phsub::calibration::{fit_loss_model, synthetic_origin_data, FitOptions, FreeParams};
use phsub::io::{format_kernel, format_origin_data};
use phsub::model::{pump_for_squeezing_db, wigner_origin_curve};
use phsub::modes::{capture_error, psi0, solve_modes, KernelMatrix, TimeGrid};
use phsub::sampler::sample;
use phsub::spectrum::{peak_fwhm, sideline_suppression_db};
use phsub::tomography::{
    linspace, mle_reconstruct, photon_dist, wigner_from_rho, DensityMatrix, MleOptions, WignerGrid,
};
use phsub::{ConditionalState, FilterChain, ModelConfig, PumpRatio};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit, || {
        format!("runtime {:.2}s exceeds {limit}s", elapsed.as_secs_f64())
    })
}

fn trapezoid_2d(state: &ConditionalState, half: f64, n: usize) -> f64 {
    let h = 2.0 * half / (n - 1) as f64;
    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
    let mut total = 0.0;
    for i in 0..n {
        let x = -half + h * i as f64;
        for j in 0..n {
            total += w(i) * w(j) * state.wigner(x, -half + h * j as f64);
        }
    }
    total
}

fn vacuum_identity() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default().with_nu(0.1);
    let state = ConditionalState::new(PumpRatio::new(0.0).unwrap(), &cfg).unwrap();
    let axis = linspace(-5.0, 5.0, 201);
    let mut worst = 0.0f64;
    for &x in &axis {
        for &p in &axis {
            let exact = (-x * x - p * p).exp() / PI;
            worst = worst.max((state.wigner(x, p) - exact).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-12, || format!("max error {worst:e}"))?;
    within(elapsed, 1.0)?;
    Ok(format!("max error {worst:.1e} on 201^2"))
}

fn normalization_sweep() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut cfg = ModelConfig::default()
            .with_tau(rng.random_range(0.85..0.999))
            .with_loss(rng.random_range(0.8..1.0), rng.random_range(0.0..1.0))
            .with_nu(rng.random_range(0.0..1e-6));
        cfg.loss.tau_h = rng.random_range(0.5..1.0);
        let z = PumpRatio::new(rng.random_range(0.02..0.5)).unwrap();
        let state = ConditionalState::new(z, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((trapezoid_2d(&state, 8.0, 401) - 1.0).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-6, || format!("max |integral - 1| = {worst:e}"))?;
    within(elapsed, 30.0)?;
    Ok(format!("100 configs, max |integral - 1| = {worst:.1e}"))
}

/// `(z, W00)` at tau = 0.95, frozen from an independent 50-digit evaluation.
const ORIGIN_GOLDEN: [(f64, f64); 9] = [
    (0.05, -0.046754233974009376),
    (0.1, -0.092170552841902798),
    (0.2, -0.084433633998021745),
    (0.3, -0.056235391872631991),
    (0.4, -0.026636116259311856),
    (0.5, -0.0039543620686641541),
    (0.6, 0.0090379962840872454),
    (0.7, 0.013784582349842086),
    (0.8, 0.013280132844736978),
];

fn negativity_regime() -> Outcome {
    let cfg = ModelConfig::default();
    let zs: Vec<f64> = ORIGIN_GOLDEN.iter().map(|g| g.0).collect();
    let curve = wigner_origin_curve(&zs, &cfg).map_err(|e| e.to_string())?;
    for ((z, w), (_, gold)) in curve.iter().zip(&ORIGIN_GOLDEN) {
        ensure((w - gold).abs() < 1e-12, || format!("z {z}: {w} vs golden {gold}"))?;
    }
    let fine = linspace(0.0, 0.95, 96);
    let curve = wigner_origin_curve(&fine, &cfg).map_err(|e| e.to_string())?;
    let negative: Vec<f64> = curve.iter().filter(|p| p.1 < 0.0).map(|p| p.0).collect();
    let (lo, hi) = (negative.first().copied(), negative.last().copied());
    let (lo, hi) = lo.zip(hi).ok_or("W(0,0) never negative")?;
    ensure(lo > 0.0 && hi < 0.95, || format!("negative on [{lo}, {hi}], not interior"))?;
    let min = curve.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let tail = curve.last().unwrap().1;
    ensure(tail.abs() < 0.25 * min.abs(), || format!("tail {tail} vs minimum {min}"))?;
    Ok(format!("W(0,0) < 0 for z in [{lo:.2}, {hi:.2}], min {min:.4}, golden within 1e-12"))
}

const TAPS: [f64; 3] = [0.01, 0.05, 0.10];

fn fit_start() -> ModelConfig {
    ModelConfig::default().with_loss(0.85, 0.5)
}

fn constant_loss_rejection() -> Outcome {
    let frozen = FitOptions {
        free: FreeParams {
            tau_s0: true,
            kappa: false,
            tau_h: false,
        },
        ..FitOptions::default()
    };
    let mut worst = f64::MAX;
    for seed in 0..50 {
        let data = synthetic_origin_data(&ModelConfig::default(), &TAPS, &linspace(0.05, 0.9, 12), 0.005, seed)
            .map_err(|e| e.to_string())?;
        let free = fit_loss_model(&data, &fit_start(), &FitOptions::default()).map_err(|e| e.to_string())?;
        let constant = fit_loss_model(&data, &fit_start().with_loss(0.9, 0.0), &frozen)
            .map_err(|e| e.to_string())?;
        worst = worst.min(constant.rss / free.rss);
    }
    ensure(worst >= 10.0, || format!("min RSS ratio {worst:.2}"))?;
    Ok(format!("min RSS ratio (kappa = 0 / free) over 50 seeds = {worst:.1}"))
}

fn fit_recovery() -> Outcome {
    let start = Instant::now();
    let mut hits = 0;
    for seed in 0..50 {
        let data = synthetic_origin_data(&ModelConfig::default(), &TAPS, &linspace(0.05, 0.9, 12), 0.005, 500 + seed)
            .map_err(|e| e.to_string())?;
        let fit = fit_loss_model(&data, &fit_start(), &FitOptions::default()).map_err(|e| e.to_string())?;
        if (fit.tau_s0 - 0.95).abs() <= 0.02 && (fit.kappa - 0.93).abs() <= 0.05 {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(hits >= 45, || format!("{hits}/50 seeds recovered"))?;
    within(elapsed, 120.0)?;
    Ok(format!("{hits}/50 seeds within tolerance"))
}

fn tomography_round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let z = pump_for_squeezing_db(-2.6, &cfg).map_err(|e| e.to_string())?;
    let ds = sample(z, &cfg, 50_000, 1).map_err(|e| e.to_string())?;
    let rec = mle_reconstruct(&ds, &MleOptions::default()).map_err(|e| e.to_string())?;
    for (k, w) in rec.log_likelihood.windows(2).enumerate() {
        ensure(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), || {
            format!("log-likelihood decreased at iteration {k}")
        })?;
    }
    let axis = linspace(-3.0, 3.0, 61);
    let state = ConditionalState::new(z, &cfg).unwrap();
    let model = WignerGrid::tabulate(&axis, &axis, |x, p| state.wigner(x, p));
    let recon = wigner_from_rho(&rec.rho, &axis, &axis).map_err(|e| e.to_string())?;
    let dev = recon.max_abs_difference(&model).map_err(|e| e.to_string())?;
    let (w_rec, w_mod) = (recon.at(30, 30), state.wigner(0.0, 0.0));
    let elapsed = start.elapsed();
    ensure(dev <= 0.02, || format!("max deviation {dev:.4}"))?;
    ensure((w_rec < 0.0) == (w_mod < 0.0), || format!("W(0,0) {w_rec} vs model {w_mod}"))?;
    within(elapsed, 300.0)?;
    Ok(format!(
        "max deviation {dev:.4}, W(0,0) {w_rec:.4} (model {w_mod:.4}), {} iterations",
        rec.iterations
    ))
}

fn fock_sanity() -> Outcome {
    let one = DensityMatrix::fock(1, 20).map_err(|e| e.to_string())?;
    let w = wigner_from_rho(&one, &[0.0], &[0.0]).map_err(|e| e.to_string())?.values[0];
    ensure((w + FRAC_1_PI).abs() < 1e-10, || format!("W_1(0,0) = {w}"))?;
    let cfg = ModelConfig::default();
    let mut report = Vec::new();
    for (seed, z) in [(31, 0.1), (32, 0.2)] {
        let ds = sample(PumpRatio::new(z).unwrap(), &cfg, 50_000, seed).map_err(|e| e.to_string())?;
        let rec = mle_reconstruct(&ds, &MleOptions::default()).map_err(|e| e.to_string())?;
        let d = photon_dist(&rec.rho);
        ensure(d[1] > d[2], || format!("z {z}: P1 {} <= P2 {}", d[1], d[2]))?;
        report.push(format!("z={z}: P1 {:.3} > P2 {:.3}", d[1], d[2]));
    }
    Ok(format!("W_1(0,0) = -1/pi; {}", report.join(", ")))
}

fn mode_solver() -> Outcome {
    let zeta0 = ModelConfig::default().cavity.zeta0();
    let grid = TimeGrid::symmetric(8.0 / zeta0, 1025).map_err(|e| e.to_string())?;
    let h = KernelMatrix::rank_one(zeta0, grid).map_err(|e| e.to_string())?;
    let sol = solve_modes(&h, 2).map_err(|e| e.to_string())?;
    let target = psi0(zeta0, &grid).map_err(|e| e.to_string())?;
    let mode_err = sol.modes[0]
        .values
        .iter()
        .zip(&target.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).norm() / zeta0.sqrt()));
    ensure(mode_err < 1e-4, || format!("leading mode error {mode_err:e}"))?;

    let grid = TimeGrid::symmetric(3.0 / zeta0, 512).map_err(|e| e.to_string())?;
    let h = KernelMatrix::stationary(zeta0, grid).map_err(|e| e.to_string())?;
    let k = 6;
    let sol = solve_modes(&h, k).map_err(|e| e.to_string())?;
    let w = grid.weights();
    let m = DMatrix::from_fn(grid.n, grid.n, |i, j| h.entries[(i, j)] * (w[i] * w[j]).sqrt());
    let mut exact: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    exact.sort_by(|a, b| b.total_cmp(a));
    let eig_err = sol
        .eigenvalues
        .iter()
        .zip(&exact)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(eig_err < 1e-10, || format!("eigenvalue error {eig_err:e}"))?;
    let mut jk_err = 0.0f64;
    for kk in 0..=k {
        let j = capture_error(&h, &sol.modes[..kk]).map_err(|e| e.to_string())?;
        let discarded: f64 = exact[kk..].iter().sum();
        jk_err = jk_err.max((j - discarded).abs());
    }
    ensure(jk_err < 1e-8, || format!("J_K error {jk_err:e}"))?;
    Ok(format!(
        "mode error {mode_err:.1e}, eigenvalue error {eig_err:.1e} (n=512), J_K error {jk_err:.1e}"
    ))
}

fn spectrum_model() -> Outcome {
    let cfg = ModelConfig::default();
    let mut widths = Vec::new();
    let mut weakest = f64::MIN;
    for ratio in [5.0, 6.0, 7.0, 8.0, 9.0, 10.0] {
        let chain = FilterChain::centered(3, ratio, cfg.cavity.fwhm_hz(), cfg.cavity.fsr, 2)
            .map_err(|e| e.to_string())?;
        let s = sideline_suppression_db(&chain);
        let w = peak_fwhm(&chain) / 1e6;
        ensure(s < -20.0, || format!("ratio {ratio}: suppression {s:.1} dB"))?;
        ensure((8.0..=9.3).contains(&w), || format!("ratio {ratio}: FWHM {w:.3} MHz"))?;
        weakest = weakest.max(s);
        widths.push(w);
    }
    let (lo, hi) = widths
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &w| (a.min(w), b.max(w)));
    Ok(format!("suppression <= {weakest:.1} dB, FWHM {lo:.2}-{hi:.2} MHz for 5-10x filters"))
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let inputs = tempfile::tempdir().map_err(|e| e.to_string())?;
    let origin = inputs.path().join("origin.csv");
    let data = synthetic_origin_data(&ModelConfig::default(), &TAPS, &linspace(0.05, 0.9, 12), 0.005, 3)
        .map_err(|e| e.to_string())?;
    fs::write(&origin, format_origin_data(&data)).map_err(|e| e.to_string())?;
    let zeta0 = ModelConfig::default().cavity.zeta0();
    let grid = TimeGrid::symmetric(3.0 / zeta0, 128).unwrap();
    let kernel = inputs.path().join("kernel.csv");
    let h = KernelMatrix::stationary(zeta0, grid).unwrap();
    fs::write(&kernel, format_kernel(&h, Some(zeta0), "stationary")).map_err(|e| e.to_string())?;
    let dataset = inputs.path().join("dataset.csv");
    let made = Command::new(env!("CARGO_BIN_EXE_phsub"))
        .args(["--seed", "5", "--out"])
        .arg(inputs.path())
        .arg("sample")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(made.status.success(), || "could not create input dataset".into())?;

    let commands: Vec<Vec<String>> = vec![
        vec!["model".into()],
        vec!["--squeezing-db".into(), "-2.6".into(), "model".into()],
        vec!["sample".into()],
        vec!["reconstruct".into(), "--data".into(), dataset.display().to_string()],
        vec!["pipeline".into()],
        vec!["spectrum".into()],
        vec!["modes".into()],
        vec!["modes".into(), "--kernel".into(), kernel.display().to_string()],
        vec!["fit".into(), "--data".into(), origin.display().to_string()],
        vec!["fit".into(), "--data".into(), origin.display().to_string(), "--freeze-kappa".into()],
    ];
    let mut files = 0;
    for args in &commands {
        let mut trees = Vec::new();
        let mut stdouts = Vec::new();
        for _ in 0..2 {
            let out = tempfile::tempdir().map_err(|e| e.to_string())?;
            let o = Command::new(env!("CARGO_BIN_EXE_phsub"))
                .args(["--seed", "11", "--out"])
                .arg(out.path())
                .args(args)
                .output()
                .map_err(|e| e.to_string())?;
            ensure(o.status.success(), || {
                format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr))
            })?;
            trees.push(read_tree(out.path()));
            stdouts.push(o.stdout);
        }
        ensure(!trees[0].is_empty(), || format!("{args:?} wrote nothing"))?;
        ensure(trees[0] == trees[1], || format!("{args:?}: output files differ"))?;
        ensure(stdouts[0] == stdouts[1], || format!("{args:?}: stdout differs"))?;
        files += trees[0].len();
    }
    Ok(format!("{} invocations, {files} files byte-identical", commands.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("vacuum identity", vacuum_identity),
        ("normalization sweep", normalization_sweep),
        ("negativity regime", negativity_regime),
        ("constant-loss rejection", constant_loss_rejection),
        ("fit recovery", fit_recovery),
        ("tomography round trip", tomography_round_trip),
        ("Fock sanity", fock_sanity),
        ("mode solver", mode_solver),
        ("spectrum model", spectrum_model),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
