use nalgebra::DMatrix;
use num_complex::Complex64;
use phsub::modes::{
    capture_error, dft_mode, orthonormality_defect, project_trace, psi0, solve_modes,
    HomodyneTrace, KernelMatrix, TimeGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const ZETA0: f64 = 0.5 * (57e6 + 1.2e6);

/// Eigenvalues of `w^{1/2} h w^{1/2}` from the library dense solver, descending.
fn brute_force_spectrum(h: &KernelMatrix) -> Vec<f64> {
    let w = h.grid.weights();
    let m = DMatrix::from_fn(h.grid.n, h.grid.n, |i, j| {
        h.entries[(i, j)] * (w[i] * w[j]).sqrt()
    });
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

#[test]
fn rank_one_kernel_recovers_signal_mode() {
    let grid = TimeGrid::symmetric(8.0 / ZETA0, 1025).unwrap();
    let h = KernelMatrix::rank_one(ZETA0, grid).unwrap();
    let sol = solve_modes(&h, 3).unwrap();
    let target = psi0(ZETA0, &grid).unwrap();
    let scale = ZETA0.sqrt();
    let worst = sol.modes[0]
        .values
        .iter()
        .zip(&target.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).norm() / scale));
    assert!(worst < 1e-4, "{worst}");
    assert!(sol.eigenvalues[1].abs() < 1e-10);
    assert!(sol.eigenvalues[2].abs() < 1e-10);
    // residual of the integral equation, relative to the mode scale
    let w = grid.weights();
    let mut res = 0.0f64;
    for i in 0..grid.n {
        let hv: Complex64 = (0..grid.n)
            .map(|j| h.entries[(i, j)] * target.values[j] * w[j])
            .sum();
        res = res.max((hv - target.values[i] * sol.eigenvalues[0]).norm() / scale);
    }
    assert!(res < 1e-6, "{res}");
}

#[test]
fn stationary_kernel_matches_brute_force() {
    let grid = TimeGrid::symmetric(3.0 / ZETA0, 512).unwrap();
    let h = KernelMatrix::stationary(ZETA0, grid).unwrap();
    let sol = solve_modes(&h, 6).unwrap();
    let exact = brute_force_spectrum(&h);
    for (k, (a, b)) in sol.eigenvalues.iter().zip(&exact).enumerate() {
        assert!((a - b).abs() < 1e-10, "chi_{k}: {a} vs {b}");
    }
    assert!(orthonormality_defect(&sol.modes).unwrap() < 1e-8);
    for w in sol.eigenvalues.windows(2) {
        assert!(w[0] >= w[1]);
    }
}

#[test]
fn capture_error_is_sum_of_discarded_eigenvalues() {
    let grid = TimeGrid::symmetric(3.0 / ZETA0, 200).unwrap();
    let h = KernelMatrix::stationary(ZETA0, grid).unwrap();
    let k_max = 8;
    let sol = solve_modes(&h, k_max).unwrap();
    let exact = brute_force_spectrum(&h);
    let mut prev = capture_error(&h, &[]).unwrap();
    assert!((prev - h.weighted_trace()).abs() < 1e-12);
    for k in 1..=k_max {
        let j = capture_error(&h, &sol.modes[..k]).unwrap();
        let discarded: f64 = exact[k..].iter().sum();
        assert!((j - discarded).abs() < 1e-8, "K={k}: {j} vs {discarded}");
        assert!(j > -1e-8);
        assert!(j <= prev + 1e-12);
        assert!((prev - j - sol.eigenvalues[k - 1]).abs() < 1e-8);
        prev = j;
    }
}

#[test]
fn white_noise_projection_variance() {
    // samples with two-sided spectral density 1/2 have variance 1 / (2 dt)
    let window = 1e-9;
    let grid = TimeGrid::symmetric(0.5 * window, 64).unwrap();
    let mode = dft_mode(0, window, &grid).unwrap();
    let w = grid.weights();
    let sd = (0.5 / grid.dt).sqrt();
    let expected: f64 = w
        .iter()
        .zip(&mode.values)
        .map(|(wi, m)| wi * wi * m.re * m.re)
        .sum::<f64>()
        * sd
        * sd;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    let mut sum2 = 0.0;
    for _ in 0..n {
        let samples = (0..grid.n)
            .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let x = project_trace(&HomodyneTrace { grid, samples }, &mode).unwrap();
        sum2 += x * x;
    }
    let var = sum2 / n as f64;
    let se = expected * (2.0 / n as f64).sqrt();
    assert!((var - expected).abs() < 3.0 * se, "{var} vs {expected}");
    // interior weights are dt, so the variance sits near the vacuum value 1/2
    assert!((expected - 0.5).abs() < 0.02);
}

#[test]
fn user_kernel_must_be_hermitian() {
    let grid = TimeGrid::symmetric(1.0, 8).unwrap();
    let h = KernelMatrix::from_fn(grid, |t, s| Complex64::new(t - s, 0.0));
    assert!(h.is_err());
}
