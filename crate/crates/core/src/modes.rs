//! Temporal mode functions on a uniform time grid.
//!
//! Inner products and integrals use trapezoidal weights. Kernels `h(t, t')`
//! are discretized as `w^{1/2} h w^{1/2}` so that the integral eigenproblem
//! `chi Psi(t) = int h(t, t') Psi(t') dt'` becomes a Hermitian matrix
//! eigenproblem whose eigenvectors map back to weighted-orthonormal modes.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// First sample time, s.
    pub t0: f64,
    /// Sample spacing, s.
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", "must be finite and > 0"));
        }
        if n < 2 {
            return Err(Error::invalid("n", "grid needs at least 2 points"));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("t0", "must be finite"));
        }
        Ok(Self { t0, dt, n })
    }

    /// `n` points spanning `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::invalid("half_width", "must be > 0"));
        }
        if n < 2 {
            return Err(Error::invalid("n", "grid needs at least 2 points"));
        }
        Self::new(-half_width, 2.0 * half_width / (n - 1) as f64, n)
    }

    /// Default grid for `psi0`: `[-8/zeta0, 8/zeta0]` with 4096 points.
    pub fn for_psi0(zeta0: f64) -> Result<Self> {
        Self::symmetric(8.0 / zeta0, 4096)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    pub fn end(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.time(i)).collect()
    }

    /// Trapezoidal quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n];
        w[0] *= 0.5;
        w[self.n - 1] *= 0.5;
        w
    }

    pub fn matches(&self, other: &TimeGrid) -> bool {
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-12 * scale;
        self.n == other.n
            && close(self.dt, other.dt, self.dt)
            && close(self.t0, other.t0, self.dt * self.n as f64)
    }
}

/// A normalized temporal mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunction {
    pub grid: TimeGrid,
    /// Amplitudes, s^{-1/2}.
    pub values: Vec<Complex64>,
}

impl ModeFunction {
    /// Wraps values that must already be normalized within 1e-8.
    pub fn new(grid: TimeGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::GridMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.n
            )));
        }
        let mode = Self { grid, values };
        let norm = mode.norm_sqr();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::Precondition(format!(
                "mode is not normalized (norm^2 = {norm})"
            )));
        }
        Ok(mode)
    }

    /// Normalizes arbitrary nonzero values on the grid.
    pub fn normalized(grid: TimeGrid, mut values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::GridMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.n
            )));
        }
        let norm = weighted_dot(&grid.weights(), &values, &values).re.sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Precondition("cannot normalize a zero mode".into()));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self { grid, values })
    }

    pub fn norm_sqr(&self) -> f64 {
        weighted_dot(&self.grid.weights(), &self.values, &self.values).re
    }

    /// `<self|other> = sum_i w_i conj(self_i) other_i`.
    pub fn inner(&self, other: &ModeFunction) -> Result<Complex64> {
        if !self.grid.matches(&other.grid) {
            return Err(Error::GridMismatch("modes live on different grids".into()));
        }
        Ok(weighted_dot(&self.grid.weights(), &self.values, &other.values))
    }
}

fn weighted_dot(w: &[f64], a: &[Complex64], b: &[Complex64]) -> Complex64 {
    w.iter()
        .zip(a.iter().zip(b))
        .map(|(&wi, (ai, bi))| ai.conj() * bi * wi)
        .sum()
}

/// Largest deviation of the Gram matrix of `modes` from the identity.
pub fn orthonormality_defect(modes: &[ModeFunction]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, a) in modes.iter().enumerate() {
        for (j, b) in modes.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((a.inner(b)? - target).norm());
        }
    }
    Ok(worst)
}

/// Rectangular trigger-mode basis function
/// `phi_k(t) = T^{-1/2} exp(-i 2 pi k t / T)` on `[-T/2, T/2]`, zero outside.
pub fn dft_mode(k: i64, window: f64, grid: &TimeGrid) -> Result<ModeFunction> {
    if !(window > 0.0) {
        return Err(Error::invalid("window", "must be > 0"));
    }
    let half = 0.5 * window;
    let slack = 1e-9 * grid.dt;
    if grid.t0 > -half + slack || grid.end() < half - slack {
        return Err(Error::Precondition(format!(
            "grid [{:e}, {:e}] does not cover the window [-{half:e}, {half:e}]",
            grid.t0,
            grid.end()
        )));
    }
    if k != 0 {
        let per_cycle = window / (k.unsigned_abs() as f64 * grid.dt);
        if per_cycle < 8.0 {
            return Err(Error::Resolution(format!(
                "{per_cycle:.2} points per oscillation for k = {k}; need at least 8"
            )));
        }
    }
    let amp = window.sqrt().recip();
    let values = grid
        .times()
        .into_iter()
        .map(|t| {
            if t >= -half - slack && t <= half + slack {
                Complex64::from_polar(amp, -2.0 * std::f64::consts::PI * k as f64 * t / window)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    ModeFunction::normalized(*grid, values)
}

/// Signal mode `Psi0(t) = sqrt(zeta0) exp(-zeta0 |t|)`, renormalized on the grid.
pub fn psi0(zeta0: f64, grid: &TimeGrid) -> Result<ModeFunction> {
    if !(zeta0 > 0.0) {
        return Err(Error::invalid("zeta0", "must be > 0"));
    }
    // analytic mass outside the grid
    let lost = 0.5 * ((2.0 * zeta0 * grid.t0.min(0.0)).exp() + (-2.0 * zeta0 * grid.end().max(0.0)).exp());
    if lost > 1e-4 {
        return Err(Error::Truncation(format!(
            "grid [{:e}, {:e}] loses {lost:.2e} of the mode norm",
            grid.t0,
            grid.end()
        )));
    }
    let amp = zeta0.sqrt();
    let values = grid
        .times()
        .into_iter()
        .map(|t| Complex64::new(amp * (-zeta0 * t.abs()).exp(), 0.0))
        .collect();
    ModeFunction::normalized(*grid, values)
}

/// Discretized correlation kernel `h(t_i, t_j)`, s^-1.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub grid: TimeGrid,
    pub entries: DMatrix<Complex64>,
}

impl KernelMatrix {
    pub fn new(grid: TimeGrid, entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != grid.n || entries.ncols() != grid.n {
            return Err(Error::GridMismatch(format!(
                "{}x{} kernel on a {}-point grid",
                entries.nrows(),
                entries.ncols(),
                grid.n
            )));
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let defect = eigen::hermitian_defect(&entries);
        if defect > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidKernel(format!(
                "kernel is not Hermitian (defect {defect:e}, scale {scale:e})"
            )));
        }
        Ok(Self { grid, entries })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let t = grid.times();
        let entries = DMatrix::from_fn(grid.n, grid.n, |i, j| f(t[i], t[j]));
        Self::new(grid, entries)
    }

    /// `h(t, t') = Psi0(t) Psi0(t')`, whose only mode is `Psi0`.
    pub fn rank_one(zeta0: f64, grid: TimeGrid) -> Result<Self> {
        Self::from_fn(grid, |t, s| {
            Complex64::new(zeta0 * (-zeta0 * (t.abs() + s.abs())).exp(), 0.0)
        })
    }

    /// Stationary exponential correlation `zeta0 exp(-zeta0 |t - t'|)`.
    pub fn stationary(zeta0: f64, grid: TimeGrid) -> Result<Self> {
        Self::from_fn(grid, |t, s| {
            Complex64::new(zeta0 * (-zeta0 * (t - s).abs()).exp(), 0.0)
        })
    }

    /// Discrete delta function: the quadrature-weighted kernel is the identity.
    pub fn delta(grid: TimeGrid) -> Result<Self> {
        let w = grid.weights();
        let entries = DMatrix::from_fn(grid.n, grid.n, |i, j| {
            if i == j {
                Complex64::new(1.0 / w[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self::new(grid, entries)
    }

    /// `w^{1/2} h w^{1/2}`.
    fn weighted(&self) -> DMatrix<Complex64> {
        let sw: Vec<f64> = self.grid.weights().iter().map(|w| w.sqrt()).collect();
        DMatrix::from_fn(self.grid.n, self.grid.n, |i, j| {
            self.entries[(i, j)] * (sw[i] * sw[j])
        })
    }

    /// `int h(t, t) dt`.
    pub fn weighted_trace(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .enumerate()
            .map(|(i, w)| self.entries[(i, i)].re * w)
            .sum()
    }

    /// `<Psi|h|Psi>`.
    pub fn expectation(&self, mode: &ModeFunction) -> Result<f64> {
        if !self.grid.matches(&mode.grid) {
            return Err(Error::GridMismatch("mode and kernel grids differ".into()));
        }
        let w = self.grid.weights();
        let wv: Vec<Complex64> = mode.values.iter().zip(&w).map(|(v, wi)| v * wi).collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.grid.n {
            let row: Complex64 = (0..self.grid.n).map(|j| self.entries[(i, j)] * wv[j]).sum();
            acc += wv[i].conj() * row;
        }
        Ok(acc.re)
    }
}

/// Leading eigenpairs of a kernel: `chi_k` descending and orthonormal modes.
#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub eigenvalues: Vec<f64>,
    pub modes: Vec<ModeFunction>,
}

/// Solves the integral eigenproblem for the `count` strongest modes.
pub fn solve_modes(h: &KernelMatrix, count: usize) -> Result<ModeSolution> {
    let n = h.grid.n;
    if count > n {
        return Err(Error::Precondition(format!(
            "requested {count} modes on a {n}-point grid"
        )));
    }
    let m = h.weighted();
    let eig = eigen::top_eigenpairs(&m, count)?;
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(neg) = eig.values.iter().find(|&&v| v < -1e-8 * scale.max(1.0)) {
        return Err(Error::InvalidKernel(format!(
            "kernel is not positive semidefinite (eigenvalue {neg:e})"
        )));
    }
    let inv_sw: Vec<f64> = h.grid.weights().iter().map(|w| w.sqrt().recip()).collect();
    let modes = (0..count)
        .map(|k| {
            let col = eig.vectors.column(k);
            // fix the global phase: largest component real and positive
            let pivot = col
                .iter()
                .copied()
                .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap_or(Complex64::new(1.0, 0.0));
            let phase = if pivot.norm() > 0.0 {
                pivot.conj() / pivot.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            let values = col
                .iter()
                .zip(&inv_sw)
                .map(|(v, s)| v * phase * *s)
                .collect();
            ModeFunction {
                grid: h.grid,
                values,
            }
        })
        .collect();
    Ok(ModeSolution {
        eigenvalues: eig.values,
        modes,
    })
}

/// Square error `J_K = int h(t, t) dt - sum_k <Psi_k|h|Psi_k>` left after
/// keeping the given orthonormal modes.
pub fn capture_error(h: &KernelMatrix, modes: &[ModeFunction]) -> Result<f64> {
    let defect = orthonormality_defect(modes)?;
    if defect > 1e-8 {
        return Err(Error::Precondition(format!(
            "modes are not orthonormal (Gram defect {defect:e})"
        )));
    }
    let captured = modes
        .iter()
        .map(|m| h.expectation(m))
        .sum::<Result<f64>>()?;
    Ok(h.weighted_trace() - captured)
}

/// One homodyne record sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HomodyneTrace {
    pub grid: TimeGrid,
    pub samples: Vec<f64>,
}

/// Quadrature value `x = int trace(t) conj(Psi(t)) dt` (real part).
pub fn project_trace(trace: &HomodyneTrace, mode: &ModeFunction) -> Result<f64> {
    if !trace.grid.matches(&mode.grid) || trace.samples.len() != mode.values.len() {
        return Err(Error::GridMismatch("trace and mode grids differ".into()));
    }
    Ok(trace
        .grid
        .weights()
        .iter()
        .zip(trace.samples.iter().zip(&mode.values))
        .map(|(w, (s, m))| w * s * m.re)
        .sum())
}
