//! Fock-basis state reconstruction from homodyne data by iterative maximum
//! likelihood, and the derived photon statistics and Wigner surfaces.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::eigen;
use crate::error::{Error, Result};
use crate::fock::{hermite_functions, wigner_kernels, FOCK_CAP};
use crate::model::{ConditionalState, ModelConfig, PumpRatio};
use crate::sampler::QuadratureDataset;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Truncated Fock-basis density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Checks Hermiticity, unit trace and positivity.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        let rho = Self { entries };
        rho.check()?;
        Ok(rho)
    }

    /// `|n><n|` in dimension `dim`.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::invalid("fock_number", format!("{n} >= dimension {dim}")));
        }
        let mut m = DMatrix::from_element(dim, dim, C0);
        m[(n, n)] = Complex64::new(1.0, 0.0);
        Self::new(m)
    }

    /// Clips negative eigenvalues and renormalizes the trace.
    ///
    /// Returns the matrix and the total weight removed by the clip.
    pub fn project_physical(entries: &DMatrix<Complex64>) -> Result<(Self, f64)> {
        let herm = (entries + entries.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = eigen::jacobi(&herm)?;
        let clipped: f64 = eig.values.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
        let vals: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = vals.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Unphysical("density matrix has no positive weight".into()));
        }
        let dim = herm.nrows();
        let mut out = DMatrix::from_element(dim, dim, C0);
        for (k, &v) in vals.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let col = eig.vectors.column(k);
            out += col * col.adjoint() * Complex64::new(v / total, 0.0);
        }
        let out = (&out + out.adjoint()) * Complex64::new(0.5, 0.0);
        Ok((Self { entries: out }, clipped))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.entries[(n, m)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|v| v.re).sum()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(eigen::jacobi(&self.entries)?.values)
    }

    fn check(&self) -> Result<()> {
        let n = self.entries.nrows();
        if n != self.entries.ncols() || n == 0 {
            return Err(Error::invalid("density_matrix", "must be square and nonempty"));
        }
        let defect = eigen::hermitian_defect(&self.entries);
        if defect > 1e-10 {
            return Err(Error::Unphysical(format!("density matrix not Hermitian ({defect:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::Unphysical(format!("density matrix trace {tr}")));
        }
        let min = self.eigenvalues()?.last().copied().unwrap_or(0.0);
        if min < -1e-9 {
            return Err(Error::Unphysical(format!("density matrix eigenvalue {min:e}")));
        }
        Ok(())
    }
}

/// Phase-by-quadrature histogram of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedHistogram {
    pub phase_bins: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub width: f64,
    /// Row-major `[phase][x]`.
    pub counts: Vec<u64>,
}

impl BinnedHistogram {
    /// Bins `records`; values outside `[x_min, x_max]` go to the edge bins.
    pub fn from_records(
        records: &[(f64, f64)],
        phase_bins: usize,
        x_min: f64,
        x_max: f64,
        width: f64,
    ) -> Result<Self> {
        if phase_bins == 0 {
            return Err(Error::invalid("phase_bins", "must be >= 1"));
        }
        if !(width > 0.0) || !(x_max > x_min) {
            return Err(Error::invalid("bin_width", "need width > 0 and x_max > x_min"));
        }
        let hist = Self {
            phase_bins,
            x_min,
            x_max,
            width,
            counts: vec![0; phase_bins * ((x_max - x_min) / width).round().max(1.0) as usize],
        };
        let mut hist = hist;
        let xb = hist.x_bins();
        let pi = std::f64::consts::PI;
        for &(theta, x) in records {
            let t = theta.rem_euclid(pi);
            let pb = ((t / pi * phase_bins as f64) as usize).min(phase_bins - 1);
            let xi = ((x - x_min) / width).floor();
            let xi = xi.clamp(0.0, (xb - 1) as f64) as usize;
            hist.counts[pb * xb + xi] += 1;
        }
        Ok(hist)
    }

    pub fn x_bins(&self) -> usize {
        self.counts.len() / self.phase_bins
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn phase_center(&self, pb: usize) -> f64 {
        std::f64::consts::PI * (pb as f64 + 0.5) / self.phase_bins as f64
    }

    pub fn x_center(&self, xb: usize) -> f64 {
        self.x_min + self.width * (xb as f64 + 0.5)
    }
}

/// MLE settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MleOptions {
    pub dim: usize,
    pub max_iters: usize,
    /// Relative log-likelihood gain below which iteration stops.
    pub tol: f64,
    pub phase_bins: usize,
    pub bin_width: f64,
    pub x_range: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            dim: 20,
            max_iters: 2000,
            tol: 1e-9,
            phase_bins: 24,
            bin_width: 0.1,
            x_range: 6.0,
        }
    }
}

/// Reconstruction output with diagnostics.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub rho: DensityMatrix,
    /// Log-likelihood per iteration, starting from the initial estimate.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times a populated bin hit the probability floor.
    pub floored_bins: usize,
    /// Iterations that fell back to a damped step.
    pub damped_steps: usize,
    /// Negative eigenvalue weight removed at output.
    pub clipped_weight: f64,
}

/// Probability floor used for populated bins with vanishing model probability.
pub const PROBABILITY_FLOOR: f64 = 1e-15;

struct Projector {
    freq: f64,
    /// Hermitian `dim x dim`, row-major.
    op: Vec<Complex64>,
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Bin projector: `|x_theta><x_theta|` integrated over the quadrature bin
/// (3-point Gauss-Legendre) and averaged over the phase bin.
fn bin_projector(dim: usize, theta_c: f64, half_phase: f64, x_lo: f64, width: f64) -> Vec<Complex64> {
    let gl = [
        (-(0.6f64).sqrt(), 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        ((0.6f64).sqrt(), 5.0 / 9.0),
    ];
    let mid = x_lo + 0.5 * width;
    let mut psi_prod = vec![0.0; dim * dim];
    for (node, w) in gl {
        let x = mid + 0.5 * width * node;
        let psi = hermite_functions(x, dim);
        let w = 0.5 * width * w;
        for n in 0..dim {
            for m in 0..dim {
                psi_prod[n * dim + m] += w * psi[n] * psi[m];
            }
        }
    }
    let mut op = vec![C0; dim * dim];
    for n in 0..dim {
        for m in 0..dim {
            let k = n as f64 - m as f64;
            let phase = Complex64::from_polar(sinc(k * half_phase), k * theta_c);
            op[n * dim + m] = phase * psi_prod[n * dim + m];
        }
    }
    op
}

fn expectation(op: &[Complex64], rho: &[Complex64], dim: usize) -> f64 {
    // Tr(op rho) = sum_nm op_nm rho_mn
    let mut acc = 0.0;
    for n in 0..dim {
        for m in 0..dim {
            let a = op[n * dim + m];
            let b = rho[m * dim + n];
            acc += a.re * b.re - a.im * b.im;
        }
    }
    acc
}

fn log_likelihood(projectors: &[Projector], rho: &[Complex64], dim: usize) -> (f64, Vec<f64>, usize) {
    let probs: Vec<f64> = projectors
        .par_iter()
        .map(|p| expectation(&p.op, rho, dim))
        .collect();
    let mut floored = 0;
    let mut ll = 0.0;
    let probs = probs
        .into_iter()
        .zip(projectors)
        .map(|(p, pr)| {
            let p = if p < PROBABILITY_FLOOR {
                floored += 1;
                PROBABILITY_FLOOR
            } else {
                p
            };
            ll += pr.freq * p.ln();
            p
        })
        .collect();
    (ll, probs, floored)
}

fn to_matrix(v: &[Complex64], dim: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(dim, dim, |i, j| v[i * dim + j])
}

fn from_matrix(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let dim = m.nrows();
    (0..dim * dim).map(|k| m[(k / dim, k % dim)]).collect()
}

/// `(A rho A^H) / Tr`, Hermitian-symmetrized.
fn conjugate_normalize(a: &DMatrix<Complex64>, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let next = a * rho * a.adjoint();
    let next = (&next + next.adjoint()) * Complex64::new(0.5, 0.0);
    let tr: f64 = next.diagonal().iter().map(|v| v.re).sum();
    next / Complex64::new(tr, 0.0)
}

/// Iterative maximum-likelihood reconstruction.
///
/// Each iteration applies `rho <- N[R rho R]` with
/// `R = sum_j (f_j / p_j) Pi_j`. If a full step would lower the likelihood
/// the damped update `(1 + eps R) rho (1 + eps R)` is used instead, halving
/// `eps` until the likelihood does not decrease.
pub fn mle_reconstruct(ds: &QuadratureDataset, opts: &MleOptions) -> Result<Reconstruction> {
    if ds.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let dim = opts.dim;
    if !(2..=FOCK_CAP).contains(&dim) {
        return Err(Error::invalid("dim", format!("must lie in [2, {FOCK_CAP}]")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "must be > 0"));
    }
    let hist = BinnedHistogram::from_records(
        &ds.records,
        opts.phase_bins,
        -opts.x_range,
        opts.x_range,
        opts.bin_width,
    )?;
    let total = hist.total() as f64;
    let xb = hist.x_bins();
    let half_phase = 0.5 * std::f64::consts::PI / opts.phase_bins as f64;
    let projectors: Vec<Projector> = hist
        .counts
        .par_iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, &c)| {
            let pb = j / xb;
            let xi = j % xb;
            let x_lo = hist.x_min + hist.width * xi as f64;
            Projector {
                freq: c as f64 / total,
                op: bin_projector(dim, hist.phase_center(pb), half_phase, x_lo, hist.width),
            }
        })
        .collect();

    let mut rho = DMatrix::from_element(dim, dim, C0);
    for i in 0..dim {
        rho[(i, i)] = Complex64::new(1.0 / dim as f64, 0.0);
    }
    let (mut ll, mut probs, mut floored_total) = log_likelihood(&projectors, &from_matrix(&rho), dim);
    let mut history = vec![ll];
    let mut converged = false;
    let mut damped_steps = 0;
    let mut iterations = 0;
    let ident = DMatrix::<Complex64>::identity(dim, dim);

    while iterations < opts.max_iters {
        iterations += 1;
        let mut r = vec![C0; dim * dim];
        for (p, prob) in projectors.iter().zip(&probs) {
            let s = p.freq / prob;
            for (acc, v) in r.iter_mut().zip(&p.op) {
                *acc += v * s;
            }
        }
        let r = to_matrix(&r, dim);
        let mut accepted = None;
        let mut eps = f64::INFINITY;
        for _ in 0..60 {
            let step = if eps.is_infinite() {
                r.clone()
            } else {
                &ident + &r * Complex64::new(eps, 0.0)
            };
            let cand = conjugate_normalize(&step, &rho);
            let (cll, cprobs, cfl) = log_likelihood(&projectors, &from_matrix(&cand), dim);
            if cll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cll, cprobs, cfl));
                break;
            }
            eps = if eps.is_infinite() { 1.0 } else { eps * 0.5 };
        }
        let Some((cand, cll, cprobs, cfl)) = accepted else {
            converged = true;
            break;
        };
        if eps.is_finite() {
            damped_steps += 1;
        }
        floored_total += cfl;
        let gain = cll - ll;
        rho = cand;
        ll = cll;
        probs = cprobs;
        history.push(ll);
        if gain.abs() <= opts.tol * ll.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    if floored_total > 0 {
        log::warn!("probability floor applied {floored_total} times during reconstruction");
    }
    if !converged {
        log::warn!(
            "reconstruction stopped after {iterations} iterations without reaching tol {:e}",
            opts.tol
        );
    }
    let (rho, clipped_weight) = DensityMatrix::project_physical(&rho)?;
    Ok(Reconstruction {
        rho,
        log_likelihood: history,
        iterations,
        converged,
        floored_bins: floored_total,
        damped_steps,
        clipped_weight,
    })
}

/// Photon-number distribution (diagonal of `rho`).
pub fn photon_dist(rho: &DensityMatrix) -> Vec<f64> {
    rho.entries.diagonal().iter().map(|v| v.re).collect()
}

/// Wigner surface on a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// Row-major `[ix][ip]`.
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.values[ix * self.p.len() + ip]
    }

    /// Evaluates `f(x, p)` on the grid.
    pub fn tabulate(x: &[f64], p: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values = x
            .par_iter()
            .flat_map_iter(|&xi| p.iter().map(move |&pj| (xi, pj)))
            .map(|(xi, pj)| f(xi, pj))
            .collect();
        Self {
            x: x.to_vec(),
            p: p.to_vec(),
            values,
        }
    }

    pub fn max_abs_difference(&self, other: &WignerGrid) -> Result<f64> {
        if self.x != other.x || self.p != other.p {
            return Err(Error::GridMismatch("Wigner grids differ".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Tail weight above which a truncation warning is logged.
pub const TAIL_WARNING: f64 = 1e-3;

/// `W(x, p) = sum_nm rho_nm W_{|n><m|}(x, p)`.
pub fn wigner_from_rho(rho: &DensityMatrix, x_grid: &[f64], p_grid: &[f64]) -> Result<WignerGrid> {
    if x_grid.iter().chain(p_grid).any(|v| !v.is_finite()) {
        return Err(Error::invalid("grid", "all grid points must be finite"));
    }
    let dim = rho.dim();
    let tail: f64 = photon_dist(rho)[dim.saturating_sub(2)..].iter().sum();
    if tail > TAIL_WARNING {
        log::warn!("Fock truncation at {dim}: tail weight {tail:.2e}");
    }
    let values: Vec<Complex64> = x_grid
        .par_iter()
        .flat_map_iter(|&x| p_grid.iter().map(move |&p| (x, p)))
        .map(|(x, p)| {
            let k = wigner_kernels(dim, x, p);
            let mut acc = C0;
            for n in 0..dim {
                for m in 0..dim {
                    acc += rho.entries[(n, m)] * k[n * dim + m];
                }
            }
            acc
        })
        .collect();
    let residue = values.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    if residue > 1e-10 {
        return Err(Error::Unphysical(format!(
            "Wigner surface has imaginary residue {residue:e}"
        )));
    }
    Ok(WignerGrid {
        x: x_grid.to_vec(),
        p: p_grid.to_vec(),
        values: values.into_iter().map(|v| v.re).collect(),
    })
}

/// Density matrix of the analytic model state by the inverse Fock-kernel
/// transform `rho_nm = 2 pi int W(x, p) W_{|m><n|}(x, p) dx dp`, evaluated
/// with the trapezoid rule on `[-9, 9]^2`.
pub fn model_density_matrix(z: PumpRatio<f64>, cfg: &ModelConfig<f64>, dim: usize) -> Result<DensityMatrix> {
    if dim == 0 || dim > FOCK_CAP {
        return Err(Error::invalid("dim", format!("must lie in [1, {FOCK_CAP}]")));
    }
    let state = ConditionalState::new(z, cfg)?;
    let half = 9.0;
    let n = 361;
    let h = 2.0 * half / (n - 1) as f64;
    let grid = linspace(-half, half, n);
    let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
    let acc = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![C0; dim * dim];
            for (j, &p) in grid.iter().enumerate() {
                let w = state.wigner(grid[i], p) * weight(i) * weight(j);
                for (a, k) in row.iter_mut().zip(wigner_kernels(dim, grid[i], p)) {
                    *a += k * w;
                }
            }
            row
        })
        .reduce(
            || vec![C0; dim * dim],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let two_pi = 2.0 * std::f64::consts::PI;
    // kernel entry m * dim + n is W_{|m><n|}
    let m = DMatrix::from_fn(dim, dim, |r, c| acc[c * dim + r] * two_pi);
    let (rho, clipped) = DensityMatrix::project_physical(&m)?;
    if clipped > 1e-6 {
        log::warn!("model density matrix needed a PSD clip of {clipped:.2e}");
    }
    Ok(rho)
}

fn sqrt_psd(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let eig = eigen::jacobi(m)?;
    let dim = m.nrows();
    let mut out = DMatrix::from_element(dim, dim, C0);
    for (k, &v) in eig.values.iter().enumerate() {
        if v > 0.0 {
            let col = eig.vectors.column(k);
            out += col * col.adjoint() * Complex64::new(v.sqrt(), 0.0);
        }
    }
    Ok((&out + out.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::GridMismatch("density matrices differ in dimension".into()));
    }
    let s = sqrt_psd(&rho.entries)?;
    let inner = &s * &sigma.entries * &s;
    let inner = (&inner + inner.adjoint()) * Complex64::new(0.5, 0.0);
    let root: f64 = eigen::jacobi(&inner)?
        .values
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    Ok((root * root).min(1.0))
}

/// Trace distance `||rho - sigma||_1 / 2`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::GridMismatch("density matrices differ in dimension".into()));
    }
    let diff = &rho.entries - &sigma.entries;
    Ok(0.5 * eigen::jacobi(&diff)?.values.iter().map(|v| v.abs()).sum::<f64>())
}
