//! Weighted least-squares fit of the squeezing-dependent loss model
//! `tau_s(z) = tau_s0 - kappa z^2` (and optionally `tau_h`) to measured
//! `W(0, 0)` versus pump-ratio curves at several tapping ratios.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ConditionalState, ModelConfig, PumpRatio};

/// One `W(0, 0)` measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OriginPoint {
    /// Tapping ratio `1 - tau`.
    pub tap: f64,
    pub z: f64,
    pub w00: f64,
    /// Standard error, > 0.
    pub sigma: f64,
}

/// `W(0, 0)` curves across tapping ratios.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct OriginCurveData {
    pub points: Vec<OriginPoint>,
}

impl OriginCurveData {
    pub fn new(points: Vec<OriginPoint>) -> Result<Self> {
        let data = Self { points };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(0.0..1.0).contains(&p.z) {
                return Err(Error::invalid("z", format!("{} outside [0, 1)", p.z)));
            }
            if !(p.sigma > 0.0) || !p.sigma.is_finite() {
                return Err(Error::invalid("sigma", format!("{} must be > 0", p.sigma)));
            }
            if !(0.0..1.0).contains(&p.tap) {
                return Err(Error::invalid("tap", format!("{} outside [0, 1)", p.tap)));
            }
            if !p.w00.is_finite() {
                return Err(Error::invalid("w00", "must be finite"));
            }
        }
        Ok(())
    }

    /// Distinct tapping ratios in first-appearance order.
    pub fn taps(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for p in &self.points {
            if !out.contains(&p.tap) {
                out.push(p.tap);
            }
        }
        out
    }

    pub fn max_z(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.z))
    }
}

/// Which loss parameters are optimized; the rest stay at the config values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FreeParams {
    pub tau_s0: bool,
    pub kappa: bool,
    pub tau_h: bool,
}

impl Default for FreeParams {
    fn default() -> Self {
        Self {
            tau_s0: true,
            kappa: true,
            tau_h: false,
        }
    }
}

impl FreeParams {
    fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.tau_s0 {
            v.push("tau_s0");
        }
        if self.kappa {
            v.push("kappa");
        }
        if self.tau_h {
            v.push("tau_h");
        }
        v
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.names()
            .iter()
            .map(|n| match *n {
                "tau_s0" => TAU_S0_BOUNDS,
                "kappa" => KAPPA_BOUNDS,
                _ => TAU_H_BOUNDS,
            })
            .collect()
    }
}

pub const TAU_S0_BOUNDS: (f64, f64) = (0.7, 1.0);
pub const KAPPA_BOUNDS: (f64, f64) = (0.0, 2.0);
pub const TAU_H_BOUNDS: (f64, f64) = (0.5, 1.0);

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub free: FreeParams,
    pub starts: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            free: FreeParams::default(),
            starts: 8,
            seed: 0,
            max_iters: 500,
        }
    }
}

/// Residual of one data point at the fitted parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointResidual {
    pub tap: f64,
    pub z: f64,
    pub w00: f64,
    pub model: f64,
    pub residual: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub tau_s0: f64,
    pub kappa: f64,
    /// Present when `tau_h` was a free parameter.
    pub tau_h: Option<f64>,
    pub free: Vec<&'static str>,
    /// `(J^T J)^{-1}` of the normalized residuals, ordered as `free`.
    pub covariance: Vec<Vec<f64>>,
    /// `sum ((w - model) / sigma)^2`.
    pub chi2: f64,
    /// Unweighted `sum (w - model)^2`.
    pub rss: f64,
    pub residuals: Vec<PointResidual>,
    pub iterations: usize,
    pub best_start: usize,
    /// Trial steps rejected because `tau_s` left `[0, 1]` on the data range.
    pub barrier_hits: usize,
    /// Objective after each accepted step of the winning start.
    pub objective_history: Vec<f64>,
}

struct Problem<'a> {
    data: &'a OriginCurveData,
    base: ModelConfig<f64>,
    free: FreeParams,
}

impl Problem<'_> {
    fn config(&self, theta: &[f64]) -> ModelConfig<f64> {
        let mut cfg = self.base;
        let mut it = theta.iter();
        if self.free.tau_s0 {
            cfg.loss.tau_s0 = *it.next().unwrap();
        }
        if self.free.kappa {
            cfg.loss.kappa = *it.next().unwrap();
        }
        if self.free.tau_h {
            cfg.loss.tau_h = *it.next().unwrap();
        }
        cfg
    }

    fn feasible(&self, theta: &[f64]) -> bool {
        let cfg = self.config(theta);
        let l = cfg.loss;
        let zmax = self.data.max_z();
        let lo = l.tau_s0 - l.kappa * zmax * zmax;
        (0.0..=1.0).contains(&l.tau_s0) && (0.0..=1.0).contains(&lo) && l.tau_h > 0.0 && l.tau_h <= 1.0
    }

    fn model(&self, cfg: &ModelConfig<f64>, p: &OriginPoint) -> Result<f64> {
        let cfg = cfg.with_tau(1.0 - p.tap);
        let state = ConditionalState::new(PumpRatio::new(p.z)?, &cfg)?;
        Ok(state.wigner(0.0, 0.0))
    }

    /// Normalized residuals, or `None` behind the feasibility barrier.
    fn residuals(&self, theta: &[f64]) -> Result<Option<DVector<f64>>> {
        if !self.feasible(theta) {
            return Ok(None);
        }
        let cfg = self.config(theta);
        let r: Result<Vec<f64>> = self
            .data
            .points
            .iter()
            .map(|p| Ok((p.w00 - self.model(&cfg, p)?) / p.sigma))
            .collect();
        Ok(Some(DVector::from_vec(r?)))
    }

    fn jacobian(&self, theta: &[f64], r0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = r0.len();
        let k = theta.len();
        let mut jac = DMatrix::zeros(m, k);
        for j in 0..k {
            let h = 1e-6 * theta[j].abs().max(0.1);
            let mut up = theta.to_vec();
            up[j] += h;
            let mut dn = theta.to_vec();
            dn[j] -= h;
            let col = match (self.residuals(&up)?, self.residuals(&dn)?) {
                (Some(a), Some(b)) => (a - b) / (2.0 * h),
                (Some(a), None) => (a - r0) / h,
                (None, Some(b)) => (r0 - b) / h,
                (None, None) => {
                    return Err(Error::Unidentifiable(format!(
                        "no feasible finite-difference step for {}",
                        self.free.names()[j]
                    )))
                }
            };
            jac.set_column(j, &col);
        }
        Ok(jac)
    }
}

struct LocalFit {
    theta: Vec<f64>,
    cost: f64,
    iterations: usize,
    barrier_hits: usize,
    history: Vec<f64>,
}

fn clamp_to(theta: &mut [f64], bounds: &[(f64, f64)]) {
    for (t, (lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(*lo, *hi);
    }
}

fn levenberg_marquardt(prob: &Problem, start: Vec<f64>, max_iters: usize) -> Result<Option<LocalFit>> {
    let bounds = prob.free.bounds();
    let mut theta = start;
    let Some(mut r) = prob.residuals(&theta)? else {
        return Ok(None);
    };
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut barrier_hits = 0;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let jac = prob.jacobian(&theta, &r)?;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= 1e-30 {
            break;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-30);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            clamp_to(&mut cand, &bounds);
            match prob.residuals(&cand)? {
                None => {
                    barrier_hits += 1;
                    lambda *= 10.0;
                }
                Some(rc) => {
                    let c = rc.norm_squared();
                    if c <= cost {
                        let moved = theta
                            .iter()
                            .zip(&cand)
                            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / a.abs().max(1e-3)));
                        let gain = cost - c;
                        theta = cand;
                        r = rc;
                        cost = c;
                        history.push(cost);
                        lambda = (lambda / 10.0).max(1e-12);
                        improved = moved > 1e-13 && gain > 1e-15 * cost.max(1e-300);
                        break;
                    }
                    lambda *= 10.0;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(Some(LocalFit {
        theta,
        cost,
        iterations,
        barrier_hits,
        history,
    }))
}

/// Latin-hypercube starting points inside the bounds.
fn latin_hypercube(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let mut strata: Vec<usize> = (0..count).collect();
            strata.shuffle(&mut rng);
            strata
                .into_iter()
                .map(|s| lo + (hi - lo) * (s as f64 + rng.random::<f64>()) / count as f64)
                .collect()
        })
        .collect();
    (0..count)
        .map(|i| columns.iter_mut().map(|c| c[i]).collect())
        .collect()
}

/// Multi-start weighted least-squares fit of the loss model.
pub fn fit_loss_model(
    data: &OriginCurveData,
    cfg: &ModelConfig<f64>,
    opts: &FitOptions,
) -> Result<FitResult> {
    data.validate()?;
    let names = opts.free.names();
    if names.is_empty() {
        return Err(Error::Usage("no free parameters selected".into()));
    }
    for tap in data.taps() {
        let n = data.points.iter().filter(|p| p.tap == tap).count();
        if n < 3 {
            return Err(Error::Precondition(format!(
                "tapping ratio {tap} has {n} points; need at least 3"
            )));
        }
    }
    if data.points.len() <= names.len() {
        return Err(Error::Precondition(format!(
            "{} points for {} free parameters",
            data.points.len(),
            names.len()
        )));
    }
    if opts.starts == 0 {
        return Err(Error::invalid("starts", "must be >= 1"));
    }
    let prob = Problem {
        data,
        base: *cfg,
        free: opts.free,
    };
    let zmax = data.max_z();
    let starts: Vec<Vec<f64>> = latin_hypercube(&opts.free.bounds(), opts.starts, opts.seed)
        .into_iter()
        .map(|mut s| {
            // pull kappa inside the feasible wedge tau_s0 - kappa zmax^2 >= 0
            if opts.free.kappa {
                let i_k = usize::from(opts.free.tau_s0);
                let ts0 = if opts.free.tau_s0 { s[0] } else { cfg.loss.tau_s0 };
                if zmax > 0.0 {
                    s[i_k] = s[i_k].min(0.999 * ts0 / (zmax * zmax));
                }
            }
            s
        })
        .collect();
    let fits: Vec<Result<Option<LocalFit>>> = starts
        .into_par_iter()
        .map(|s| levenberg_marquardt(&prob, s, opts.max_iters))
        .collect();
    let mut best: Option<(usize, LocalFit)> = None;
    let mut barrier_hits = 0;
    for (i, fit) in fits.into_iter().enumerate() {
        let Some(fit) = fit? else { continue };
        barrier_hits += fit.barrier_hits;
        // strict comparison keeps the lowest start index on ties
        if best.as_ref().is_none_or(|(_, b)| fit.cost < b.cost) {
            best = Some((i, fit));
        }
    }
    let Some((best_start, best)) = best else {
        return Err(Error::Convergence("no feasible starting point".into()));
    };
    if barrier_hits > 0 {
        log::info!("loss-model barrier rejected {barrier_hits} trial steps");
    }
    let r = prob
        .residuals(&best.theta)?
        .expect("optimum is feasible by construction");
    let jac = prob.jacobian(&best.theta, &r)?;
    let jtj = jac.transpose() * &jac;
    let eig = jtj.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.amax();
    let min_ev = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(max_ev > 0.0) || min_ev <= 1e-12 * max_ev {
        let weak = eig.eigenvectors.column(eig.eigenvalues.imin());
        let combo: Vec<String> = names
            .iter()
            .zip(weak.iter())
            .map(|(n, c)| format!("{c:+.3} {n}"))
            .collect();
        return Err(Error::Unidentifiable(format!(
            "degenerate Jacobian along {}",
            combo.join(" ")
        )));
    }
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::Unidentifiable("singular normal matrix".into()))?;
    let fitted = prob.config(&best.theta);
    let residuals = point_residuals(data, &fitted)?;
    Ok(FitResult {
        tau_s0: fitted.loss.tau_s0,
        kappa: fitted.loss.kappa,
        tau_h: opts.free.tau_h.then_some(fitted.loss.tau_h),
        free: names,
        covariance: (0..cov.nrows())
            .map(|i| cov.row(i).iter().copied().collect())
            .collect(),
        chi2: best.cost,
        rss: residuals.iter().map(|p| p.residual * p.residual).sum(),
        residuals,
        iterations: best.iterations,
        best_start,
        barrier_hits,
        objective_history: best.history,
    })
}

fn point_residuals(data: &OriginCurveData, cfg: &ModelConfig<f64>) -> Result<Vec<PointResidual>> {
    data.points
        .iter()
        .map(|p| {
            let c = cfg.with_tau(1.0 - p.tap);
            let model = ConditionalState::new(PumpRatio::new(p.z)?, &c)?.wigner(0.0, 0.0);
            let residual = p.w00 - model;
            Ok(PointResidual {
                tap: p.tap,
                z: p.z,
                w00: p.w00,
                model,
                residual,
                normalized: residual / p.sigma,
            })
        })
        .collect()
}

/// Residuals of `data` under the fitted parameters of `result`.
pub fn residual_profile(
    result: &FitResult,
    data: &OriginCurveData,
    cfg: &ModelConfig<f64>,
) -> Result<Vec<PointResidual>> {
    let mut fitted = cfg.with_loss(result.tau_s0, result.kappa);
    if let Some(th) = result.tau_h {
        fitted.loss.tau_h = th;
    }
    point_residuals(data, &fitted)
}

/// Wald-Wolfowitz runs test on residual signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunsTest {
    pub runs: usize,
    pub expected: f64,
    /// Standardized statistic; strongly negative means too few runs
    /// (systematic structure).
    pub z_score: f64,
}

/// Runs test over residuals ordered by tapping ratio then pump ratio.
pub fn sign_runs_test(residuals: &[PointResidual]) -> RunsTest {
    let mut sorted: Vec<&PointResidual> = residuals.iter().collect();
    sorted.sort_by(|a, b| a.tap.total_cmp(&b.tap).then(a.z.total_cmp(&b.z)));
    let signs: Vec<bool> = sorted.iter().map(|r| r.residual >= 0.0).collect();
    let pos = signs.iter().filter(|&&s| s).count() as f64;
    let neg = signs.len() as f64 - pos;
    let runs = if signs.is_empty() {
        0
    } else {
        1 + signs.windows(2).filter(|w| w[0] != w[1]).count()
    };
    let n = pos + neg;
    if pos == 0.0 || neg == 0.0 {
        return RunsTest {
            runs,
            expected: runs as f64,
            z_score: 0.0,
        };
    }
    let expected = 2.0 * pos * neg / n + 1.0;
    let var = 2.0 * pos * neg * (2.0 * pos * neg - n) / (n * n * (n - 1.0));
    RunsTest {
        runs,
        expected,
        z_score: (runs as f64 - expected) / var.sqrt(),
    }
}

/// Model curves at the given taps and pump ratios, with optional Gaussian
/// noise of standard deviation `noise` (also recorded as `sigma`).
pub fn synthetic_origin_data(
    cfg: &ModelConfig<f64>,
    taps: &[f64],
    z_grid: &[f64],
    noise: f64,
    seed: u64,
) -> Result<OriginCurveData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("finite noise"));
    let mut points = Vec::with_capacity(taps.len() * z_grid.len());
    for &tap in taps {
        let c = cfg.with_tau(1.0 - tap);
        for &z in z_grid {
            let w = ConditionalState::new(PumpRatio::new(z)?, &c)?.wigner(0.0, 0.0);
            let w = w + dist.map_or(0.0, |d| d.sample(&mut rng));
            points.push(OriginPoint {
                tap,
                z,
                w00: w,
                sigma: if noise > 0.0 { noise } else { 1.0 },
            });
        }
    }
    OriginCurveData::new(points)
}
