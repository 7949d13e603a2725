//! Synthetic homodyne data drawn from the conditional-state marginals.
//!
//! Each marginal is `P(q) = [n1(q) - N n2(q)] / (1 - N)` with `n2` narrower
//! than `n1`. Because `1 - N` is tiny for realistic heralding rates, the
//! naive envelope `n1 / (1 - N)` would accept almost nothing. Instead we
//! use the bound `P(q) <= n1(q) (alpha + gamma q^2)`, which is a mixture of
//! a Gaussian and a Maxwell-type density and is tight near the origin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionalState, ModelConfig, PumpRatio};

/// Samples drawn per independent generator stream.
pub const SHARD_SIZE: usize = 4096;

/// Minimum acceptance rate before sampling is abandoned.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

/// Local-oscillator phase schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSchedule {
    /// Independent uniform phase per record.
    #[default]
    Uniform,
    /// Deterministic linear sweep over `[0, pi)` across the whole dataset.
    Sweep,
}

/// Provenance stored alongside every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: ModelConfig<f64>,
    pub z: f64,
    pub seed: u64,
    pub count: usize,
    pub schedule: PhaseSchedule,
}

/// `(theta, x)` records: LO phase in `[0, pi)` and quadrature value.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDataset {
    pub records: Vec<(f64, f64)>,
    pub meta: DatasetMeta,
}

impl QuadratureDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &(theta, x)) in self.records.iter().enumerate() {
            if !(0.0..std::f64::consts::PI).contains(&theta) {
                return Err(Error::invalid(
                    "theta",
                    format!("record {i}: phase {theta} outside [0, pi)"),
                ));
            }
            if !x.is_finite() {
                return Err(Error::invalid("x", format!("record {i}: non-finite quadrature")));
            }
        }
        Ok(())
    }
}

/// Rejection sampler for the homodyne marginal at a single LO phase.
#[derive(Debug, Clone, Copy)]
pub struct MarginalSampler {
    state: ConditionalState<f64>,
    theta: f64,
    sd: f64,
    gauss_share: f64,
    gamma: f64,
    alpha: f64,
}

impl MarginalSampler {
    pub fn new(state: ConditionalState<f64>, theta: f64) -> Result<Self> {
        let (s1, alpha, gamma) = state.marginal_envelope(theta)?;
        let total = alpha + gamma * s1;
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Unphysical(format!(
                "degenerate sampling envelope at theta = {theta}"
            )));
        }
        Ok(Self {
            state,
            theta,
            sd: s1.sqrt(),
            gauss_share: alpha / total,
            gamma,
            alpha,
        })
    }

    /// Expected fraction of proposals accepted.
    pub fn acceptance_rate(&self) -> f64 {
        1.0 / (self.alpha + self.gamma * self.sd * self.sd)
    }

    /// One proposal; `Ok(Some(q))` when accepted.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<f64>> {
        let q = if rng.random::<f64>() < self.gauss_share {
            let g: f64 = StandardNormal.sample(rng);
            self.sd * g
        } else {
            // density proportional to q^2 n1(q)
            let chi: f64 = ChiSquared::new(3.0).expect("valid dof").sample(rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * self.sd * chi.sqrt()
        };
        let target = self.state.marginal_unchecked(self.theta, q);
        if target < -1e-9 {
            return Err(Error::Unphysical(format!(
                "negative homodyne density {target:e} at theta = {}, q = {q}",
                self.theta
            )));
        }
        let n1 = (-0.5 * q * q / (self.sd * self.sd)).exp()
            / (self.sd * (2.0 * std::f64::consts::PI).sqrt());
        let envelope = n1 * (self.alpha + self.gamma * q * q);
        if target > envelope * (1.0 + 1e-9) + 1e-300 {
            return Err(Error::Unphysical(format!(
                "sampling envelope violated at theta = {}, q = {q}",
                self.theta
            )));
        }
        let u: f64 = rng.random();
        Ok((u * envelope < target).then_some(q))
    }

    /// Draws one accepted value, counting proposals in `tries`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, tries: &mut u64) -> Result<f64> {
        loop {
            *tries += 1;
            if let Some(q) = self.propose(rng)? {
                return Ok(q);
            }
            if *tries >= 1000 && (1.0 / *tries as f64) < MIN_ACCEPTANCE {
                return Err(Error::Efficiency(format!(
                    "no acceptance in {} proposals at theta = {} (expected rate {:.3e})",
                    tries,
                    self.theta,
                    self.acceptance_rate()
                )));
            }
        }
    }
}

fn shard_rng(seed: u64, shard: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    rng
}

/// Draws `n` i.i.d. records at pump ratio `z` using the given phase schedule.
///
/// Records are generated in fixed-size shards, each with its own generator
/// stream derived from `(seed, shard)`, so the output does not depend on the
/// number of worker threads.
pub fn sample_with_schedule(
    z: PumpRatio<f64>,
    cfg: &ModelConfig<f64>,
    n: usize,
    seed: u64,
    schedule: PhaseSchedule,
) -> Result<QuadratureDataset> {
    cfg.validate()?;
    let state = ConditionalState::new(z, cfg)?;
    if state.herald_probability() <= 0.0 {
        return Err(Error::Unphysical(format!(
            "heralding probability 1 - N = {:e} is not positive",
            state.herald_probability()
        )));
    }
    let shards = n.div_ceil(SHARD_SIZE);
    // each shard yields its records and the number of proposals it used
    type Shard = Result<(Vec<(f64, f64)>, u64)>;
    let parts: Vec<Shard> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = shard_rng(seed, shard);
            let start = shard * SHARD_SIZE;
            let end = (start + SHARD_SIZE).min(n);
            let mut out = Vec::with_capacity(end - start);
            let mut tries = 0u64;
            for i in start..end {
                let theta = match schedule {
                    PhaseSchedule::Uniform => {
                        rng.random_range(0.0..std::f64::consts::PI)
                    }
                    PhaseSchedule::Sweep => {
                        std::f64::consts::PI * (i as f64 + 0.5) / n as f64
                    }
                };
                let sampler = MarginalSampler::new(state, theta)?;
                let mut local = 0u64;
                let x = sampler.draw(&mut rng, &mut local)?;
                tries += local;
                out.push((theta, x));
            }
            Ok((out, tries))
        })
        .collect();
    let mut records = Vec::with_capacity(n);
    let mut tries = 0u64;
    for part in parts {
        let (chunk, t) = part?;
        records.extend(chunk);
        tries += t;
    }
    if n > 0 {
        let rate = n as f64 / tries as f64;
        if rate < MIN_ACCEPTANCE {
            return Err(Error::Efficiency(format!(
                "acceptance rate {rate:.3e} over {tries} proposals"
            )));
        }
        log::debug!("sampled {n} records, acceptance rate {rate:.4}");
    }
    Ok(QuadratureDataset {
        records,
        meta: DatasetMeta {
            config: *cfg,
            z: z.value(),
            seed,
            count: n,
            schedule,
        },
    })
}

/// Draws `n` records with uniformly random LO phase.
pub fn sample(
    z: PumpRatio<f64>,
    cfg: &ModelConfig<f64>,
    n: usize,
    seed: u64,
) -> Result<QuadratureDataset> {
    sample_with_schedule(z, cfg, n, seed, PhaseSchedule::Uniform)
}
