//! Phenomenological trigger-channel spectrum: the OPO longitudinal-mode comb
//! seen through a chain of wider Lorentzian filter cavities.
//!
//! Detuning the OPO is modelled as a rigid translation of its comb past
//! fixed filters. This is not derived from cavity dynamics; the overall rate
//! scale is a free parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One filter cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Filter<T> {
    /// Linewidth, Hz.
    pub fwhm: T,
    /// Resonance offset from the degenerate frequency, Hz.
    pub center: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterChain<T> {
    pub filters: Vec<Filter<T>>,
    /// OPO linewidth, Hz.
    pub opo_fwhm: T,
    /// OPO free spectral range, Hz.
    pub fsr: T,
    /// Comb lines `m = -M..=M` included in the spectrum.
    pub comb_order: usize,
}

impl<T: Real> FilterChain<T> {
    pub fn new(filters: Vec<Filter<T>>, opo_fwhm: T, fsr: T, comb_order: usize) -> Result<Self> {
        let chain = Self {
            filters,
            opo_fwhm,
            fsr,
            comb_order,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// `count` identical centered filters, each `ratio` times wider than the OPO.
    pub fn centered(count: usize, ratio: T, opo_fwhm: T, fsr: T, comb_order: usize) -> Result<Self> {
        let filter = Filter {
            fwhm: ratio * opo_fwhm,
            center: T::zero(),
        };
        Self::new(vec![filter; count], opo_fwhm, fsr, comb_order)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.opo_fwhm > T::zero()) {
            return Err(Error::invalid("opo_fwhm", "must be > 0"));
        }
        if !(self.fsr > T::zero()) {
            return Err(Error::invalid("fsr", "must be > 0"));
        }
        if self.comb_order < 1 {
            return Err(Error::invalid("comb_order", "must be >= 1"));
        }
        for f in &self.filters {
            if !(f.fwhm > T::zero()) {
                return Err(Error::invalid("filter_fwhm", "must be > 0"));
            }
            if !f.center.is_finite() {
                return Err(Error::invalid("filter_center", "must be finite"));
            }
            let ratio = f.fwhm / self.opo_fwhm;
            if ratio < T::lit(5.0) || ratio > T::lit(10.0) {
                log::warn!(
                    "filter width {} Hz is {} x the OPO linewidth, outside the usual 5-10x",
                    f.fwhm,
                    ratio
                );
            }
        }
        Ok(())
    }

    /// Power transmission of the whole chain at detuning `f` (Hz).
    pub fn transmission(&self, f: T) -> T {
        chain_transmission(f, self)
    }
}

/// Unit-peak Lorentzian `1 / (1 + (2 f / fwhm)^2)`.
pub fn lorentzian<T: Real>(f: T, fwhm: T) -> T {
    let u = T::two() * f / fwhm;
    T::one() / (T::one() + u * u)
}

/// Product of the filters' normalized Lorentzian transmissions.
pub fn chain_transmission<T: Real>(f: T, chain: &FilterChain<T>) -> T {
    chain
        .filters
        .iter()
        .fold(T::one(), |acc, flt| acc * lorentzian(f - flt.center, flt.fwhm))
}

fn rate_at<T: Real>(delta: T, chain: &FilterChain<T>, scale: T) -> T {
    let m_max = chain.comb_order as i64;
    let line = lorentzian(delta, chain.opo_fwhm);
    let comb = (-m_max..=m_max).fold(T::zero(), |acc, m| {
        acc + chain_transmission(T::lit(m as f64) * chain.fsr + delta, chain)
    });
    scale * line * comb
}

/// Modeled count rate versus OPO detuning:
/// `scale * sum_m L(delta; opo_fwhm) * T_chain(m fsr + delta)`.
pub fn count_rate_spectrum<T: Real>(detunings: &[T], chain: &FilterChain<T>, scale: T) -> Vec<(T, T)> {
    detunings
        .iter()
        .map(|&d| (d, rate_at(d, chain, scale)))
        .collect()
}

/// Suppression of the `m = +-1` comb lines relative to the degenerate one
/// through the filter chain, in dB (negative means suppressed).
pub fn sideline_suppression_db<T: Real>(chain: &FilterChain<T>) -> T {
    let ratio = chain_transmission(chain.fsr, chain) / chain_transmission(T::zero(), chain);
    T::lit(10.0) * ratio.log10()
}

/// FWHM of the modeled degenerate peak, found by bisection on each side
/// of `delta = 0`.
pub fn peak_fwhm<T: Real>(chain: &FilterChain<T>) -> T {
    let one = T::one();
    let peak = rate_at(T::zero(), chain, one);
    let half = peak * T::half();
    let edge = |sign: T| {
        let mut lo = T::zero();
        let mut hi = chain.opo_fwhm;
        while rate_at(sign * hi, chain, one) > half {
            hi = hi * T::two();
        }
        for _ in 0..200 {
            let mid = (lo + hi) * T::half();
            if rate_at(sign * mid, chain, one) > half {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) * T::half()
    };
    edge(one) + edge(-one)
}
