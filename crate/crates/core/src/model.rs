//! Closed-form Wigner function of a photon-subtracted squeezed vacuum.
//!
//! The conditional state is a normalized difference of two centered,
//! axis-aligned phase-space Gaussians,
//!
//! ```text
//! W(x, p) = [R(x, p; 0, 0) - R(x, p; eta, nu)] / (1 - N(eta, nu))
//! ```
//!
//! where `R(.; 0, 0)` is the unconditioned (lossy squeezed vacuum) component
//! and `R(.; eta, nu)` is the component reweighted by the probability `N` of
//! *no* click in the trigger channel. Units follow `[x, p] = i`, so vacuum is
//! `exp(-x^2 - p^2) / pi`.
//!
//! All rates are field decay rates in s^-1. The cavity half-width is
//! `zeta0 = (gamma_t + gamma_l) / 2` and its FWHM in Hz is `zeta0 / pi`.
//!
//! For realistic detector parameters `1 - N` is of order 1e-7, so the
//! numerator is a cancellation between two nearly identical Gaussians. Every
//! quantity below that enters such a difference is evaluated in a
//! difference-preserving form (`ln_1p`, `exp_m1`, explicit variance drops)
//! instead of subtracting two rounded values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Squeezing cavity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams<T> {
    /// Output-coupler field decay rate, s^-1.
    pub gamma_t: T,
    /// Intracavity-loss field decay rate, s^-1.
    pub gamma_l: T,
    /// Free spectral range, Hz.
    pub fsr: T,
}

impl<T: Real> CavityParams<T> {
    pub fn new(gamma_t: T, gamma_l: T, fsr: T) -> Result<Self> {
        let cav = Self {
            gamma_t,
            gamma_l,
            fsr,
        };
        cav.validate()?;
        Ok(cav)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_t > T::zero()) || !self.gamma_t.is_finite() {
            return Err(Error::invalid("gamma_t", "must be finite and > 0"));
        }
        if !(self.gamma_l >= T::zero()) || !self.gamma_l.is_finite() {
            return Err(Error::invalid("gamma_l", "must be finite and >= 0"));
        }
        if !(self.fsr > T::zero()) || !self.fsr.is_finite() {
            return Err(Error::invalid("fsr", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Cavity half-width `(gamma_t + gamma_l) / 2`, s^-1.
    pub fn zeta0(&self) -> T {
        (self.gamma_t + self.gamma_l) * T::half()
    }

    /// Cavity linewidth (FWHM) in Hz.
    pub fn fwhm_hz(&self) -> T {
        self.zeta0() / T::PI()
    }
}

/// Trigger-channel click detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel<T> {
    /// Intrinsic quantum efficiency of the avalanche photodiode.
    pub eta0: T,
    /// Transmittance of the trigger path (filter cavities and optics).
    pub eta_f: T,
    /// Squeezed-vacuum half-bandwidth `B`, Hz.
    pub bandwidth: T,
    /// Trigger time window `T`, s.
    pub window: T,
    /// Mean noise count per trigger mode.
    pub nu: T,
}

impl<T: Real> DetectorModel<T> {
    pub fn new(eta0: T, eta_f: T, bandwidth: T, window: T, nu: T) -> Result<Self> {
        let det = Self {
            eta0,
            eta_f,
            bandwidth,
            window,
            nu,
        };
        det.validate()?;
        Ok(det)
    }

    /// Detector whose bandwidth is tied to the cavity, `B = zeta0 / (2 pi)`,
    /// and whose noise count follows from a count rate (cps).
    ///
    /// The noise count is referred to the same single trigger mode as the
    /// signal efficiency: `nu = rate * T * (B T)`.
    pub fn from_noise_rate(
        cavity: &CavityParams<T>,
        eta0: T,
        eta_f: T,
        window: T,
        noise_rate: T,
    ) -> Result<Self> {
        let bandwidth = cavity.zeta0() / (T::two() * T::PI());
        let nu = noise_rate * window * bandwidth * window;
        Self::new(eta0, eta_f, bandwidth, window, nu)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.eta0) {
            return Err(Error::invalid("eta0", "must lie in [0, 1]"));
        }
        if !unit(self.eta_f) {
            return Err(Error::invalid("eta_f", "must lie in [0, 1]"));
        }
        if !(self.bandwidth > T::zero()) || !self.bandwidth.is_finite() {
            return Err(Error::invalid("bandwidth", "must be finite and > 0"));
        }
        if !(self.window > T::zero()) || !self.window.is_finite() {
            return Err(Error::invalid("window", "must be finite and > 0"));
        }
        if !(self.nu >= T::zero()) || !self.nu.is_finite() {
            return Err(Error::invalid("nu", "must be finite and >= 0"));
        }
        if self.eta() > T::one() {
            return Err(Error::invalid(
                "bandwidth",
                "total efficiency eta0 * eta_f * B * T exceeds 1",
            ));
        }
        if self.bandwidth * self.window > T::lit(0.1) {
            log::warn!(
                "B*T = {} is not small; the single trigger-mode description degrades",
                self.bandwidth * self.window
            );
        }
        Ok(())
    }

    /// Total trigger-mode efficiency `eta0 * eta_f * B * T`.
    pub fn eta(&self) -> T {
        self.eta0 * self.eta_f * self.bandwidth * self.window
    }
}

/// Tapping, homodyne and squeezing-dependent losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel<T> {
    /// Tapping beam splitter transmittance toward the signal path.
    pub tau: T,
    /// Effective homodyne-channel transmittance.
    pub tau_h: T,
    /// Intercept of the squeezing-dependent transmittance.
    pub tau_s0: T,
    /// Quadratic coefficient of the squeezing-dependent transmittance.
    pub kappa: T,
}

impl<T: Real> LossModel<T> {
    pub fn new(tau: T, tau_h: T, tau_s0: T, kappa: T) -> Result<Self> {
        let loss = Self {
            tau,
            tau_h,
            tau_s0,
            kappa,
        };
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: T| v > T::zero() && v <= T::one();
        if !open_unit(self.tau) {
            return Err(Error::invalid("tau", "must lie in (0, 1]"));
        }
        if !open_unit(self.tau_h) {
            return Err(Error::invalid("tau_h", "must lie in (0, 1]"));
        }
        if !self.tau_s0.is_finite() {
            return Err(Error::invalid("tau_s0", "must be finite"));
        }
        if !self.kappa.is_finite() {
            return Err(Error::invalid("kappa", "must be finite"));
        }
        Ok(())
    }

    /// `tau_s0 - kappa z^2`, rejected when outside [0, 1].
    pub fn tau_s(&self, z: PumpRatio<T>) -> Result<T> {
        tau_s(z, self)
    }
}

/// Pump amplitude relative to threshold, `z = sqrt(P / P_th)`, in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PumpRatio<T>(T);

impl<T: Real> PumpRatio<T> {
    pub fn new(z: T) -> Result<Self> {
        if z >= T::zero() && z < T::one() {
            Ok(Self(z))
        } else {
            Err(Error::PumpDomain(z.to_f64().unwrap_or(f64::NAN)))
        }
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Complete parameter set of the analytic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig<T> {
    pub cavity: CavityParams<T>,
    pub detector: DetectorModel<T>,
    pub loss: LossModel<T>,
}

impl<T: Real> ModelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.cavity.validate()?;
        self.detector.validate()?;
        self.loss.validate()
    }

    pub fn with_tau(mut self, tau: T) -> Self {
        self.loss.tau = tau;
        self
    }

    pub fn with_loss(mut self, tau_s0: T, kappa: T) -> Self {
        self.loss.tau_s0 = tau_s0;
        self.loss.kappa = kappa;
        self
    }

    pub fn with_nu(mut self, nu: T) -> Self {
        self.detector.nu = nu;
        self
    }
}

impl<T: Real> Default for ModelConfig<T> {
    /// The measured setup: 57 MHz output coupling, 1.2 MHz intracavity loss,
    /// 1 ns trigger window, 30 % filter transmission, 100 cps dark counts,
    /// 5 % tapping, 78 % homodyne channel and `tau_s(z) = 0.95 - 0.93 z^2`.
    ///
    /// `eta0 = 0.5` is an assumed APD efficiency.
    fn default() -> Self {
        let cavity = CavityParams {
            gamma_t: T::lit(57e6),
            gamma_l: T::lit(1.2e6),
            fsr: T::lit(573e6),
        };
        let detector = DetectorModel::from_noise_rate(
            &cavity,
            T::lit(DEFAULT_ETA0),
            T::lit(0.3),
            T::lit(1e-9),
            T::lit(100.0),
        )
        .expect("default detector is valid");
        Self {
            cavity,
            detector,
            loss: LossModel {
                tau: T::lit(0.95),
                tau_h: T::lit(0.78),
                tau_s0: T::lit(0.95),
                kappa: T::lit(0.93),
            },
        }
    }
}

/// Assumed intrinsic APD efficiency used when none is configured.
pub const DEFAULT_ETA0: f64 = 0.5;

/// One centered axis-aligned Gaussian, `weight * exp(-x^2/vx - p^2/vp) / (pi sqrt(vx vp))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent<T> {
    pub vx: T,
    pub vp: T,
    pub weight: T,
}

impl<T: Real> GaussianComponent<T> {
    pub fn density(&self, x: T, p: T) -> T {
        self.weight * (-(x * x) / self.vx - p * p / self.vp).exp()
            / (T::PI() * (self.vx * self.vp).sqrt())
    }

    /// Variance of the quadrature `x cos(theta) + p sin(theta)`.
    pub fn quadrature_variance(&self, theta: T) -> T {
        let (s, c) = theta.sin_cos();
        (self.vx * c * c + self.vp * s * s) * T::half()
    }
}

fn signed_domain<T: Real>(z: T) -> Result<PumpRatio<T>> {
    if !(z > -T::one()) || !(z.abs() < T::one()) {
        return Err(Error::PumpDomain(z.to_f64().unwrap_or(f64::NAN)));
    }
    PumpRatio::new(z.abs())
}

/// Squeezing-dependent transmittance `tau_s0 - kappa z^2`.
pub fn tau_s<T: Real>(z: PumpRatio<T>, loss: &LossModel<T>) -> Result<T> {
    let z = z.value();
    let value = loss.tau_s0 - loss.kappa * z * z;
    if value >= T::zero() && value <= T::one() {
        Ok(value)
    } else {
        Err(Error::UnphysicalLoss {
            z: z.to_f64().unwrap_or(f64::NAN),
            value: value.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// `a(z) - 1`, kept separately since `a` is close to 1 for small pump.
fn coeff_a_minus_one<T: Real>(z: T, cav: &CavityParams<T>, loss: &LossModel<T>) -> Result<T> {
    let ts = tau_s(signed_domain(z)?, loss)?;
    let one = T::one();
    let two = T::two();
    let shape = z * (z + T::lit(3.0)) / ((z + one) * (z + two) * (z + two));
    Ok(-loss.tau * two * ts * cav.gamma_t / cav.zeta0() * shape)
}

/// Signal-mode variance before conditioning. Takes signed `z`; `a(-z)` is
/// the antisqueezed quadrature.
pub fn coeff_a<T: Real>(z: T, cav: &CavityParams<T>, loss: &LossModel<T>) -> Result<T> {
    Ok(T::one() + coeff_a_minus_one(z, cav, loss)?)
}

fn coeff_b_minus_one<T: Real>(
    z: T,
    cav: &CavityParams<T>,
    det: &DetectorModel<T>,
    loss: &LossModel<T>,
) -> Result<T> {
    let ts = tau_s(signed_domain(z)?, loss)?;
    Ok(-(T::one() - loss.tau) * ts * cav.gamma_t * det.window * z / (z + T::one()))
}

/// Trigger-mode variance.
pub fn coeff_b<T: Real>(
    z: T,
    cav: &CavityParams<T>,
    det: &DetectorModel<T>,
    loss: &LossModel<T>,
) -> Result<T> {
    Ok(T::one() + coeff_b_minus_one(z, cav, det, loss)?)
}

/// Signal/trigger cross-correlation amplitude.
pub fn coeff_c<T: Real>(
    z: T,
    cav: &CavityParams<T>,
    det: &DetectorModel<T>,
    loss: &LossModel<T>,
) -> Result<T> {
    let ts = tau_s(signed_domain(z)?, loss)?;
    let one = T::one();
    let split = ((one - loss.tau) * loss.tau).sqrt();
    Ok(split * T::two() * ts * cav.gamma_t * det.window.sqrt() / cav.zeta0().sqrt() * z
        / ((z + one) * (z + T::two())))
}

/// `2 + (b(z) - 1) eta`.
fn herald_brace<T: Real>(z: T, cfg: &ModelConfig<T>, eta: T) -> Result<T> {
    let bm1 = coeff_b_minus_one(z, &cfg.cavity, &cfg.detector, &cfg.loss)?;
    Ok(T::two() + bm1 * eta)
}

/// Variance drop `a(z) - sigma^2(z) = c^2 eta / (2 + (b - 1) eta)`.
fn conditioning_drop<T: Real>(z: T, cfg: &ModelConfig<T>, eta: T) -> Result<T> {
    let brace = herald_brace(z, cfg, eta)?;
    if brace.abs() <= T::epsilon() {
        return Err(Error::Degenerate(format!(
            "2 + (b(z) - 1) eta vanishes at z = {}",
            z
        )));
    }
    let c = coeff_c(z, &cfg.cavity, &cfg.detector, &cfg.loss)?;
    Ok(c * c * eta / brace)
}

fn sigma2_with<T: Real>(z: T, cfg: &ModelConfig<T>, eta: T) -> Result<T> {
    let a = coeff_a(z, &cfg.cavity, &cfg.loss)?;
    Ok(a - conditioning_drop(z, cfg, eta)?)
}

/// Conditioned signal variance `a(z) - c(z)^2 eta / (2 + (b(z) - 1) eta)`.
pub fn sigma2<T: Real>(z: T, cfg: &ModelConfig<T>) -> Result<T> {
    sigma2_with(z, cfg, cfg.detector.eta())
}

/// `ln N(eta, nu)`, accurate when `N` is close to 1.
fn ln_norm<T: Real>(z: T, cfg: &ModelConfig<T>, eta: T, nu: T) -> Result<T> {
    let plus = herald_brace(z, cfg, eta)?;
    let minus = herald_brace(-z, cfg, eta)?;
    if !(plus > T::zero()) || !(minus > T::zero()) {
        return Err(Error::Degenerate(format!(
            "negative radicand in N at z = {}: braces {} and {}",
            z, plus, minus
        )));
    }
    let bp = coeff_b_minus_one(z, &cfg.cavity, &cfg.detector, &cfg.loss)?;
    let bm = coeff_b_minus_one(-z, &cfg.cavity, &cfg.detector, &cfg.loss)?;
    let half = T::half();
    Ok(-nu - half * ((bp * eta * half).ln_1p() + (bm * eta * half).ln_1p()))
}

/// No-click probability weight `N = 2 e^{-nu} / sqrt({2 + [b(z)-1] eta}{2 + [b(-z)-1] eta})`.
pub fn norm_n<T: Real>(z: PumpRatio<T>, cfg: &ModelConfig<T>) -> Result<T> {
    Ok(ln_norm(z.value(), cfg, cfg.detector.eta(), cfg.detector.nu)?.exp())
}

/// The `R(x, p; eta, nu)` component. With `(eta, nu) = (0, 0)` this is the
/// unconditioned state and its weight is exactly 1.
pub fn gaussian_r<T: Real>(
    z: PumpRatio<T>,
    cfg: &ModelConfig<T>,
    eta: T,
    nu: T,
) -> Result<GaussianComponent<T>> {
    let z = z.value();
    let th = cfg.loss.tau_h;
    let one = T::one();
    let vx = one - th + th * sigma2_with(z, cfg, eta)?;
    let vp = one - th + th * sigma2_with(-z, cfg, eta)?;
    let weight = ln_norm(z, cfg, eta, nu)?.exp();
    if !(vx > T::zero()) || !(vp > T::zero()) {
        return Err(Error::Unphysical(format!(
            "non-positive Gaussian variance (vx = {}, vp = {})",
            vx, vp
        )));
    }
    Ok(GaussianComponent { vx, vp, weight })
}

/// Precomputed conditional state at one pump ratio.
///
/// Holds the unconditioned variances, the conditioning drops and `1 - N`
/// so that the Wigner function and its marginals can be evaluated without
/// catastrophic cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalState<T> {
    /// Unconditioned component `R(.; 0, 0)`.
    pub unconditioned: GaussianComponent<T>,
    /// No-click component `R(.; eta, nu)`.
    pub no_click: GaussianComponent<T>,
    drop_x: T,
    drop_p: T,
    one_minus_n: T,
}

impl<T: Real> ConditionalState<T> {
    pub fn new(z: PumpRatio<T>, cfg: &ModelConfig<T>) -> Result<Self> {
        let eta = cfg.detector.eta();
        let nu = cfg.detector.nu;
        let unconditioned = gaussian_r(z, cfg, T::zero(), T::zero())?;
        let no_click = gaussian_r(z, cfg, eta, nu)?;
        let zv = z.value();
        let th = cfg.loss.tau_h;
        let drop_x = th * conditioning_drop(zv, cfg, eta)?;
        let drop_p = th * conditioning_drop(-zv, cfg, eta)?;
        let one_minus_n = -ln_norm(zv, cfg, eta, nu)?.exp_m1();
        if !(one_minus_n.abs() > T::lit(1e-12)) {
            return Err(Error::NoHeralding(one_minus_n.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self {
            unconditioned,
            no_click,
            drop_x,
            drop_p,
            one_minus_n,
        })
    }

    /// Heralding probability `1 - N`.
    pub fn herald_probability(&self) -> T {
        self.one_minus_n
    }

    /// `N` itself.
    pub fn no_click_weight(&self) -> T {
        self.no_click.weight
    }

    pub fn wigner(&self, x: T, p: T) -> T {
        let u = &self.unconditioned;
        let c = &self.no_click;
        let g0 = u.density(x, p);
        let half = T::half();
        let log_ratio = half * (self.drop_x / c.vx).ln_1p() + half * (self.drop_p / c.vp).ln_1p()
            - x * x * self.drop_x / (c.vx * u.vx)
            - p * p * self.drop_p / (c.vp * u.vp);
        g0 * (T::one() - c.weight * log_ratio.exp_m1() / self.one_minus_n)
    }

    /// Variances `(s1, s2)` of the two component marginals at LO phase `theta`
    /// together with their difference `s1 - s2`.
    fn marginal_variances(&self, theta: T) -> (T, T, T) {
        let (s, c) = theta.sin_cos();
        let (c2, s2) = (c * c, s * s);
        let wide = self.unconditioned.quadrature_variance(theta);
        let drop = (self.drop_x * c2 + self.drop_p * s2) * T::half();
        (wide, wide - drop, drop)
    }

    /// Homodyne marginal at LO phase `theta`, without positivity check.
    pub fn marginal_unchecked(&self, theta: T, q: T) -> T {
        let (s1, s2, ds) = self.marginal_variances(theta);
        let n1 = (-(q * q) / (T::two() * s1)).exp() / (T::two() * T::PI() * s1).sqrt();
        let log_ratio = T::half() * (ds / s2).ln_1p() - q * q * ds / (T::two() * s1 * s2);
        n1 * (T::one() - self.no_click.weight * log_ratio.exp_m1() / self.one_minus_n)
    }

    pub fn marginal(&self, theta: T, q: T) -> Result<T> {
        let value = self.marginal_unchecked(theta, q);
        if value < T::lit(-1e-9) {
            return Err(Error::Unphysical(format!(
                "negative homodyne density {} at theta = {}, q = {}",
                value, theta, q
            )));
        }
        Ok(value)
    }

    /// Tight mixture envelope for the marginal at `theta`:
    /// `P(q) <= n1(q) (alpha + gamma q^2)` with `n1` the unconditioned
    /// marginal. Returns `(s1, alpha, gamma)`.
    ///
    /// Follows from `exp(-u) >= 1 - u` applied to `n2 / n1`.
    pub fn marginal_envelope(&self, theta: T) -> Result<(T, T, T)> {
        let (s1, s2, ds) = self.marginal_variances(theta);
        if ds < T::zero() {
            return Err(Error::Unphysical(format!(
                "conditioned marginal wider than unconditioned at theta = {}",
                theta
            )));
        }
        let n = self.no_click.weight;
        // r - 1 with r = sqrt(s1 / s2)
        let r_minus_one = (T::half() * (ds / s2).ln_1p()).exp_m1();
        let r = T::one() + r_minus_one;
        let alpha = (self.one_minus_n - n * r_minus_one) / self.one_minus_n;
        if alpha < T::lit(-1e-9) {
            return Err(Error::Unphysical(format!(
                "negative homodyne density at q = 0 for theta = {}",
                theta
            )));
        }
        let beta = ds / (T::two() * s1 * s2);
        let gamma = n * r * beta / self.one_minus_n;
        Ok((s1, alpha.max(T::zero()), gamma))
    }
}

/// Conditional Wigner function `W(x, p)` at pump ratio `z`.
pub fn wigner<T: Real>(x: T, p: T, z: PumpRatio<T>, cfg: &ModelConfig<T>) -> Result<T> {
    Ok(ConditionalState::new(z, cfg)?.wigner(x, p))
}

/// `W(0, 0)` along a grid of pump ratios.
pub fn wigner_origin_curve<T: Real>(z_grid: &[T], cfg: &ModelConfig<T>) -> Result<Vec<(T, T)>> {
    z_grid
        .iter()
        .map(|&z| {
            let state = ConditionalState::new(PumpRatio::new(z)?, cfg)?;
            Ok((z, state.wigner(T::zero(), T::zero())))
        })
        .collect()
}

/// Homodyne probability density of `x_theta = x cos(theta) + p sin(theta)`.
pub fn marginal_density<T: Real>(theta: T, q: T, z: PumpRatio<T>, cfg: &ModelConfig<T>) -> Result<T> {
    ConditionalState::new(z, cfg)?.marginal(theta, q)
}

/// Mode-integrated variances relative to vacuum in dB:
/// `(10 log10 a(z), 10 log10 a(-z))`.
pub fn squeezing_db<T: Real>(z: T, cfg: &ModelConfig<T>) -> Result<(T, T)> {
    let ten = T::lit(10.0);
    let ln10 = T::LN_10();
    let sq = coeff_a_minus_one(z, &cfg.cavity, &cfg.loss)?.ln_1p() / ln10 * ten;
    let anti = coeff_a_minus_one(-z, &cfg.cavity, &cfg.loss)?.ln_1p() / ln10 * ten;
    Ok((sq, anti))
}

/// Smallest pump ratio whose squeezed-quadrature level reaches `target_db` (< 0).
pub fn pump_for_squeezing_db<T: Real>(target_db: T, cfg: &ModelConfig<T>) -> Result<PumpRatio<T>> {
    if !(target_db < T::zero()) {
        return Err(Error::invalid("squeezing_db", "target must be negative (squeezed)"));
    }
    let level = |z: T| -> Result<T> { Ok(squeezing_db(z, cfg)?.0 - target_db) };
    let steps = 2000;
    let z_max = T::lit(0.999);
    let mut lo = T::zero();
    let mut f_lo = level(lo)?;
    for i in 1..=steps {
        let hi = z_max * T::lit(i as f64) / T::lit(steps as f64);
        let f_hi = match level(hi) {
            Ok(v) => v,
            Err(Error::UnphysicalLoss { .. }) => break,
            Err(e) => return Err(e),
        };
        if f_lo > T::zero() && f_hi <= T::zero() {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = (a + b) * T::half();
                if level(mid)? > T::zero() {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a <= T::epsilon() * T::lit(4.0) {
                    break;
                }
            }
            return PumpRatio::new((a + b) * T::half());
        }
        lo = hi;
        f_lo = f_hi;
    }
    Err(Error::invalid(
        "squeezing_db",
        format!("level {} dB not reachable below threshold", target_db),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_PI, PI};

    fn cfg() -> ModelConfig<f64> {
        ModelConfig::default()
    }

    fn z(v: f64) -> PumpRatio<f64> {
        PumpRatio::new(v).unwrap()
    }

    #[test]
    fn tau_s_values() {
        let loss = cfg().loss;
        assert_eq!(tau_s(z(0.0), &loss).unwrap(), 0.95);
        assert!((tau_s(z(0.5), &loss).unwrap() - 0.7175).abs() < 1e-15);
        let lossless = LossModel::new(0.95, 0.78, 1.0, 0.0).unwrap();
        assert_eq!(tau_s(z(0.0), &lossless).unwrap(), 1.0);
    }

    #[test]
    fn tau_s_rejects_unphysical() {
        let loss = LossModel::new(0.95, 0.78, 0.95, 2.0).unwrap();
        assert!(matches!(
            tau_s(z(0.9), &loss),
            Err(Error::UnphysicalLoss { .. })
        ));
        let too_high = LossModel::new(0.95, 0.78, 1.1, 0.0).unwrap();
        assert!(tau_s(z(0.0), &too_high).is_err());
    }

    #[test]
    fn coefficients_at_zero_pump() {
        let c = cfg();
        assert_eq!(coeff_a(0.0, &c.cavity, &c.loss).unwrap(), 1.0);
        assert_eq!(coeff_b(0.0, &c.cavity, &c.detector, &c.loss).unwrap(), 1.0);
        assert_eq!(coeff_c(0.0, &c.cavity, &c.detector, &c.loss).unwrap(), 0.0);
        assert_eq!(sigma2(0.0, &c).unwrap(), 1.0);
    }

    #[test]
    fn no_tapping_decouples_trigger() {
        let c = cfg().with_tau(1.0);
        for zv in [-0.4, 0.1, 0.6] {
            assert_eq!(coeff_b(zv, &c.cavity, &c.detector, &c.loss).unwrap(), 1.0);
            assert_eq!(coeff_c(zv, &c.cavity, &c.detector, &c.loss).unwrap(), 0.0);
        }
    }

    #[test]
    fn domain_errors() {
        let c = cfg();
        assert!(matches!(
            coeff_a(-1.0, &c.cavity, &c.loss),
            Err(Error::PumpDomain(_))
        ));
        assert!(coeff_b(-1.5, &c.cavity, &c.detector, &c.loss).is_err());
        assert!(coeff_c(-1.0, &c.cavity, &c.detector, &c.loss).is_err());
        assert!(PumpRatio::new(1.0).is_err());
        assert!(PumpRatio::new(-0.1).is_err());
    }

    #[test]
    fn antisqueezed_direction() {
        let c = cfg();
        assert!(coeff_a(-0.3, &c.cavity, &c.loss).unwrap() > 1.0);
        assert!(coeff_a(0.3, &c.cavity, &c.loss).unwrap() < 1.0);
        assert!(coeff_c(0.3, &c.cavity, &c.detector, &c.loss).unwrap() > 0.0);
    }

    #[test]
    fn sigma2_without_heralding_information() {
        let mut c = cfg();
        c.detector.eta0 = 0.0;
        for zv in [-0.5, -0.1, 0.2, 0.7] {
            let a = coeff_a(zv, &c.cavity, &c.loss).unwrap();
            assert_eq!(sigma2(zv, &c).unwrap(), a);
        }
    }

    #[test]
    fn norm_n_limits() {
        let c = cfg().with_nu(0.0);
        assert_eq!(norm_n(z(0.0), &c).unwrap(), 1.0);
        let c = cfg().with_nu(0.1);
        assert!((norm_n(z(0.0), &c).unwrap() - (-0.1f64).exp()).abs() < 1e-15);
        assert!((norm_n(z(0.0), &c).unwrap() - 0.90484).abs() < 1e-5);
        let mut c = cfg().with_nu(0.0);
        c.detector.eta0 = 0.0;
        for zv in [0.1, 0.5, 0.9] {
            assert_eq!(norm_n(z(zv), &c).unwrap(), 1.0);
        }
    }

    #[test]
    fn unconditioned_component_is_normalized() {
        let c = cfg();
        let r = gaussian_r(z(0.0), &c, 0.0, 0.0).unwrap();
        assert_eq!((r.vx, r.vp, r.weight), (1.0, 1.0, 1.0));
        let r = gaussian_r(z(0.4), &c, 0.0, 0.0).unwrap();
        assert_eq!(r.weight, 1.0);
        let r = gaussian_r(z(0.3), &c, c.detector.eta(), c.detector.nu).unwrap();
        assert!(r.vx < r.vp);
    }

    #[test]
    fn vacuum_when_unpumped() {
        let c = cfg().with_nu(0.1);
        let w = wigner(0.0, 0.0, z(0.0), &c).unwrap();
        assert!((w - FRAC_1_PI).abs() < 1e-15);
        let w = wigner(0.7, -1.2, z(0.0), &c).unwrap();
        assert!((w - (-(0.49f64) - 1.44).exp() / PI).abs() < 1e-15);
    }

    #[test]
    fn no_heralding_is_an_error() {
        let mut c = cfg().with_nu(0.0);
        c.detector.eta0 = 0.0;
        assert!(matches!(
            wigner(0.0, 0.0, z(0.3), &c),
            Err(Error::NoHeralding(_))
        ));
    }

    #[test]
    fn marginal_of_vacuum() {
        let c = cfg().with_nu(0.05);
        for theta in [0.0, 0.4, 1.3] {
            let p0 = marginal_density(theta, 0.0, z(0.0), &c).unwrap();
            assert!((p0 - 1.0 / PI.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn squeezing_db_zero_pump() {
        let (s, a) = squeezing_db(0.0, &cfg()).unwrap();
        assert_eq!((s, a), (0.0, 0.0));
    }

    #[test]
    fn pump_inversion_hits_target() {
        let c = cfg();
        let zp = pump_for_squeezing_db(-2.6, &c).unwrap();
        let (s, _) = squeezing_db(zp.value(), &c).unwrap();
        assert!((s + 2.6).abs() < 1e-9);
        assert!(pump_for_squeezing_db(-40.0, &c).is_err());
    }

    #[test]
    fn single_precision_tracks_double() {
        let c64 = cfg();
        let c32: ModelConfig<f32> = ModelConfig::default();
        for zv in [0.1, 0.3, 0.5] {
            let w64 = wigner(0.0, 0.0, z(zv), &c64).unwrap();
            let w32 = wigner(0.0f32, 0.0, PumpRatio::new(zv as f32).unwrap(), &c32).unwrap();
            assert!((w64 - w32 as f64).abs() < 1e-3, "z={zv}: {w64} vs {w32}");
        }
    }
}
