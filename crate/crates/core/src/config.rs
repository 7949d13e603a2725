//! Experiment configuration: a TOML file with `[cavity]`, `[detector]`,
//! `[loss]`, `[pump]` and per-workflow sections. Every key is optional and
//! defaults to the measured setup.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{FitOptions, FreeParams};
use crate::error::{in_section, Error, Result};
use crate::io;
use crate::model::{
    pump_for_squeezing_db, CavityParams, DetectorModel, LossModel, ModelConfig, PumpRatio,
    DEFAULT_ETA0,
};
use crate::sampler::PhaseSchedule;
use crate::tomography::MleOptions;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    cavity: RawCavity,
    #[serde(default)]
    detector: RawDetector,
    #[serde(default)]
    loss: RawLoss,
    #[serde(default)]
    pump: RawPump,
    #[serde(default)]
    sampling: RawSampling,
    #[serde(default)]
    tomography: RawTomography,
    #[serde(default)]
    wigner: RawWigner,
    #[serde(default)]
    curve: RawCurve,
    #[serde(default)]
    spectrum: RawSpectrum,
    #[serde(default)]
    modes: RawModes,
    #[serde(default)]
    fit: RawFit,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCavity {
    gamma_t: Option<f64>,
    gamma_l: Option<f64>,
    fsr: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    eta0: Option<f64>,
    eta_f: Option<f64>,
    bandwidth: Option<f64>,
    window: Option<f64>,
    noise_rate: Option<f64>,
    nu: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    tau: Option<f64>,
    tap: Option<f64>,
    tau_h: Option<f64>,
    tau_s0: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPump {
    z: Option<f64>,
    squeezing_db: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampling {
    seed: Option<u64>,
    count: Option<usize>,
    schedule: Option<PhaseSchedule>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTomography {
    dim: Option<usize>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    phase_bins: Option<usize>,
    bin_width: Option<f64>,
    x_range: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWigner {
    half_width: Option<f64>,
    points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    z_min: Option<f64>,
    z_max: Option<f64>,
    points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectrum {
    filters: Option<usize>,
    filter_ratio: Option<f64>,
    comb_order: Option<usize>,
    scale: Option<f64>,
    span: Option<f64>,
    points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModes {
    count: Option<usize>,
    points: Option<usize>,
    half_width: Option<f64>,
    kernel: Option<KernelKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    starts: Option<usize>,
    seed: Option<u64>,
    fit_kappa: Option<bool>,
    fit_tau_h: Option<bool>,
}

/// How the pump is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpSpec {
    /// Pump amplitude ratio `z`.
    Ratio(f64),
    /// Target squeezed-quadrature level in dB (negative).
    SqueezingDb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingSpec {
    pub seed: u64,
    pub count: usize,
    pub schedule: PhaseSchedule,
}

/// Square Wigner output grid `[-half_width, half_width]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub points: usize,
}

/// `W(0, 0)` curve over `[z_min, z_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumSpec {
    pub filters: usize,
    /// Filter width in units of the OPO linewidth.
    pub filter_ratio: f64,
    pub comb_order: usize,
    pub scale: f64,
    /// Detuning half-span, Hz.
    pub span: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    RankOne,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModesSpec {
    pub count: usize,
    pub points: usize,
    /// Grid half-width in units of `1 / zeta0`.
    pub half_width: f64,
    pub kernel: KernelKind,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig<f64>,
    pub pump: PumpSpec,
    /// True when `eta0` was not configured and the assumed default is in use.
    pub eta0_assumed: bool,
    pub sampling: SamplingSpec,
    pub tomography: MleOptions,
    pub wigner: GridSpec,
    pub curve: CurveSpec,
    pub spectrum: SpectrumSpec,
    pub modes: ModesSpec,
    pub fit: FitOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_raw(RawConfig::default()).expect("defaults are valid")
    }
}

fn toml_line(text: &str, err: &toml::de::Error) -> usize {
    err.span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(1)
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: toml_line(text, &e),
            message: e.message().to_string(),
        })?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_text(path)?, path)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let d = ModelConfig::<f64>::default();
        let cavity = CavityParams {
            gamma_t: raw.cavity.gamma_t.unwrap_or(d.cavity.gamma_t),
            gamma_l: raw.cavity.gamma_l.unwrap_or(d.cavity.gamma_l),
            fsr: raw.cavity.fsr.unwrap_or(d.cavity.fsr),
        };
        cavity.validate().map_err(|e| in_section("cavity", e))?;

        let det = &raw.detector;
        if det.nu.is_some() && det.noise_rate.is_some() {
            return Err(Error::invalid(
                "detector.nu",
                "give either `nu` or `noise_rate`, not both",
            ));
        }
        let eta0_assumed = det.eta0.is_none();
        let eta0 = det.eta0.unwrap_or(DEFAULT_ETA0);
        let window = det.window.unwrap_or(d.detector.window);
        let bandwidth = det
            .bandwidth
            .unwrap_or(cavity.zeta0() / (2.0 * std::f64::consts::PI));
        let noise_rate = det.noise_rate.unwrap_or(100.0);
        if !(noise_rate >= 0.0) || !noise_rate.is_finite() {
            return Err(Error::invalid("detector.noise_rate", "must be finite and >= 0"));
        }
        let nu = det.nu.unwrap_or(noise_rate * window * bandwidth * window);
        let detector = DetectorModel {
            eta0,
            eta_f: det.eta_f.unwrap_or(d.detector.eta_f),
            bandwidth,
            window,
            nu,
        };
        detector.validate().map_err(|e| in_section("detector", e))?;

        let l = &raw.loss;
        let tau = match (l.tau, l.tap) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid("loss.tap", "give either `tau` or `tap`, not both"))
            }
            (Some(t), None) => t,
            (None, Some(tap)) => 1.0 - tap,
            (None, None) => d.loss.tau,
        };
        let loss = LossModel {
            tau,
            tau_h: l.tau_h.unwrap_or(d.loss.tau_h),
            tau_s0: l.tau_s0.unwrap_or(d.loss.tau_s0),
            kappa: l.kappa.unwrap_or(d.loss.kappa),
        };
        loss.validate().map_err(|e| in_section("loss", e))?;

        let pump = match (raw.pump.z, raw.pump.squeezing_db) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "pump",
                    "specify exactly one of `z` and `squeezing_db`",
                ))
            }
            (Some(z), None) => PumpSpec::Ratio(z),
            (None, Some(db)) => PumpSpec::SqueezingDb(db),
            (None, None) => PumpSpec::SqueezingDb(DEFAULT_SQUEEZING_DB),
        };

        let s = &raw.sampling;
        let sampling = SamplingSpec {
            seed: s.seed.unwrap_or(1),
            count: s.count.unwrap_or(50_000),
            schedule: s.schedule.unwrap_or_default(),
        };

        let t = &raw.tomography;
        let md = MleOptions::default();
        let tomography = MleOptions {
            dim: t.dim.unwrap_or(md.dim),
            max_iters: t.max_iters.unwrap_or(md.max_iters),
            tol: t.tol.unwrap_or(md.tol),
            phase_bins: t.phase_bins.unwrap_or(md.phase_bins),
            bin_width: t.bin_width.unwrap_or(md.bin_width),
            x_range: t.x_range.unwrap_or(md.x_range),
        };

        let wigner = GridSpec {
            half_width: raw.wigner.half_width.unwrap_or(4.0),
            points: raw.wigner.points.unwrap_or(81),
        };
        let curve = CurveSpec {
            z_min: raw.curve.z_min.unwrap_or(0.0),
            z_max: raw.curve.z_max.unwrap_or(0.9),
            points: raw.curve.points.unwrap_or(91),
        };
        let sp = &raw.spectrum;
        let spectrum = SpectrumSpec {
            filters: sp.filters.unwrap_or(3),
            filter_ratio: sp.filter_ratio.unwrap_or(7.0),
            comb_order: sp.comb_order.unwrap_or(2),
            scale: sp.scale.unwrap_or(1.0),
            span: sp.span.unwrap_or(50e6),
            points: sp.points.unwrap_or(201),
        };
        let m = &raw.modes;
        let modes = ModesSpec {
            count: m.count.unwrap_or(4),
            points: m.points.unwrap_or(512),
            half_width: m.half_width.unwrap_or(8.0),
            kernel: m.kernel.unwrap_or_default(),
        };
        let f = &raw.fit;
        let fit = FitOptions {
            free: FreeParams {
                tau_s0: true,
                kappa: f.fit_kappa.unwrap_or(true),
                tau_h: f.fit_tau_h.unwrap_or(false),
            },
            starts: f.starts.unwrap_or(8),
            seed: f.seed.unwrap_or(0),
            ..FitOptions::default()
        };

        let cfg = Self {
            model: ModelConfig {
                cavity,
                detector,
                loss,
            },
            pump,
            eta0_assumed,
            sampling,
            tomography,
            wigner,
            curve,
            spectrum,
            modes,
            fit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the workflow sections and pump domain.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match self.pump {
            PumpSpec::Ratio(z) => {
                PumpRatio::new(z).map_err(|_| Error::invalid("pump.z", "must lie in [0, 1)"))?;
            }
            PumpSpec::SqueezingDb(db) => {
                if !(db < 0.0) || !db.is_finite() {
                    return Err(Error::invalid("pump.squeezing_db", "must be negative"));
                }
            }
        }
        let t = &self.tomography;
        if t.dim < 2 || t.dim > crate::fock::FOCK_CAP {
            return Err(Error::invalid(
                "tomography.dim",
                format!("must lie in [2, {}]", crate::fock::FOCK_CAP),
            ));
        }
        if t.max_iters == 0 {
            return Err(Error::invalid("tomography.max_iters", "must be >= 1"));
        }
        if !(t.tol > 0.0) {
            return Err(Error::invalid("tomography.tol", "must be > 0"));
        }
        if t.phase_bins == 0 {
            return Err(Error::invalid("tomography.phase_bins", "must be >= 1"));
        }
        if !(t.bin_width > 0.0) || !(t.x_range > t.bin_width) {
            return Err(Error::invalid(
                "tomography.bin_width",
                "need 0 < bin_width < x_range",
            ));
        }
        if !(self.wigner.half_width > 0.0) || self.wigner.points < 2 {
            return Err(Error::invalid("wigner.points", "need half_width > 0 and points >= 2"));
        }
        let c = &self.curve;
        if !(0.0 <= c.z_min && c.z_min <= c.z_max && c.z_max < 1.0) || c.points == 0 {
            return Err(Error::invalid(
                "curve.z_max",
                "need 0 <= z_min <= z_max < 1 and points >= 1",
            ));
        }
        let s = &self.spectrum;
        if s.filters == 0 || !(s.filter_ratio > 0.0) {
            return Err(Error::invalid("spectrum.filter_ratio", "need filters >= 1 and ratio > 0"));
        }
        if s.comb_order == 0 {
            return Err(Error::invalid("spectrum.comb_order", "must be >= 1"));
        }
        if !(s.span > 0.0) || s.points < 2 || !(s.scale > 0.0) {
            return Err(Error::invalid("spectrum.span", "need span > 0, scale > 0, points >= 2"));
        }
        let m = &self.modes;
        if m.points < 2 || m.count == 0 || m.count > m.points || !(m.half_width > 0.0) {
            return Err(Error::invalid(
                "modes.count",
                "need 1 <= count <= points and half_width > 0",
            ));
        }
        if self.fit.starts == 0 {
            return Err(Error::invalid("fit.starts", "must be >= 1"));
        }
        Ok(())
    }

    /// Resolves the pump ratio, inverting the squeezing level if needed.
    pub fn pump_ratio(&self) -> Result<PumpRatio<f64>> {
        match self.pump {
            PumpSpec::Ratio(z) => PumpRatio::new(z),
            PumpSpec::SqueezingDb(db) => pump_for_squeezing_db(db, &self.model),
        }
    }

    /// Fingerprint of the resolved configuration.
    pub fn hash(&self) -> String {
        io::config_hash(self)
    }

    /// Header lines shared by every output: version, config hash, seed,
    /// the assumed-efficiency flag and the full configuration as JSON.
    pub fn header(&self, kind: &str) -> String {
        io::header(
            kind,
            &[
                ("config_hash", self.hash()),
                ("seed", self.sampling.seed.to_string()),
                ("eta0_assumed", self.eta0_assumed.to_string()),
                (
                    "config",
                    serde_json::to_string(self).expect("configuration serializes"),
                ),
            ],
        )
    }
}

/// Squeezing level used when the pump is not configured.
pub const DEFAULT_SQUEEZING_DB: f64 = -2.6;

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert!(cfg.eta0_assumed);
        assert_eq!(cfg.pump, PumpSpec::SqueezingDb(-2.6));
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn explicit_values_override() {
        let cfg = parse("[detector]\neta0 = 0.6\n[loss]\ntap = 0.1\n[pump]\nz = 0.3\n").unwrap();
        assert!(!cfg.eta0_assumed);
        assert_eq!(cfg.model.detector.eta0, 0.6);
        assert!((cfg.model.loss.tau - 0.9).abs() < 1e-15);
        assert_eq!(cfg.pump_ratio().unwrap().value(), 0.3);
    }

    #[test]
    fn invalid_tau_names_field() {
        let err = parse("[loss]\ntau = 1.2\n").unwrap_err();
        match err {
            Error::InvalidParameter { field, .. } => assert_eq!(field, "loss.tau"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn both_pump_specs_rejected() {
        let err = parse("[pump]\nz = 0.2\nsqueezing_db = -2.0\n").unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref field, .. } if field == "pump"));
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse("[cavity]\ngamma_t = 5.7e7\nbogus = 1\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse("").unwrap();
        let b = parse("[sampling]\nseed = 2\n").unwrap();
        assert_eq!(a.hash(), parse("").unwrap().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
