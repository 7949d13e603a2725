use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use phsub::calibration::{fit_loss_model, residual_profile, sign_runs_test, PointResidual, RunsTest};
use phsub::config::{ExperimentConfig, KernelKind, PumpSpec};
use phsub::modes::{capture_error, psi0, solve_modes, KernelMatrix, TimeGrid};
use phsub::sampler::{sample_with_schedule, QuadratureDataset};
use phsub::spectrum::{count_rate_spectrum, peak_fwhm, sideline_suppression_db};
use phsub::tomography::{
    fidelity, linspace, mle_reconstruct, model_density_matrix, photon_dist, trace_distance,
    wigner_from_rho, Reconstruction, WignerGrid,
};
use phsub::{io, ConditionalState, Error, ErrorKind, FilterChain};

#[derive(Parser)]
#[command(name = "phsub", version, about = "Photon-subtracted squeezed light: model, sampling, tomography, calibration")]
struct Cli {
    /// TOML configuration file; every key defaults to the measured setup.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Pump amplitude ratio z = sqrt(P/P_th), in [0, 1).
    #[arg(long, global = true, conflicts_with = "squeezing_db")]
    z: Option<f64>,

    /// Target squeezed-quadrature level in dB (negative), instead of --z.
    #[arg(long, global = true, allow_hyphen_values = true)]
    squeezing_db: Option<f64>,

    /// Tapping ratio 1 - tau toward the trigger detector.
    #[arg(long, global = true)]
    tap: Option<f64>,

    /// Random seed for sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of quadrature samples.
    #[arg(short = 'n', long = "count", global = true)]
    count: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Wigner surface and W(0,0)-versus-z curve of the analytic model.
    Model,
    /// Synthetic homodyne dataset drawn from the model marginals.
    Sample,
    /// Maximum-likelihood reconstruction of a dataset file.
    Reconstruct {
        /// Dataset written by `sample`.
        #[arg(long)]
        data: PathBuf,
    },
    /// sample -> reconstruct -> compare with the analytic model.
    Pipeline,
    /// Trigger-channel count-rate spectrum versus OPO detuning (phenomenological).
    Spectrum,
    /// Temporal modes of a correlation kernel.
    Modes {
        /// Kernel matrix file; defaults to the built-in kernel from the config.
        #[arg(long)]
        kernel: Option<PathBuf>,
    },
    /// Fit the loss model to W(0,0) data rows `tap,z,w00,sigma`.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Hold kappa at its configured value (constant-loss model).
        #[arg(long)]
        freeze_kappa: bool,
        /// Also fit the homodyne-channel transmittance.
        #[arg(long)]
        fit_tau_h: bool,
    },
}

/// Failure labelled with the workflow stage that produced it.
struct StageError {
    stage: &'static str,
    error: Error,
}

type CmdResult<T> = Result<T, StageError>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T>;
}

impl<T> Stage<T> for phsub::Result<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Config => 3,
        ErrorKind::Physics => 4,
        ErrorKind::Convergence => 5,
        ErrorKind::Io => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {}", e.stage, e.error);
            ExitCode::from(exit_code(e.error.kind()))
        }
    }
}

fn load_config(cli: &Cli) -> phsub::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(z) = o.z {
        cfg.pump = PumpSpec::Ratio(z);
    }
    if let Some(db) = o.squeezing_db {
        cfg.pump = PumpSpec::SqueezingDb(db);
    }
    if let Some(tap) = o.tap {
        cfg.model.loss.tau = 1.0 - tap;
        cfg.model
            .loss
            .validate()
            .map_err(|_| Error::InvalidParameter {
                field: "tap".into(),
                reason: format!("{tap} gives a transmittance outside (0, 1]"),
            })?;
    }
    if let Some(seed) = o.seed {
        cfg.sampling.seed = seed;
    }
    if let Some(n) = o.count {
        cfg.sampling.count = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CmdResult<()> {
    let cfg = load_config(cli).stage("config")?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Model => cmd_model(&cfg, out),
        Command::Sample => cmd_sample(&cfg, out).map(|_| ()),
        Command::Reconstruct { data } => cmd_reconstruct(&cfg, out, data),
        Command::Pipeline => cmd_pipeline(&cfg, out),
        Command::Spectrum => cmd_spectrum(&cfg, out),
        Command::Modes { kernel } => cmd_modes(&cfg, out, kernel.as_deref()),
        Command::Fit {
            data,
            freeze_kappa,
            fit_tau_h,
        } => cmd_fit(&cfg, out, data, *freeze_kappa, *fit_tau_h),
    }
}

fn write(path: PathBuf, contents: &str) -> CmdResult<()> {
    io::write_text(&path, contents).stage("output")?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn grid_axis(cfg: &ExperimentConfig) -> Vec<f64> {
    linspace(-cfg.wigner.half_width, cfg.wigner.half_width, cfg.wigner.points)
}

fn cmd_model(cfg: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    let z = cfg.pump_ratio().stage("model")?;
    let state = ConditionalState::new(z, &cfg.model).stage("model")?;
    let axis = grid_axis(cfg);
    let grid = WignerGrid::tabulate(&axis, &axis, |x, p| state.wigner(x, p));
    let head = cfg.header("wigner surface (analytic model)")
        + &format!("# z={}\n", z.value());
    write(out.join("wigner.csv"), &io::format_wigner_grid(&head, &grid))?;

    let c = &cfg.curve;
    let zs = linspace(c.z_min, c.z_max, c.points);
    let curve = phsub::model::wigner_origin_curve(&zs, &cfg.model).stage("model")?;
    let head = cfg.header("origin curve W(0,0) versus z");
    write(out.join("origin_curve.csv"), &io::format_series(&head, ("z", "W00"), &curve))?;

    let (sq, anti) = phsub::model::squeezing_db(z.value(), &cfg.model).stage("model")?;
    println!("z = {}", z.value());
    println!("squeezing_db = {sq:.4}, antisqueezing_db = {anti:.4}");
    println!("W(0,0) = {:.6}", state.wigner(0.0, 0.0));
    Ok(())
}

fn cmd_sample(cfg: &ExperimentConfig, out: &Path) -> CmdResult<QuadratureDataset> {
    let z = cfg.pump_ratio().stage("sample")?;
    let ds = sample_with_schedule(
        z,
        &cfg.model,
        cfg.sampling.count,
        cfg.sampling.seed,
        cfg.sampling.schedule,
    )
    .stage("sample")?;
    write(out.join("dataset.csv"), &io::format_dataset(&ds))?;
    println!("sampled {} records at z = {}", ds.len(), z.value());
    Ok(ds)
}

#[derive(Serialize)]
struct ReconstructionReport {
    dim: usize,
    records: usize,
    iterations: usize,
    converged: bool,
    damped_steps: usize,
    floored_bins: usize,
    clipped_weight: f64,
    final_log_likelihood: f64,
    w00: f64,
    photon_distribution: Vec<f64>,
    rho_real: Vec<Vec<f64>>,
    rho_imag: Vec<Vec<f64>>,
    log_likelihood: Vec<f64>,
}

fn reconstruct_and_report(
    cfg: &ExperimentConfig,
    out: &Path,
    ds: &QuadratureDataset,
) -> CmdResult<(Reconstruction, WignerGrid)> {
    let rec = mle_reconstruct(ds, &cfg.tomography).stage("reconstruct")?;
    let axis = grid_axis(cfg);
    let grid = wigner_from_rho(&rec.rho, &axis, &axis).stage("reconstruct")?;
    let w00 = wigner_from_rho(&rec.rho, &[0.0], &[0.0])
        .stage("reconstruct")?
        .values[0];
    let dim = rec.rho.dim();
    let part = |f: fn(&num_complex::Complex64) -> f64| -> Vec<Vec<f64>> {
        (0..dim)
            .map(|n| (0..dim).map(|m| f(&rec.rho.get(n, m))).collect())
            .collect()
    };
    let report = ReconstructionReport {
        dim,
        records: ds.len(),
        iterations: rec.iterations,
        converged: rec.converged,
        damped_steps: rec.damped_steps,
        floored_bins: rec.floored_bins,
        clipped_weight: rec.clipped_weight,
        final_log_likelihood: *rec.log_likelihood.last().expect("history is nonempty"),
        w00,
        photon_distribution: photon_dist(&rec.rho),
        rho_real: part(|c| c.re),
        rho_imag: part(|c| c.im),
        log_likelihood: rec.log_likelihood.clone(),
    };
    let head = cfg.header("maximum-likelihood reconstruction (no loss correction)")
        + &format!("# dataset_hash={}\n", io::config_hash(&ds.meta));
    write(out.join("reconstruction.json"), &(head.clone() + &json(&report)))?;
    write(
        out.join("wigner_reconstructed.csv"),
        &io::format_wigner_grid(&head, &grid),
    )?;
    if !rec.converged {
        log::warn!("reconstruction hit the iteration cap; result is partial");
    }
    println!(
        "reconstructed dim {dim} in {} iterations (converged: {})",
        rec.iterations, rec.converged
    );
    println!("W(0,0) reconstructed = {w00:.6}");
    Ok((rec, grid))
}

fn cmd_reconstruct(cfg: &ExperimentConfig, out: &Path, data: &Path) -> CmdResult<()> {
    let ds = io::read_dataset(data).stage("input")?;
    reconstruct_and_report(cfg, out, &ds).map(|_| ())
}

#[derive(Serialize)]
struct PipelineReport {
    z: f64,
    records: usize,
    w00_model: f64,
    w00_reconstructed: f64,
    max_deviation: f64,
    deviation_half_width: f64,
    fidelity: f64,
    trace_distance: f64,
}

fn cmd_pipeline(cfg: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    let ds = cmd_sample(cfg, out)?;
    let (rec, _) = reconstruct_and_report(cfg, out, &ds)?;
    let z = cfg.pump_ratio().stage("compare")?;
    let state = ConditionalState::new(z, &cfg.model).stage("compare")?;
    let axis = linspace(-3.0, 3.0, 61);
    let model = WignerGrid::tabulate(&axis, &axis, |x, p| state.wigner(x, p));
    let recon = wigner_from_rho(&rec.rho, &axis, &axis).stage("compare")?;
    let max_deviation = recon.max_abs_difference(&model).stage("compare")?;
    let rho_model = model_density_matrix(z, &cfg.model, rec.rho.dim()).stage("compare")?;
    let report = PipelineReport {
        z: z.value(),
        records: ds.len(),
        w00_model: state.wigner(0.0, 0.0),
        w00_reconstructed: recon.at(30, 30),
        max_deviation,
        deviation_half_width: 3.0,
        fidelity: fidelity(&rec.rho, &rho_model).stage("compare")?,
        trace_distance: trace_distance(&rec.rho, &rho_model).stage("compare")?,
    };
    write(
        out.join("pipeline.json"),
        &(cfg.header("pipeline comparison") + &json(&report)),
    )?;
    println!("max deviation on [-3,3]^2 = {:.6}", report.max_deviation);
    println!("W(0,0) model = {:.6}", report.w00_model);
    println!("fidelity = {:.6}", report.fidelity);
    Ok(())
}

#[derive(Serialize)]
struct SpectrumSummary {
    model: &'static str,
    filters: usize,
    filter_fwhm_hz: f64,
    opo_fwhm_hz: f64,
    sideline_suppression_db: f64,
    peak_fwhm_hz: f64,
}

fn cmd_spectrum(cfg: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    let s = &cfg.spectrum;
    let opo = cfg.model.cavity.fwhm_hz();
    let chain = FilterChain::centered(s.filters, s.filter_ratio, opo, cfg.model.cavity.fsr, s.comb_order)
        .stage("spectrum")?;
    let detunings = linspace(-s.span, s.span, s.points);
    let series = count_rate_spectrum(&detunings, &chain, s.scale);
    let head = cfg.header("trigger count-rate spectrum (phenomenological model)");
    write(
        out.join("spectrum.csv"),
        &io::format_series(&head, ("detuning_Hz", "rate"), &series),
    )?;
    let summary = SpectrumSummary {
        model: "phenomenological: rigid comb translation through fixed Lorentzian filters",
        filters: s.filters,
        filter_fwhm_hz: s.filter_ratio * opo,
        opo_fwhm_hz: opo,
        sideline_suppression_db: sideline_suppression_db(&chain),
        peak_fwhm_hz: peak_fwhm(&chain),
    };
    write(
        out.join("spectrum_summary.json"),
        &(cfg.header("spectrum summary") + &json(&summary)),
    )?;
    println!("side-line suppression = {:.2} dB", summary.sideline_suppression_db);
    println!("peak FWHM = {:.4} MHz", summary.peak_fwhm_hz / 1e6);
    Ok(())
}

#[derive(Serialize)]
struct ModesSummary {
    kernel: String,
    eigenvalues: Vec<f64>,
    capture_error: Vec<f64>,
    psi0_overlap: Option<f64>,
}

fn cmd_modes(cfg: &ExperimentConfig, out: &Path, kernel: Option<&Path>) -> CmdResult<()> {
    let zeta0 = cfg.model.cavity.zeta0();
    let (h, provenance) = match kernel {
        Some(path) => (io::read_kernel(path).stage("input")?, "file".to_string()),
        None => {
            let m = &cfg.modes;
            let grid = TimeGrid::symmetric(m.half_width / zeta0, m.points).stage("modes")?;
            let h = match m.kernel {
                KernelKind::RankOne => KernelMatrix::rank_one(zeta0, grid),
                KernelKind::Stationary => KernelMatrix::stationary(zeta0, grid),
            }
            .stage("modes")?;
            let name = match m.kernel {
                KernelKind::RankOne => "rank_one",
                KernelKind::Stationary => "stationary",
            };
            (h, name.to_string())
        }
    };
    let count = cfg.modes.count.min(h.grid.n);
    let sol = solve_modes(&h, count).stage("modes")?;
    let capture = (0..=count)
        .map(|k| capture_error(&h, &sol.modes[..k]))
        .collect::<phsub::Result<Vec<f64>>>()
        .stage("modes")?;
    let psi0_overlap = psi0(zeta0, &h.grid)
        .ok()
        .and_then(|p| p.inner(&sol.modes[0]).ok())
        .map(|c| c.norm());
    write(
        out.join("modes.csv"),
        &io::format_modes(&sol, &h.grid, Some(zeta0), &provenance),
    )?;
    let summary = ModesSummary {
        kernel: provenance,
        eigenvalues: sol.eigenvalues.clone(),
        capture_error: capture,
        psi0_overlap,
    };
    write(
        out.join("modes_summary.json"),
        &(cfg.header("temporal modes") + &json(&summary)),
    )?;
    for (k, v) in sol.eigenvalues.iter().enumerate() {
        println!("chi_{k} = {v:.6e}");
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    fit: &'a phsub::calibration::FitResult,
    runs_test: RunsTest,
    profile: Vec<PointResidual>,
}

fn cmd_fit(
    cfg: &ExperimentConfig,
    out: &Path,
    data: &Path,
    freeze_kappa: bool,
    fit_tau_h: bool,
) -> CmdResult<()> {
    let points = io::read_origin_data(data).stage("input")?;
    let mut opts = cfg.fit;
    if freeze_kappa {
        opts.free.kappa = false;
    }
    if fit_tau_h {
        opts.free.tau_h = true;
    }
    let fit = fit_loss_model(&points, &cfg.model, &opts).stage("fit")?;
    let profile = residual_profile(&fit, &points, &cfg.model).stage("fit")?;
    let report = FitReport {
        fit: &fit,
        runs_test: sign_runs_test(&profile),
        profile,
    };
    write(
        out.join("fit.json"),
        &(cfg.header("loss-model fit") + &json(&report)),
    )?;
    println!("tau_s0 = {:.6}", fit.tau_s0);
    println!("kappa = {:.6}", fit.kappa);
    if let Some(th) = fit.tau_h {
        println!("tau_h = {th:.6}");
    }
    println!("chi2 = {:.6e}", fit.chi2);
    Ok(())
}
