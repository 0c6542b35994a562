//! Command-line front end: simulation, calibration, fitting, and
//! orientation-survival scans, each emitting a JSON report plus CSV
//! plot data into an output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use nv_odmr::calibration::{d_from_pressure, pressure_from_d};
use nv_odmr::config::ToolkitConfig;
use nv_odmr::inversion::{fit_global, group_survival_scan, seed_initialization};
use nv_odmr::io::{
    load_dataset, write_rabi_csv, write_spectrum_csv, ExperimentManifest,
};
use nv_odmr::rabi::{detuning_sigma_from_pressure_spread, rabi_signal, RabiParameters};
use nv_odmr::spectrum::{
    add_gaussian_noise, linear_grid, synthesize_spectrum, BroadeningModel, EnsembleScene,
};
use nv_odmr::stress::{hydrostatic_pressure, OrientationLabel, StressTensor};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "nv-odmr", version, about = "NV ODMR stress and field toolkit")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Toolkit configuration file (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for the JSON report and CSV plot data.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// RNG seed for stochastic steps (noise injection).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an ODMR spectrum for a stress tensor and field.
    SimulateSpectrum(SimulateSpectrumArgs),
    /// Convert between pressure and the D resonance via the empirical polynomial.
    Calibrate(CalibrateArgs),
    /// Fit stress tensor and fields to a measured spectrum series.
    Fit(FitArgs),
    /// Rank alive-group hypotheses against a spectrum series.
    OrientationScan(OrientationScanArgs),
    /// Synthesize an inhomogeneously broadened Rabi trace.
    SimulateRabi(SimulateRabiArgs),
    /// Print the toolkit version.
    Version,
}

#[derive(Args)]
struct SimulateSpectrumArgs {
    /// Hydrostatic pressure in GPa (builds a hydrostatic tensor).
    #[arg(long, conflicts_with = "stress")]
    pressure_gpa: Option<f64>,
    /// Full tensor as sxx,syy,szz,sxy,sxz,syz in GPa.
    #[arg(long, value_delimiter = ',', num_args = 6)]
    stress: Option<Vec<f64>>,
    /// Magnetic field bx,by,bz in Gauss (crystal frame).
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0,0,0")]
    field: Vec<f64>,
    /// Comma-separated NV orientations, e.g. 111,-1-11 (default: all four).
    #[arg(long, value_delimiter = ',')]
    alive_groups: Option<Vec<String>>,
    /// Grid start in MHz (auto from the resonance lines when omitted).
    #[arg(long)]
    f_min: Option<f64>,
    /// Grid end in MHz.
    #[arg(long)]
    f_max: Option<f64>,
    #[arg(long, default_value_t = 1001)]
    points: usize,
    /// Gaussian contrast noise added to the trace.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    /// D resonance in MHz; reports the calibrated pressure.
    #[arg(long)]
    d_mhz: Option<f64>,
    /// Pressure in GPa; reports the expected D resonance.
    #[arg(long)]
    pressure_gpa: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Experiment manifest (JSON) naming the spectrum files.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct OrientationScanArgs {
    /// Experiment manifest (JSON) naming the spectrum files.
    #[arg(long)]
    manifest: PathBuf,
    /// Alive-group hypothesis as a comma list, e.g. --hypothesis 111,-1-11
    /// (repeatable; default: each pair plus all four).
    #[arg(long = "hypothesis")]
    hypotheses: Vec<String>,
}

#[derive(Args)]
struct SimulateRabiArgs {
    /// On-resonance Rabi frequency in MHz.
    #[arg(long, default_value_t = 10.0)]
    omega_mhz: f64,
    /// Gaussian detuning spread in MHz.
    #[arg(long, conflicts_with = "pressure_spread_gpa")]
    sigma_mhz: Option<f64>,
    /// Pressure spread in GPa, converted via the calibration slope at
    /// this pressure (see --at-pressure-gpa).
    #[arg(long)]
    pressure_spread_gpa: Option<f64>,
    #[arg(long, default_value_t = 66.3)]
    at_pressure_gpa: f64,
    #[arg(long, default_value_t = 500.0)]
    t_max_ns: f64,
    #[arg(long, default_value_t = 501)]
    points: usize,
    /// Gaussian noise added to the signal.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
}

/// Wrapper written as `report.json`: every run echoes its effective
/// configuration and the toolkit version so results are reproducible.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    /// Wall-clock seconds since the Unix epoch; excluded from
    /// determinism comparisons.
    timestamp: f64,
    seed: u64,
    effective_config: &'a ToolkitConfig,
    #[serde(flatten)]
    payload: T,
}

fn write_report<T: Serialize>(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: &ToolkitConfig,
    payload: T,
) -> Result<()> {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let report = Report { command, version: VERSION, timestamp, seed, effective_config: config, payload };
    let text = serde_json::to_string_pretty(&report)?;
    let path = out_dir.join("report.json");
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_groups(names: &[String]) -> Result<Vec<OrientationLabel>> {
    names
        .iter()
        .map(|s| OrientationLabel::parse(s).map_err(anyhow::Error::from))
        .collect()
}

fn run_simulate_spectrum(
    args: &SimulateSpectrumArgs,
    common: &CommonArgs,
    config: &ToolkitConfig,
) -> Result<()> {
    let sigma = match (&args.stress, args.pressure_gpa) {
        (Some(c), _) => StressTensor::from_components([c[0], c[1], c[2], c[3], c[4], c[5]]),
        (None, Some(p)) => StressTensor::hydrostatic(p),
        (None, None) => bail!("pass either --pressure-gpa or --stress"),
    };
    let groups = match &args.alive_groups {
        Some(names) => parse_groups(names)?,
        None => OrientationLabel::ALL.to_vec(),
    };
    let p_hydro = hydrostatic_pressure(&sigma);
    let scene = EnsembleScene {
        sigma,
        b_crystal: [args.field[0], args.field[1], args.field[2]],
        alive_groups: groups,
        line: config.line,
        broadening: BroadeningModel {
            sigma_p: config.sigma_p,
            dd_dp: config.calibration.slope(p_hydro.max(0.0)),
        },
    };
    let preview = nv_odmr::spectrum::resonance_lines(&scene, &config.constants, &config.coupling)?;
    let span: Vec<f64> = preview.iter().flat_map(|l| [l.f_minus, l.f_plus]).collect();
    let lo = span.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = span.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let margin = 25.0 * config.line.lorentz_width + 5.0 * scene.broadening.gauss_width().abs();
    let grid = linear_grid(
        args.f_min.unwrap_or(lo - margin),
        args.f_max.unwrap_or(hi + margin),
        args.points,
    )?;
    let synthesis = synthesize_spectrum(&scene, &grid, &config.constants, &config.coupling)?;
    let trace = if args.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
        add_gaussian_noise(&synthesis.trace, args.noise_sigma, &mut rng)
    } else {
        synthesis.trace.clone()
    };
    write_spectrum_csv(&common.out_dir.join("spectrum.csv"), &trace)?;
    write_report(
        &common.out_dir,
        "simulate-spectrum",
        common.seed,
        config,
        json!({
            "stress_gpa": sigma,
            "hydrostatic_pressure_gpa": p_hydro,
            "field_gauss": args.field,
            "resonance_lines": synthesis.lines,
            "coverage_warning": synthesis.coverage_warning,
            "noise_sigma": args.noise_sigma,
            "spectrum_csv": "spectrum.csv",
        }),
    )
}

fn run_calibrate(args: &CalibrateArgs, common: &CommonArgs, config: &ToolkitConfig) -> Result<()> {
    let payload = match (args.d_mhz, args.pressure_gpa) {
        (Some(d), None) => {
            let r = pressure_from_d(d, &config.calibration, &config.calibration_uncertainty)?;
            json!({ "direction": "d_to_pressure", "d_mhz": d, "pressure": r })
        }
        (None, Some(p)) => {
            let r = d_from_pressure(p, &config.calibration)?;
            json!({ "direction": "pressure_to_d", "pressure_gpa": p, "d": r })
        }
        _ => bail!("pass exactly one of --d-mhz or --pressure-gpa"),
    };
    write_report(&common.out_dir, "calibrate", common.seed, config, payload)
}

fn run_fit(args: &FitArgs, common: &CommonArgs, config: &ToolkitConfig) -> Result<()> {
    let manifest = ExperimentManifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let dataset = load_dataset(&manifest, base)?;
    let outcome = seed_initialization(&dataset, config).and_then(|seed| {
        fit_global(&dataset, &seed, &config.fit, config, manifest.culet_pressure_gpa)
    });
    match outcome {
        Ok(fit) => {
            // best-fit model curves alongside the data, for plotting
            let residual =
                nv_odmr::inversion::residuals(&fit.parameters, &dataset, config)?;
            let mut offset = 0usize;
            for (i, trace) in dataset.spectra.iter().enumerate() {
                let model: Vec<f64> = trace
                    .contrast
                    .iter()
                    .enumerate()
                    .map(|(k, d)| d + residual[offset + k])
                    .collect();
                offset += trace.len();
                let model_trace = nv_odmr::spectrum::SpectrumTrace {
                    frequencies: trace.frequencies.clone(),
                    contrast: model,
                };
                write_spectrum_csv(
                    &common.out_dir.join(format!("model_{i}.csv")),
                    &model_trace,
                )?;
            }
            write_report(
                &common.out_dir,
                "fit",
                common.seed,
                config,
                json!({ "status": "ok", "fit": fit, "manifest": manifest }),
            )
        }
        Err(err) => {
            // diagnostic report still written; caller sees a failure
            write_report(
                &common.out_dir,
                "fit",
                common.seed,
                config,
                json!({
                    "status": "failed",
                    "error": err.to_string(),
                    "manifest": manifest,
                }),
            )?;
            bail!("fit did not converge: {err}");
        }
    }
}

fn run_orientation_scan(
    args: &OrientationScanArgs,
    common: &CommonArgs,
    config: &ToolkitConfig,
) -> Result<()> {
    let manifest = ExperimentManifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let dataset = load_dataset(&manifest, base)?;
    let hypotheses: Vec<Vec<OrientationLabel>> = if args.hypotheses.is_empty() {
        let all = OrientationLabel::ALL;
        let mut hs: Vec<Vec<OrientationLabel>> = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                hs.push(vec![all[i], all[j]]);
            }
        }
        hs.push(all.to_vec());
        hs
    } else {
        args.hypotheses
            .iter()
            .map(|h| {
                let names: Vec<String> = h.split(',').map(str::to_owned).collect();
                parse_groups(&names)
            })
            .collect::<Result<_>>()?
    };
    let scan = group_survival_scan(&dataset, &hypotheses, &config.fit, config)?;
    write_report(
        &common.out_dir,
        "orientation-scan",
        common.seed,
        config,
        json!({ "scan": scan, "manifest": manifest }),
    )
}

fn run_simulate_rabi(
    args: &SimulateRabiArgs,
    common: &CommonArgs,
    config: &ToolkitConfig,
) -> Result<()> {
    let detuning_sigma = match (args.sigma_mhz, args.pressure_spread_gpa) {
        (Some(s), _) => s,
        (None, Some(sp)) => detuning_sigma_from_pressure_spread(
            sp,
            config.calibration.slope(args.at_pressure_gpa.max(0.0)),
        ),
        (None, None) => detuning_sigma_from_pressure_spread(
            config.sigma_p,
            config.calibration.slope(args.at_pressure_gpa.max(0.0)),
        ),
    };
    let params = RabiParameters {
        omega: args.omega_mhz,
        detuning_sigma,
        t_grid: linear_grid(0.0, args.t_max_ns, args.points)?,
    };
    let mut trace = rabi_signal(&params)?;
    if args.noise_sigma > 0.0 {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
        let normal = Normal::new(0.0, args.noise_sigma)?;
        for s in &mut trace.signal {
            *s += normal.sample(&mut rng);
        }
    }
    write_rabi_csv(&common.out_dir.join("rabi.csv"), &trace)?;
    let decay = nv_odmr::rabi::envelope_decay_time(&trace).ok();
    write_report(
        &common.out_dir,
        "simulate-rabi",
        common.seed,
        config,
        json!({
            "omega_mhz": args.omega_mhz,
            "detuning_sigma_mhz": detuning_sigma,
            "flip_time_ns": 1000.0 / (2.0 * args.omega_mhz),
            "envelope_decay_time_ns": decay,
            "noise_sigma": args.noise_sigma,
            "rabi_csv": "rabi.csv",
        }),
    )
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.common.config {
        Some(path) => ToolkitConfig::load(path)?,
        None => ToolkitConfig::default(),
    };
    config.validate()?;
    std::fs::create_dir_all(&cli.common.out_dir)
        .with_context(|| format!("creating {}", cli.common.out_dir.display()))?;
    match &cli.command {
        Command::SimulateSpectrum(a) => run_simulate_spectrum(a, &cli.common, &config),
        Command::Calibrate(a) => run_calibrate(a, &cli.common, &config),
        Command::Fit(a) => run_fit(a, &cli.common, &config),
        Command::OrientationScan(a) => run_orientation_scan(a, &cli.common, &config),
        Command::SimulateRabi(a) => run_simulate_rabi(a, &cli.common, &config),
        Command::Version => {
            println!("nv-odmr {VERSION}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
