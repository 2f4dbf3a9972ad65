use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tgi_cli::commands::{self, CalibrationInput, TrialInput};
use tgi_cli::{CliError, ExperimentConfig};
use tgi_core::calibration::{CalibrationOptions, ShapeMethod, DEFAULT_CALIBRATION_PAIRS};
use tgi_core::correlation::NoiseModelParams;
use tgi_core::Exec;

#[derive(Parser)]
#[command(name = "tgi", version, about = "Temporal ghost imaging with twin photons: simulate, calibrate, reconstruct")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads. 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Beam-shape subtraction method; overrides the config.
    #[arg(long, global = true, value_enum)]
    method: Option<Method>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ensemble,
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Generate frames for every trial and write a manifest.
    Simulate {
        /// Also write the calibration twin pairs.
        #[arg(long)]
        with_calibration: bool,
    },
    /// Estimate beam shapes, peak window and efficiency from twin pairs.
    Calibrate {
        /// Read calibration pairs listed in a manifest.
        #[arg(long, conflicts_with = "frames")]
        manifest: Option<PathBuf>,
        /// Read `*_signal.tgif` / `*_idler.tgif` pairs from a directory.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Fewest pairs accepted; defaults to the config's ensemble size.
        #[arg(long)]
        min_pairs: Option<usize>,
    },
    /// Reconstruct the time signal of every trial.
    Reconstruct {
        /// Calibration profile written by `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        /// Read trials from a `simulate` manifest instead of simulating.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the experiment over the values of the config's sweep.
    Sweep,
    /// Evaluate the closed-form coincidence, noise and SNR formulas.
    Predict(PredictArgs),
}

#[derive(Args)]
struct PredictArgs {
    /// Pixel count D.
    #[arg(long, default_value_t = 256_036.0)]
    pixels: f64,
    /// Binning B.
    #[arg(long, default_value_t = 80.0)]
    binning: f64,
    /// Mean occupancy of the integrated signal frame.
    #[arg(long, default_value_t = 0.11375)]
    m_s: f64,
    /// Mean occupancy of one idler frame.
    #[arg(long, default_value_t = 0.044)]
    m_i: f64,
    /// Equivalent quantum efficiency inside the window.
    #[arg(long, default_value_t = 0.23)]
    eta: f64,
    /// Open steps M.
    #[arg(long, default_value_t = 4)]
    ones: usize,
    /// Steps N.
    #[arg(long, default_value_t = 8)]
    steps: usize,
    /// Signal levels L.
    #[arg(long, default_value_t = 2)]
    levels: u32,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required for this command".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(m) = cli.method {
        config.method = shape_method(m);
    }
    Ok(config)
}

fn shape_method(m: Method) -> ShapeMethod {
    match m {
        Method::Ensemble => ShapeMethod::Ensemble,
        Method::Gaussian => ShapeMethod::Gaussian,
    }
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> Result<PathBuf, CliError> {
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.output.clone()))
        .ok_or_else(|| CliError::Validation("no output directory: pass --out or set `output` in the config".into()))
}

fn run(cli: &Cli, exec: Exec) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { with_calibration } => {
            let config = load_config(cli)?;
            let out = out_dir(cli, Some(&config))?;
            let m = commands::simulate(&config, &out, exec, *with_calibration)?;
            eprintln!("wrote {} trial(s) and {} calibration pair(s) to {}", m.trials.len(), m.calibration_pairs.len(), out.display());
        }
        Command::Calibrate {
            manifest,
            frames,
            min_pairs,
        } => {
            let config = match (&cli.config, manifest) {
                (Some(_), _) => Some(load_config(cli)?),
                (None, Some(path)) => {
                    let mut c = tgi_cli::Manifest::load(path)?.config;
                    if let Some(m) = cli.method {
                        c.method = shape_method(m);
                    }
                    Some(c)
                }
                (None, None) => None,
            };
            let out = out_dir(cli, config.as_ref())?;
            let options = match &config {
                Some(c) => c.calibration_options(exec),
                None => CalibrationOptions {
                    method: cli.method.map(shape_method).unwrap_or_default(),
                    exec,
                    ..CalibrationOptions::default()
                },
            };
            let min = min_pairs.unwrap_or(config.as_ref().map_or(DEFAULT_CALIBRATION_PAIRS, |c| c.calibration_pairs));
            let input = match (manifest, frames, &config) {
                (Some(m), _, _) => CalibrationInput::Manifest(m),
                (None, Some(f), _) => CalibrationInput::Frames(f),
                (None, None, Some(c)) => CalibrationInput::Config(c),
                (None, None, None) => return Err(CliError::Validation("calibrate needs --config, --manifest or --frames".into())),
            };
            let p = commands::calibrate(input, &options, min, &out)?;
            eprintln!(
                "eta {:.4} (window {}x{} at ({}, {}): {:.4})",
                p.eta_full.eta, p.window.bx, p.window.by, p.window.center_dx, p.window.center_dy, p.eta_window.eta
            );
        }
        Command::Reconstruct { calibration, manifest } => {
            let config = match &cli.config {
                Some(_) if manifest.is_none() => Some(load_config(cli)?),
                _ => None,
            };
            let out = out_dir(cli, config.as_ref())?;
            let input = match (manifest, &config) {
                (Some(m), _) => TrialInput::Manifest(m),
                (None, Some(c)) => TrialInput::Config(c),
                (None, None) => return Err(CliError::Validation("reconstruct needs --config or --manifest".into())),
            };
            let r = commands::reconstruct(input, calibration, &out, exec)?;
            eprintln!(
                "{} trial(s): SNR {:.3}, bit error rate {:.4}",
                r.metrics.trials, r.metrics.snr, r.metrics.bit_error_rate
            );
        }
        Command::Sweep => {
            let config = load_config(cli)?;
            let out = out_dir(cli, Some(&config))?;
            let rows = commands::sweep(&config, &out, exec)?;
            eprintln!("{} sweep point(s) written to {}", rows.len(), out.join(commands::SWEEP_FILE).display());
        }
        Command::Predict(a) => {
            let params = NoiseModelParams {
                pixel_count: a.pixels,
                binning: a.binning,
                m_s: a.m_s,
                m_i: a.m_i,
                eta: a.eta,
            };
            let p = commands::predict(params, a.ones, a.steps, a.levels)?;
            let text = serde_json::to_string_pretty(&p).expect("prediction serialises");
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                    let path = dir.join("prediction.json");
                    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
                }
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn run_with_jobs(cli: &Cli) -> Result<(), CliError> {
    match cli.jobs {
        Some(0) => Err(CliError::Validation("--jobs must be at least 1".into())),
        Some(1) => run(cli, Exec::Sequential),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
            pool.install(|| run(cli, Exec::Parallel))
        }
        None => run(cli, Exec::Parallel),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_with_jobs(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs == Some(0) {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    run(cli, Exec::Sequential)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_with_jobs(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
