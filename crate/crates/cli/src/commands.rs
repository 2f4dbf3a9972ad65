//! Subcommand implementations. Each returns the files it wrote.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use tgi_core::calibration::{calibrate_with_maps, CalibrationOptions, CalibrationProfile, PairSource, SimulatedPairs};
use tgi_core::correlation::{accidental_std, predicted_coincidences, predicted_snr, required_snr, NoiseModelParams, Normalization};
use tgi_core::pipeline::{analyse, reconstruct_trials, run_experiment, ExperimentOutcome, TrialBatch};
use tgi_core::reconstruction::{gaussian_error_rate, write_results_csv, write_summary_csv, EnsembleMetrics};
use tgi_core::{Exec, PhotonFrame, Purpose, Simulator, TimeSignal};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{Manifest, PairFiles, TrialFiles, MANIFEST_FILE, MANIFEST_VERSION, SEED_SCHEME};

pub const PROFILE_FILE: &str = "calibration.tgim";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn save_frame(frame: &PhotonFrame, path: &Path) -> Result<(), CliError> {
    fs::write(path, frame.to_tgif_bytes()).map_err(|e| CliError::io(path, e))
}

fn load_frame(path: &Path) -> Result<PhotonFrame, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    PhotonFrame::read_tgif(bytes.as_slice()).map_err(|e| match e {
        tgi_core::Error::Format(m) => tgi_core::Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
    .map_err(CliError::from)
}

fn collect<T>(results: Vec<Result<T, CliError>>) -> Result<Vec<T>, CliError> {
    results.into_iter().collect()
}

/// Writes every trial's idler frames and integrated signal frame, optional
/// calibration pairs, and the manifest.
pub fn simulate(config: &ExperimentConfig, out: &Path, exec: Exec, with_calibration: bool) -> Result<Manifest, CliError> {
    config.validate()?;
    let seed = config.seed()?;
    let simulator = Simulator::new(config.geometry, config.source.params()?)?;
    let frames_dir = out.join("frames");
    create_dir(&frames_dir)?;

    let trials = collect(exec.map(config.trials, |t| {
        let trial = t as u32;
        let frames = simulator.generate_trial(&config.signal, seed, Purpose::Experiment, trial);
        let signal = PathBuf::from("frames").join(format!("trial_{trial:05}_signal.tgif"));
        save_frame(&frames.integrated_signal, &out.join(&signal))?;
        let mut idlers = Vec::with_capacity(frames.idlers.len());
        for (n, f) in frames.idlers.iter().enumerate() {
            let p = PathBuf::from("frames").join(format!("trial_{trial:05}_idler_{n:02}.tgif"));
            save_frame(f, &out.join(&p))?;
            idlers.push(p);
        }
        Ok(TrialFiles { trial, signal, idlers })
    }))?;

    let calibration_pairs = if with_calibration {
        collect(exec.map(config.calibration_pairs, |k| {
            let (s, i) = simulator.twin_pair(seed, Purpose::Calibration, k as u32);
            let pair = PairFiles {
                signal: PathBuf::from("frames").join(format!("calibration_{k:05}_signal.tgif")),
                idler: PathBuf::from("frames").join(format!("calibration_{k:05}_idler.tgif")),
            };
            save_frame(&s, &out.join(&pair.signal))?;
            save_frame(&i, &out.join(&pair.idler))?;
            Ok(pair)
        }))?
    } else {
        Vec::new()
    };

    let mut effective = config.clone();
    effective.seed = Some(seed);
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config_sha256: effective.hash(),
        master_seed: seed,
        seed_scheme: SEED_SCHEME.into(),
        config: effective,
        trials,
        calibration_pairs,
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Where calibration pairs come from.
pub enum CalibrationInput<'a> {
    Config(&'a ExperimentConfig),
    Manifest(&'a Path),
    /// Directory of `*_signal.tgif` / `*_idler.tgif` pairs.
    Frames(&'a Path),
}

/// Twin pairs loaded from files on demand.
struct FilePairs {
    geometry: tgi_core::DetectorGeometry,
    pairs: Vec<(PathBuf, PathBuf)>,
}

impl FilePairs {
    fn new(pairs: Vec<(PathBuf, PathBuf)>) -> Result<Self, CliError> {
        let first = pairs
            .first()
            .ok_or_else(|| CliError::Core(tgi_core::Error::InsufficientStatistics("no calibration frames found".into())))?;
        let geometry = load_frame(&first.0)?.geometry();
        Ok(Self { geometry, pairs })
    }

    fn from_dir(dir: &Path) -> Result<Self, CliError> {
        let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        let mut signals = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(stem) = name.strip_suffix("_signal.tgif") {
                if stem.starts_with("calibration_") || !stem.starts_with("trial_") {
                    signals.push((stem.to_string(), path.clone()));
                }
            }
        }
        signals.sort();
        let mut pairs = Vec::with_capacity(signals.len());
        for (stem, s) in signals {
            let i = dir.join(format!("{stem}_idler.tgif"));
            if !i.exists() {
                return Err(CliError::Validation(format!("{} has no matching idler frame", s.display())));
            }
            pairs.push((s, i));
        }
        Self::new(pairs)
    }
}

impl PairSource for FilePairs {
    fn geometry(&self) -> tgi_core::DetectorGeometry {
        self.geometry
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn pair(&self, index: usize) -> tgi_core::Result<(PhotonFrame, PhotonFrame)> {
        let (s, i) = &self.pairs[index];
        let load = |p: &Path| {
            load_frame(p).map_err(|e| match e {
                CliError::Core(e) => e,
                CliError::Io { path, source } => tgi_core::Error::Io(std::io::Error::new(source.kind(), format!("{}: {source}", path.display()))),
                CliError::Validation(m) => tgi_core::Error::InvalidParameter(m),
            })
        };
        Ok((load(s)?, load(i)?))
    }
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    geometry: String,
    pairs: usize,
    method: tgi_core::calibration::ShapeMethod,
    window: tgi_core::calibration::PeakWindow,
    binning: usize,
    eta_full: &'a tgi_core::calibration::EtaEstimate,
    eta_window: &'a tgi_core::calibration::EtaEstimate,
    capture_fraction: f64,
}

/// Writes the profile, a JSON summary and the averaged coefficient map.
pub fn calibrate(input: CalibrationInput, options: &CalibrationOptions, min_pairs: usize, out: &Path) -> Result<CalibrationProfile, CliError> {
    let run = |pairs: &dyn PairSource| -> Result<_, CliError> {
        if pairs.len() < min_pairs.max(2) {
            return Err(CliError::Core(tgi_core::Error::InsufficientStatistics(format!(
                "{} calibration pair(s), at least {} required",
                pairs.len(),
                min_pairs.max(2)
            ))));
        }
        Ok(calibrate_with_maps(pairs, options)?)
    };
    let (profile, maps) = match input {
        CalibrationInput::Config(config) => {
            config.validate()?;
            let simulator = Simulator::new(config.geometry, config.source.params()?)?;
            run(&SimulatedPairs {
                simulator: &simulator,
                master: config.seed()?,
                purpose: Purpose::Calibration,
                count: config.calibration_pairs,
            })?
        }
        CalibrationInput::Manifest(path) => {
            let manifest = Manifest::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let pairs = manifest
                .calibration_pairs
                .iter()
                .map(|p| (base.join(&p.signal), base.join(&p.idler)))
                .collect();
            run(&FilePairs::new(pairs)?)?
        }
        CalibrationInput::Frames(dir) => run(&FilePairs::from_dir(dir)?)?,
    };
    create_dir(out)?;
    profile.save(out.join(PROFILE_FILE))?;
    let report = CalibrationReport {
        geometry: profile.geometry().to_string(),
        pairs: profile.sample_count(),
        method: profile.method,
        window: profile.window,
        binning: profile.window.binning(),
        eta_full: &profile.eta_full,
        eta_window: &profile.eta_window,
        capture_fraction: if profile.eta_full.eta > 0.0 {
            profile.eta_window.eta / profile.eta_full.eta
        } else {
            0.0
        },
    };
    let path = out.join("calibration.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("report serialises") + "\n").map_err(|e| CliError::io(&path, e))?;
    maps.mean(Normalization::Coefficient).write_csv(create(&out.join("correlation_map.csv"))?)?;
    Ok(profile)
}

pub fn load_profile(path: &Path) -> Result<CalibrationProfile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(CalibrationProfile::read_tgim(bytes.as_slice())?)
}

/// Where the trials to reconstruct come from.
pub enum TrialInput<'a> {
    /// Simulate in memory.
    Config(&'a ExperimentConfig),
    Manifest(&'a Path),
}

fn metric_rows(metrics: &EnsembleMetrics, model: &NoiseModelParams, batch: &TrialBatch) -> Vec<(&'static str, String)> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    vec![
        ("trials", metrics.trials.to_string()),
        ("snr", metrics.snr.to_string()),
        ("snr_rms", metrics.snr_rms.to_string()),
        ("snr_infinite", metrics.snr_infinite.to_string()),
        ("mean_one", metrics.mean_one.to_string()),
        ("mean_zero", opt(metrics.mean_zero)),
        ("mean_zero_stderr", opt(metrics.mean_zero_stderr)),
        ("bit_errors", metrics.bit_errors.to_string()),
        ("bit_error_rate", metrics.bit_error_rate.to_string()),
        ("gaussian_error_rate", metrics.gaussian_error_rate.to_string()),
        ("predicted_snr_full", opt(metrics.predicted.map(|p| p.full))),
        ("predicted_snr_approx", opt(metrics.predicted.map(|p| p.approx))),
        ("predicted_accidental_std", accidental_std(model).to_string()),
        ("pixel_count", model.pixel_count.to_string()),
        ("binning", model.binning.to_string()),
        ("eta_window", model.eta.to_string()),
        ("m_s", batch.m_s.to_string()),
        ("m_i", batch.m_i.to_string()),
        ("low_flux_violated", model.outside_low_flux().to_string()),
    ]
}

fn write_metrics(path: &Path, rows: &[(&str, String)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    w.write_record(["metric", "value"]).map_err(csv_err)?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Result of `reconstruct`.
pub struct Reconstruction {
    pub metrics: EnsembleMetrics,
    pub model: NoiseModelParams,
}

pub fn reconstruct(input: TrialInput, calibration: &Path, out: &Path, exec: Exec) -> Result<Reconstruction, CliError> {
    let profile = load_profile(calibration)?;
    let (signal, batch) = match input {
        TrialInput::Config(config) => {
            config.validate()?;
            profile.geometry().ensure_same(&config.geometry)?;
            let simulator = Simulator::new(config.geometry, config.source.params()?)?;
            let seed = config.seed()?;
            let batch = tgi_core::pipeline::run_trials(&simulator, &config.signal, &profile, seed, 0, config.trials, exec)?;
            (config.signal.clone(), batch)
        }
        TrialInput::Manifest(path) => {
            let manifest = Manifest::load(path)?;
            profile.geometry().ensure_same(&manifest.config.geometry)?;
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            let trials = &manifest.trials;
            let steps = manifest.config.signal.len();
            let batch = reconstruct_trials(
                &profile,
                trials.len(),
                |k| {
                    let t = &trials[k];
                    if t.idlers.len() != steps {
                        return Err(tgi_core::Error::InvalidParameter(format!(
                            "trial {} lists {} idler frames for a {steps}-step signal",
                            t.trial,
                            t.idlers.len()
                        )));
                    }
                    let load = |p: &Path| -> tgi_core::Result<PhotonFrame> {
                        let f = PhotonFrame::load(base.join(p))?;
                        profile.geometry().ensure_same(&f.geometry())?;
                        Ok(f)
                    };
                    let s = load(&t.signal)?;
                    let idlers = t.idlers.iter().map(|p| load(p)).collect::<tgi_core::Result<Vec<_>>>()?;
                    Ok((t.trial, s, idlers))
                },
                exec,
            )?;
            (manifest.config.signal.clone(), batch)
        }
    };
    write_reconstruction(&signal, &profile, &batch, out)
}

fn write_reconstruction(signal: &TimeSignal, profile: &CalibrationProfile, batch: &TrialBatch, out: &Path) -> Result<Reconstruction, CliError> {
    create_dir(out)?;
    let trials = batch.series.len();
    let (decoded, model, metrics) = if trials >= 2 {
        analyse(batch, signal, profile)?
    } else {
        // one trial: decode blind, no ensemble statistics
        let d = tgi_core::reconstruction::blind_decode(&batch.series[0])?;
        let model = tgi_core::pipeline::noise_model(profile, batch.m_s, batch.m_i);
        let pairs = vec![(batch.series[0].clone(), d.clone()), (batch.series[0].clone(), d.clone())];
        let mut metrics = tgi_core::reconstruction::evaluate_ensemble(&pairs, signal, Some(&model))?;
        metrics.trials = 1;
        for v in metrics.step_std.iter_mut().chain(metrics.step_snr.iter_mut()) {
            *v = f64::NAN;
        }
        metrics.snr = f64::NAN;
        metrics.snr_rms = f64::NAN;
        metrics.snr_infinite = false;
        metrics.mean_zero_stderr = None;
        (vec![d], model, metrics)
    };
    let pairs: Vec<_> = batch.series.iter().cloned().zip(decoded).collect();
    write_results_csv(create(&out.join(RESULTS_FILE))?, &pairs, signal)?;
    write_summary_csv(create(&out.join(SUMMARY_FILE))?, &metrics, signal)?;
    write_metrics(&out.join(METRICS_FILE), &metric_rows(&metrics, &model, batch))?;
    Ok(Reconstruction { metrics, model })
}

/// Row of the sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: f64,
    pub replicates: u32,
    pub snr: f64,
    pub snr_rms: f64,
    pub bit_error_rate: f64,
    pub predicted_snr_full: f64,
    pub predicted_snr_approx: f64,
    pub eta_window: f64,
    pub capture_fraction: f64,
    /// Mean std of the "0" steps; NaN without closed steps.
    pub accidental_std: f64,
    pub predicted_accidental_std: f64,
    pub m_s: f64,
    pub m_i: f64,
}

fn zero_step_std(o: &ExperimentOutcome, signal: &TimeSignal) -> f64 {
    let zeros: Vec<f64> = o
        .metrics
        .step_std
        .iter()
        .zip(signal.levels())
        .filter(|(_, &t)| t == 0)
        .map(|(s, _)| *s)
        .collect();
    if zeros.is_empty() {
        f64::NAN
    } else {
        zeros.iter().sum::<f64>() / zeros.len() as f64
    }
}

pub fn sweep(config: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<SweepRow>, CliError> {
    config.validate()?;
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Validation("config.sweep: missing sweep specification".into()))?;
    let seed = config.seed()?;
    let mut rows = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let point = config.with_parameter(spec.parameter, value)?;
        let mut acc = vec![0.0; 11];
        for r in 0..spec.replicates {
            let mut c = point.clone();
            c.seed = Some(seed.wrapping_add(r as u64));
            let o = run_experiment(&c.experiment(exec)?, exec)?;
            let pred = o.metrics.predicted.unwrap_or(tgi_core::correlation::SnrPrediction { full: f64::NAN, approx: f64::NAN });
            let eta = &o.profile;
            let vals = [
                o.metrics.snr,
                o.metrics.snr_rms,
                o.metrics.bit_error_rate,
                pred.full,
                pred.approx,
                eta.eta_window.idler_eta,
                if eta.eta_full.eta > 0.0 { eta.eta_window.eta / eta.eta_full.eta } else { 0.0 },
                zero_step_std(&o, &c.signal),
                accidental_std(&o.model),
                o.batch.m_s,
                o.batch.m_i,
            ];
            for (a, v) in acc.iter_mut().zip(vals) {
                *a += v / spec.replicates as f64;
            }
        }
        rows.push(SweepRow {
            parameter: spec.parameter.name(),
            value,
            replicates: spec.replicates,
            snr: acc[0],
            snr_rms: acc[1],
            bit_error_rate: acc[2],
            predicted_snr_full: acc[3],
            predicted_snr_approx: acc[4],
            eta_window: acc[5],
            capture_fraction: acc[6],
            accidental_std: acc[7],
            predicted_accidental_std: acc[8],
            m_s: acc[9],
            m_i: acc[10],
        });
    }
    create_dir(out)?;
    let path = out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Core(e.into()))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

/// Closed-form predictions for one operating point.
#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub params: NoiseModelParams,
    pub ones: usize,
    pub steps: usize,
    pub levels: u32,
    pub accidental_std: f64,
    pub coincidences: f64,
    pub snr_full: f64,
    pub snr_approx: f64,
    pub required_snr: f64,
    pub decodable: bool,
    /// Midpoint-threshold bit-error rate of the Gaussian model.
    pub error_rate: f64,
    pub low_flux_violated: bool,
}

pub fn predict(params: NoiseModelParams, ones: usize, steps: usize, levels: u32) -> Result<Prediction, CliError> {
    if ones > steps {
        return Err(CliError::Validation(format!("{ones} open steps exceed {steps} steps")));
    }
    let snr = predicted_snr(1, &params, ones)?;
    let required = required_snr(levels, 1)?;
    let c = predicted_coincidences(1, &params);
    let sigma_zero = accidental_std(&params);
    let sigma_one = if snr.full > 0.0 { c / snr.full } else { sigma_zero };
    Ok(Prediction {
        params,
        ones,
        steps,
        levels,
        accidental_std: sigma_zero,
        coincidences: c,
        snr_full: snr.full,
        snr_approx: snr.approx,
        required_snr: required,
        decodable: snr.full >= required,
        error_rate: gaussian_error_rate(c, sigma_one, sigma_zero, ones, steps),
        low_flux_violated: params.outside_low_flux(),
    })
}
