//! End-to-end simulated experiment: calibration, trials, decoding, metrics.

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationOptions, CalibrationProfile, SimulatedPairs};
use crate::correlation::NoiseModelParams;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{DetectorGeometry, PhotonFrame};
use crate::reconstruction::{decode_ensemble, evaluate_ensemble, CoincidenceSeries, DecodedSignal, EnsembleMetrics, Reconstructor};
use crate::seed::Purpose;
use crate::source::{Simulator, SourceParams, TimeSignal};

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub geometry: DetectorGeometry,
    pub source: SourceParams,
    pub signal: TimeSignal,
    pub trials: usize,
    pub master_seed: u64,
    pub calibration_pairs: usize,
    pub calibration: CalibrationOptions,
}

/// Coincidence series of a batch of trials plus the measured fluxes.
#[derive(Debug, Clone)]
pub struct TrialBatch {
    pub series: Vec<CoincidenceSeries>,
    /// Mean occupancy of the integrated signal frames.
    pub m_s: f64,
    /// Mean occupancy of the idler frames.
    pub m_i: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub profile: CalibrationProfile,
    pub batch: TrialBatch,
    pub decoded: Vec<DecodedSignal>,
    pub model: NoiseModelParams,
    pub metrics: EnsembleMetrics,
}

/// Noise-model inputs for a profile and measured fluxes. The efficiency is
/// the idler-normalised integral inside the binning window.
pub fn noise_model(profile: &CalibrationProfile, m_s: f64, m_i: f64) -> NoiseModelParams {
    NoiseModelParams {
        pixel_count: profile.geometry().pixel_count() as f64,
        binning: profile.window.binning() as f64,
        m_s,
        m_i,
        eta: profile.eta_window.idler_eta,
    }
}

/// Calibrates on `pairs` open-step twin pairs of the simulator.
pub fn calibrate_simulated(simulator: &Simulator, master_seed: u64, pairs: usize, options: &CalibrationOptions) -> Result<CalibrationProfile> {
    calibrate(
        &SimulatedPairs {
            simulator,
            master: master_seed,
            purpose: Purpose::Calibration,
            count: pairs,
        },
        options,
    )
}

/// Reconstructs `count` trials supplied by `fetch` as
/// `(trial id, integrated signal, idler frames)`.
pub fn reconstruct_trials<F>(profile: &CalibrationProfile, count: usize, fetch: F, exec: Exec) -> Result<TrialBatch>
where
    F: Fn(usize) -> Result<(u32, PhotonFrame, Vec<PhotonFrame>)> + Sync + Send,
{
    if count == 0 {
        return Err(Error::EmptyInput("trials"));
    }
    let reconstructor = Reconstructor::new(profile)?;
    let results = exec.map(count, |k| {
        let (trial, signal, idlers) = fetch(k)?;
        if idlers.is_empty() {
            return Err(Error::EmptyInput("idler frames"));
        }
        let m_i = idlers.iter().map(|f| f.mean()).sum::<f64>() / idlers.len() as f64;
        reconstructor.series(trial, &signal, &idlers).map(|s| (s, signal.mean(), m_i))
    });
    let mut series = Vec::with_capacity(count);
    let (mut m_s, mut m_i) = (0.0, 0.0);
    for r in results {
        let (s, a, b) = r?;
        series.push(s);
        m_s += a;
        m_i += b;
    }
    Ok(TrialBatch {
        series,
        m_s: m_s / count as f64,
        m_i: m_i / count as f64,
    })
}

/// Simulates and reconstructs trials `first..first + count`.
pub fn run_trials(
    simulator: &Simulator,
    signal: &TimeSignal,
    profile: &CalibrationProfile,
    master_seed: u64,
    first: u32,
    count: usize,
    exec: Exec,
) -> Result<TrialBatch> {
    simulator.geometry().ensure_same(&profile.geometry())?;
    reconstruct_trials(
        profile,
        count,
        |k| {
            let trial = first + k as u32;
            let frames = simulator.generate_trial(signal, master_seed, Purpose::Experiment, trial);
            Ok((trial, frames.integrated_signal, frames.idlers))
        },
        exec,
    )
}

/// Decodes with the ensemble "1" level and evaluates the batch.
pub fn analyse(batch: &TrialBatch, signal: &TimeSignal, profile: &CalibrationProfile) -> Result<(Vec<DecodedSignal>, NoiseModelParams, EnsembleMetrics)> {
    let decoded = decode_ensemble(&batch.series, signal)?;
    let model = noise_model(profile, batch.m_s, batch.m_i);
    let pairs: Vec<_> = batch.series.iter().cloned().zip(decoded.iter().cloned()).collect();
    let metrics = evaluate_ensemble(&pairs, signal, Some(&model))?;
    Ok((decoded, model, metrics))
}

pub fn run_experiment(experiment: &Experiment, exec: Exec) -> Result<ExperimentOutcome> {
    let simulator = Simulator::new(experiment.geometry, experiment.source)?;
    let profile = calibrate_simulated(&simulator, experiment.master_seed, experiment.calibration_pairs, &experiment.calibration)?;
    let batch = run_trials(&simulator, &experiment.signal, &profile, experiment.master_seed, 0, experiment.trials, exec)?;
    let (decoded, model, metrics) = analyse(&batch, &experiment.signal, &profile)?;
    Ok(ExperimentOutcome {
        profile,
        batch,
        decoded,
        model,
        metrics,
    })
}

/// Compact record of a run, for JSON reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub trials: usize,
    pub eta_full: f64,
    pub eta_window: f64,
    pub eta_window_idler: f64,
    pub m_s: f64,
    pub m_i: f64,
    pub snr: f64,
    pub snr_rms: f64,
    pub predicted_full: Option<f64>,
    pub predicted_approx: Option<f64>,
    pub bit_error_rate: f64,
    pub gaussian_error_rate: f64,
}

impl RunSummary {
    pub fn new(outcome: &ExperimentOutcome) -> Self {
        let m = &outcome.metrics;
        Self {
            trials: m.trials,
            eta_full: outcome.profile.eta_full.eta,
            eta_window: outcome.profile.eta_window.eta,
            eta_window_idler: outcome.profile.eta_window.idler_eta,
            m_s: outcome.batch.m_s,
            m_i: outcome.batch.m_i,
            snr: m.snr,
            snr_rms: m.snr_rms,
            predicted_full: m.predicted.map(|p| p.full),
            predicted_approx: m.predicted.map(|p| p.approx),
            bit_error_rate: m.bit_error_rate,
            gaussian_error_rate: m.gaussian_error_rate,
        }
    }
}
