//! Per-step coincidence series, threshold decoding and ensemble metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{CalibrationProfile, PeakWindow};
use crate::correlation::{predicted_snr, NoiseModelParams, SnrPrediction, WindowCorrelator};
use crate::error::{invalid, Error, Result};
use crate::frame::{DetectorGeometry, PhotonFrame};
use crate::source::TimeSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSeries {
    pub trial: u32,
    pub window: PeakWindow,
    /// Binned coincidences `c_n`, one per step.
    pub values: Vec<f64>,
}

impl CoincidenceSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSignal {
    pub bits: Vec<u8>,
    pub threshold: f64,
    /// `|c_n - threshold|`.
    pub margins: Vec<f64>,
}

/// Computes coincidence series against a fixed calibration.
///
/// The idler shape is the calibration mean. The signal shape is the
/// calibration signal mean rescaled to the spatial mean of each integrated
/// frame, since integration over steps changes the signal flux.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    geometry: DetectorGeometry,
    correlator: WindowCorrelator,
    shape_mean: f64,
}

impl Reconstructor {
    pub fn new(profile: &CalibrationProfile) -> Result<Self> {
        let geometry = profile.geometry();
        let signal_shape = profile.signal_shape();
        let shape_mean = signal_shape.iter().sum::<f64>() / signal_shape.len() as f64;
        let correlator = WindowCorrelator::new(geometry, profile.window, &signal_shape, &profile.idler_shape())?;
        Ok(Self {
            geometry,
            correlator,
            shape_mean,
        })
    }

    pub fn geometry(&self) -> DetectorGeometry {
        self.geometry
    }

    pub fn window(&self) -> PeakWindow {
        self.correlator.window()
    }

    pub fn series(&self, trial: u32, integrated_signal: &PhotonFrame, idlers: &[PhotonFrame]) -> Result<CoincidenceSeries> {
        if idlers.is_empty() {
            return Err(Error::EmptyInput("idler frames"));
        }
        let scale = if self.shape_mean > 0.0 {
            integrated_signal.mean() / self.shape_mean
        } else {
            0.0
        };
        Ok(CoincidenceSeries {
            trial,
            window: self.window(),
            values: self.correlator.series(integrated_signal, scale, idlers)?,
        })
    }
}

/// One-shot form of [`Reconstructor::series`]; fails without a calibration.
pub fn reconstruct_series(
    integrated_signal: &PhotonFrame,
    idlers: &[PhotonFrame],
    calibration: Option<&CalibrationProfile>,
) -> Result<CoincidenceSeries> {
    let profile = calibration.ok_or_else(|| invalid("reconstruction needs a calibration profile"))?;
    profile.geometry().ensure_same(&integrated_signal.geometry())?;
    Reconstructor::new(profile)?.series(0, integrated_signal, idlers)
}

/// Bit `n` is 1 when `c_n >= mean_one_level / 2`; a value exactly at the
/// threshold decodes to 1. A non-positive level is accepted: it only arises
/// when the signal is buried in noise, and the resulting errors are counted.
pub fn threshold_decode(series: &CoincidenceSeries, mean_one_level: f64) -> Result<DecodedSignal> {
    if !mean_one_level.is_finite() {
        return Err(invalid(format!("reference level must be finite, got {mean_one_level}")));
    }
    let threshold = mean_one_level / 2.0;
    Ok(DecodedSignal {
        bits: series.values.iter().map(|&c| (c >= threshold) as u8).collect(),
        threshold,
        margins: series.values.iter().map(|&c| (c - threshold).abs()).collect(),
    })
}

/// Single-shot decoding without the truth: the largest step stands in for
/// the "1" level, so at least one open step is assumed.
pub fn blind_decode(series: &CoincidenceSeries) -> Result<DecodedSignal> {
    let max = series.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::InsufficientStatistics(
            "no positive coincidence value to take as the open level".into(),
        ));
    }
    threshold_decode(series, max)
}

fn check_lengths(series: &[CoincidenceSeries], truth: &TimeSignal) -> Result<()> {
    for s in series {
        if s.len() != truth.len() {
            return Err(invalid(format!(
                "trial {} has {} steps, the time signal has {}",
                s.trial,
                s.len(),
                truth.len()
            )));
        }
    }
    Ok(())
}

/// Mean of `c_n` over every trial and every open step.
pub fn mean_one_level(series: &[CoincidenceSeries], truth: &TimeSignal) -> Result<f64> {
    check_lengths(series, truth)?;
    let ones = truth.ones();
    if ones == 0 || series.is_empty() {
        return Err(invalid("the ensemble has no open steps"));
    }
    let sum: f64 = series
        .iter()
        .flat_map(|s| s.values.iter().zip(truth.levels()).filter(|(_, &t)| t == 1).map(|(c, _)| c))
        .sum();
    Ok(sum / (ones * series.len()) as f64)
}

/// Decodes every trial against the ensemble's measured "1" level.
pub fn decode_ensemble(series: &[CoincidenceSeries], truth: &TimeSignal) -> Result<Vec<DecodedSignal>> {
    let level = mean_one_level(series, truth)?;
    series.iter().map(|s| threshold_decode(s, level)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub trials: usize,
    pub step_mean: Vec<f64>,
    pub step_std: Vec<f64>,
    /// `step_mean / step_std` per step.
    pub step_snr: Vec<f64>,
    /// Mean "1" level over the unweighted mean of the "1"-step stds.
    pub snr: f64,
    /// Same numerator over the root of the mean "1"-step variance.
    pub snr_rms: f64,
    /// Set when the "1" steps have zero spread; `snr` is then infinite.
    pub snr_infinite: bool,
    pub mean_one: f64,
    pub mean_zero: Option<f64>,
    /// Standard error of `mean_zero`.
    pub mean_zero_stderr: Option<f64>,
    pub bit_errors: usize,
    pub bit_error_rate: f64,
    pub predicted: Option<SnrPrediction>,
    /// Gaussian error rate implied by the measured level means and stds.
    pub gaussian_error_rate: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(num)
    }
}

/// Upper normal tail `Q(x)`.
pub fn normal_tail(x: f64) -> f64 {
    Normal::standard().sf(x)
}

/// Bit-error rate of a midpoint threshold when "1" steps are
/// `N(mu_one, sigma_one)` and "0" steps `N(0, sigma_zero)`.
pub fn gaussian_error_rate(mu_one: f64, sigma_one: f64, sigma_zero: f64, ones: usize, steps: usize) -> f64 {
    let tail = |sigma: f64| {
        if sigma > 0.0 {
            normal_tail(mu_one / (2.0 * sigma))
        } else if mu_one > 0.0 {
            0.0
        } else {
            0.5
        }
    };
    let zeros = steps - ones;
    (ones as f64 * tail(sigma_one) + zeros as f64 * tail(sigma_zero)) / steps as f64
}

/// Per-step statistics, SNR and bit-error rate over an ensemble of trials.
pub fn evaluate_ensemble(
    trials: &[(CoincidenceSeries, DecodedSignal)],
    truth: &TimeSignal,
    model: Option<&NoiseModelParams>,
) -> Result<EnsembleMetrics> {
    if trials.len() < 2 {
        return Err(Error::InsufficientStatistics(format!("{} trial(s); need at least 2", trials.len())));
    }
    for (s, d) in trials {
        if s.len() != truth.len() || d.bits.len() != truth.len() {
            return Err(invalid(format!(
                "trial {} has {} steps, the time signal has {}",
                s.trial,
                s.len(),
                truth.len()
            )));
        }
    }
    let steps = truth.len();
    let levels = truth.levels();
    let mut step_mean = Vec::with_capacity(steps);
    let mut step_std = Vec::with_capacity(steps);
    for n in 0..steps {
        let col: Vec<f64> = trials.iter().map(|(s, _)| s.values[n]).collect();
        let (m, s) = mean_std(&col);
        step_mean.push(m);
        step_std.push(s);
    }
    let step_snr: Vec<f64> = step_mean.iter().zip(&step_std).map(|(&m, &s)| ratio(m, s)).collect();

    let pick = |v: &[f64], level: u8| -> Vec<f64> { v.iter().zip(levels).filter(|(_, &t)| t == level).map(|(x, _)| *x).collect() };
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ones = truth.ones();

    let (mean_one, std_one, var_one) = if ones > 0 {
        let s = pick(&step_std, 1);
        (avg(&pick(&step_mean, 1)), avg(&s), avg(&s.iter().map(|x| x * x).collect::<Vec<_>>()))
    } else {
        (0.0, 0.0, 0.0)
    };
    let (mean_zero, mean_zero_stderr, std_zero) = if ones < steps {
        let zero_vals: Vec<f64> = trials
            .iter()
            .flat_map(|(s, _)| s.values.iter().zip(levels).filter(|(_, &t)| t == 0).map(|(c, _)| *c))
            .collect();
        let (m, s) = mean_std(&zero_vals);
        (Some(m), Some(s / (zero_vals.len() as f64).sqrt()), avg(&pick(&step_std, 0)))
    } else {
        (None, None, 0.0)
    };

    let snr_infinite = ones > 0 && std_one == 0.0;
    let snr = ratio(mean_one, std_one);
    let snr_rms = ratio(mean_one, var_one.sqrt());

    let bit_errors = trials
        .iter()
        .map(|(_, d)| d.bits.iter().zip(levels).filter(|(b, t)| b != t).count())
        .sum::<usize>();
    let bit_error_rate = bit_errors as f64 / (trials.len() * steps) as f64;

    let predicted = match model {
        Some(p) if ones > 0 => Some(predicted_snr(1, p, ones)?),
        _ => None,
    };

    Ok(EnsembleMetrics {
        trials: trials.len(),
        step_mean,
        step_std,
        step_snr,
        snr,
        snr_rms,
        snr_infinite,
        mean_one,
        mean_zero,
        mean_zero_stderr,
        bit_errors,
        bit_error_rate,
        predicted,
        gaussian_error_rate: gaussian_error_rate(mean_one, std_one, std_zero, ones, steps),
    })
}

/// One row per (trial, step): `trial,step,coincidences,bit,truth`.
pub fn write_results_csv<W: Write>(w: W, trials: &[(CoincidenceSeries, DecodedSignal)], truth: &TimeSignal) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["trial", "step", "coincidences", "bit", "truth"])?;
    for (s, d) in trials {
        for (n, (c, b)) in s.values.iter().zip(&d.bits).enumerate() {
            out.write_record([
                s.trial.to_string(),
                n.to_string(),
                format!("{c:e}"),
                b.to_string(),
                truth.levels()[n].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per step: `step,truth,mean,std,snr_step`.
pub fn write_summary_csv<W: Write>(w: W, metrics: &EnsembleMetrics, truth: &TimeSignal) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "truth", "mean", "std", "snr_step"])?;
    for n in 0..truth.len() {
        out.write_record([
            n.to_string(),
            truth.levels()[n].to_string(),
            format!("{:e}", metrics.step_mean[n]),
            format!("{:e}", metrics.step_std[n]),
            format!("{:e}", metrics.step_snr[n]),
        ])?;
    }
    out.flush()?;
    Ok(())
}
