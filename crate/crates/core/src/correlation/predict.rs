//! Closed-form coincidence and SNR predictors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Inputs of the accidental-noise and SNR formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    /// Pixel count D.
    pub pixel_count: f64,
    /// Binning B (displacements summed per coincidence value).
    pub binning: f64,
    /// Mean events per pixel of the integrated signal frame.
    pub m_s: f64,
    /// Mean events per pixel of one idler frame.
    pub m_i: f64,
    /// Equivalent quantum efficiency inside the binning window.
    pub eta: f64,
}

/// Above this mean occupancy the low-flux approximations stop being accurate.
pub const LOW_FLUX_LIMIT: f64 = 0.3;

impl NoiseModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_count >= 1.0) || !(self.binning >= 1.0) {
            return Err(invalid("pixel count and binning must be >= 1"));
        }
        for (name, v) in [("m_s", self.m_s), ("m_i", self.m_i), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// True when a mean occupancy leaves the regime the formulas assume.
    pub fn outside_low_flux(&self) -> bool {
        self.m_s > LOW_FLUX_LIMIT || self.m_i > LOW_FLUX_LIMIT || (self.eta > 0.0 && self.m_i / self.eta > LOW_FLUX_LIMIT)
    }
}

/// Standard deviation of binned accidental coincidences, `sqrt(D B m_s m_i)`.
pub fn accidental_std(p: &NoiseModelParams) -> f64 {
    (p.pixel_count * p.binning * p.m_s * p.m_i).sqrt()
}

/// Mean twin coincidences of a step, `T D (eta m_i - m_i^2)`.
pub fn predicted_coincidences(level: u8, p: &NoiseModelParams) -> f64 {
    level as f64 * p.pixel_count * (p.eta * p.m_i - p.m_i * p.m_i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPrediction {
    /// Twin-count fluctuations and accidental noise both kept.
    pub full: f64,
    /// `T eta sqrt(D / (B M))`.
    pub approx: f64,
}

/// Predicted SNR of a step at `level` for a signal with `ones` open steps.
pub fn predicted_snr(level: u8, p: &NoiseModelParams, ones: usize) -> Result<SnrPrediction> {
    p.validate()?;
    if ones == 0 {
        return Err(invalid("the approximate SNR needs at least one open step"));
    }
    let t = level as f64;
    let signal = predicted_coincidences(level, p);
    let variance = t * p.pixel_count * p.eta * p.m_i + p.pixel_count * p.binning * p.m_s * p.m_i;
    let full = if variance > 0.0 { signal / variance.sqrt() } else { 0.0 };
    let approx = t * p.eta * (p.pixel_count / (p.binning * ones as f64)).sqrt();
    Ok(SnrPrediction { full, approx })
}

/// Gaussian quantile at which two levels are separated 99.3% of the time.
pub const DECODABILITY_QUANTILE: f64 = 2.45;

/// Minimum SNR for reliable single-shot decoding of a step: `2.45 L T`.
pub fn required_snr(levels: u32, level: u8) -> Result<f64> {
    if levels < 2 {
        return Err(invalid(format!("need at least two levels, got {levels}")));
    }
    Ok(DECODABILITY_QUANTILE * levels as f64 * level as f64)
}
