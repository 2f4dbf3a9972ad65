//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tgi_core::calibration::{CalibrationOptions, ShapeMethod, BACKGROUND_BAND, DEFAULT_CALIBRATION_PAIRS, DEFAULT_EXTENT, DEFAULT_RANGE};
use tgi_core::correlation::ShiftRange;
use tgi_core::pipeline::Experiment;
use tgi_core::{DetectorGeometry, Exec, OperatingPoint, SourceParams, TimeSignal};

use crate::error::CliError;

/// The source is given either by its physical knobs or by the measured
/// operating point they are solved from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Physical(SourceParams),
    OperatingPoint(OperatingPoint),
}

impl SourceConfig {
    pub fn params(&self) -> tgi_core::Result<SourceParams> {
        match self {
            SourceConfig::Physical(p) => {
                p.validate()?;
                Ok(*p)
            }
            SourceConfig::OperatingPoint(op) => op.to_source(),
        }
    }

    fn operating_point(&self) -> OperatingPoint {
        match self {
            SourceConfig::Physical(p) => OperatingPoint::from_source(p),
            SourceConfig::OperatingPoint(op) => *op,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "eta")]
    Eta,
    #[serde(rename = "m_i")]
    IdlerMean,
    #[serde(rename = "B")]
    Binning,
    #[serde(rename = "M")]
    Ones,
    #[serde(rename = "N_steps")]
    Steps,
    #[serde(rename = "D")]
    Pixels,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Eta => "eta",
            SweepParameter::IdlerMean => "m_i",
            SweepParameter::Binning => "B",
            SweepParameter::Ones => "M",
            SweepParameter::Steps => "N_steps",
            SweepParameter::Pixels => "D",
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub replicates: u32,
}

fn default_pairs() -> usize {
    DEFAULT_CALIBRATION_PAIRS
}

fn default_window() -> [u32; 2] {
    [DEFAULT_EXTENT.0, DEFAULT_EXTENT.1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: DetectorGeometry,
    pub source: SourceConfig,
    /// Binary transmission per step.
    pub signal: TimeSignal,
    pub trials: usize,
    /// Required, either here or on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_pairs")]
    pub calibration_pairs: usize,
    /// Peak window extent `[Bx, By]`.
    #[serde(default = "default_window")]
    pub window: [u32; 2],
    /// Displacement range searched during calibration.
    #[serde(default)]
    pub range: Option<ShiftRange>,
    #[serde(default)]
    pub method: ShapeMethod,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Validation("config: `seed` is required (or pass --seed)".into()))
    }

    /// Calibration range: the configured one, or the default widened to hold
    /// the window and its background border.
    pub fn shift_range(&self) -> ShiftRange {
        self.range.unwrap_or_else(|| {
            let need = |extent: u32| extent / 2 + 1 + 2 * BACKGROUND_BAND;
            ShiftRange::new(DEFAULT_RANGE.max_dx.max(need(self.window[0])), DEFAULT_RANGE.max_dy.max(need(self.window[1])))
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, e: tgi_core::Error| CliError::Validation(format!("config.{name}: {e}"));
        self.geometry.validate().map_err(|e| field("geometry", e))?;
        self.source.params().map_err(|e| field("source", e))?;
        self.seed()?;
        if self.trials == 0 {
            return Err(CliError::Validation("config.trials: must be at least 1".into()));
        }
        if self.calibration_pairs < 2 {
            return Err(CliError::Validation("config.calibration_pairs: must be at least 2".into()));
        }
        if self.window.contains(&0) {
            return Err(CliError::Validation("config.window: extents must be at least 1".into()));
        }
        self.shift_range().check(self.geometry).map_err(|e| field("range", e))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(CliError::Validation("config.sweep.values: empty value list".into()));
            }
            if s.replicates == 0 {
                return Err(CliError::Validation("config.sweep.replicates: must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn calibration_options(&self, exec: Exec) -> CalibrationOptions {
        CalibrationOptions {
            method: self.method,
            extent: (self.window[0], self.window[1]),
            range: self.shift_range(),
            exec,
        }
    }

    pub fn experiment(&self, exec: Exec) -> Result<Experiment, CliError> {
        self.validate()?;
        Ok(Experiment {
            geometry: self.geometry,
            source: self.source.params()?,
            signal: self.signal.clone(),
            trials: self.trials,
            master_seed: self.seed()?,
            calibration_pairs: self.calibration_pairs,
            calibration: self.calibration_options(exec),
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Copy of the configuration with one sweep parameter set to `value`.
    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<Self, CliError> {
        let bad = |what: &str| CliError::Validation(format!("sweep value {value} is not a valid {what}"));
        let count = |what: &str| -> Result<usize, CliError> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(bad(what))
            }
        };
        let mut c = self.clone();
        c.sweep = None;
        match parameter {
            SweepParameter::Eta | SweepParameter::IdlerMean => {
                let mut op = c.source.operating_point();
                if parameter == SweepParameter::Eta {
                    op.eta = value;
                } else {
                    op.idler_mean = value;
                }
                c.source = SourceConfig::OperatingPoint(op);
            }
            SweepParameter::Binning => {
                // aspect close to the 16x5 coherence cell
                let b = count("binning")? as f64;
                let by = ((b / 3.2).sqrt().round() as u32).max(1);
                let bx = ((b / by as f64).round() as u32).max(1);
                c.window = [bx, by];
                if self.range.is_some() {
                    c.range = Some(self.shift_range());
                }
            }
            SweepParameter::Ones => {
                let m = count("number of open steps")?;
                if m > c.signal.len() {
                    return Err(bad("number of open steps"));
                }
                c.signal = TimeSignal::leading_ones(c.signal.len(), m)?;
            }
            SweepParameter::Steps => {
                let n = count("number of steps")?;
                c.signal = TimeSignal::leading_ones(n, c.signal.ones().min(n))?;
            }
            SweepParameter::Pixels => {
                let side = (count("pixel count")? as f64).sqrt().round() as u32;
                c.geometry = DetectorGeometry::square(side)?;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "geometry": {"width": 64, "height": 64},
        "source": {"operating_point": {
            "idler_mean": 0.044, "signal_mean": 0.027553, "eta": 0.302,
            "background_signal": 0.00225, "background_idler": 0.0064,
            "jitter_sigma_x": 5.33, "jitter_sigma_y": 1.66, "envelope": {"type": "flat"}}},
        "signal": [1, 1, 1, 1, 0, 0, 0, 0],
        "trials": 3,
        "seed": 5
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.window, [16, 5]);
        assert_eq!(c.calibration_pairs, 900);
        assert_eq!(c.method, ShapeMethod::Ensemble);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("\"trials\": 3", "\"trials\": 3, \"trails\": 4");
        assert!(matches!(ExperimentConfig::parse(&text), Err(CliError::Validation(_))));
    }

    #[test]
    fn seed_is_mandatory() {
        let c = ExperimentConfig::parse(&BASE.replace(",\n        \"seed\": 5", "")).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_trials_rejected() {
        let c = ExperimentConfig::parse(&BASE.replace("\"trials\": 3", "\"trials\": 0")).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn binning_sweep_shapes() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        let shape = |b: f64| c.with_parameter(SweepParameter::Binning, b).unwrap().window;
        assert_eq!(shape(1.0), [1, 1]);
        assert_eq!(shape(5.0), [5, 1]);
        assert_eq!(shape(16.0), [8, 2]);
        assert_eq!(shape(80.0), [16, 5]);
    }

    #[test]
    fn sweep_value_checks() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert!(c.with_parameter(SweepParameter::Ones, 9.0).is_err());
        assert!(c.with_parameter(SweepParameter::Ones, 2.5).is_err());
        assert_eq!(c.with_parameter(SweepParameter::Steps, 2.0).unwrap().signal.levels(), &[1, 1]);
        assert_eq!(c.with_parameter(SweepParameter::Pixels, 1024.0).unwrap().geometry, DetectorGeometry::square(32).unwrap());
        assert!(c.with_parameter(SweepParameter::Eta, 1.5).is_err());
    }
}
