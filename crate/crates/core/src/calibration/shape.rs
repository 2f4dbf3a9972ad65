//! Deterministic beam shapes and residual images.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frame::{DetectorGeometry, PhotonFrame};

use super::gaussian::GaussianShape;

/// Per-pixel mean detection probability over an ensemble of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanImage {
    geometry: DetectorGeometry,
    values: Vec<f64>,
    sample_count: usize,
}

impl MeanImage {
    pub fn new(geometry: DetectorGeometry, values: Vec<f64>, sample_count: usize) -> Result<Self> {
        if values.len() != geometry.pixel_count() {
            return Err(invalid(format!("{} values for a {geometry} mean image", values.len())));
        }
        if sample_count == 0 {
            return Err(invalid("mean image needs at least one sample"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("mean value {v} outside [0, 1]")));
        }
        Ok(Self {
            geometry,
            values,
            sample_count,
        })
    }

    /// Mean from per-pixel detection counts over `samples` frames.
    pub fn from_counts(geometry: DetectorGeometry, counts: &[u32], samples: usize) -> Result<Self> {
        let n = samples as f64;
        Self::new(geometry, counts.iter().map(|&c| c as f64 / n).collect(), samples)
    }

    pub fn geometry(&self) -> DetectorGeometry {
        self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Spatial average of the mean image.
    pub fn spatial_mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Frame minus a beam shape; may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualImage {
    geometry: DetectorGeometry,
    values: Vec<f64>,
}

impl ResidualImage {
    pub fn from_values(geometry: DetectorGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.pixel_count() {
            return Err(invalid(format!("{} values for a {geometry} residual", values.len())));
        }
        Ok(Self { geometry, values })
    }

    pub fn geometry(&self) -> DetectorGeometry {
        self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spatial_mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Anything that can be rendered as a per-pixel deterministic beam shape.
pub trait BeamShape {
    fn render(&self, geometry: DetectorGeometry) -> Result<Vec<f64>>;
}

impl BeamShape for MeanImage {
    fn render(&self, geometry: DetectorGeometry) -> Result<Vec<f64>> {
        self.geometry.ensure_same(&geometry)?;
        Ok(self.values.clone())
    }
}

impl BeamShape for GaussianShape {
    fn render(&self, geometry: DetectorGeometry) -> Result<Vec<f64>> {
        Ok(self.evaluate(geometry))
    }
}

/// How the deterministic beam shape is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMethod {
    /// Average of a calibration ensemble.
    #[default]
    Ensemble,
    /// Separable Gaussian fitted to the ensemble average.
    Gaussian,
}

/// Per-pixel arithmetic mean of binary frames.
pub fn estimate_mean_shape(frames: &[PhotonFrame]) -> Result<MeanImage> {
    let first = frames.first().ok_or(Error::EmptyInput("frames"))?;
    let g = first.geometry();
    let mut counts = vec![0u32; g.pixel_count()];
    for f in frames {
        g.ensure_same(&f.geometry())?;
        for (c, &p) in counts.iter_mut().zip(f.pixels()) {
            *c += p as u32;
        }
    }
    MeanImage::from_counts(g, &counts, frames.len())
}

/// `frame - shape`, pixel by pixel, without clipping.
pub fn subtract_shape(frame: &PhotonFrame, shape: &dyn BeamShape) -> Result<ResidualImage> {
    let s = shape.render(frame.geometry())?;
    ResidualImage::from_values(
        frame.geometry(),
        frame.pixels().iter().zip(&s).map(|(&n, &m)| n as f64 - m).collect(),
    )
}
