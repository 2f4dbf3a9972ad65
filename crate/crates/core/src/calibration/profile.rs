//! Persisted calibration: both arm shapes, peak window and efficiency estimates.
//!
//! TGIM v1 layout: `TGIM`, version byte, width and height as u32 LE, header
//! length as u32 LE, a UTF-8 JSON header, then the signal and idler mean
//! images as row-major f64 LE rasters.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::correlation::ShiftRange;
use crate::error::{invalid, Error, Result};
use crate::frame::{read_exact_or_truncated, DetectorGeometry};

use super::{EtaEstimate, GaussianShape, MeanImage, PeakWindow, ShapeMethod};

pub const TGIM_MAGIC: &[u8; 4] = b"TGIM";
pub const TGIM_VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    pub method: ShapeMethod,
    pub window: PeakWindow,
    pub range: ShiftRange,
    /// Efficiency of the whole detected peak.
    pub eta_full: EtaEstimate,
    /// Efficiency restricted to `window`.
    pub eta_window: EtaEstimate,
    pub signal_mean: MeanImage,
    pub idler_mean: MeanImage,
    /// Signal and idler fits when `method` is Gaussian.
    pub fits: Option<(GaussianShape, GaussianShape)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    sample_count: usize,
    method: ShapeMethod,
    window: PeakWindow,
    range: ShiftRange,
    eta_full: EtaEstimate,
    eta_window: EtaEstimate,
    signal_fit: Option<GaussianShape>,
    idler_fit: Option<GaussianShape>,
}

impl CalibrationProfile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: ShapeMethod,
        window: PeakWindow,
        range: ShiftRange,
        eta_full: EtaEstimate,
        eta_window: EtaEstimate,
        signal_mean: MeanImage,
        idler_mean: MeanImage,
        fits: Option<(GaussianShape, GaussianShape)>,
    ) -> Result<Self> {
        signal_mean.geometry().ensure_same(&idler_mean.geometry())?;
        if signal_mean.sample_count() != idler_mean.sample_count() {
            return Err(invalid("signal and idler shapes come from different ensembles"));
        }
        window.check_inside(range)?;
        range.check(signal_mean.geometry())?;
        if (method == ShapeMethod::Gaussian) != fits.is_some() {
            return Err(invalid("Gaussian fits must be present exactly when the Gaussian method is used"));
        }
        Ok(Self {
            method,
            window,
            range,
            eta_full,
            eta_window,
            signal_mean,
            idler_mean,
            fits,
        })
    }

    pub fn geometry(&self) -> DetectorGeometry {
        self.signal_mean.geometry()
    }

    pub fn sample_count(&self) -> usize {
        self.signal_mean.sample_count()
    }

    /// Signal shape to subtract, before any flux rescaling.
    pub fn signal_shape(&self) -> Vec<f64> {
        match &self.fits {
            Some((s, _)) => s.evaluate(self.geometry()),
            None => self.signal_mean.values().to_vec(),
        }
    }

    pub fn idler_shape(&self) -> Vec<f64> {
        match &self.fits {
            Some((_, i)) => i.evaluate(self.geometry()),
            None => self.idler_mean.values().to_vec(),
        }
    }

    pub fn write_tgim<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.geometry();
        let header = serde_json::to_vec(&Header {
            sample_count: self.sample_count(),
            method: self.method,
            window: self.window,
            range: self.range,
            eta_full: self.eta_full,
            eta_window: self.eta_window,
            signal_fit: self.fits.map(|f| f.0),
            idler_fit: self.fits.map(|f| f.1),
        })?;
        w.write_all(TGIM_MAGIC)?;
        w.write_all(&[TGIM_VERSION])?;
        w.write_all(&g.width.to_le_bytes())?;
        w.write_all(&g.height.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(16 * g.pixel_count());
        for v in self.signal_mean.values().iter().chain(self.idler_mean.values()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_tgim<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 17];
        read_exact_or_truncated(&mut r, &mut head, "TGIM header")?;
        if &head[..4] != TGIM_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected TGIM", &head[..4])));
        }
        if head[4] != TGIM_VERSION {
            return Err(Error::Format(format!("unsupported TGIM version {}", head[4])));
        }
        let width = u32::from_le_bytes(head[5..9].try_into().unwrap());
        let height = u32::from_le_bytes(head[9..13].try_into().unwrap());
        let header_len = u32::from_le_bytes(head[13..17].try_into().unwrap()) as usize;
        let geometry = DetectorGeometry::new(width, height).map_err(|e| Error::Format(e.to_string()))?;
        let mut json = vec![0u8; header_len];
        read_exact_or_truncated(&mut r, &mut json, "TGIM metadata")?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("TGIM metadata: {e}")))?;

        let d = geometry.pixel_count();
        let mut raw = vec![0u8; 16 * d];
        read_exact_or_truncated(&mut r, &mut raw, "TGIM rasters")?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after TGIM rasters".into()));
        }
        let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let fmt = |e: Error| Error::Format(e.to_string());
        let signal_mean = MeanImage::new(geometry, vals[..d].to_vec(), h.sample_count).map_err(fmt)?;
        let idler_mean = MeanImage::new(geometry, vals[d..].to_vec(), h.sample_count).map_err(fmt)?;
        let fits = match (h.signal_fit, h.idler_fit) {
            (Some(s), Some(i)) => Some((s, i)),
            (None, None) => None,
            _ => return Err(Error::Format("TGIM metadata has only one Gaussian fit".into())),
        };
        Self::new(h.method, h.window, h.range, h.eta_full, h.eta_window, signal_mean, idler_mean, fits).map_err(fmt)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_tgim(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_tgim(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
