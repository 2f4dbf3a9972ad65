//! Equivalent quantum efficiency from an ensemble-averaged correlation peak.

use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelationMap, EnsembleMaps, Normalization, ShiftRange};
use crate::error::{Error, Result};

use super::PeakWindow;

/// Pixels above `background mean + PEAK_SIGMAS * background std` seed the peak.
pub const PEAK_SIGMAS: f64 = 5.0;
/// Width of the map border used to estimate the background.
pub const BACKGROUND_BAND: u32 = 2;

/// Inclusive displacement rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportRect {
    pub dx_min: i64,
    pub dx_max: i64,
    pub dy_min: i64,
    pub dy_max: i64,
}

impl SupportRect {
    pub fn len(&self) -> usize {
        ((self.dx_max - self.dx_min + 1) * (self.dy_max - self.dy_min + 1)) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn of_window(w: &PeakWindow) -> Self {
        let (dx_min, dx_max) = w.x_range();
        let (dy_min, dy_max) = w.y_range();
        Self {
            dx_min,
            dx_max,
            dy_min,
            dy_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSupport {
    Window(PeakWindow),
    /// Detect the peak above the background and integrate its bounding box.
    FullSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    /// Integrated Pearson-normalised peak, clamped to [0, 1].
    pub eta: f64,
    /// Integrated idler-normalised peak (fraction of idler detections with a
    /// detected twin), clamped to [0, 1].
    pub idler_eta: f64,
    /// Unclamped background-subtracted integral of the normalised map.
    pub peak_integral: f64,
    /// Background standard deviation propagated over the support.
    pub std_error: f64,
    pub frames_used: usize,
    /// `None` when no displacement rose above the detection threshold.
    pub support: Option<SupportRect>,
}

struct Background {
    mean: f64,
    std: f64,
}

fn background(map: &CorrelationMap) -> Result<Background> {
    let r = map.range;
    let band = BACKGROUND_BAND as i64;
    if r.max_dx < 2 * BACKGROUND_BAND || r.max_dy < 2 * BACKGROUND_BAND {
        return Err(Error::InsufficientStatistics(format!(
            "shift range +/-({}, {}) leaves no background border",
            r.max_dx, r.max_dy
        )));
    }
    let vals: Vec<f64> = map
        .values()
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let (dx, dy) = r.shift(*k);
            dx.abs() > r.max_dx as i64 - band || dy.abs() > r.max_dy as i64 - band
        })
        .map(|(_, &v)| v)
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Background { mean, std: var.sqrt() })
}

fn integrate(map: &CorrelationMap, rect: &SupportRect, bg: f64) -> f64 {
    let mut s = 0.0;
    for dy in rect.dy_min..=rect.dy_max {
        for dx in rect.dx_min..=rect.dx_max {
            s += map.get(dx, dy).expect("support inside map") - bg;
        }
    }
    s
}

/// Bounding box of the above-threshold component connected to the maximum.
fn detect_peak(map: &CorrelationMap, threshold: f64) -> Option<SupportRect> {
    let r = map.range;
    let v = map.values();
    let (kmax, &vmax) = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if vmax <= threshold {
        return None;
    }
    let mut seen = vec![false; v.len()];
    let mut stack = vec![kmax];
    seen[kmax] = true;
    let (dx, dy) = r.shift(kmax);
    let mut rect = SupportRect {
        dx_min: dx,
        dx_max: dx,
        dy_min: dy,
        dy_max: dy,
    };
    while let Some(k) = stack.pop() {
        let (dx, dy) = r.shift(k);
        rect.dx_min = rect.dx_min.min(dx);
        rect.dx_max = rect.dx_max.max(dx);
        rect.dy_min = rect.dy_min.min(dy);
        rect.dy_max = rect.dy_max.max(dy);
        for ny in dy - 1..=dy + 1 {
            for nx in dx - 1..=dx + 1 {
                if r.contains(nx, ny) {
                    let j = r.index(nx, ny);
                    if !seen[j] && v[j] > threshold {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    Some(rect)
}

/// Integrates the averaged twin-correlation peak of an ensemble.
pub fn estimate_eta_from_maps(maps: &EnsembleMaps, support: EtaSupport) -> Result<EtaEstimate> {
    if maps.pairs() < 2 {
        return Err(Error::InsufficientStatistics(format!(
            "{} pair(s) cannot separate the peak from the background",
            maps.pairs()
        )));
    }
    let coef = maps.mean(Normalization::Coefficient);
    let frac = maps.mean(Normalization::IdlerFraction);
    let bg = background(&coef)?;
    let bg_frac = background(&frac)?;
    let rect = match support {
        EtaSupport::Window(w) => {
            w.check_inside(coef.range)?;
            Some(SupportRect::of_window(&w))
        }
        EtaSupport::FullSearch => detect_peak(&coef, bg.mean + PEAK_SIGMAS * bg.std),
    };
    let Some(rect) = rect else {
        return Ok(EtaEstimate {
            eta: 0.0,
            idler_eta: 0.0,
            peak_integral: 0.0,
            std_error: bg.std,
            frames_used: maps.pairs(),
            support: None,
        });
    };
    let integral = integrate(&coef, &rect, bg.mean);
    let idler = integrate(&frac, &rect, bg_frac.mean);
    Ok(EtaEstimate {
        eta: integral.clamp(0.0, 1.0),
        idler_eta: idler.clamp(0.0, 1.0),
        peak_integral: integral,
        std_error: bg.std * (rect.len() as f64).sqrt(),
        frames_used: maps.pairs(),
        support: Some(rect),
    })
}

/// Shift range wide enough to hold the twin peak and a clean background
/// border for a coherence cell of the given spread.
pub fn default_range(jitter_x: f64, jitter_y: f64, extent: (u32, u32)) -> ShiftRange {
    let span = |sigma: f64, half: u32| ((5.0 * sigma).ceil() as u32).max(half + 1) + 2 * BACKGROUND_BAND;
    ShiftRange::new(span(jitter_x, extent.0 / 2), span(jitter_y, extent.1 / 2))
}
