use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelationMap, ShiftRange};
use crate::error::{invalid, Error, Result};

/// Binning window on the correlation map: `Bx x By` displacements around a centre.
///
/// For an even extent the window reaches one step further on the negative
/// side: `dx` runs over `[cx - Bx/2, cx - Bx/2 + Bx - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakWindow {
    pub center_dx: i64,
    pub center_dy: i64,
    pub bx: u32,
    pub by: u32,
}

/// Coherence-cell binning of the reference experiment.
pub const DEFAULT_EXTENT: (u32, u32) = (16, 5);

impl PeakWindow {
    pub fn new(center: (i64, i64), bx: u32, by: u32) -> Result<Self> {
        if bx == 0 || by == 0 {
            return Err(invalid(format!("window extent must be at least 1x1, got {bx}x{by}")));
        }
        Ok(Self {
            center_dx: center.0,
            center_dy: center.1,
            bx,
            by,
        })
    }

    /// Number of binned displacements B.
    pub fn binning(&self) -> usize {
        self.bx as usize * self.by as usize
    }

    pub fn x_range(&self) -> (i64, i64) {
        let lo = self.center_dx - (self.bx / 2) as i64;
        (lo, lo + self.bx as i64 - 1)
    }

    pub fn y_range(&self) -> (i64, i64) {
        let lo = self.center_dy - (self.by / 2) as i64;
        (lo, lo + self.by as i64 - 1)
    }

    pub fn contains(&self, dx: i64, dy: i64) -> bool {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        (x0..=x1).contains(&dx) && (y0..=y1).contains(&dy)
    }

    pub fn check_inside(&self, range: ShiftRange) -> Result<()> {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        if !(range.contains(x0, y0) && range.contains(x1, y1)) {
            return Err(Error::ShiftOutOfRange(format!(
                "window [{x0}, {x1}] x [{y0}, {y1}] exceeds shifts +/-({}, {})",
                range.max_dx, range.max_dy
            )));
        }
        Ok(())
    }
}

/// Centres a `bx x by` window on the maximum of an ensemble-averaged map.
/// Only centres whose window fits inside the map's range are candidates.
/// Equal maxima resolve to the lexicographically smallest `(dx, dy)`.
pub fn locate_peak(map: &CorrelationMap, bx: u32, by: u32) -> Result<PeakWindow> {
    let range = map.range;
    PeakWindow::new((0, 0), bx, by)?.check_inside(range)?;
    let mut best: Option<((i64, i64), f64)> = None;
    for (k, &v) in map.values().iter().enumerate() {
        let pos = range.shift(k);
        if v.is_nan() || PeakWindow::new(pos, bx, by)?.check_inside(range).is_err() {
            continue;
        }
        best = match best {
            Some((bp, bv)) if v < bv || (v == bv && bp <= pos) => Some((bp, bv)),
            _ => Some((pos, v)),
        };
    }
    let (center, _) = best.ok_or_else(|| Error::InsufficientStatistics("correlation map has no finite values".into()))?;
    PeakWindow::new(center, bx, by)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::Normalization;

    fn map(range: ShiftRange, f: impl Fn(i64, i64) -> f64) -> CorrelationMap {
        let v = (0..range.len()).map(|k| {
            let (dx, dy) = range.shift(k);
            f(dx, dy)
        });
        CorrelationMap::new(range, 1, Normalization::Coefficient, v.collect()).unwrap()
    }

    #[test]
    fn window_geometry() {
        let w = PeakWindow::new((0, 0), 16, 5).unwrap();
        assert_eq!(w.binning(), 80);
        assert_eq!(w.x_range(), (-8, 7));
        assert_eq!(w.y_range(), (-2, 2));
        assert!(PeakWindow::new((0, 0), 0, 5).is_err());
        assert!(w.check_inside(ShiftRange::new(8, 2)).is_ok());
        assert!(w.check_inside(ShiftRange::new(7, 2)).is_err());
    }

    #[test]
    fn peak_at_maximum() {
        let m = map(ShiftRange::new(10, 4), |dx, dy| -((dx - 2) * (dx - 2) + (dy + 1) * (dy + 1)) as f64);
        let w = locate_peak(&m, 16, 5).unwrap();
        assert_eq!((w.center_dx, w.center_dy), (2, -1));
    }

    #[test]
    fn ties_go_to_smallest_displacement() {
        let m = map(ShiftRange::new(10, 4), |dx, dy| if (dx, dy) == (3, 0) || (dx, dy) == (-2, 1) { 1.0 } else { 0.0 });
        let w = locate_peak(&m, 1, 1).unwrap();
        assert_eq!((w.center_dx, w.center_dy), (-2, 1));
        let m = map(ShiftRange::new(3, 3), |dx, dy| if dx == 1 && (dy == 2 || dy == -1) { 1.0 } else { 0.0 });
        let w = locate_peak(&m, 1, 1).unwrap();
        assert_eq!((w.center_dx, w.center_dy), (1, -1));
    }

    #[test]
    fn window_must_fit_the_map() {
        let m = map(ShiftRange::new(10, 4), |dx, _| dx as f64);
        let w = locate_peak(&m, 16, 5).unwrap();
        assert_eq!((w.center_dx, w.center_dy), (3, -2));
        assert!(w.check_inside(m.range).is_ok());
        let m = map(ShiftRange::new(5, 4), |_, _| 0.0);
        assert!(locate_peak(&m, 16, 5).is_err());
    }
}
