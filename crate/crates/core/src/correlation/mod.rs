//! Coincidence statistics between residual images.
//!
//! A correlation value at displacement `(dx, dy)` is the number of coincidences
//!
//! ```text
//! C(dx, dy) = sum_p r_s(p + (dx, dy)) * r_i(p)
//! ```
//!
//! over every idler pixel `p` whose displaced partner lies on the detector,
//! where `r_s`, `r_i` are the signal and idler frames with their mean beam shape
//! removed. This is `D` times the empirical covariance; no `1/D` factor is
//! applied anywhere.

mod fast;
pub mod predict;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::{PeakWindow, ResidualImage};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::DetectorGeometry;

pub use fast::{EnsembleMaps, PairCorrelator, WindowCorrelator};
pub use predict::{
    accidental_std, predicted_coincidences, predicted_snr, required_snr, NoiseModelParams, SnrPrediction,
};

/// Symmetric displacement range `[-max_dx, max_dx] x [-max_dy, max_dy]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftRange {
    pub max_dx: u32,
    pub max_dy: u32,
}

impl ShiftRange {
    pub fn new(max_dx: u32, max_dy: u32) -> Self {
        Self { max_dx, max_dy }
    }

    pub fn columns(&self) -> usize {
        2 * self.max_dx as usize + 1
    }

    pub fn rows(&self) -> usize {
        2 * self.max_dy as usize + 1
    }

    pub fn len(&self) -> usize {
        self.columns() * self.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, dx: i64, dy: i64) -> bool {
        dx.unsigned_abs() <= self.max_dx as u64 && dy.unsigned_abs() <= self.max_dy as u64
    }

    #[inline]
    pub fn index(&self, dx: i64, dy: i64) -> usize {
        (dy + self.max_dy as i64) as usize * self.columns() + (dx + self.max_dx as i64) as usize
    }

    /// Displacement at linear index `i` (row-major, `dy` outer).
    #[inline]
    pub fn shift(&self, i: usize) -> (i64, i64) {
        let c = self.columns();
        ((i % c) as i64 - self.max_dx as i64, (i / c) as i64 - self.max_dy as i64)
    }

    pub fn check(&self, geometry: DetectorGeometry) -> Result<()> {
        if self.max_dx >= geometry.width || self.max_dy >= geometry.height {
            return Err(Error::ShiftOutOfRange(format!(
                "shifts up to ({}, {}) do not fit a {geometry} detector",
                self.max_dx, self.max_dy
            )));
        }
        Ok(())
    }
}

/// Number of pixel pairs that overlap at displacement `(dx, dy)`.
pub fn overlap_count(geometry: DetectorGeometry, dx: i64, dy: i64) -> usize {
    let w = (geometry.width as i64 - dx.abs()).max(0);
    let h = (geometry.height as i64 - dy.abs()).max(0);
    (w * h) as usize
}

/// What a map's values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw coincidence counts (covariance times overlap).
    Coincidences,
    /// Pearson coefficient over the overlap, in [-1, 1].
    Coefficient,
    /// Coincidences divided by the idler residual energy over the overlap:
    /// the fraction of idler detections matched on the signal arm.
    IdlerFraction,
}

impl Normalization {
    pub fn name(&self) -> &'static str {
        match self {
            Normalization::Coincidences => "coincidences",
            Normalization::Coefficient => "coefficient",
            Normalization::IdlerFraction => "idler_fraction",
        }
    }
}

/// Correlation values over a displacement window.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub range: ShiftRange,
    pub pixel_count: usize,
    pub normalization: Normalization,
    values: Vec<f64>,
}

impl CorrelationMap {
    pub fn new(range: ShiftRange, pixel_count: usize, normalization: Normalization, values: Vec<f64>) -> Result<Self> {
        if values.len() != range.len() {
            return Err(crate::error::invalid(format!(
                "{} values for a {}-shift map",
                values.len(),
                range.len()
            )));
        }
        Ok(Self {
            range,
            pixel_count,
            normalization,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, dx: i64, dy: i64) -> Option<f64> {
        self.range.contains(dx, dy).then(|| self.values[self.range.index(dx, dy)])
    }

    /// Tidy CSV: header `dx,dy,<normalization>` then one row per displacement.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["dx", "dy", self.normalization.name()])?;
        for (i, v) in self.values.iter().enumerate() {
            let (dx, dy) = self.range.shift(i);
            wr.write_record([dx.to_string(), dy.to_string(), format!("{v:e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn overlap_bounds(n: i64, d: i64) -> (usize, usize) {
    // idler coordinate u such that both u and u + d lie in [0, n)
    ((-d).max(0) as usize, (n - d.max(0)).max(0) as usize)
}

fn direct_sum(sig: &ResidualImage, idl: &ResidualImage, dx: i64, dy: i64) -> (f64, f64, f64) {
    let g = sig.geometry();
    let w = g.width as usize;
    let (x0, x1) = overlap_bounds(g.width as i64, dx);
    let (y0, y1) = overlap_bounds(g.height as i64, dy);
    let (s, i) = (sig.values(), idl.values());
    let (mut cross, mut ss, mut ii) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        let ys = (y as i64 + dy) as usize;
        let srow = &s[ys * w..(ys + 1) * w];
        let irow = &i[y * w..(y + 1) * w];
        for x in x0..x1 {
            let a = srow[(x as i64 + dx) as usize];
            let b = irow[x];
            cross += a * b;
            ss += a * a;
            ii += b * b;
        }
    }
    (cross, ss, ii)
}

fn dense_map(
    sig: &ResidualImage,
    idl: &ResidualImage,
    range: ShiftRange,
    normalization: Normalization,
    exec: Exec,
) -> Result<CorrelationMap> {
    let g = sig.geometry();
    g.ensure_same(&idl.geometry())?;
    range.check(g)?;
    let values = exec.map(range.len(), |k| {
        let (dx, dy) = range.shift(k);
        let (cross, ss, ii) = direct_sum(sig, idl, dx, dy);
        let denom = match normalization {
            Normalization::Coincidences => 1.0,
            Normalization::Coefficient => (ss * ii).sqrt(),
            Normalization::IdlerFraction => ii,
        };
        if denom > 0.0 {
            cross / denom
        } else {
            0.0
        }
    });
    CorrelationMap::new(range, g.pixel_count(), normalization, values)
}

/// Coincidence map between two residual images by direct summation over
/// every displacement in `range`.
pub fn cross_covariance_map(
    sig: &ResidualImage,
    idl: &ResidualImage,
    range: ShiftRange,
    exec: Exec,
) -> Result<CorrelationMap> {
    dense_map(sig, idl, range, Normalization::Coincidences, exec)
}

/// Pearson-normalised map: each coincidence value divided by the root of the
/// product of both residual energies over the same overlap.
pub fn normalized_cross_covariance_map(
    sig: &ResidualImage,
    idl: &ResidualImage,
    range: ShiftRange,
    normalization: Normalization,
    exec: Exec,
) -> Result<CorrelationMap> {
    dense_map(sig, idl, range, normalization, exec)
}

/// Sum of the map over the window's `Bx x By` displacements.
pub fn binned_coincidences(map: &CorrelationMap, window: &PeakWindow) -> Result<f64> {
    window.check_inside(map.range)?;
    let (x0, x1) = window.x_range();
    let (y0, y1) = window.y_range();
    let mut sum = 0.0;
    for dy in y0..=y1 {
        for dx in x0..=x1 {
            sum += map.values[map.range.index(dx, dy)];
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::ResidualImage;
    use proptest::prelude::*;

    fn geom(w: u32, h: u32) -> DetectorGeometry {
        DetectorGeometry::new(w, h).unwrap()
    }

    fn residual(g: DetectorGeometry, values: Vec<f64>) -> ResidualImage {
        ResidualImage::from_values(g, values).unwrap()
    }

    /// Independent oracle: double sum over all pixel pairs, keeping those whose
    /// displacement equals the requested one.
    fn brute_force(sig: &ResidualImage, idl: &ResidualImage, dx: i64, dy: i64) -> f64 {
        let g = sig.geometry();
        let (w, h) = (g.width as i64, g.height as i64);
        let mut total = 0.0;
        for qy in 0..h {
            for qx in 0..w {
                for py in 0..h {
                    for px in 0..w {
                        if qx - px == dx && qy - py == dy {
                            total += sig.values()[(qy * w + qx) as usize] * idl.values()[(py * w + px) as usize];
                        }
                    }
                }
            }
        }
        total
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed | 1;
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn self_correlation_at_zero_is_energy() {
        let g = geom(7, 5);
        let r = residual(g, pseudo_random(35, 9));
        let map = cross_covariance_map(&r, &r, ShiftRange::new(2, 2), Exec::Sequential).unwrap();
        let energy: f64 = r.values().iter().map(|v| v * v).sum();
        assert!((map.get(0, 0).unwrap() - energy).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_map() {
        let g = geom(6, 6);
        let z = residual(g, vec![0.0; 36]);
        let r = residual(g, pseudo_random(36, 3));
        for (a, b) in [(&z, &r), (&r, &z)] {
            let map = cross_covariance_map(a, b, ShiftRange::new(3, 3), Exec::Parallel).unwrap();
            assert!(map.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn random_pair_matches_double_sum() {
        let g = geom(16, 16);
        let a = residual(g, pseudo_random(256, 1));
        let b = residual(g, pseudo_random(256, 2));
        let range = ShiftRange::new(6, 4);
        let map = cross_covariance_map(&a, &b, range, Exec::Parallel).unwrap();
        for k in 0..range.len() {
            let (dx, dy) = range.shift(k);
            let want = brute_force(&a, &b, dx, dy);
            let got = map.values()[k];
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-12), "({dx},{dy}) {got} vs {want}");
        }
    }

    #[test]
    fn oversized_range_is_rejected() {
        let g = geom(4, 4);
        let r = residual(g, vec![0.0; 16]);
        let err = cross_covariance_map(&r, &r, ShiftRange::new(4, 0), Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::ShiftOutOfRange(_)));
        let other = residual(geom(2, 8), vec![0.0; 16]);
        assert!(matches!(
            cross_covariance_map(&r, &other, ShiftRange::new(1, 1), Exec::Sequential),
            Err(Error::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn binning_sums_window() {
        let range = ShiftRange::new(3, 2);
        let values: Vec<f64> = (0..range.len()).map(|i| i as f64).collect();
        let map = CorrelationMap::new(range, 100, Normalization::Coincidences, values).unwrap();
        let one = PeakWindow::new((1, -1), 1, 1).unwrap();
        assert_eq!(binned_coincidences(&map, &one).unwrap(), map.get(1, -1).unwrap());
        let w = PeakWindow::new((0, 0), 2, 3).unwrap();
        let mut want = 0.0;
        for dy in -1..=1 {
            for dx in -1..=0 {
                want += map.get(dx, dy).unwrap();
            }
        }
        assert_eq!(binned_coincidences(&map, &w).unwrap(), want);
        let zero = CorrelationMap::new(range, 100, Normalization::Coincidences, vec![0.0; range.len()]).unwrap();
        assert_eq!(binned_coincidences(&zero, &w).unwrap(), 0.0);
        let outside = PeakWindow::new((3, 0), 3, 1).unwrap();
        assert!(binned_coincidences(&map, &outside).is_err());
    }

    #[test]
    fn csv_export_names_normalization() {
        let range = ShiftRange::new(1, 0);
        let map = CorrelationMap::new(range, 4, Normalization::Coefficient, vec![0.5, 1.0, -0.25]).unwrap();
        let mut out = Vec::new();
        map.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "dx,dy,coefficient");
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("-1,0,5e-1"));
    }

    proptest! {
        #[test]
        fn coefficient_is_bounded(seed in any::<u64>(), w in 3u32..10, h in 3u32..10) {
            let g = geom(w, h);
            let a = residual(g, pseudo_random(g.pixel_count(), seed));
            let b = residual(g, pseudo_random(g.pixel_count(), seed.wrapping_add(77)));
            let map = normalized_cross_covariance_map(&a, &b, ShiftRange::new(w - 1, h - 1), Normalization::Coefficient, Exec::Sequential).unwrap();
            for v in map.values() {
                prop_assert!(v.abs() <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn map_matches_double_sum_small(seed in any::<u64>(), w in 1u32..9, h in 1u32..9) {
            let g = geom(w, h);
            let a = residual(g, pseudo_random(g.pixel_count(), seed));
            let b = residual(g, pseudo_random(g.pixel_count(), !seed));
            let range = ShiftRange::new(w - 1, h - 1);
            let map = cross_covariance_map(&a, &b, range, Exec::Sequential).unwrap();
            for k in 0..range.len() {
                let (dx, dy) = range.shift(k);
                let want = brute_force(&a, &b, dx, dy);
                prop_assert!((map.values()[k] - want).abs() <= 1e-9 * want.abs().max(1e-9));
            }
        }
    }
}
