//! Sparse correlation kernels for binary frames.
//!
//! With `r = N - shape` and `N` binary, every term of the coincidence sum can
//! be evaluated from the list of fired pixels plus quantities that depend only
//! on the shapes, which are computed once. Results match the dense direct
//! summation in `super` to rounding.

use crate::calibration::PeakWindow;
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::frame::{DetectorGeometry, PhotonFrame};

use super::{overlap_bounds, CorrelationMap, Normalization, ShiftRange};

/// Box sum `B(p) = sum over the window of v(p + d)`, zero outside the detector.
fn box_sum_f64(v: &[f64], g: DetectorGeometry, (x0, x1): (i64, i64), (y0, y1): (i64, i64)) -> Vec<f64> {
    let (w, h) = (g.width as i64, g.height as i64);
    let mut horiz = vec![0.0; v.len()];
    for y in 0..h {
        let row = &v[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let lo = (x + x0).max(0);
            let hi = (x + x1).min(w - 1);
            if lo <= hi {
                horiz[(y * w + x) as usize] = row[lo as usize..=hi as usize].iter().sum();
            }
        }
    }
    let mut out = vec![0.0; v.len()];
    for y in 0..h {
        let lo = (y + y0).max(0);
        let hi = (y + y1).min(h - 1);
        for yy in lo..=hi {
            let src = &horiz[(yy * w) as usize..((yy + 1) * w) as usize];
            let dst = &mut out[(y * w) as usize..((y + 1) * w) as usize];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

/// Integer box sum of a binary frame via running sums; exact.
fn box_sum_binary(v: &[u8], g: DetectorGeometry, (x0, x1): (i64, i64), (y0, y1): (i64, i64)) -> Vec<u32> {
    let (w, h) = (g.width as i64, g.height as i64);
    let mut horiz = vec![0u32; v.len()];
    let mut prefix = vec![0u32; w as usize + 1];
    for y in 0..h {
        let row = &v[(y * w) as usize..((y + 1) * w) as usize];
        for (x, &p) in row.iter().enumerate() {
            prefix[x + 1] = prefix[x] + p as u32;
        }
        for x in 0..w {
            let lo = (x + x0).clamp(0, w);
            let hi = (x + x1 + 1).clamp(0, w);
            if hi > lo {
                horiz[(y * w + x) as usize] = prefix[hi as usize] - prefix[lo as usize];
            }
        }
    }
    let mut out = vec![0u32; v.len()];
    let mut col = vec![0u32; h as usize + 1];
    for x in 0..w {
        for y in 0..h {
            col[y as usize + 1] = col[y as usize] + horiz[(y * w + x) as usize];
        }
        for y in 0..h {
            let lo = (y + y0).clamp(0, h);
            let hi = (y + y1 + 1).clamp(0, h);
            if hi > lo {
                out[(y * w + x) as usize] = col[hi as usize] - col[lo as usize];
            }
        }
    }
    out
}

fn check_shape(g: DetectorGeometry, shape: &[f64], what: &str) -> Result<()> {
    if shape.len() != g.pixel_count() {
        return Err(invalid(format!("{what} has {} pixels, detector {g} has {}", shape.len(), g.pixel_count())));
    }
    Ok(())
}

/// Binned coincidences inside one fixed window, for a stream of frames that
/// share the signal and idler beam shapes.
#[derive(Debug, Clone)]
pub struct WindowCorrelator {
    geometry: DetectorGeometry,
    window: PeakWindow,
    idler_shape: Vec<f64>,
    signal_shape_box: Vec<f64>,
    shape_cross: f64,
}

impl WindowCorrelator {
    pub fn new(geometry: DetectorGeometry, window: PeakWindow, signal_shape: &[f64], idler_shape: &[f64]) -> Result<Self> {
        check_shape(geometry, signal_shape, "signal shape")?;
        check_shape(geometry, idler_shape, "idler shape")?;
        window.check_inside(ShiftRange::new(geometry.width - 1, geometry.height - 1))?;
        let signal_shape_box = box_sum_f64(signal_shape, geometry, window.x_range(), window.y_range());
        let shape_cross = idler_shape.iter().zip(&signal_shape_box).map(|(a, b)| a * b).sum();
        Ok(Self {
            geometry,
            window,
            idler_shape: idler_shape.to_vec(),
            signal_shape_box,
            shape_cross,
        })
    }

    pub fn window(&self) -> PeakWindow {
        self.window
    }

    /// Coincidences `c_n` between the residual `signal - scale * signal_shape`
    /// and each residual `idler_n - idler_shape`, summed over the window.
    pub fn series(&self, signal: &PhotonFrame, signal_scale: f64, idlers: &[PhotonFrame]) -> Result<Vec<f64>> {
        self.geometry.ensure_same(&signal.geometry())?;
        for f in idlers {
            self.geometry.ensure_same(&f.geometry())?;
        }
        let counts = box_sum_binary(signal.pixels(), self.geometry, self.window.x_range(), self.window.y_range());
        let boxed: Vec<f64> = counts
            .iter()
            .zip(&self.signal_shape_box)
            .map(|(&n, &s)| n as f64 - signal_scale * s)
            .collect();
        let counts_dot: f64 = counts.iter().zip(&self.idler_shape).map(|(&n, &m)| n as f64 * m).sum();
        let base = counts_dot - signal_scale * self.shape_cross;
        Ok(idlers
            .iter()
            .map(|f| {
                let hits: f64 = f
                    .pixels()
                    .iter()
                    .zip(&boxed)
                    .filter(|(&p, _)| p != 0)
                    .map(|(_, &b)| b)
                    .sum();
                hits - base
            })
            .collect())
    }
}

/// Raw coincidence map of one pair plus the residual energies over each overlap.
#[derive(Debug, Clone)]
pub struct PairMap {
    pub coincidences: Vec<f64>,
    pub signal_energy: Vec<f64>,
    pub idler_energy: Vec<f64>,
}

/// Full displacement maps between binary frames and fixed beam shapes.
#[derive(Debug, Clone)]
pub struct PairCorrelator {
    geometry: DetectorGeometry,
    range: ShiftRange,
    signal_shape: Vec<f64>,
    idler_shape: Vec<f64>,
    shape_cross: Vec<f64>,
}

/// Summed-area table with one row and column of zero padding.
fn integral(v: &[f64], g: DetectorGeometry) -> Vec<f64> {
    let (w, h) = (g.width as usize, g.height as usize);
    let mut t = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut run = 0.0;
        for x in 0..w {
            run += v[y * w + x];
            t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + run;
        }
    }
    t
}

fn rect(t: &[f64], g: DetectorGeometry, (x0, x1): (usize, usize), (y0, y1): (usize, usize)) -> f64 {
    let s = g.width as usize + 1;
    t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0]
}

impl PairCorrelator {
    pub fn new(geometry: DetectorGeometry, range: ShiftRange, signal_shape: &[f64], idler_shape: &[f64], exec: Exec) -> Result<Self> {
        check_shape(geometry, signal_shape, "signal shape")?;
        check_shape(geometry, idler_shape, "idler shape")?;
        range.check(geometry)?;
        let w = geometry.width as usize;
        let shape_cross = exec.map(range.len(), |k| {
            let (dx, dy) = range.shift(k);
            let (x0, x1) = overlap_bounds(geometry.width as i64, dx);
            let (y0, y1) = overlap_bounds(geometry.height as i64, dy);
            let mut acc = 0.0;
            for y in y0..y1 {
                let ys = (y as i64 + dy) as usize;
                let srow = &signal_shape[ys * w..(ys + 1) * w];
                let irow = &idler_shape[y * w..(y + 1) * w];
                let xs0 = (x0 as i64 + dx) as usize;
                acc += srow[xs0..xs0 + (x1 - x0)].iter().zip(&irow[x0..x1]).map(|(a, b)| a * b).sum::<f64>();
            }
            acc
        });
        Ok(Self {
            geometry,
            range,
            signal_shape: signal_shape.to_vec(),
            idler_shape: idler_shape.to_vec(),
            shape_cross,
        })
    }

    pub fn range(&self) -> ShiftRange {
        self.range
    }

    pub fn geometry(&self) -> DetectorGeometry {
        self.geometry
    }

    pub fn pair_map(&self, signal: &PhotonFrame, idler: &PhotonFrame) -> Result<PairMap> {
        let g = self.geometry;
        g.ensure_same(&signal.geometry())?;
        g.ensure_same(&idler.geometry())?;
        let (w, h) = (g.width as i64, g.height as i64);
        let (mx, my) = (self.range.max_dx as i64, self.range.max_dy as i64);
        let cols = self.range.columns();

        let r_s: Vec<f64> = signal.pixels().iter().zip(&self.signal_shape).map(|(&n, &m)| n as f64 - m).collect();
        let mut acc = vec![0.0; self.range.len()];

        // sum over fired idler pixels p of r_s(p + d)
        for p in idler.detections() {
            let (x, y) = (p as i64 % w, p as i64 / w);
            let dx_lo = (-mx).max(-x);
            let dx_hi = mx.min(w - 1 - x);
            for dy in (-my).max(-y)..=my.min(h - 1 - y) {
                let ys = (y + dy) as usize;
                let src = &r_s[ys * w as usize + (x + dx_lo) as usize..=ys * w as usize + (x + dx_hi) as usize];
                let base = (dy + my) as usize * cols + (dx_lo + mx) as usize;
                for (a, s) in acc[base..base + src.len()].iter_mut().zip(src) {
                    *a += s;
                }
            }
        }
        // minus sum over fired signal pixels q of idler_shape(q - d)
        for q in signal.detections() {
            let (x, y) = (q as i64 % w, q as i64 / w);
            // need 0 <= x - dx < w
            let dx_lo = (-mx).max(x - (w - 1));
            let dx_hi = mx.min(x);
            for dy in (-my).max(y - (h - 1))..=my.min(y) {
                let yi = (y - dy) as usize;
                let row = &self.idler_shape[yi * w as usize..(yi + 1) * w as usize];
                let src = &row[(x - dx_hi) as usize..=(x - dx_lo) as usize];
                let base = (dy + my) as usize * cols + (dx_lo + mx) as usize;
                for (a, s) in acc[base..base + src.len()].iter_mut().zip(src.iter().rev()) {
                    *a -= s;
                }
            }
        }
        for (a, c) in acc.iter_mut().zip(&self.shape_cross) {
            *a += c;
        }

        let r_s2: Vec<f64> = r_s.iter().map(|v| v * v).collect();
        let r_i2: Vec<f64> = idler
            .pixels()
            .iter()
            .zip(&self.idler_shape)
            .map(|(&n, &m)| (n as f64 - m).powi(2))
            .collect();
        let (ts, ti) = (integral(&r_s2, g), integral(&r_i2, g));
        let mut signal_energy = Vec::with_capacity(self.range.len());
        let mut idler_energy = Vec::with_capacity(self.range.len());
        for k in 0..self.range.len() {
            let (dx, dy) = self.range.shift(k);
            let xi = overlap_bounds(w, dx);
            let yi = overlap_bounds(h, dy);
            let xs = ((xi.0 as i64 + dx) as usize, (xi.1 as i64 + dx) as usize);
            let ys = ((yi.0 as i64 + dy) as usize, (yi.1 as i64 + dy) as usize);
            signal_energy.push(rect(&ts, g, xs, ys));
            idler_energy.push(rect(&ti, g, xi, yi));
        }
        Ok(PairMap {
            coincidences: acc,
            signal_energy,
            idler_energy,
        })
    }

    pub fn coincidence_map(&self, signal: &PhotonFrame, idler: &PhotonFrame) -> Result<CorrelationMap> {
        let m = self.pair_map(signal, idler)?;
        CorrelationMap::new(self.range, self.geometry.pixel_count(), Normalization::Coincidences, m.coincidences)
    }
}

/// Running sums of normalised maps over an ensemble of pairs.
#[derive(Debug, Clone)]
pub struct EnsembleMaps {
    range: ShiftRange,
    pixel_count: usize,
    pairs: usize,
    raw: Vec<f64>,
    coefficient: Vec<f64>,
    idler_fraction: Vec<f64>,
}

impl EnsembleMaps {
    pub fn empty(range: ShiftRange, pixel_count: usize) -> Self {
        Self {
            range,
            pixel_count,
            pairs: 0,
            raw: vec![0.0; range.len()],
            coefficient: vec![0.0; range.len()],
            idler_fraction: vec![0.0; range.len()],
        }
    }

    pub fn add(&mut self, m: &PairMap) {
        for k in 0..self.raw.len() {
            let c = m.coincidences[k];
            self.raw[k] += c;
            let norm = (m.signal_energy[k] * m.idler_energy[k]).sqrt();
            if norm > 0.0 {
                self.coefficient[k] += c / norm;
            }
            if m.idler_energy[k] > 0.0 {
                self.idler_fraction[k] += c / m.idler_energy[k];
            }
        }
        self.pairs += 1;
    }

    pub fn merge(&mut self, other: EnsembleMaps) {
        for (a, b) in self.raw.iter_mut().zip(other.raw) {
            *a += b;
        }
        for (a, b) in self.coefficient.iter_mut().zip(other.coefficient) {
            *a += b;
        }
        for (a, b) in self.idler_fraction.iter_mut().zip(other.idler_fraction) {
            *a += b;
        }
        self.pairs += other.pairs;
    }

    /// Accumulates `n` pairs produced by `fetch`, in fixed-size chunks merged
    /// in index order so the sums do not depend on the thread count.
    pub fn accumulate<F>(correlator: &PairCorrelator, n: usize, fetch: F, exec: Exec) -> Result<Self>
    where
        F: Fn(usize) -> Result<(PhotonFrame, PhotonFrame)> + Sync + Send,
    {
        let range = correlator.range();
        let pixel_count = correlator.geometry().pixel_count();
        let acc = exec.fold_chunks(
            n,
            16,
            || (Self::empty(range, pixel_count), None),
            |(acc, err): &mut (EnsembleMaps, Option<crate::Error>), i| {
                if err.is_some() {
                    return;
                }
                match fetch(i).and_then(|(s, id)| correlator.pair_map(&s, &id)) {
                    Ok(m) => acc.add(&m),
                    Err(e) => *err = Some(e),
                }
            },
            |(a, ea), (b, eb)| {
                if ea.is_none() {
                    *ea = eb;
                }
                a.merge(b);
            },
        );
        match acc {
            (_, Some(e)) => Err(e),
            (maps, None) => Ok(maps),
        }
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    /// Ensemble-averaged map.
    pub fn mean(&self, normalization: Normalization) -> CorrelationMap {
        let src = match normalization {
            Normalization::Coincidences => &self.raw,
            Normalization::Coefficient => &self.coefficient,
            Normalization::IdlerFraction => &self.idler_fraction,
        };
        let n = self.pairs.max(1) as f64;
        CorrelationMap::new(self.range, self.pixel_count, normalization, src.iter().map(|v| v / n).collect())
            .expect("range length")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::ResidualImage;
    use crate::correlation::{binned_coincidences, cross_covariance_map, normalized_cross_covariance_map};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(g: DetectorGeometry, p: f64, rng: &mut ChaCha8Rng) -> PhotonFrame {
        PhotonFrame::from_pixels(g, (0..g.pixel_count()).map(|_| (rng.random::<f64>() < p) as u8).collect()).unwrap()
    }

    fn random_shape(g: DetectorGeometry, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..g.pixel_count()).map(|_| rng.random::<f64>() * 0.3).collect()
    }

    fn residual(f: &PhotonFrame, shape: &[f64], scale: f64) -> ResidualImage {
        ResidualImage::from_values(
            f.geometry(),
            f.pixels().iter().zip(shape).map(|(&n, &m)| n as f64 - scale * m).collect(),
        )
        .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn sparse_map_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (w, h) in [(20, 13), (9, 9), (32, 32)] {
            let g = DetectorGeometry::new(w, h).unwrap();
            let (ss, is) = (random_shape(g, &mut rng), random_shape(g, &mut rng));
            let range = ShiftRange::new(5.min(w - 1), 4.min(h - 1));
            let pc = PairCorrelator::new(g, range, &ss, &is, Exec::Sequential).unwrap();
            for _ in 0..3 {
                let s = random_frame(g, 0.2, &mut rng);
                let i = random_frame(g, 0.1, &mut rng);
                let (rs, ri) = (residual(&s, &ss, 1.0), residual(&i, &is, 1.0));
                let dense = cross_covariance_map(&rs, &ri, range, Exec::Sequential).unwrap();
                let pm = pc.pair_map(&s, &i).unwrap();
                for (a, b) in pm.coincidences.iter().zip(dense.values()) {
                    assert!(close(*a, *b), "{a} vs {b}");
                }
                let coef = normalized_cross_covariance_map(&rs, &ri, range, Normalization::Coefficient, Exec::Sequential).unwrap();
                for k in 0..range.len() {
                    let v = pm.coincidences[k] / (pm.signal_energy[k] * pm.idler_energy[k]).sqrt();
                    assert!(close(v, coef.values()[k]));
                }
            }
        }
    }

    #[test]
    fn window_series_matches_dense_binning() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DetectorGeometry::new(30, 22).unwrap();
        let (ss, is) = (random_shape(g, &mut rng), random_shape(g, &mut rng));
        for (center, bx, by) in [((0, 0), 16, 5), ((1, -2), 3, 4), ((0, 0), 1, 1)] {
            let window = PeakWindow::new(center, bx, by).unwrap();
            let wc = WindowCorrelator::new(g, window, &ss, &is).unwrap();
            let s = random_frame(g, 0.15, &mut rng);
            let idlers: Vec<_> = (0..4).map(|_| random_frame(g, 0.05, &mut rng)).collect();
            let scale = 0.8;
            let series = wc.series(&s, scale, &idlers).unwrap();
            let range = ShiftRange::new(9, 5);
            for (c, i) in series.iter().zip(&idlers) {
                let map = cross_covariance_map(&residual(&s, &ss, scale), &residual(i, &is, 1.0), range, Exec::Sequential).unwrap();
                let want = binned_coincidences(&map, &window).unwrap();
                assert!(close(*c, want), "{c} vs {want}");
            }
        }
    }

    #[test]
    fn ensemble_is_thread_count_independent() {
        let g = DetectorGeometry::new(24, 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<_> = (0..40).map(|_| (random_frame(g, 0.1, &mut rng), random_frame(g, 0.1, &mut rng))).collect();
        let shape = vec![0.1; g.pixel_count()];
        let pc = PairCorrelator::new(g, ShiftRange::new(3, 3), &shape, &shape, Exec::Parallel).unwrap();
        let a = EnsembleMaps::accumulate(&pc, frames.len(), |k| Ok(frames[k].clone()), Exec::Sequential).unwrap();
        let b = EnsembleMaps::accumulate(&pc, frames.len(), |k| Ok(frames[k].clone()), Exec::Parallel).unwrap();
        assert_eq!(a.pairs(), 40);
        assert_eq!(a.mean(Normalization::Coefficient), b.mean(Normalization::Coefficient));
    }
}
