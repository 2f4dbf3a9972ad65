//! Separable 2-D Gaussian plus constant offset, fitted by damped least squares.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::DetectorGeometry;

use super::MeanImage;

/// Width reported for a degenerate (flat) fit.
pub const DEGENERATE_SIGMA: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianShape {
    pub amplitude: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub offset: f64,
    /// Set when no Gaussian beats a constant; the shape is then the flat
    /// `offset` with zero amplitude and `DEGENERATE_SIGMA` widths.
    pub degenerate: bool,
}

impl GaussianShape {
    fn flat(geometry: DetectorGeometry, value: f64) -> Self {
        Self {
            amplitude: 0.0,
            center_x: (geometry.width as f64 - 1.0) / 2.0,
            center_y: (geometry.height as f64 - 1.0) / 2.0,
            sigma_x: DEGENERATE_SIGMA,
            sigma_y: DEGENERATE_SIGMA,
            offset: value,
            degenerate: true,
        }
    }

    fn from_params(p: &Vector6<f64>) -> Self {
        Self {
            amplitude: p[0],
            center_x: p[1],
            center_y: p[2],
            sigma_x: p[3],
            sigma_y: p[4],
            offset: p[5],
            degenerate: false,
        }
    }

    pub fn evaluate(&self, geometry: DetectorGeometry) -> Vec<f64> {
        let gx = profile(geometry.width, self.center_x, self.sigma_x);
        let gy = profile(geometry.height, self.center_y, self.sigma_y);
        let mut out = Vec::with_capacity(geometry.pixel_count());
        for &vy in &gy {
            out.extend(gx.iter().map(|&vx| self.amplitude * vx * vy + self.offset));
        }
        out
    }
}

fn profile(n: u32, center: f64, sigma: f64) -> Vec<f64> {
    (0..n).map(|i| (-0.5 * ((i as f64 - center) / sigma).powi(2)).exp()).collect()
}

fn sse(values: &[f64], geometry: DetectorGeometry, p: &Vector6<f64>) -> f64 {
    let model = GaussianShape::from_params(p).evaluate(geometry);
    values.iter().zip(&model).map(|(v, m)| (v - m).powi(2)).sum()
}

fn moments_seed(values: &[f64], g: DetectorGeometry) -> Option<Vector6<f64>> {
    let (w, h) = (g.width as usize, g.height as usize);
    let mut border = 0.0;
    let mut nb = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                border += values[y * w + x];
                nb += 1;
            }
        }
    }
    let offset = border / nb as f64;
    let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = (values[y * w + x] - offset).max(0.0);
            s += v;
            sx += v * x as f64;
            sy += v * y as f64;
        }
    }
    if !(s > 0.0) {
        return None;
    }
    let (cx, cy) = (sx / s, sy / s);
    let (mut vx, mut vy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = (values[y * w + x] - offset).max(0.0);
            vx += v * (x as f64 - cx).powi(2);
            vy += v * (y as f64 - cy).powi(2);
        }
    }
    let peak = values.iter().cloned().fold(f64::MIN, f64::max);
    Some(Vector6::new(
        peak - offset,
        cx,
        cy,
        (vx / s).sqrt().max(0.5),
        (vy / s).sqrt().max(0.5),
        offset,
    ))
}

/// Least-squares separable Gaussian fit of a mean image, seeded from image
/// moments and refined with Levenberg-Marquardt. Falls back to the flat fit
/// (flagged `degenerate`) when the image is constant or no Gaussian has a
/// smaller residual than the best constant.
pub fn fit_gaussian_shape(mean: &MeanImage) -> Result<GaussianShape> {
    let g = mean.geometry();
    let values = mean.values();
    let avg = mean.spatial_mean();
    let flat_sse: f64 = values.iter().map(|v| (v - avg).powi(2)).sum();
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::InsufficientStatistics("mean image has zero total intensity".into()));
    }
    let flat = GaussianShape::flat(g, avg);
    let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
    if spread <= 1e-15 * avg.abs().max(1e-300) {
        return Ok(flat);
    }
    let Some(mut p) = moments_seed(values, g) else {
        return Ok(flat);
    };

    let (w, h) = (g.width as usize, g.height as usize);
    let mut current = sse(values, g, &p);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let gx = profile(g.width, p[1], p[3]);
        let gy = profile(g.height, p[2], p[4]);
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for y in 0..h {
            let dy = y as f64 - p[2];
            for x in 0..w {
                let dx = x as f64 - p[1];
                let e = gx[x] * gy[y];
                let ae = p[0] * e;
                let j = Vector6::new(
                    e,
                    ae * dx / (p[3] * p[3]),
                    ae * dy / (p[4] * p[4]),
                    ae * dx * dx / p[3].powi(3),
                    ae * dy * dy / p[4].powi(3),
                    1.0,
                );
                let r = values[y * w + x] - (ae + p[5]);
                jtj += j * j.transpose();
                jtr += j * r;
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            if trial[3] > 0.0 && trial[4] > 0.0 {
                let s = sse(values, g, &trial);
                if s < current {
                    let rel = (current - s) / current.max(1e-300);
                    p = trial;
                    current = s;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-13;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    if current > flat_sse || p[0] < 0.0 || !p.iter().all(|v| v.is_finite()) {
        return Ok(flat);
    }
    Ok(GaussianShape::from_params(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(g: DetectorGeometry, truth: &GaussianShape, noise: f64, seed: u64) -> MeanImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = truth
            .evaluate(g)
            .into_iter()
            .map(|v| (v + noise * (rng.random::<f64>() * 2.0 - 1.0)).clamp(0.0, 1.0))
            .collect();
        MeanImage::new(g, v, 1).unwrap()
    }

    fn truth() -> GaussianShape {
        GaussianShape {
            amplitude: 0.3,
            center_x: 31.3,
            center_y: 22.8,
            sigma_x: 9.0,
            sigma_y: 6.5,
            offset: 0.02,
            degenerate: false,
        }
    }

    #[test]
    fn recovers_noiseless_profile() {
        let g = DetectorGeometry::new(64, 48).unwrap();
        let fit = fit_gaussian_shape(&image(g, &truth(), 0.0, 0)).unwrap();
        assert!(!fit.degenerate);
        assert!((fit.center_x - 31.3).abs() < 0.1 && (fit.center_y - 22.8).abs() < 0.1, "{fit:?}");
        assert!((fit.sigma_x / 9.0 - 1.0).abs() < 0.01 && (fit.sigma_y / 6.5 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.offset - 0.02).abs() < 1e-4);
    }

    #[test]
    fn tolerates_one_percent_noise() {
        let g = DetectorGeometry::new(64, 48).unwrap();
        for seed in 0..5 {
            let fit = fit_gaussian_shape(&image(g, &truth(), 0.01 * 0.3, seed)).unwrap();
            assert!((fit.center_x - 31.3).abs() < 0.5 && (fit.center_y - 22.8).abs() < 0.5, "{fit:?}");
        }
    }

    #[test]
    fn flat_image_is_degenerate() {
        let g = DetectorGeometry::new(16, 16).unwrap();
        let fit = fit_gaussian_shape(&MeanImage::new(g, vec![0.07; 256], 3).unwrap()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.amplitude, 0.0);
        assert!((fit.offset - 0.07).abs() < 1e-15);
        assert_eq!(fit.sigma_x, DEGENERATE_SIGMA);
        assert!(fit.evaluate(g).iter().all(|&v| (v - 0.07).abs() < 1e-15));
    }

    #[test]
    fn never_worse_than_flat() {
        let g = DetectorGeometry::new(20, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..400).map(|_| rng.random::<f64>() * 0.1).collect();
        let m = MeanImage::new(g, v.clone(), 1).unwrap();
        let fit = fit_gaussian_shape(&m).unwrap();
        let model = fit.evaluate(g);
        let fit_sse: f64 = v.iter().zip(&model).map(|(a, b)| (a - b).powi(2)).sum();
        let avg = m.spatial_mean();
        let flat_sse: f64 = v.iter().map(|a| (a - avg).powi(2)).sum();
        assert!(fit_sse <= flat_sse + 1e-12);
        assert!(fit.sigma_x > 0.0 && fit.sigma_y > 0.0 && fit.amplitude >= 0.0);
    }

    #[test]
    fn zero_image_is_rejected() {
        let g = DetectorGeometry::new(4, 4).unwrap();
        assert!(fit_gaussian_shape(&MeanImage::new(g, vec![0.0; 16], 1).unwrap()).is_err());
    }
}
