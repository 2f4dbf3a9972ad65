//! Beam-shape removal, twin-peak location and equivalent quantum efficiency.

mod eta;
mod gaussian;
mod peak;
mod profile;
mod shape;

pub use eta::{default_range, estimate_eta_from_maps, EtaEstimate, EtaSupport, SupportRect, BACKGROUND_BAND, PEAK_SIGMAS};
pub use gaussian::{fit_gaussian_shape, GaussianShape, DEGENERATE_SIGMA};
pub use peak::{locate_peak, PeakWindow, DEFAULT_EXTENT};
pub use profile::{CalibrationProfile, TGIM_MAGIC, TGIM_VERSION};
pub use shape::{estimate_mean_shape, subtract_shape, BeamShape, MeanImage, ResidualImage, ShapeMethod};

use crate::correlation::{EnsembleMaps, Normalization, PairCorrelator, ShiftRange};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::frame::{DetectorGeometry, PhotonFrame};
use crate::seed::Purpose;
use crate::source::Simulator;

/// Default number of twin pairs in a calibration run.
pub const DEFAULT_CALIBRATION_PAIRS: usize = 900;

/// Displacements searched by default: wide enough for the default jitter
/// plus a background border.
pub const DEFAULT_RANGE: ShiftRange = ShiftRange {
    max_dx: 24,
    max_dy: 10,
};

/// Random access to an ensemble of `(signal, idler)` twin frames.
pub trait PairSource: Sync {
    fn geometry(&self) -> DetectorGeometry;
    fn len(&self) -> usize;
    fn pair(&self, index: usize) -> Result<(PhotonFrame, PhotonFrame)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pairs held in memory.
#[derive(Debug, Clone, Copy)]
pub struct FramePairs<'a> {
    signals: &'a [PhotonFrame],
    idlers: &'a [PhotonFrame],
}

impl<'a> FramePairs<'a> {
    pub fn new(signals: &'a [PhotonFrame], idlers: &'a [PhotonFrame]) -> Result<Self> {
        if signals.len() != idlers.len() {
            return Err(invalid(format!("{} signal frames but {} idler frames", signals.len(), idlers.len())));
        }
        let first = signals.first().ok_or(Error::EmptyInput("twin pairs"))?;
        let g = first.geometry();
        for f in signals.iter().chain(idlers) {
            g.ensure_same(&f.geometry())?;
        }
        Ok(Self { signals, idlers })
    }
}

impl PairSource for FramePairs<'_> {
    fn geometry(&self) -> DetectorGeometry {
        self.signals[0].geometry()
    }

    fn len(&self) -> usize {
        self.signals.len()
    }

    fn pair(&self, index: usize) -> Result<(PhotonFrame, PhotonFrame)> {
        Ok((self.signals[index].clone(), self.idlers[index].clone()))
    }
}

/// Open-step twin pairs drawn on demand from a simulator.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedPairs<'a> {
    pub simulator: &'a Simulator,
    pub master: u64,
    pub purpose: Purpose,
    pub count: usize,
}

impl PairSource for SimulatedPairs<'_> {
    fn geometry(&self) -> DetectorGeometry {
        self.simulator.geometry()
    }

    fn len(&self) -> usize {
        self.count
    }

    fn pair(&self, index: usize) -> Result<(PhotonFrame, PhotonFrame)> {
        Ok(self.simulator.twin_pair(self.master, self.purpose, index as u32))
    }
}

/// Signal and idler frames from unrelated streams; no twin correlation.
#[derive(Debug, Clone, Copy)]
pub struct IndependentPairs<'a> {
    pub simulator: &'a Simulator,
    pub master: u64,
    pub count: usize,
}

impl PairSource for IndependentPairs<'_> {
    fn geometry(&self) -> DetectorGeometry {
        self.simulator.geometry()
    }

    fn len(&self) -> usize {
        self.count
    }

    fn pair(&self, index: usize) -> Result<(PhotonFrame, PhotonFrame)> {
        let (signal, _) = self.simulator.twin_pair(self.master, Purpose::Calibration, index as u32);
        let (_, idler) = self.simulator.twin_pair(self.master, Purpose::Independent, index as u32);
        Ok((signal, idler))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub method: ShapeMethod,
    pub extent: (u32, u32),
    pub range: ShiftRange,
    pub exec: Exec,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            method: ShapeMethod::Ensemble,
            extent: DEFAULT_EXTENT,
            range: DEFAULT_RANGE,
            exec: Exec::Parallel,
        }
    }
}

/// Mean images of both arms over the ensemble.
pub fn mean_shapes(pairs: &dyn PairSource, exec: Exec) -> Result<(MeanImage, MeanImage)> {
    let n = pairs.len();
    if n == 0 {
        return Err(Error::EmptyInput("twin pairs"));
    }
    let g = pairs.geometry();
    let d = g.pixel_count();
    let (s, i, err) = exec.fold_chunks(
        n,
        16,
        || (vec![0u32; d], vec![0u32; d], None),
        |(s, i, err): &mut (Vec<u32>, Vec<u32>, Option<Error>), k| {
            if err.is_some() {
                return;
            }
            let add = |counts: &mut [u32], f: &PhotonFrame| -> Result<()> {
                g.ensure_same(&f.geometry())?;
                for p in f.detections() {
                    counts[p as usize] += 1;
                }
                Ok(())
            };
            if let Err(e) = pairs.pair(k).and_then(|(sf, idf)| {
                add(s, &sf)?;
                add(i, &idf)
            }) {
                *err = Some(e);
            }
        },
        |(s, i, e), (s2, i2, e2)| {
            for (a, b) in s.iter_mut().zip(s2) {
                *a += b;
            }
            for (a, b) in i.iter_mut().zip(i2) {
                *a += b;
            }
            if e.is_none() {
                *e = e2;
            }
        },
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok((MeanImage::from_counts(g, &s, n)?, MeanImage::from_counts(g, &i, n)?))
}

/// Shapes rendered for subtraction, plus the Gaussian fits when used.
fn subtraction_shapes(
    signal: &MeanImage,
    idler: &MeanImage,
    method: ShapeMethod,
) -> Result<(Vec<f64>, Vec<f64>, Option<(GaussianShape, GaussianShape)>)> {
    match method {
        ShapeMethod::Ensemble => Ok((signal.values().to_vec(), idler.values().to_vec(), None)),
        ShapeMethod::Gaussian => {
            let fs = fit_gaussian_shape(signal)?;
            let fi = fit_gaussian_shape(idler)?;
            let g = signal.geometry();
            Ok((fs.evaluate(g), fi.evaluate(g), Some((fs, fi))))
        }
    }
}

fn ensemble_maps(pairs: &dyn PairSource, signal_shape: &[f64], idler_shape: &[f64], options: &CalibrationOptions) -> Result<EnsembleMaps> {
    let correlator = PairCorrelator::new(pairs.geometry(), options.range, signal_shape, idler_shape, options.exec)?;
    EnsembleMaps::accumulate(&correlator, pairs.len(), |k| pairs.pair(k), options.exec)
}

/// Removes the beam shape from every pair, averages the normalised
/// cross-covariance maps and integrates the twin peak.
pub fn estimate_eta(pairs: &dyn PairSource, support: EtaSupport, options: &CalibrationOptions) -> Result<EtaEstimate> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientStatistics(format!("{} twin pair(s); need at least 2", pairs.len())));
    }
    let (ms, mi) = mean_shapes(pairs, options.exec)?;
    let (ss, is, _) = subtraction_shapes(&ms, &mi, options.method)?;
    let maps = ensemble_maps(pairs, &ss, &is, options)?;
    estimate_eta_from_maps(&maps, support)
}

/// Full calibration: beam shapes, peak window, and efficiency over the whole
/// peak and inside the window.
pub fn calibrate(pairs: &dyn PairSource, options: &CalibrationOptions) -> Result<CalibrationProfile> {
    calibrate_with_maps(pairs, options).map(|(p, _)| p)
}

/// [`calibrate`], also returning the accumulated correlation maps.
pub fn calibrate_with_maps(pairs: &dyn PairSource, options: &CalibrationOptions) -> Result<(CalibrationProfile, EnsembleMaps)> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientStatistics(format!("{} twin pair(s); need at least 2", pairs.len())));
    }
    let (ms, mi) = mean_shapes(pairs, options.exec)?;
    let (ss, is, fits) = subtraction_shapes(&ms, &mi, options.method)?;
    let maps = ensemble_maps(pairs, &ss, &is, options)?;
    let window = locate_peak(&maps.mean(Normalization::Coefficient), options.extent.0, options.extent.1)?;
    let eta_full = estimate_eta_from_maps(&maps, EtaSupport::FullSearch)?;
    let eta_window = estimate_eta_from_maps(&maps, EtaSupport::Window(window))?;
    let profile = CalibrationProfile::new(options.method, window, options.range, eta_full, eta_window, ms, mi, fits)?;
    Ok((profile, maps))
}
