//! Twin-photon frame generator.
//!
//! Per time step and per pixel, photon pairs arrive as independent Poisson
//! counts following the beam envelope. Each pair leaves an idler detection at
//! its own pixel with probability `tau_i` and a signal detection with
//! probability `tau_s * T_n`, displaced by a rounded Gaussian offset that
//! models the coherence cell. Uncorrelated single detections (fluorescence,
//! clock-induced charge, dark events) are added on both arms, and every pixel
//! is finally clamped to {0, 1}.
//!
//! Poisson fields are drawn by sampling the detector-wide total and scattering
//! the events over pixels with probability proportional to the envelope, which
//! is equivalent to independent per-pixel Poisson draws and only costs work
//! proportional to the number of photons.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frame::{DetectorGeometry, PhotonFrame};
use crate::seed::{Channel, Purpose, StepSeed};

/// Default signal-idler position spread in pixels. A 16x5 window centred on
/// the correlation peak captures 75% of the twin coincidences with these
/// values (see `capture_fraction`).
pub const DEFAULT_JITTER: (f64, f64) = (5.33, 1.66);

/// Beam intensity profile across the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Flat,
    Gaussian {
        center_x: f64,
        center_y: f64,
        sigma_x: f64,
        sigma_y: f64,
    },
}

impl Envelope {
    /// Gaussian envelope centred on the detector.
    pub fn centered_gaussian(geometry: DetectorGeometry, sigma_x: f64, sigma_y: f64) -> Self {
        Envelope::Gaussian {
            center_x: (geometry.width as f64 - 1.0) / 2.0,
            center_y: (geometry.height as f64 - 1.0) / 2.0,
            sigma_x,
            sigma_y,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Envelope::Gaussian {
            center_x,
            center_y,
            sigma_x,
            sigma_y,
        } = *self
        {
            if !(sigma_x > 0.0 && sigma_y > 0.0) || !sigma_x.is_finite() || !sigma_y.is_finite() {
                return Err(invalid(format!(
                    "gaussian envelope needs positive widths, got ({sigma_x}, {sigma_y})"
                )));
            }
            if !center_x.is_finite() || !center_y.is_finite() {
                return Err(invalid("gaussian envelope centre must be finite"));
            }
        }
        Ok(())
    }

    /// Per-pixel weights, nonnegative and averaging to exactly 1 (up to rounding).
    pub fn weights(&self, geometry: DetectorGeometry) -> Result<Vec<f64>> {
        geometry.validate()?;
        self.validate()?;
        let d = geometry.pixel_count();
        match *self {
            Envelope::Flat => Ok(vec![1.0; d]),
            Envelope::Gaussian {
                center_x,
                center_y,
                sigma_x,
                sigma_y,
            } => {
                let gx: Vec<f64> = (0..geometry.width)
                    .map(|x| (-0.5 * ((x as f64 - center_x) / sigma_x).powi(2)).exp())
                    .collect();
                let gy: Vec<f64> = (0..geometry.height)
                    .map(|y| (-0.5 * ((y as f64 - center_y) / sigma_y).powi(2)).exp())
                    .collect();
                let total: f64 = gx.iter().sum::<f64>() * gy.iter().sum::<f64>();
                if !(total > 0.0) {
                    return Err(invalid("gaussian envelope has no weight on the detector"));
                }
                let scale = d as f64 / total;
                let mut w = Vec::with_capacity(d);
                for &vy in &gy {
                    w.extend(gx.iter().map(|&vx| vx * vy * scale));
                }
                Ok(w)
            }
        }
    }
}

/// Physical knobs of the generative model. Rates are mean events per pixel
/// per time step, before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Mean incident pairs per pixel per step (`mu`).
    pub pair_rate: f64,
    /// Detection probability of a signal photon when the step is open (`tau_s`).
    pub transmission_signal: f64,
    /// Detection probability of an idler photon (`tau_i`).
    pub transmission_idler: f64,
    pub jitter_sigma_x: f64,
    pub jitter_sigma_y: f64,
    pub background_signal: f64,
    pub background_idler: f64,
    pub envelope: Envelope,
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("pair_rate", self.pair_rate),
            ("background_signal", self.background_signal),
            ("background_idler", self.background_idler),
            ("jitter_sigma_x", self.jitter_sigma_x),
            ("jitter_sigma_y", self.jitter_sigma_y),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("transmission_signal", self.transmission_signal),
            ("transmission_idler", self.transmission_idler),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        self.envelope.validate()
    }

    /// Poisson rate of idler detections per pixel per step (`mu tau_i + b_i`).
    pub fn idler_rate(&self) -> f64 {
        self.pair_rate * self.transmission_idler + self.background_idler
    }

    /// Poisson rate of signal detections per pixel for an open step.
    pub fn signal_rate(&self) -> f64 {
        self.pair_rate * self.transmission_signal + self.background_signal
    }

    /// Rate of pairs detected on both arms.
    pub fn twin_rate(&self) -> f64 {
        self.pair_rate * self.transmission_signal * self.transmission_idler
    }

    /// Equivalent quantum efficiency seen from the idler arm: the fraction of
    /// idler detections whose twin is detected on the signal arm,
    /// `mu tau_s tau_i / (mu tau_i + b_i)`.
    pub fn eta_model(&self) -> f64 {
        let r = self.idler_rate();
        if r > 0.0 {
            self.twin_rate() / r
        } else {
            0.0
        }
    }
}

/// Source described by what the cameras see instead of by physical knobs.
///
/// `idler_mean` and `signal_mean` are thresholded means per pixel and per step
/// (the signal one for an open step), including background. `eta` is the
/// idler-side equivalent quantum efficiency (`SourceParams::eta_model`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub idler_mean: f64,
    pub signal_mean: f64,
    pub eta: f64,
    pub background_signal: f64,
    pub background_idler: f64,
    pub jitter_sigma_x: f64,
    pub jitter_sigma_y: f64,
    pub envelope: Envelope,
}

fn rate_of_mean(m: f64) -> f64 {
    -(-m).ln_1p()
}

impl OperatingPoint {
    /// Both arms at `mean` per step and `eta` on each side; the symmetric
    /// setting of a twin-image calibration.
    pub fn matched(mean: f64, eta: f64, background: f64) -> Self {
        Self {
            idler_mean: mean,
            signal_mean: mean,
            eta,
            background_signal: background,
            background_idler: background,
            jitter_sigma_x: DEFAULT_JITTER.0,
            jitter_sigma_y: DEFAULT_JITTER.1,
            envelope: Envelope::Flat,
        }
    }

    /// Operating point of the reference 8-step experiment: idler background
    /// 0.0064 per frame, signal background 0.018 over eight integrated steps,
    /// eta = 0.302, and fluxes giving `m_s * m_i = 0.005005` for four open steps.
    pub fn reference() -> Self {
        Self {
            idler_mean: REFERENCE_IDLER_MEAN,
            signal_mean: REFERENCE_SIGNAL_STEP_MEAN,
            eta: 0.302,
            background_signal: 0.018 / 8.0,
            background_idler: 0.0064,
            jitter_sigma_x: DEFAULT_JITTER.0,
            jitter_sigma_y: DEFAULT_JITTER.1,
            envelope: Envelope::Flat,
        }
    }

    /// Solves for the physical knobs. Fails when no transmission in [0, 1]
    /// realises the requested efficiency.
    pub fn to_source(&self) -> Result<SourceParams> {
        for (name, m) in [("idler_mean", self.idler_mean), ("signal_mean", self.signal_mean)] {
            if !(m > 0.0 && m < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {m}")));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        let li = rate_of_mean(self.idler_mean);
        let ls = rate_of_mean(self.signal_mean);
        let pi = li - self.background_idler;
        let ps = ls - self.background_signal;
        if !(pi > 0.0 && ps > 0.0) {
            return Err(invalid("background exceeds the requested mean flux"));
        }
        let twin = self.eta * li;
        let mu = pi * ps / twin;
        let source = SourceParams {
            pair_rate: mu,
            transmission_signal: ps / mu,
            transmission_idler: pi / mu,
            jitter_sigma_x: self.jitter_sigma_x,
            jitter_sigma_y: self.jitter_sigma_y,
            background_signal: self.background_signal,
            background_idler: self.background_idler,
            envelope: self.envelope,
        };
        if source.transmission_signal > 1.0 + 1e-12 || source.transmission_idler > 1.0 + 1e-12 {
            return Err(invalid(format!(
                "eta = {} is not reachable with these fluxes (needs transmissions {:.3}, {:.3})",
                self.eta, source.transmission_signal, source.transmission_idler
            )));
        }
        let mut source = source;
        source.transmission_signal = source.transmission_signal.min(1.0);
        source.transmission_idler = source.transmission_idler.min(1.0);
        source.validate()?;
        Ok(source)
    }

    pub fn from_source(source: &SourceParams) -> Self {
        Self {
            idler_mean: -(-source.idler_rate()).exp_m1(),
            signal_mean: -(-source.signal_rate()).exp_m1(),
            eta: source.eta_model(),
            background_signal: source.background_signal,
            background_idler: source.background_idler,
            jitter_sigma_x: source.jitter_sigma_x,
            jitter_sigma_y: source.jitter_sigma_y,
            envelope: source.envelope,
        }
    }
}

/// Idler flux of the reference operating point. Chosen so the full SNR
/// prediction lands at 6.3 with eta = 0.23 in the 16x5 window.
pub const REFERENCE_IDLER_MEAN: f64 = 0.044;
/// Open-step signal flux giving an integrated mean of 0.005005 / 0.044 over
/// four open and four closed steps with 0.00225 background per step.
pub const REFERENCE_SIGNAL_STEP_MEAN: f64 = 0.027_553;

/// Binary temporal object: one transmission level per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct TimeSignal {
    levels: Vec<u8>,
}

impl TryFrom<Vec<u8>> for TimeSignal {
    type Error = Error;
    fn try_from(levels: Vec<u8>) -> Result<Self> {
        TimeSignal::new(levels)
    }
}

impl From<TimeSignal> for Vec<u8> {
    fn from(s: TimeSignal) -> Self {
        s.levels
    }
}

impl TimeSignal {
    pub fn new(levels: Vec<u8>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyInput("time signal"));
        }
        if levels.len() > u16::MAX as usize {
            return Err(invalid("time signal longer than 65535 steps"));
        }
        if let Some(v) = levels.iter().find(|&&v| v > 1) {
            return Err(invalid(format!("time signal level {v} is not binary")));
        }
        Ok(Self { levels })
    }

    /// `ones` open steps followed by `len - ones` closed ones.
    pub fn leading_ones(len: usize, ones: usize) -> Result<Self> {
        if ones > len {
            return Err(invalid(format!("{ones} ones do not fit in {len} steps")));
        }
        Self::new((0..len).map(|i| (i < ones) as u8).collect())
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Number of levels L; binary only.
    pub fn level_count(&self) -> u32 {
        2
    }

    /// Number of open steps M.
    pub fn ones(&self) -> usize {
        self.levels.iter().filter(|&&v| v == 1).count()
    }
}

/// Mean pair rate per pixel: `mu` times the envelope weights.
pub fn beam_mean_map(geometry: DetectorGeometry, source: &SourceParams) -> Result<Vec<f64>> {
    source.validate()?;
    let mut w = source.envelope.weights(geometry)?;
    for v in &mut w {
        *v *= source.pair_rate;
    }
    Ok(w)
}

#[derive(Debug, Clone)]
enum PixelSampler {
    Uniform(usize),
    Weighted(WeightedAliasIndex<f64>),
}

impl PixelSampler {
    #[inline]
    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match self {
            PixelSampler::Uniform(d) => rng.random_range(0..*d),
            PixelSampler::Weighted(alias) => alias.sample(rng),
        }
    }
}

/// Signal and idler frames of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFrames {
    pub step: usize,
    pub signal: PhotonFrame,
    pub idler: PhotonFrame,
}

/// Frames observable in one trial: the temporally integrated signal exposure
/// and one idler reference per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFrames {
    pub integrated_signal: PhotonFrame,
    pub idlers: Vec<PhotonFrame>,
}

/// Frame generator for one geometry and source. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Simulator {
    geometry: DetectorGeometry,
    source: SourceParams,
    sampler: PixelSampler,
    jitter: Option<(Normal<f64>, Normal<f64>)>,
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive finite mean");
    p.sample(rng) as usize
}

impl Simulator {
    pub fn new(geometry: DetectorGeometry, source: SourceParams) -> Result<Self> {
        geometry.validate()?;
        source.validate()?;
        let sampler = match source.envelope {
            Envelope::Flat => PixelSampler::Uniform(geometry.pixel_count()),
            Envelope::Gaussian { .. } => {
                let w = source.envelope.weights(geometry)?;
                PixelSampler::Weighted(
                    WeightedAliasIndex::new(w).map_err(|e| invalid(format!("envelope weights: {e}")))?,
                )
            }
        };
        let jitter = if source.jitter_sigma_x > 0.0 || source.jitter_sigma_y > 0.0 {
            Some((
                Normal::new(0.0, source.jitter_sigma_x).map_err(|e| invalid(e.to_string()))?,
                Normal::new(0.0, source.jitter_sigma_y).map_err(|e| invalid(e.to_string()))?,
            ))
        } else {
            None
        };
        Ok(Self {
            geometry,
            source,
            sampler,
            jitter,
        })
    }

    pub fn geometry(&self) -> DetectorGeometry {
        self.geometry
    }

    pub fn source(&self) -> &SourceParams {
        &self.source
    }

    fn scatter<R: Rng>(&self, frame: &mut PhotonFrame, rng: &mut R, rate: f64) {
        let n = poisson_count(rng, rate * self.geometry.pixel_count() as f64);
        for _ in 0..n {
            frame.fire(self.sampler.sample(rng));
        }
    }

    /// Generates one step with transmission `level` (0 or 1).
    pub fn generate_step(&self, level: u8, seed: StepSeed) -> StepFrames {
        let geometry = self.geometry;
        let (w, h) = (geometry.width as i64, geometry.height as i64);
        let mut signal = PhotonFrame::zeros(geometry);
        let mut idler = PhotonFrame::zeros(geometry);

        let mut pair_rng = seed.rng(Channel::Pairs);
        let n_pairs = poisson_count(&mut pair_rng, self.source.pair_rate * geometry.pixel_count() as f64);
        let mut pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let p = self.sampler.sample(&mut pair_rng);
            if pair_rng.random::<f64>() < self.source.transmission_idler {
                idler.fire(p);
            }
            pairs.push(p as u32);
        }

        let p_signal = self.source.transmission_signal * level as f64;
        if p_signal > 0.0 {
            let mut twin_rng = seed.rng(Channel::SignalTwins);
            for &p in &pairs {
                if twin_rng.random::<f64>() >= p_signal {
                    continue;
                }
                let p = p as i64;
                let (mut x, mut y) = (p % w, p / w);
                if let Some((nx, ny)) = &self.jitter {
                    x += nx.sample(&mut twin_rng).round() as i64;
                    y += ny.sample(&mut twin_rng).round() as i64;
                }
                if (0..w).contains(&x) && (0..h).contains(&y) {
                    signal.fire((y * w + x) as usize);
                }
            }
        }

        self.scatter(&mut signal, &mut seed.rng(Channel::SignalBackground), self.source.background_signal);
        self.scatter(&mut idler, &mut seed.rng(Channel::IdlerBackground), self.source.background_idler);

        StepFrames {
            step: seed.step as usize,
            signal,
            idler,
        }
    }

    /// Runs every step of `signal` and integrates the signal arm.
    pub fn generate_trial(&self, signal: &TimeSignal, master: u64, purpose: Purpose, trial: u32) -> TrialFrames {
        let mut integrated = PhotonFrame::zeros(self.geometry);
        let mut idlers = Vec::with_capacity(signal.len());
        for (n, &level) in signal.levels().iter().enumerate() {
            let step = self.generate_step(level, StepSeed::new(master, purpose, trial, n as u16));
            integrated.or_assign(&step.signal).expect("same geometry");
            idlers.push(step.idler);
        }
        TrialFrames {
            integrated_signal: integrated,
            idlers,
        }
    }

    /// One open-step twin pair (signal, idler), as recorded for calibration.
    pub fn twin_pair(&self, master: u64, purpose: Purpose, index: u32) -> (PhotonFrame, PhotonFrame) {
        let s = self.generate_step(1, StepSeed::new(master, purpose, index, 0));
        (s.signal, s.idler)
    }
}

/// Free-function form of [`Simulator::generate_step`].
pub fn generate_step(geometry: DetectorGeometry, source: &SourceParams, level: u8, seed: StepSeed) -> Result<StepFrames> {
    if level > 1 {
        return Err(invalid(format!("transmission level {level} is not binary")));
    }
    Ok(Simulator::new(geometry, *source)?.generate_step(level, seed))
}

/// Temporal integration on a camera with no temporal resolution: a pixel
/// fires if it fired during any step.
pub fn integrate_signal(frames: &[PhotonFrame]) -> Result<PhotonFrame> {
    let (first, rest) = frames.split_first().ok_or(Error::EmptyInput("signal frames"))?;
    let mut out = first.clone();
    for f in rest {
        out.or_assign(f)?;
    }
    Ok(out)
}

/// Fraction of twin displacements that fall inside `[x0, x1] x [y0, y1]`
/// under the rounded Gaussian coherence-cell model.
pub fn capture_fraction(source: &SourceParams, x_range: (i64, i64), y_range: (i64, i64)) -> f64 {
    fn axis(sigma: f64, lo: i64, hi: i64) -> f64 {
        if sigma == 0.0 {
            return if lo <= 0 && 0 <= hi { 1.0 } else { 0.0 };
        }
        let n = statrs::distribution::Normal::new(0.0, sigma).unwrap();
        use statrs::distribution::ContinuousCDF;
        n.cdf(hi as f64 + 0.5) - n.cdf(lo as f64 - 0.5)
    }
    axis(source.jitter_sigma_x, x_range.0, x_range.1) * axis(source.jitter_sigma_y, y_range.0, y_range.1)
}
