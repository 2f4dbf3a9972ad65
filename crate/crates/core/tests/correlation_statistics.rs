use proptest::prelude::*;

use tgi_core::calibration::{calibrate, CalibrationOptions, ResidualImage, SimulatedPairs};
use tgi_core::correlation::{cross_covariance_map, EnsembleMaps, Normalization, PairCorrelator, ShiftRange};
use tgi_core::pipeline::{analyse, calibrate_simulated, run_trials};
use tgi_core::reconstruction::Reconstructor;
use tgi_core::{DetectorGeometry, Exec, OperatingPoint, PhotonFrame, Purpose, Simulator, TimeSignal};

fn brute(s: &[f64], i: &[f64], w: i64, h: i64, dx: i64, dy: i64) -> f64 {
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (xs, ys) = (x + dx, y + dy);
            if (0..w).contains(&xs) && (0..h).contains(&ys) {
                sum += s[(ys * w + xs) as usize] * i[(y * w + x) as usize];
            }
        }
    }
    sum
}

fn frame(g: DetectorGeometry, bits: &[bool]) -> PhotonFrame {
    PhotonFrame::from_pixels(g, bits.iter().map(|&b| b as u8).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sparse_dense_and_brute_force_agree(
        (w, h, bits_s, bits_i, shape_s, shape_i) in (2u32..14, 2u32..14).prop_flat_map(|(w, h)| {
            let d = (w * h) as usize;
            (
                Just(w),
                Just(h),
                prop::collection::vec(prop::bool::weighted(0.2), d),
                prop::collection::vec(prop::bool::weighted(0.2), d),
                prop::collection::vec(0.0..0.5f64, d),
                prop::collection::vec(0.0..0.5f64, d),
            )
        }),
        rx in 0u32..8, ry in 0u32..8,
    ) {
        let g = DetectorGeometry::new(w, h).unwrap();
        let range = ShiftRange::new(rx.min(w - 1), ry.min(h - 1));
        let (s, i) = (frame(g, &bits_s), frame(g, &bits_i));
        let rs: Vec<f64> = s.pixels().iter().zip(&shape_s).map(|(&n, &m)| n as f64 - m).collect();
        let ri: Vec<f64> = i.pixels().iter().zip(&shape_i).map(|(&n, &m)| n as f64 - m).collect();
        let dense = cross_covariance_map(
            &ResidualImage::from_values(g, rs.clone()).unwrap(),
            &ResidualImage::from_values(g, ri.clone()).unwrap(),
            range,
            Exec::Sequential,
        ).unwrap();
        let sparse = PairCorrelator::new(g, range, &shape_s, &shape_i, Exec::Parallel).unwrap().coincidence_map(&s, &i).unwrap();
        for k in 0..range.len() {
            let (dx, dy) = range.shift(k);
            let want = brute(&rs, &ri, w as i64, h as i64, dx, dy);
            let scale: f64 = brute(&rs.iter().map(|v| v.abs()).collect::<Vec<_>>(), &ri.iter().map(|v| v.abs()).collect::<Vec<_>>(), w as i64, h as i64, dx, dy);
            let tol = 1e-9 * scale.max(1e-12);
            prop_assert!((dense.values()[k] - want).abs() <= tol);
            prop_assert!((sparse.values()[k] - want).abs() <= tol);
        }
    }
}

#[test]
fn ensemble_maps_merge_like_one_pass() {
    let g = DetectorGeometry::square(40).unwrap();
    let sim = Simulator::new(g, OperatingPoint::reference().to_source().unwrap()).unwrap();
    let shape = vec![0.03; g.pixel_count()];
    let pc = PairCorrelator::new(g, ShiftRange::new(10, 4), &shape, &shape, Exec::Sequential).unwrap();
    let fetch = |k: usize| Ok(sim.twin_pair(1, Purpose::Calibration, k as u32));
    let all = EnsembleMaps::accumulate(&pc, 30, fetch, Exec::Sequential).unwrap();
    let mut a = EnsembleMaps::accumulate(&pc, 12, fetch, Exec::Sequential).unwrap();
    let b = EnsembleMaps::accumulate(&pc, 18, |k| fetch(k + 12), Exec::Sequential).unwrap();
    a.merge(b);
    assert_eq!(a.pairs(), 30);
    for n in [Normalization::Coincidences, Normalization::Coefficient, Normalization::IdlerFraction] {
        for (x, y) in a.mean(n).values().iter().zip(all.mean(n).values()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

/// Twin-pair coincidence variance against `C + D B m_s m_i` at low flux,
/// where the binary-pixel corrections are small.
#[test]
fn variance_is_twin_plus_accidental() {
    let g = DetectorGeometry::square(256).unwrap();
    let sim = Simulator::new(g, OperatingPoint::matched(0.01, 0.302, 0.001).to_source().unwrap()).unwrap();
    let profile = calibrate(
        &SimulatedPairs {
            simulator: &sim,
            master: 9,
            purpose: Purpose::Calibration,
            count: 900,
        },
        &CalibrationOptions::default(),
    )
    .unwrap();
    let rec = Reconstructor::new(&profile).unwrap();
    let n = 2000;
    let stats = Exec::Parallel.map(n, |k| {
        let (s, i) = sim.twin_pair(9, Purpose::Experiment, k as u32);
        (rec.series(k as u32, &s, std::slice::from_ref(&i)).unwrap().values[0], s.mean(), i.mean())
    });
    let c: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let mean = c.iter().sum::<f64>() / n as f64;
    let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let m_s = stats.iter().map(|s| s.1).sum::<f64>() / n as f64;
    let m_i = stats.iter().map(|s| s.2).sum::<f64>() / n as f64;
    let d = g.pixel_count() as f64;
    let model = mean + d * profile.window.binning() as f64 * m_s * m_i;
    assert!((var / model - 1.0).abs() <= 0.10, "variance {var} vs {model} (C {mean})");
}

/// Open steps at a setting with SNR near 5 are almost always positive.
#[test]
fn open_step_coincidences_are_positive_at_snr_five() {
    let g = DetectorGeometry::square(337).unwrap();
    let sim = Simulator::new(g, OperatingPoint::reference().to_source().unwrap()).unwrap();
    let signal = TimeSignal::leading_ones(8, 4).unwrap();
    let profile = calibrate_simulated(&sim, 21, 900, &CalibrationOptions::default()).unwrap();
    let batch = run_trials(&sim, &signal, &profile, 21, 0, 400, Exec::Parallel).unwrap();
    let (_, _, metrics) = analyse(&batch, &signal, &profile).unwrap();
    assert!((4.4..5.4).contains(&metrics.snr), "snr {}", metrics.snr);
    let open: Vec<f64> = batch.series.iter().flat_map(|s| s.values[..4].to_vec()).collect();
    let positive = open.iter().filter(|&&c| c > 0.0).count() as f64 / open.len() as f64;
    assert!(positive > 0.99, "{positive}");
}
