use tgi_core::calibration::{CalibrationOptions, CalibrationProfile};
use tgi_core::pipeline::{analyse, calibrate_simulated, run_trials, TrialBatch};
use tgi_core::reconstruction::{evaluate_ensemble, threshold_decode, Reconstructor};
use tgi_core::{DetectorGeometry, Exec, OperatingPoint, PhotonFrame, Purpose, Simulator, TimeSignal};

fn setup(side: u32, seed: u64) -> (Simulator, TimeSignal, CalibrationProfile) {
    let g = DetectorGeometry::square(side).unwrap();
    let sim = Simulator::new(g, OperatingPoint::reference().to_source().unwrap()).unwrap();
    let profile = calibrate_simulated(&sim, seed, 900, &CalibrationOptions::default()).unwrap();
    (sim, TimeSignal::leading_ones(8, 4).unwrap(), profile)
}

fn step_columns(batch: &TrialBatch, steps: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    steps.map(|n| batch.series.iter().map(|s| s.values[n]).collect()).collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn open_and_closed_steps_separate_at_reference_point() {
    let (sim, signal, profile) = setup(506, 3);
    let batch = run_trials(&sim, &signal, &profile, 3, 0, 990, Exec::Parallel).unwrap();
    let open = step_columns(&batch, 0..4);
    let closed = step_columns(&batch, 4..8);
    let closed_mean = closed.iter().map(|c| mean_std(c).0).sum::<f64>() / 4.0;
    for column in &open {
        let (m, s) = mean_std(column);
        assert!(m - closed_mean >= 4.0 * s, "open {m} closed {closed_mean} std {s}");
    }
    let (_, _, metrics) = analyse(&batch, &signal, &profile).unwrap();
    assert!(metrics.snr > 4.0 && metrics.bit_error_rate < 0.01, "{metrics:?}");
}

#[test]
fn closed_steps_average_to_zero() {
    let (sim, signal, profile) = setup(128, 4);
    let batch = run_trials(&sim, &signal, &profile, 4, 0, 2000, Exec::Parallel).unwrap();
    let per_trial: Vec<f64> = batch.series.iter().map(|s| s.values[4..].iter().sum::<f64>() / 4.0).collect();
    let (m, s) = mean_std(&per_trial);
    let se = s / (per_trial.len() as f64).sqrt();
    assert!(m.abs() <= 3.0 * se, "{m} (se {se})");
}

/// Bit errors at SNR near 3 follow the Gaussian tail of the measured levels.
#[test]
fn error_rate_follows_gaussian_tail_at_low_snr() {
    let (sim, signal, profile) = setup(206, 5);
    let batch = run_trials(&sim, &signal, &profile, 5, 0, 5000, Exec::Parallel).unwrap();
    let (_, _, m) = analyse(&batch, &signal, &profile).unwrap();
    assert!((2.6..3.4).contains(&m.snr), "snr {}", m.snr);
    let ratio = m.bit_error_rate / m.gaussian_error_rate;
    assert!((0.5..=2.0).contains(&ratio), "{} vs {}", m.bit_error_rate, m.gaussian_error_rate);
}

#[test]
fn trials_do_not_depend_on_execution_policy_or_batching() {
    let (sim, signal, profile) = setup(64, 6);
    let a = run_trials(&sim, &signal, &profile, 6, 0, 12, Exec::Parallel).unwrap();
    let b = run_trials(&sim, &signal, &profile, 6, 0, 12, Exec::Sequential).unwrap();
    assert_eq!(a.series, b.series);
    let tail = run_trials(&sim, &signal, &profile, 6, 5, 7, Exec::Sequential).unwrap();
    assert_eq!(&a.series[5..], &tail.series[..]);
}

#[test]
fn permuting_idlers_permutes_the_series() {
    let (sim, signal, profile) = setup(64, 7);
    let rec = Reconstructor::new(&profile).unwrap();
    let trial = sim.generate_trial(&signal, 7, Purpose::Experiment, 0);
    let base = rec.series(0, &trial.integrated_signal, &trial.idlers).unwrap().values;
    let order = [3usize, 7, 0, 5, 1, 6, 2, 4];
    let permuted: Vec<PhotonFrame> = order.iter().map(|&k| trial.idlers[k].clone()).collect();
    let got = rec.series(0, &trial.integrated_signal, &permuted).unwrap().values;
    for (g, &k) in got.iter().zip(&order) {
        assert_eq!(*g, base[k]);
    }
}

#[test]
fn empty_idlers_give_a_constant_series() {
    let (sim, signal, profile) = setup(64, 8);
    let rec = Reconstructor::new(&profile).unwrap();
    let trial = sim.generate_trial(&signal, 8, Purpose::Experiment, 0);
    let empty = vec![PhotonFrame::zeros(sim.geometry()); 8];
    let v = rec.series(0, &trial.integrated_signal, &empty).unwrap().values;
    assert!(v.iter().all(|&c| c == v[0]));
}

#[test]
fn identical_trials_report_infinite_snr() {
    let (sim, signal, profile) = setup(64, 9);
    let rec = Reconstructor::new(&profile).unwrap();
    let trial = sim.generate_trial(&signal, 9, Purpose::Experiment, 0);
    let s = rec.series(0, &trial.integrated_signal, &trial.idlers).unwrap();
    let level = s.values[..4].iter().sum::<f64>() / 4.0;
    let d = threshold_decode(&s, level).unwrap();
    let m = evaluate_ensemble(&[(s.clone(), d.clone()), (s, d)], &signal, None).unwrap();
    assert!(m.snr_infinite && m.snr.is_infinite());
}
