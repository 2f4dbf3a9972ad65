//! Sequential versus data-parallel execution of the hot loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tgi_core::calibration::{calibrate, CalibrationOptions, ResidualImage, SimulatedPairs};
use tgi_core::correlation::{cross_covariance_map, EnsembleMaps, PairCorrelator, ShiftRange};
use tgi_core::pipeline::run_trials;
use tgi_core::{DetectorGeometry, Exec, OperatingPoint, Purpose, Simulator, TimeSignal};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn simulator(side: u32) -> Simulator {
    let g = DetectorGeometry::square(side).unwrap();
    Simulator::new(g, OperatingPoint::reference().to_source().unwrap()).unwrap()
}

fn dense_map(c: &mut Criterion) {
    let sim = simulator(64);
    let (s, i) = sim.twin_pair(1, Purpose::Calibration, 0);
    let g = sim.geometry();
    let res = |f: &tgi_core::PhotonFrame| ResidualImage::from_values(g, f.pixels().iter().map(|&p| p as f64 - 0.03).collect()).unwrap();
    let (rs, ri) = (res(&s), res(&i));
    let range = ShiftRange::new(24, 10);
    let mut group = c.benchmark_group("dense_map_64");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cross_covariance_map(black_box(&rs), black_box(&ri), range, exec).unwrap())
        });
    }
    group.finish();
}

fn ensemble_accumulate(c: &mut Criterion) {
    let sim = simulator(128);
    let frames: Vec<_> = (0..32).map(|k| sim.twin_pair(2, Purpose::Calibration, k)).collect();
    let shape = vec![0.03; sim.geometry().pixel_count()];
    let mut group = c.benchmark_group("ensemble_128x32");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let pc = PairCorrelator::new(sim.geometry(), ShiftRange::new(24, 10), &shape, &shape, exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| EnsembleMaps::accumulate(&pc, frames.len(), |k| Ok(frames[k].clone()), exec).unwrap())
        });
    }
    group.finish();
}

fn calibration(c: &mut Criterion) {
    let sim = simulator(96);
    let pairs = SimulatedPairs {
        simulator: &sim,
        master: 3,
        purpose: Purpose::Calibration,
        count: 60,
    };
    let mut group = c.benchmark_group("calibrate_96x60");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let options = CalibrationOptions {
            exec,
            ..CalibrationOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| calibrate(&pairs, &options).unwrap()));
    }
    group.finish();
}

fn trials(c: &mut Criterion) {
    let sim = simulator(128);
    let signal = TimeSignal::leading_ones(8, 4).unwrap();
    let pairs = SimulatedPairs {
        simulator: &sim,
        master: 4,
        purpose: Purpose::Calibration,
        count: 100,
    };
    let profile = calibrate(&pairs, &CalibrationOptions::default()).unwrap();
    let mut group = c.benchmark_group("trials_128x32");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_trials(&sim, &signal, &profile, 4, 0, 32, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dense_map, ensemble_accumulate, calibration, trials);
criterion_main!(benches);
