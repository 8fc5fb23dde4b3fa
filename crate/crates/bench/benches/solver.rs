use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use deltapmp::reference::{sample_reference_uniform, ReferenceProblem};
use deltapmp::{
    fit_model, min_time_transfer, run_delta, solve_partition, ControlBounds, ControlVector, DeltaConfig, FitOptions,
    LinearPiece, StateVector, TimePartition,
};
use nalgebra::{dmatrix, DMatrix};

fn tangent_record() -> deltapmp::TrajectoryRecord {
    sample_reference_uniform(&ReferenceProblem::example1(), &ControlVector::scalar(1.0), 161).unwrap()
}

fn fitting(c: &mut Criterion) {
    let rec = tangent_record();
    let part = TimePartition::uniform(rec.t_first(), rec.t_last(), 16).unwrap();
    c.bench_function("fit_model 16 pieces", |b| {
        b.iter(|| fit_model(black_box(&rec), &part, FitOptions::default()).unwrap())
    });
}

fn transfers(c: &mut Criterion) {
    let piece = LinearPiece::scalar(1.5, -0.5, 0.0, 1.0, 1.0).unwrap();
    let bounds = ControlBounds::unit(1);
    let from = StateVector::scalar(0.5);
    c.bench_function("scalar transfer", |b| {
        b.iter(|| min_time_transfer(&piece, black_box(&from), &bounds).unwrap())
    });

    let double_integrator = LinearPiece::new(
        dmatrix![0.0, 1.0; 0.0, 0.0],
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        0.0,
        1.0,
        StateVector::new(vec![0.0, 0.0]).unwrap(),
    )
    .unwrap();
    let from = StateVector::new(vec![1.0, 0.0]).unwrap();
    c.bench_function("double integrator shooting", |b| {
        b.iter(|| min_time_transfer(&double_integrator, black_box(&from), &bounds).unwrap())
    });
}

fn refinement(c: &mut Criterion) {
    let rec = tangent_record();
    let bounds = ControlBounds::unit(1);
    let part = TimePartition::uniform(rec.t_first(), rec.t_last(), 16).unwrap();
    c.bench_function("solve_partition 16 pieces", |b| {
        b.iter(|| solve_partition(black_box(&rec), &part, &bounds).unwrap())
    });
    let cfg = DeltaConfig::new(0.01, bounds.clone());
    c.bench_function("run_delta tangent", |b| b.iter(|| run_delta(black_box(&rec), &cfg).unwrap()));
}

criterion_group!(benches, fitting, transfers, refinement);
criterion_main!(benches);
