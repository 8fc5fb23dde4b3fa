//! Data-driven time-optimal control. Piecewise-linear dynamics fitted to
//! sampled trajectories are solved piece by piece with the maximum
//! principle while the time partition is refined until the optimum settles.

pub mod delta;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod pontryagin;
pub mod reduction;
pub mod reference;

pub use delta::{
    run_delta, solve_partition, solve_partition_with, DeltaConfig, DeltaResult, IterationRecord, PartitionSolution,
    PartitionWeights, RefineStrategy, SolveOptions, WeightPolicy,
};
pub use dynamics::{
    integrate, integrate_piece, ControlBounds, ControlSchedule, ControlSegment, ControlVector, LinearPiece,
    PiecewiseLinearModel, StateVector, TimePartition, Trajectory,
};
pub use error::{Error, Result};
pub use fit::{fit_model, FitOptions, Label, Sample, TrajectoryRecord};
pub use pontryagin::{min_time_transfer, min_time_transfer_with, AdjointState, PieceSolution, ShootingOptions};
