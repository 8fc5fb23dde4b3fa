//! Partition refinement. Each partition is fitted and solved piece by piece;
//! refinement stops once successive minimal times agree to within `delta`.

use rayon::prelude::*;

use crate::dynamics::{
    integrate_piece, ControlBounds, ControlSchedule, PiecewiseLinearModel, StateVector, TimePartition,
};
use crate::error::{Error, Result};
use crate::fit::{fit_model, FitOptions, TrajectoryRecord};
use crate::pontryagin::{min_time_transfer_with, PieceSolution, ShootingOptions};

/// Dimensionless subinterval weights with `sum(eps) = N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWeights {
    eps: Vec<f64>,
}

impl PartitionWeights {
    pub fn new(eps: Vec<f64>) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::InvalidInput("weights need at least one entry".into()));
        }
        if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidInput("weights must be positive and finite".into()));
        }
        let n = eps.len() as f64;
        let sum: f64 = eps.iter().sum();
        if (sum - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "weights must sum to the piece count {n}, got {sum}"
            )));
        }
        Ok(Self { eps })
    }

    /// All ones.
    pub fn uniform(pieces: usize) -> Self {
        Self {
            eps: vec![1.0; pieces],
        }
    }

    /// Weights proportional to subinterval length, so that
    /// `(t1 - t0) eps_k / N` is the actual length of subinterval `k`.
    pub fn span_proportional(partition: &TimePartition) -> Self {
        let n = partition.pieces() as f64;
        let span = partition.span();
        Self {
            eps: partition.subintervals().map(|(a, b)| n * (b - a) / span).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.eps
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightPolicy {
    #[default]
    Uniform,
    SpanProportional,
}

impl WeightPolicy {
    pub fn weights(&self, partition: &TimePartition) -> PartitionWeights {
        match self {
            WeightPolicy::Uniform => PartitionWeights::uniform(partition.pieces()),
            WeightPolicy::SpanProportional => PartitionWeights::span_proportional(partition),
        }
    }
}

impl std::str::FromStr for WeightPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "span" => Ok(Self::SpanProportional),
            other => Err(Error::InvalidInput(format!(
                "weights must be 'uniform' or 'span', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefineStrategy {
    /// Insert the midpoint of every subinterval.
    #[default]
    Double,
    /// Split the longest subinterval (the first one on ties).
    Increment,
}

impl std::str::FromStr for RefineStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Self::Double),
            "increment" => Ok(Self::Increment),
            other => Err(Error::InvalidInput(format!(
                "strategy must be 'double' or 'increment', got '{other}'"
            ))),
        }
    }
}

pub fn refine_partition(partition: &TimePartition, strategy: RefineStrategy) -> TimePartition {
    let knots = partition.knots();
    let mut out = Vec::with_capacity(2 * knots.len());
    match strategy {
        RefineStrategy::Double => {
            for w in knots.windows(2) {
                out.push(w[0]);
                out.push(0.5 * (w[0] + w[1]));
            }
        }
        RefineStrategy::Increment => {
            let widest = knots
                .windows(2)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, w)| {
                    if w[1] - w[0] > best.1 {
                        (i, w[1] - w[0])
                    } else {
                        best
                    }
                })
                .0;
            for (i, w) in knots.windows(2).enumerate() {
                out.push(w[0]);
                if i == widest {
                    out.push(0.5 * (w[0] + w[1]));
                }
            }
        }
    }
    out.push(partition.t1());
    TimePartition::new(partition.m() + 1, out).expect("midpoints keep knots strictly increasing")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveOptions {
    pub fit: FitOptions,
    pub shooting: ShootingOptions,
    pub weights: WeightPolicy,
}

/// Fitted model plus the chained per-piece optimal transfers.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSolution {
    pub model: PiecewiseLinearModel,
    pub x_start: StateVector,
    pub piece_solutions: Vec<PieceSolution>,
    pub total_time: f64,
    pub eq7_score: f64,
    pub eq8_score: f64,
}

impl PartitionSolution {
    /// `(piece, start, end)` windows of each transfer on the solution clock,
    /// which starts at the partition's `t0`.
    pub fn piece_windows(&self) -> Vec<(usize, f64, f64)> {
        let mut t = self.model.partition().t0();
        self.piece_solutions
            .iter()
            .map(|s| {
                let w = (s.piece_index, t, t + s.transfer_time);
                t += s.transfer_time;
                w
            })
            .collect()
    }

    /// Concatenated piece schedules on the solution clock. Zero-time pieces
    /// contribute nothing.
    pub fn schedule(&self) -> Result<ControlSchedule> {
        let mut out = ControlSchedule::empty();
        for (sol, (_, start, _)) in self.piece_solutions.iter().zip(self.piece_windows()) {
            if !sol.u_schedule.is_empty() {
                out.append(&sol.u_schedule.shifted(start))?;
            }
        }
        Ok(out)
    }

    /// Switch times of every piece on the solution clock.
    pub fn switch_times(&self) -> Vec<Vec<f64>> {
        self.piece_solutions
            .iter()
            .zip(self.piece_windows())
            .map(|(s, (_, start, _))| s.switch_times.iter().map(|t| t + start).collect())
            .collect()
    }

    pub fn hamiltonians(&self) -> Vec<f64> {
        self.piece_solutions.iter().map(|s| s.hamiltonian).collect()
    }

    /// Replays the piece schedules through the fitted pieces starting from
    /// `x_start`, each piece continuing from where the previous one ended.
    pub fn simulate(&self, steps_per_piece: usize) -> Result<StateVector> {
        let mut x = self.x_start.clone();
        for (piece, sol) in self.model.pieces().iter().zip(&self.piece_solutions) {
            if sol.u_schedule.is_empty() {
                continue;
            }
            let step = sol.transfer_time / steps_per_piece.max(1) as f64;
            x = integrate_piece(piece, &x, &sol.u_schedule, step)?.final_state().clone();
        }
        Ok(x)
    }
}

/// `sum_k H_k eps_k / N`: the horizon-normalized weighted Hamiltonian sum.
pub fn mean_hamiltonian_score(sol: &PartitionSolution, w: &PartitionWeights) -> Result<f64> {
    weighted_mean(&sol.hamiltonians(), w)
}

fn weighted_mean(h: &[f64], w: &PartitionWeights) -> Result<f64> {
    if h.len() != w.len() || h.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "partition weights",
            expected: h.len(),
            found: w.len(),
        });
    }
    Ok(h.iter().zip(w.values()).map(|(h, e)| h * e).sum::<f64>() / h.len() as f64)
}

fn mean_abs_deviation(h: &[f64], w: &PartitionWeights) -> Result<f64> {
    let mean = weighted_mean(h, w)?;
    Ok(h.iter()
        .zip(w.values())
        .map(|(h, e)| (h - mean).abs() * e)
        .sum::<f64>()
        / h.len() as f64)
}

/// `(1/N) sum_k |H_k - H_mean| eps_k` with `H_mean = (1/N) sum_k H_k eps_k`.
pub fn hamiltonian_deviation(sol: &PartitionSolution, w: &PartitionWeights) -> Result<f64> {
    mean_abs_deviation(&sol.hamiltonians(), w)
}

pub fn solve_partition(
    record: &TrajectoryRecord,
    partition: &TimePartition,
    bounds: &ControlBounds,
) -> Result<PartitionSolution> {
    solve_partition_with(record, partition, bounds, &SolveOptions::default())
}

pub fn solve_partition_with(
    record: &TrajectoryRecord,
    partition: &TimePartition,
    bounds: &ControlBounds,
    opts: &SolveOptions,
) -> Result<PartitionSolution> {
    let model = fit_model(record, partition, opts.fit)?;
    let x_start = record
        .interpolate(partition.t0())
        .ok_or(Error::Coverage {
            uncovered: vec![partition.t0()],
        })?
        .x;
    let pieces = model.pieces();
    let piece_solutions = (0..pieces.len())
        .into_par_iter()
        .map(|k| {
            let from = if k == 0 { &x_start } else { pieces[k - 1].anchor() };
            min_time_transfer_with(&pieces[k], from, bounds, &opts.shooting)
                .map(|mut s| {
                    s.piece_index = k;
                    s
                })
                .map_err(|e| e.at_piece(k))
        })
        .collect::<Result<Vec<_>>>()?;
    let total_time = piece_solutions.iter().map(|s| s.transfer_time).sum();
    let weights = opts.weights.weights(partition);
    let h: Vec<f64> = piece_solutions.iter().map(|s| s.hamiltonian).collect();
    Ok(PartitionSolution {
        eq7_score: weighted_mean(&h, &weights)?,
        eq8_score: mean_abs_deviation(&h, &weights)?,
        model,
        x_start,
        piece_solutions,
        total_time,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaConfig {
    pub delta: f64,
    /// Upper bound on the number of partitions solved.
    pub max_refinements: usize,
    pub initial_pieces: usize,
    pub strategy: RefineStrategy,
    pub bounds: ControlBounds,
    /// Horizon `(t0, t1)`; defaults to the record's time span.
    pub horizon: Option<(f64, f64)>,
    /// Starting partition; overrides `initial_pieces` and `horizon`.
    pub initial_partition: Option<TimePartition>,
    pub solve: SolveOptions,
}

impl DeltaConfig {
    pub fn new(delta: f64, bounds: ControlBounds) -> Self {
        Self {
            delta,
            max_refinements: 8,
            initial_pieces: 2,
            strategy: RefineStrategy::Double,
            bounds,
            horizon: None,
            initial_partition: None,
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidInput(format!("delta must be > 0, got {}", self.delta)));
        }
        if self.max_refinements == 0 {
            return Err(Error::InvalidInput("max_refinements must be >= 1".into()));
        }
        if self.initial_pieces == 0 {
            return Err(Error::InvalidInput("initial piece count must be >= 1".into()));
        }
        Ok(())
    }
}

/// One refinement step of the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub m: usize,
    pub pieces: usize,
    pub total_time: f64,
    pub eq7_score: f64,
    pub eq8_score: f64,
    /// `|T_m - T_{m-1}|`, absent for the first partition.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaResult {
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub final_schedule: ControlSchedule,
    pub stopping_gap: Option<f64>,
    pub final_solution: PartitionSolution,
}

pub fn run_delta(record: &TrajectoryRecord, config: &DeltaConfig) -> Result<DeltaResult> {
    config.validate()?;
    let mut partition = match &config.initial_partition {
        Some(p) => p.clone().with_index(1),
        None => {
            let (t0, t1) = config.horizon.unwrap_or((record.t_first(), record.t_last()));
            TimePartition::uniform(t0, t1, config.initial_pieces)?
        }
    };
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let solution = loop {
        let sol = solve_partition_with(record, &partition, &config.bounds, &config.solve)?;
        let gap = trace.last().map(|prev| (sol.total_time - prev.total_time).abs());
        trace.push(IterationRecord {
            m: partition.m(),
            pieces: partition.pieces(),
            total_time: sol.total_time,
            eq7_score: sol.eq7_score,
            eq8_score: sol.eq8_score,
            gap,
        });
        if gap.is_some_and(|g| g <= config.delta) {
            converged = true;
            break sol;
        }
        if trace.len() >= config.max_refinements {
            break sol;
        }
        partition = refine_partition(&partition, config.strategy);
    };
    Ok(DeltaResult {
        converged,
        final_schedule: solution.schedule()?,
        stopping_gap: trace.last().and_then(|r| r.gap),
        trace,
        final_solution: solution,
    })
}
