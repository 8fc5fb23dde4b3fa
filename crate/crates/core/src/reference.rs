//! Ground truth for tests. Nonlinear systems with known optima are sampled
//! exactly and checked against a brute-force minimum-time search.

use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use nalgebra::{dvector, DVector};
use rayon::prelude::*;

use crate::delta::{solve_partition, PartitionSolution};
use crate::dynamics::{
    ControlBounds, ControlVector, PiecewiseLinearModel, StateVector, TimePartition, DIVERGENCE_LIMIT,
};
use crate::error::{Error, Result};
use crate::fit::{Label, Sample, TrajectoryRecord};

pub type Rhs = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Fixed RK4 step used for sampling and for the brute-force search.
pub const REFERENCE_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct KnownOptimum {
    pub control: ControlVector,
    pub min_time: f64,
}

#[derive(Clone)]
pub struct ReferenceProblem {
    pub name: String,
    pub rhs: Rhs,
    pub bounds: ControlBounds,
    pub x_start: StateVector,
    pub x_goal: StateVector,
    pub known_optimum: Option<KnownOptimum>,
}

impl std::fmt::Debug for ReferenceProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceProblem")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("x_start", &self.x_start)
            .field("x_goal", &self.x_goal)
            .field("known_optimum", &self.known_optimum)
            .finish()
    }
}

impl ReferenceProblem {
    /// `dx/dt = x^2 + u^2`, `u in [-1, 1]`, steering 0 to 1. The optimum is
    /// `u = 1` with `x(t) = tan t`, reaching the goal at `pi/4`.
    pub fn example1() -> Self {
        Self {
            name: "example1".into(),
            rhs: Arc::new(|x, u| dvector![x[0] * x[0] + u[0] * u[0]]),
            bounds: ControlBounds::unit(1),
            x_start: StateVector::scalar(0.0),
            x_goal: StateVector::scalar(1.0),
            known_optimum: Some(KnownOptimum {
                control: ControlVector::scalar(1.0),
                min_time: FRAC_PI_4,
            }),
        }
    }

    pub fn eval(&self, x: &StateVector, u: &ControlVector) -> StateVector {
        StateVector::from_unchecked((self.rhs)(x.vector(), u.vector()))
    }

    fn scalar_field(&self, u: &ControlVector) -> Result<impl Fn(f64) -> f64 + '_> {
        if self.x_start.dim() != 1 || self.x_goal.dim() != 1 {
            return Err(Error::InvalidInput(format!(
                "reference sampling needs a scalar state, got dimension {}",
                self.x_start.dim()
            )));
        }
        if u.dim() != self.bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "control",
                expected: self.bounds.dim(),
                found: u.dim(),
            });
        }
        let u = u.vector().clone();
        Ok(move |x: f64| (self.rhs)(&dvector![x], &u)[0])
    }

    /// Time for the constant control `u` to carry the start to the goal.
    pub fn passage_time(&self, u: &ControlVector, horizon: f64) -> Result<f64> {
        let f = self.scalar_field(u)?;
        march(&f, self.x_start[0], &[self.x_goal[0]], REFERENCE_STEP, horizon)[0]
            .ok_or_else(|| Error::Generation(format!("goal not reached within t = {horizon}")))
    }
}

fn rk4(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let k1 = f(x);
    let k2 = f(x + 0.5 * h * k1);
    let k3 = f(x + 0.5 * h * k2);
    let k4 = f(x + h * k3);
    x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Crossing time of `target` inside a step of length `h` starting at `x`.
fn bisect_crossing(f: &impl Fn(f64) -> f64, x: f64, h: f64, target: f64) -> f64 {
    let below = x < target;
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let g = rk4(f, x, mid) - target;
        if g == 0.0 {
            return mid;
        }
        if (g < 0.0) == below {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// First-passage times of the scalar flow `dx/dt = f(x)` through each of
/// `targets` in order; `None` for targets not reached before `horizon`.
fn march(f: &impl Fn(f64) -> f64, x0: f64, targets: &[f64], step: f64, horizon: f64) -> Vec<Option<f64>> {
    let mut hits = vec![None; targets.len()];
    let mut idx = 0;
    while idx < targets.len() && targets[idx] == x0 {
        hits[idx] = Some(0.0);
        idx += 1;
    }
    let (mut t, mut x) = (0.0, x0);
    while idx < targets.len() && t < horizon {
        let h = step.min(horizon - t);
        let xn = rk4(f, x, h);
        if !xn.is_finite() || xn.abs() > DIVERGENCE_LIMIT {
            break;
        }
        while idx < targets.len() && (x - targets[idx]) * (xn - targets[idx]) <= 0.0 {
            let s = if xn == targets[idx] { h } else { bisect_crossing(f, x, h, targets[idx]) };
            hits[idx] = Some(t + s);
            idx += 1;
        }
        x = xn;
        t += h;
    }
    hits
}

/// Samples the problem under a constant control exactly at the moments the
/// state passes each checkpoint. Derivatives are the true right-hand side.
pub fn sample_reference(problem: &ReferenceProblem, u: &ControlVector, checkpoints: &[f64]) -> Result<TrajectoryRecord> {
    sample_reference_within(problem, u, checkpoints, 100.0)
}

pub fn sample_reference_within(
    problem: &ReferenceProblem,
    u: &ControlVector,
    checkpoints: &[f64],
    horizon: f64,
) -> Result<TrajectoryRecord> {
    if checkpoints.len() < 2 {
        return Err(Error::Generation("need at least two checkpoints".into()));
    }
    let f = problem.scalar_field(u)?;
    let times = march(&f, problem.x_start[0], checkpoints, REFERENCE_STEP, horizon);
    let mut samples = Vec::with_capacity(checkpoints.len());
    for (c, t) in checkpoints.iter().zip(times) {
        let t = t.ok_or_else(|| Error::Generation(format!("checkpoint x = {c} is not reached under u = {u:?}")))?;
        let x = StateVector::scalar(*c);
        let dx = problem.eval(&x, u);
        samples.push(Sample::new(t, x, u.clone()).with_derivative(dx));
    }
    TrajectoryRecord::new(format!("{}-checkpoints", problem.name), Label::Positive, samples)
}

/// Samples `samples` equally spaced times from the start until the goal is
/// reached under the constant control `u`.
pub fn sample_reference_uniform(problem: &ReferenceProblem, u: &ControlVector, samples: usize) -> Result<TrajectoryRecord> {
    if samples < 3 {
        return Err(Error::Generation("need at least three samples".into()));
    }
    let f = problem.scalar_field(u)?;
    let t_goal = problem.passage_time(u, 100.0)?;
    let intervals = samples - 1;
    let sub = ((t_goal / intervals as f64) / REFERENCE_STEP).ceil().max(1.0) as usize;
    let h = t_goal / (intervals * sub) as f64;
    let mut x = problem.x_start[0];
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        if i > 0 {
            for _ in 0..sub {
                x = rk4(&f, x, h);
            }
        }
        let t = if i == intervals { t_goal } else { (i * sub) as f64 * h };
        let xs = StateVector::scalar(x);
        let dx = problem.eval(&xs, u);
        out.push(Sample::new(t, xs, u.clone()).with_derivative(dx));
    }
    TrajectoryRecord::new(format!("{}-uniform", problem.name), Label::Positive, out)
}

/// Control grid and integration settings for the brute-force search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub levels: usize,
    pub step: f64,
    pub horizon: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            levels: 101,
            step: REFERENCE_STEP,
            horizon: 10.0,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.levels < 101 {
            return Err(Error::InvalidInput(format!("grid needs at least 101 levels, got {}", self.levels)));
        }
        if !(self.step > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidInput("grid step and horizon must be positive".into()));
        }
        Ok(())
    }

    fn levels_for(&self, bounds: &ControlBounds) -> Result<Vec<ControlVector>> {
        if bounds.dim() != 1 {
            return Err(Error::InvalidInput(format!(
                "control grids are scalar only, got {} controls",
                bounds.dim()
            )));
        }
        let (lo, hi) = (bounds.lower()[0], bounds.upper()[0]);
        Ok((0..self.levels)
            .map(|j| ControlVector::scalar(lo + (hi - lo) * j as f64 / (self.levels - 1) as f64))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptimum {
    pub time: f64,
    pub control: ControlVector,
}

/// Best constant control on the grid for the reference problem.
pub fn brute_force_min_time(problem: &ReferenceProblem, grid: &GridSpec) -> Result<OracleOptimum> {
    grid.validate()?;
    let levels = grid.levels_for(&problem.bounds)?;
    problem.scalar_field(&levels[0]).map(drop)?;
    levels
        .par_iter()
        .filter_map(|u| {
            let f = problem.scalar_field(u).ok()?;
            march(&f, problem.x_start[0], &[problem.x_goal[0]], grid.step, grid.horizon)[0].map(|time| OracleOptimum {
                time,
                control: u.clone(),
            })
        })
        .min_by(|a, b| a.time.total_cmp(&b.time))
        .ok_or_else(|| Error::InfeasibleTransfer("goal is not reached by any grid control".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptimum {
    /// Best sum over every per-piece assignment of bound vertices.
    pub vertex_time: f64,
    /// Sum of the per-piece minima over the full control grid.
    pub grid_time: f64,
    pub piece_times: Vec<f64>,
}

impl ModelOptimum {
    pub fn time(&self) -> f64 {
        self.vertex_time.min(self.grid_time)
    }
}

const MAX_ENUMERATION: usize = 1 << 20;

/// Brute-force minimum time through a scalar model's anchors: per-piece
/// constant controls are simulated by RK4 and timed to first passage.
pub fn brute_force_model_min_time(
    model: &PiecewiseLinearModel,
    x_start: &StateVector,
    bounds: &ControlBounds,
    grid: &GridSpec,
) -> Result<ModelOptimum> {
    grid.validate()?;
    if model.state_dim() != 1 || x_start.dim() != 1 {
        return Err(Error::InvalidInput("model brute force needs a scalar state".into()));
    }
    if model.control_dim() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            what: "control bounds",
            expected: model.control_dim(),
            found: bounds.dim(),
        });
    }
    let vertices = bounds.vertices();
    let levels = grid.levels_for(bounds)?;

    let mut x_from = x_start[0];
    let mut vertex_table = Vec::new();
    let mut piece_times = Vec::new();
    for (k, piece) in model.pieces().iter().enumerate() {
        let goal = piece.anchor()[0];
        let timed = |u: &ControlVector, horizon: f64| -> Option<f64> {
            let u = u.vector().clone();
            let f = |x: f64| piece.rhs_raw(&dvector![x], &u)[0];
            march(&f, x_from, &[goal], grid.step, horizon)[0]
        };
        let row: Vec<Option<f64>> = vertices.iter().map(|u| timed(u, grid.horizon)).collect();
        // levels slower than the best vertex cannot improve on it
        let cutoff = row
            .iter()
            .flatten()
            .fold(grid.horizon, |acc, t| acc.min(t + 2.0 * grid.step));
        let best = levels
            .par_iter()
            .filter_map(|u| timed(u, cutoff))
            .chain(row.par_iter().filter_map(|t| *t))
            .min_by(f64::total_cmp)
            .ok_or_else(|| {
                Error::InfeasibleTransfer(format!("anchor {goal} is not reached from {x_from}")).at_piece(k)
            })?;
        vertex_table.push(row);
        piece_times.push(best);
        x_from = goal;
    }

    let combos = vertex_table
        .iter()
        .try_fold(1usize, |acc, row| acc.checked_mul(row.len()).filter(|c| *c <= MAX_ENUMERATION));
    let vertex_time = match combos {
        Some(count) => (0..count)
            .filter_map(|mut code| {
                vertex_table.iter().try_fold(0.0, |sum, row| {
                    let pick = code % row.len();
                    code /= row.len();
                    row[pick].map(|t| sum + t)
                })
            })
            .min_by(f64::total_cmp),
        None => vertex_table
            .iter()
            .map(|row| row.iter().flatten().copied().min_by(f64::total_cmp))
            .sum::<Option<f64>>(),
    }
    .unwrap_or(f64::INFINITY);

    Ok(ModelOptimum {
        vertex_time,
        grid_time: piece_times.iter().sum(),
        piece_times,
    })
}

/// A named data set with the total time published alongside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoCase {
    pub name: &'static str,
    /// Constant control the data were recorded under.
    pub control: f64,
    /// States at which samples are taken; they also fix the partition.
    pub checkpoints: &'static [f64],
    pub published_total: f64,
}

/// Published and recomputed totals further apart than this are flagged.
pub const DISCREPANCY_TOLERANCE: f64 = 0.01;

pub const DEMO_CASES: [DemoCase; 5] = [
    DemoCase {
        name: "example1",
        control: 0.5,
        checkpoints: &[0.0, 0.5, 1.0],
        published_total: 1.13,
    },
    DemoCase {
        name: "example2-case1",
        control: 0.9,
        checkpoints: &[0.0, 0.5, 1.0],
        published_total: 1.1,
    },
    DemoCase {
        name: "example2-case2",
        control: 0.9,
        checkpoints: &[0.0, 0.25, 0.5, 0.75, 1.0],
        published_total: 0.94,
    },
    DemoCase {
        name: "example2-case3",
        control: 1.0,
        checkpoints: &[0.0, 0.75, 1.0],
        published_total: 0.74,
    },
    DemoCase {
        name: "example2-case4",
        control: 1.0,
        checkpoints: &[0.0, 0.5, 1.0],
        published_total: 0.76,
    },
];

pub fn demo_case(name: &str) -> Option<&'static DemoCase> {
    DEMO_CASES.iter().find(|c| c.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub computed: f64,
    pub published: f64,
    pub piece_times: Vec<f64>,
    pub flagged: bool,
}

impl DemoCase {
    pub fn record(&self) -> Result<TrajectoryRecord> {
        sample_reference(&ReferenceProblem::example1(), &ControlVector::scalar(self.control), self.checkpoints)
    }

    /// Partition with knots at the sample times.
    pub fn partition(record: &TrajectoryRecord) -> Result<TimePartition> {
        TimePartition::new(1, record.samples().iter().map(|s| s.t).collect())
    }

    pub fn solve(&self) -> Result<(PartitionSolution, CaseReport)> {
        let record = self.record()?;
        let problem = ReferenceProblem::example1();
        let sol = solve_partition(&record, &Self::partition(&record)?, &problem.bounds)?;
        let report = CaseReport {
            name: self.name,
            computed: sol.total_time,
            published: self.published_total,
            piece_times: sol.piece_solutions.iter().map(|p| p.transfer_time).collect(),
            flagged: (sol.total_time - self.published_total).abs() > DISCREPANCY_TOLERANCE,
        };
        Ok((sol, report))
    }
}
