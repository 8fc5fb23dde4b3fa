//! Core state and control types, plus the fixed-step integrator everything
//! else is simulated with.

use std::ops::Index;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// States whose magnitude exceeds this are treated as a blow-up.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Number of integrator steps per piece when no explicit step is given.
pub const DEFAULT_STEPS_PER_PIECE: usize = 2000;

macro_rules! finite_vector {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(DVector<f64>);

        impl $name {
            pub fn new(components: Vec<f64>) -> Result<Self> {
                Self::from_dvector(DVector::from_vec(components))
            }

            pub fn from_dvector(v: DVector<f64>) -> Result<Self> {
                if v.is_empty() {
                    return Err(Error::InvalidInput(concat!($what, " must have dimension >= 1").into()));
                }
                if let Some(i) = v.iter().position(|c| !c.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        concat!($what, " component {} is not finite"),
                        i
                    )));
                }
                Ok(Self(v))
            }

            pub fn scalar(value: f64) -> Self {
                Self(DVector::from_element(1, value))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(DVector::zeros(dim))
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice()
            }

            pub fn vector(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn into_inner(self) -> DVector<f64> {
                self.0
            }

            pub(crate) fn from_unchecked(v: DVector<f64>) -> Self {
                Self(v)
            }
        }

        impl Index<usize> for $name {
            type Output = f64;

            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }
    };
}

finite_vector!(
    /// Plant state `x`, dimension `n`.
    StateVector,
    "state"
);
finite_vector!(
    /// Control input `u`, dimension `r`.
    ControlVector,
    "control"
);

/// Box of admissible controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidInput(format!(
                "control bounds need matching nonempty lower/upper, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidInput(format!(
                    "control bound {i} requires finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]` for a single control.
    pub fn scalar(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    /// The symmetric box `[-1, 1]^r`.
    pub fn unit(r: usize) -> Self {
        Self {
            lower: vec![-1.0; r],
            upper: vec![1.0; r],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, u: &ControlVector) -> bool {
        u.dim() == self.dim()
            && u
                .as_slice()
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn is_vertex(&self, u: &ControlVector) -> bool {
        u.dim() == self.dim()
            && u
                .as_slice()
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, h))| v == l || v == h)
    }

    /// All `2^r` corners of the box.
    pub fn vertices(&self) -> Vec<ControlVector> {
        let r = self.dim();
        (0..1usize << r)
            .map(|mask| {
                let v = (0..r)
                    .map(|i| {
                        if mask & (1 << i) != 0 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    })
                    .collect::<Vec<_>>();
                ControlVector::from_unchecked(DVector::from_vec(v))
            })
            .collect()
    }
}

/// Knots `tau_0 < tau_1 < ... < tau_N` of the m-th division of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    m: usize,
    knots: Vec<f64>,
}

impl TimePartition {
    pub fn new(m: usize, knots: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("refinement index starts at 1".into()));
        }
        if knots.len() < 2 {
            return Err(Error::InvalidInput("a partition needs at least two knots".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "partition knots must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { m, knots })
    }

    /// `pieces` equal subintervals of `[t0, t1]`.
    pub fn uniform(t0: f64, t1: f64, pieces: usize) -> Result<Self> {
        if pieces == 0 {
            return Err(Error::InvalidInput("partition needs at least one piece".into()));
        }
        let h = (t1 - t0) / pieces as f64;
        let mut knots: Vec<f64> = (0..pieces).map(|k| t0 + h * k as f64).collect();
        knots.push(t1);
        Self::new(1, knots)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn with_index(mut self, m: usize) -> Self {
        self.m = m.max(1);
        self
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of subintervals `N_m`.
    pub fn pieces(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn t0(&self) -> f64 {
        self.knots[0]
    }

    pub fn t1(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn span(&self) -> f64 {
        self.t1() - self.t0()
    }

    pub fn subintervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots.windows(2).map(|w| (w[0], w[1]))
    }
}

/// One constant-coefficient linear model `dx/dt = A x + B u` valid on
/// `[t_start, t_end]`, steering towards `anchor`.
///
/// The anchor is kept in original coordinates. In shifted coordinates
/// `x~ = x - anchor` the same dynamics read `dx~/dt = A x~ + A anchor + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPiece {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    t_start: f64,
    t_end: f64,
    anchor: StateVector,
}

impl LinearPiece {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        t_start: f64,
        t_end: f64,
        anchor: StateVector,
    ) -> Result<Self> {
        let n = anchor.dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "A matrix",
                expected: n,
                found: if a.nrows() != n { a.nrows() } else { a.ncols() },
            });
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "B matrix rows",
                expected: n,
                found: b.nrows(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("piece matrices must be finite".into()));
        }
        if !(t_start < t_end) {
            return Err(Error::InvalidInput(format!(
                "piece span must satisfy t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        Ok(Self {
            a,
            b,
            t_start,
            t_end,
            anchor,
        })
    }

    /// Scalar piece `dx/dt = a x + b u`.
    pub fn scalar(a: f64, b: f64, t_start: f64, t_end: f64, anchor: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            t_start,
            t_end,
            StateVector::new(vec![anchor])?,
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn anchor(&self) -> &StateVector {
        &self.anchor
    }

    pub fn state_dim(&self) -> usize {
        self.anchor.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Constant term `A anchor` that appears in shifted coordinates.
    pub fn drift(&self) -> DVector<f64> {
        &self.a * self.anchor.vector()
    }

    /// `x - anchor`.
    pub fn shift_coordinates(&self, x: &StateVector) -> Result<StateVector> {
        self.check_state(x)?;
        Ok(StateVector(x.vector() - self.anchor.vector()))
    }

    /// `x~ + anchor`.
    pub fn unshift_coordinates(&self, shifted: &StateVector) -> Result<StateVector> {
        self.check_state(shifted)?;
        Ok(StateVector(shifted.vector() + self.anchor.vector()))
    }

    /// `dx/dt` at `(x, u)`.
    pub fn evaluate_rhs(&self, x: &StateVector, u: &ControlVector) -> Result<StateVector> {
        self.check_state(x)?;
        self.check_control(u)?;
        Ok(StateVector(self.rhs_raw(x.vector(), u.vector())))
    }

    pub(crate) fn rhs_raw(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let shifted = x - self.anchor.vector();
        &self.a * shifted + self.drift() + &self.b * u
    }

    pub(crate) fn check_state(&self, x: &StateVector) -> Result<()> {
        if x.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                found: x.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_control(&self, u: &ControlVector) -> Result<()> {
        if u.dim() != self.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "control",
                expected: self.control_dim(),
                found: u.dim(),
            });
        }
        Ok(())
    }
}

/// Free-function form of [`LinearPiece::evaluate_rhs`].
pub fn evaluate_rhs(piece: &LinearPiece, x: &StateVector, u: &ControlVector) -> Result<StateVector> {
    piece.evaluate_rhs(x, u)
}

/// Free-function form of [`LinearPiece::shift_coordinates`].
pub fn shift_coordinates(piece: &LinearPiece, x: &StateVector) -> Result<StateVector> {
    piece.shift_coordinates(x)
}

/// Ordered pieces covering the partition, one per subinterval.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearModel {
    pieces: Vec<LinearPiece>,
    partition: TimePartition,
}

impl PiecewiseLinearModel {
    pub fn new(pieces: Vec<LinearPiece>, partition: TimePartition) -> Result<Self> {
        if pieces.len() != partition.pieces() {
            return Err(Error::InvalidInput(format!(
                "{} pieces for a partition with {} subintervals",
                pieces.len(),
                partition.pieces()
            )));
        }
        for (k, (piece, (lo, hi))) in pieces.iter().zip(partition.subintervals()).enumerate() {
            if piece.t_start != lo || piece.t_end != hi {
                return Err(Error::InvalidInput(format!(
                    "piece {k} spans [{}, {}] but subinterval is [{lo}, {hi}]",
                    piece.t_start, piece.t_end
                )));
            }
            if piece.state_dim() != pieces[0].state_dim()
                || piece.control_dim() != pieces[0].control_dim()
            {
                return Err(Error::InvalidInput(format!(
                    "piece {k} dimensions differ from piece 0"
                )));
            }
        }
        Ok(Self { pieces, partition })
    }

    pub fn pieces(&self) -> &[LinearPiece] {
        &self.pieces
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn state_dim(&self) -> usize {
        self.pieces[0].state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.pieces[0].control_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub u: ControlVector,
}

/// Piecewise-constant control: contiguous segments, one control value each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlSchedule {
    segments: Vec<ControlSegment>,
}

impl ControlSchedule {
    pub fn new(segments: Vec<ControlSegment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if !(s.t_start < s.t_end) {
                return Err(Error::InvalidInput(format!(
                    "segment {i} has empty span [{}, {}]",
                    s.t_start, s.t_end
                )));
            }
        }
        for (i, w) in segments.windows(2).enumerate() {
            if w[0].t_end != w[1].t_start {
                return Err(Error::InvalidInput(format!(
                    "segments {i} and {} are not contiguous",
                    i + 1
                )));
            }
            if w[0].u.dim() != w[1].u.dim() {
                return Err(Error::InvalidInput("segment control dimensions differ".into()));
            }
        }
        Ok(Self { segments })
    }

    /// A single segment holding `u` over `[t_start, t_end]`.
    pub fn constant(u: ControlVector, t_start: f64, t_end: f64) -> Result<Self> {
        Self::new(vec![ControlSegment { t_start, t_end, u }])
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn segments(&self) -> &[ControlSegment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn t_start(&self) -> Option<f64> {
        self.segments.first().map(|s| s.t_start)
    }

    pub fn t_end(&self) -> Option<f64> {
        self.segments.last().map(|s| s.t_end)
    }

    pub fn duration(&self) -> f64 {
        match (self.t_start(), self.t_end()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Control in force at `t` (segments are right-open except the last).
    pub fn control_at(&self, t: f64) -> Option<&ControlVector> {
        let last = self.segments.len().checked_sub(1)?;
        self.segments
            .iter()
            .enumerate()
            .find(|(i, s)| s.t_start <= t && (t < s.t_end || (*i == last && t <= s.t_end)))
            .map(|(_, s)| &s.u)
    }

    pub fn within(&self, bounds: &ControlBounds) -> bool {
        self.segments.iter().all(|s| bounds.contains(&s.u))
    }

    /// The same schedule with every boundary moved by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| ControlSegment {
                    t_start: s.t_start + offset,
                    t_end: s.t_end + offset,
                    u: s.u.clone(),
                })
                .collect(),
        }
    }

    /// Appends `other`, which must start where `self` ends.
    pub fn append(&mut self, other: &ControlSchedule) -> Result<()> {
        let mut segments = std::mem::take(&mut self.segments);
        segments.extend(other.segments.iter().cloned());
        *self = Self::new(segments)?;
        Ok(())
    }

    /// Boundaries where the control value actually changes.
    pub fn switch_times(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .filter(|w| w[0].u != w[1].u)
            .map(|w| w[0].t_end)
            .collect()
    }
}

/// Sampled solution of an initial value problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Control in force over the step that starts at the sample (the final
    /// sample repeats the last control).
    pub controls: Vec<ControlVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }
}

pub(crate) fn rk4_step<F>(rhs: &F, t: f64, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, x, u);
    let k2 = rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)), u);
    let k3 = rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)), u);
    let k4 = rhs(t + h, &(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

pub(crate) fn diverged(x: &DVector<f64>) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Classical fixed-step RK4 over the whole schedule.
///
/// Samples are taken at every multiple of `step` measured from the schedule
/// start, plus at every segment boundary, so a control never changes inside
/// a step.
pub fn integrate<F>(
    rhs: F,
    x0: &StateVector,
    schedule: &ControlSchedule,
    step: f64,
) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("integration step must be > 0, got {step}")));
    }
    let origin = schedule
        .t_start()
        .ok_or_else(|| Error::InvalidInput("cannot integrate over an empty schedule".into()))?;

    let mut times = vec![origin];
    let mut states = vec![x0.clone()];
    let mut controls = Vec::new();
    let mut t = origin;
    let mut x = x0.vector().clone();

    for seg in schedule.segments() {
        let u = seg.u.vector();
        while t < seg.t_end {
            // next grid point strictly after t
            let k = ((t - origin) / step + 1e-9).floor() + 1.0;
            let grid = origin + k * step;
            let next = if grid >= seg.t_end - 1e-12 * step.max(seg.t_end.abs()) {
                seg.t_end
            } else {
                grid
            };
            let x_next = rk4_step(&rhs, t, &x, u, next - t);
            if diverged(&x_next) {
                return Err(Error::Divergence { last_time: t });
            }
            controls.push(seg.u.clone());
            x = x_next;
            t = next;
            times.push(t);
            states.push(StateVector(x.clone()));
        }
    }
    controls.push(
        schedule
            .segments()
            .last()
            .map(|s| s.u.clone())
            .expect("nonempty schedule"),
    );
    Ok(Trajectory {
        times,
        states,
        controls,
    })
}

/// Integrates a piece's own dynamics under `schedule`.
pub fn integrate_piece(
    piece: &LinearPiece,
    x0: &StateVector,
    schedule: &ControlSchedule,
    step: f64,
) -> Result<Trajectory> {
    piece.check_state(x0)?;
    integrate(|_, x, u| piece.rhs_raw(x, u), x0, schedule, step)
}
