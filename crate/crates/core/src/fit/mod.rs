//! Fitting piecewise-constant linear models to recorded trajectories.

mod csv_io;

pub use csv_io::{ingest_trajectories, read_trajectories, write_trajectories};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ControlVector, LinearPiece, PiecewiseLinearModel, StateVector, TimePartition};
use crate::error::{Error, Result};

/// Whether a recorded run stayed within the normal operating regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            other => Err(Error::InvalidInput(format!(
                "label must be 'positive' or 'negative', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: StateVector,
    pub u: ControlVector,
    pub dx: Option<StateVector>,
}

impl Sample {
    pub fn new(t: f64, x: StateVector, u: ControlVector) -> Self {
        Self { t, x, u, dx: None }
    }

    pub fn with_derivative(mut self, dx: StateVector) -> Self {
        self.dx = Some(dx);
        self
    }
}

/// A labeled, time-ordered run of `(t, x, u[, dx])` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    id: String,
    label: Label,
    samples: Vec<Sample>,
}

impl TrajectoryRecord {
    pub fn new(id: impl Into<String>, label: Label, samples: Vec<Sample>) -> Result<Self> {
        let id = id.into();
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "record '{id}' needs at least 2 samples, has {}",
                samples.len()
            )));
        }
        let n = samples[0].x.dim();
        let r = samples[0].u.dim();
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() {
                return Err(Error::InvalidInput(format!("record '{id}' sample {i}: time not finite")));
            }
            if s.x.dim() != n || s.u.dim() != r || s.dx.as_ref().is_some_and(|d| d.dim() != n) {
                return Err(Error::InvalidInput(format!(
                    "record '{id}' sample {i}: inconsistent dimensions"
                )));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[0].t >= w[1].t) {
            return Err(Error::InvalidInput(format!(
                "record '{id}': times not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(Self { id, label, samples })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn state_dim(&self) -> usize {
        self.samples[0].x.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.samples[0].u.dim()
    }

    pub fn t_first(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_last(&self) -> f64 {
        self.samples.last().unwrap().t
    }

    pub fn has_derivatives(&self) -> bool {
        self.samples.iter().all(|s| s.dx.is_some())
    }

    /// The record with every time moved by `offset`.
    pub fn translated(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.t += offset;
        }
        out
    }

    /// Linear interpolation of state, control and derivative at `t`.
    /// Exact sample times return the sample itself.
    pub fn interpolate(&self, t: f64) -> Option<KnotData> {
        let s = &self.samples;
        let tol = 1e-12 * (1.0 + t.abs());
        if t < s[0].t - tol || t > self.t_last() + tol {
            return None;
        }
        if let Some(hit) = s.iter().find(|p| (p.t - t).abs() <= tol) {
            return Some(KnotData {
                x: hit.x.clone(),
                u: hit.u.clone(),
                dx: hit.dx.clone(),
            });
        }
        let j = s.partition_point(|p| p.t < t);
        let (lo, hi) = (&s[j - 1], &s[j]);
        let w = (t - lo.t) / (hi.t - lo.t);
        let lerp = |a: &DVector<f64>, b: &DVector<f64>| a * (1.0 - w) + b * w;
        Some(KnotData {
            x: StateVector::from_unchecked(lerp(lo.x.vector(), hi.x.vector())),
            u: ControlVector::from_unchecked(lerp(lo.u.vector(), hi.u.vector())),
            dx: match (&lo.dx, &hi.dx) {
                (Some(a), Some(b)) => Some(StateVector::from_unchecked(lerp(a.vector(), b.vector()))),
                _ => None,
            },
        })
    }
}

/// Record data evaluated at a partition knot.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotData {
    pub x: StateVector,
    pub u: ControlVector,
    pub dx: Option<StateVector>,
}

/// Derivative of the quadratic through three nodes, evaluated at `at`.
fn quadratic_slope(t: [f64; 3], f: [f64; 3], at: f64) -> f64 {
    let l0 = ((at - t[1]) + (at - t[2])) / ((t[0] - t[1]) * (t[0] - t[2]));
    let l1 = ((at - t[0]) + (at - t[2])) / ((t[1] - t[0]) * (t[1] - t[2]));
    let l2 = ((at - t[0]) + (at - t[1])) / ((t[2] - t[0]) * (t[2] - t[1]));
    f[0] * l0 + f[1] * l1 + f[2] * l2
}

/// Fills missing derivatives by second-order finite differences: central at
/// interior samples, one-sided at the two ends. Existing derivatives are kept.
pub fn estimate_derivatives(record: &TrajectoryRecord) -> Result<TrajectoryRecord> {
    let s = record.samples();
    if s.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "derivative estimation needs at least 3 samples, record '{}' has {}",
            record.id(),
            s.len()
        )));
    }
    let n = record.state_dim();
    let last = s.len() - 1;
    let mut out = record.clone();
    for i in 0..s.len() {
        if s[i].dx.is_some() {
            continue;
        }
        let c = i.clamp(1, last - 1);
        let nodes = [s[c - 1].t, s[c].t, s[c + 1].t];
        let dx: Vec<f64> = (0..n)
            .map(|j| quadratic_slope(nodes, [s[c - 1].x[j], s[c].x[j], s[c + 1].x[j]], s[i].t))
            .collect();
        out.samples[i].dx = Some(StateVector::new(dx)?);
    }
    Ok(out)
}

/// Endpoint conditions for an exact scalar fit of `dx/dt = a x + b u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConditions {
    pub x_left: f64,
    pub x_right: f64,
    pub dx_left: f64,
    pub dx_right: f64,
    pub u_left: f64,
    pub u_right: f64,
}

impl FitConditions {
    /// Conditions recorded under a single control value.
    pub fn new(x_left: f64, x_right: f64, dx_left: f64, dx_right: f64, u_data: f64) -> Self {
        Self {
            x_left,
            x_right,
            dx_left,
            dx_right,
            u_left: u_data,
            u_right: u_data,
        }
    }
}

/// Solves `a x_l + b u_l = dx_l`, `a x_r + b u_r = dx_r` exactly.
pub fn fit_piece(cond: &FitConditions) -> Result<(f64, f64)> {
    let FitConditions {
        x_left: xl,
        x_right: xr,
        dx_left: dl,
        dx_right: dr,
        u_left: ul,
        u_right: ur,
    } = *cond;
    if [xl, xr, dl, dr, ul, ur].iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("fit conditions must be finite".into()));
    }
    if ul == ur {
        if xl == xr {
            return Err(Error::SingularFit {
                reason: format!("endpoint states coincide (x = {xl})"),
                deficient_directions: vec![vec![ul, -xl]],
            });
        }
        if ul == 0.0 {
            return Err(Error::UnidentifiableControl);
        }
    }
    let det = xl * ur - xr * ul;
    let scale = (xl.abs() + xr.abs()) * (ul.abs() + ur.abs());
    if det.abs() <= 1e-14 * scale || det == 0.0 {
        return Err(Error::SingularFit {
            reason: "endpoint regressors (x, u) are collinear".into(),
            deficient_directions: vec![vec![ul, -xl]],
        });
    }
    let a = (dl * ur - dr * ul) / det;
    let b = (xl * dr - xr * dl) / det;
    Ok((a, b))
}

/// Relative singular-value threshold below which a regressor direction is
/// treated as unidentifiable.
const RANK_TOL: f64 = 1e-10;

/// Least-squares `(A, B)` minimizing `sum |dx_i - A x_i - B u_i|^2`.
pub fn fit_piece_general(samples: &[Sample]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("no samples to fit".into()))?;
    let n = first.x.dim();
    let r = first.u.dim();
    let p = n + r;
    if samples.len() < p {
        return Err(Error::SingularFit {
            reason: format!("{} samples cannot identify {p} regressors", samples.len()),
            deficient_directions: Vec::new(),
        });
    }
    let m = samples.len();
    let mut z = DMatrix::zeros(m, p);
    let mut d = DMatrix::zeros(m, n);
    for (i, s) in samples.iter().enumerate() {
        let dx = s
            .dx
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("sample {i} has no derivative")))?;
        if s.x.dim() != n || s.u.dim() != r || dx.dim() != n {
            return Err(Error::InvalidInput(format!("sample {i}: inconsistent dimensions")));
        }
        for j in 0..n {
            z[(i, j)] = s.x[j];
            d[(i, j)] = dx[j];
        }
        for j in 0..r {
            z[(i, n + j)] = s.u[j];
        }
    }
    let svd = z.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let deficient: Vec<Vec<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= cut)
        .map(|(k, _)| v_t.row(k).iter().copied().collect())
        .collect();
    if !deficient.is_empty() || smax == 0.0 {
        return Err(Error::SingularFit {
            reason: format!("regressor matrix has rank {} < {p}", p - deficient.len().max(1)),
            deficient_directions: deficient,
        });
    }
    let solve = |rhs: &DMatrix<f64>| svd.solve(rhs, cut).map_err(|e| Error::InvalidInput(e.to_string()));
    let mut theta = solve(&d)?;
    // the iterative SVD stops short of full precision; polish on the residual
    for _ in 0..2 {
        theta += solve(&(&d - &z * &theta))?;
    }
    let a = theta.rows(0, n).transpose();
    let b = theta.rows(n, r).transpose();
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitOptions {
    /// Admit negative-labeled records for fitting.
    pub allow_negative: bool,
}

/// Fits one linear piece per subinterval of `partition`, anchored at the
/// record state on the subinterval's right knot.
pub fn fit_model(
    record: &TrajectoryRecord,
    partition: &TimePartition,
    opts: FitOptions,
) -> Result<PiecewiseLinearModel> {
    if record.label() == Label::Negative && !opts.allow_negative {
        return Err(Error::InvalidInput(format!(
            "record '{}' is labeled negative; negative records are excluded from fitting",
            record.id()
        )));
    }
    let uncovered: Vec<f64> = partition
        .knots()
        .iter()
        .copied()
        .filter(|&k| record.interpolate(k).is_none())
        .collect();
    if !uncovered.is_empty() {
        return Err(Error::Coverage { uncovered });
    }
    let record = if record.has_derivatives() {
        record.clone()
    } else {
        estimate_derivatives(record)?
    };
    let knots: Vec<KnotData> = partition
        .knots()
        .iter()
        .map(|&k| record.interpolate(k).expect("coverage checked"))
        .collect();
    let n = record.state_dim();
    let r = record.control_dim();

    let mut pieces = Vec::with_capacity(partition.pieces());
    for (k, (lo, hi)) in partition.subintervals().enumerate() {
        let left = &knots[k];
        let right = &knots[k + 1];
        let interior = || -> Vec<Sample> {
            let mut pts = vec![knot_sample(lo, left)];
            pts.extend(
                record
                    .samples()
                    .iter()
                    .filter(|s| s.t > lo && s.t < hi)
                    .cloned(),
            );
            pts.push(knot_sample(hi, right));
            pts
        };
        let (a, b) = if n == 1 && r == 1 {
            let cond = FitConditions {
                x_left: left.x[0],
                x_right: right.x[0],
                dx_left: left.dx.as_ref().unwrap()[0],
                dx_right: right.dx.as_ref().unwrap()[0],
                u_left: left.u[0],
                u_right: right.u[0],
            };
            match fit_piece(&cond) {
                Ok((a, b)) => (
                    DMatrix::from_element(1, 1, a),
                    DMatrix::from_element(1, 1, b),
                ),
                Err(Error::SingularFit { .. })
                    if cond.x_left == cond.x_right && cond.dx_left != cond.dx_right =>
                {
                    fit_piece_general(&interior()).map_err(|e| e.at_piece(k))?
                }
                Err(e) => return Err(e.at_piece(k)),
            }
        } else {
            fit_piece_general(&interior()).map_err(|e| e.at_piece(k))?
        };
        pieces.push(LinearPiece::new(a, b, lo, hi, right.x.clone()).map_err(|e| e.at_piece(k))?);
    }
    PiecewiseLinearModel::new(pieces, partition.clone())
}

fn knot_sample(t: f64, k: &KnotData) -> Sample {
    Sample {
        t,
        x: k.x.clone(),
        u: k.u.clone(),
        dx: k.dx.clone(),
    }
}

/// Root-mean-square mismatch between the model's right-hand side and the
/// record's derivatives, over the record samples that fall inside the model
/// horizon. Used to sanity-check a fitted model against held-out records.
pub fn derivative_residual(model: &PiecewiseLinearModel, record: &TrajectoryRecord) -> Result<f64> {
    let record = if record.has_derivatives() {
        record.clone()
    } else {
        estimate_derivatives(record)?
    };
    let part = model.partition();
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in record.samples() {
        if s.t < part.t0() || s.t > part.t1() {
            continue;
        }
        let k = part
            .knots()
            .partition_point(|&knot| knot <= s.t)
            .clamp(1, part.pieces())
            - 1;
        let f = model.pieces()[k].evaluate_rhs(&s.x, &s.u)?;
        sum += (f.vector() - s.dx.as_ref().unwrap().vector()).norm_squared();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Coverage {
            uncovered: vec![part.t0(), part.t1()],
        });
    }
    Ok((sum / count as f64).sqrt())
}
