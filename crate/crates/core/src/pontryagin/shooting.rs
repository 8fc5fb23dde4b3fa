//! Costate shooting for pieces with `n >= 2`.
//!
//! A unit initial costate fixes the bang-bang control through the sign of
//! `B^T exp(-A^T t) psi0`. Between switches the state is advanced with the
//! exact transition of the constant-control linear system, so the terminal
//! miss `x(T; psi0) - anchor` is a smooth function of `(psi0, T)` away from
//! switch-structure changes. Directions are scanned on the sphere, the best
//! few are polished with a simplex search and finished with Gauss-Newton.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{nelder_mead, AdjointState, PieceSolution};
use crate::dynamics::{ControlBounds, ControlSchedule, ControlSegment, ControlVector, LinearPiece, StateVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingOptions {
    /// Sphere directions per state dimension in the initial scan.
    pub directions_per_dim: usize,
    /// Longest transfer considered by the scan; defaults to ten piece spans.
    pub horizon: Option<f64>,
    /// Grid steps over the horizon for switch detection and the scan.
    pub scan_steps: usize,
    /// Terminal state tolerance.
    pub tolerance: f64,
    /// Scan directions carried into local polishing.
    pub candidates: usize,
    pub max_polish_iters: usize,
    pub seed: u64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            directions_per_dim: 64,
            horizon: None,
            scan_steps: 400,
            tolerance: 1e-8,
            candidates: 8,
            max_polish_iters: 600,
            seed: 0x5eed,
        }
    }
}

struct Run {
    x: DVector<f64>,
    segments: Vec<(f64, f64, DVector<f64>)>,
    switches: Vec<f64>,
    /// Closest grid approach to the target as `(distance, time)`.
    closest: (f64, f64),
}

struct Flow<'a> {
    piece: &'a LinearPiece,
    bounds: &'a ControlBounds,
    minus_at: DMatrix<f64>,
    h: f64,
    phi_h: DMatrix<f64>,
    e_h: DMatrix<f64>,
    g_h: DMatrix<f64>,
}

impl<'a> Flow<'a> {
    fn new(piece: &'a LinearPiece, bounds: &'a ControlBounds, h: f64) -> Self {
        let minus_at = -piece.a().transpose();
        let phi_h = (&minus_at * h).exp();
        let (e_h, g_h) = transition(piece, h);
        Self {
            piece,
            bounds,
            minus_at,
            h,
            phi_h,
            e_h,
            g_h,
        }
    }

    fn sigma_after(&self, psi: &DVector<f64>, dt: f64) -> DVector<f64> {
        self.piece.b().transpose() * ((&self.minus_at * dt).exp() * psi)
    }

    fn control(&self, signs: impl Iterator<Item = f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.bounds.dim(),
            signs
                .enumerate()
                .map(|(i, s)| if s < 0.0 { self.bounds.lower()[i] } else { self.bounds.upper()[i] }),
        )
    }

    fn run(&self, x0: &DVector<f64>, psi0: &DVector<f64>, t_end: f64, target: Option<&DVector<f64>>, collect: bool) -> Run {
        let b_t = self.piece.b().transpose();
        let mut t = 0.0;
        let mut x = x0.clone();
        let mut psi = psi0.clone();
        let mut sigma = &b_t * &psi;
        let mut out = Run {
            x: x.clone(),
            segments: Vec::new(),
            switches: Vec::new(),
            closest: (target.map_or(f64::INFINITY, |g| (&x - g).norm()), 0.0),
        };
        let mut last_u: Option<DVector<f64>> = None;

        while t < t_end {
            let dt = if t_end - t < self.h * (1.0 + 1e-12) { t_end - t } else { self.h };
            let full = dt == self.h;
            let psi_next = if full { &self.phi_h * &psi } else { (&self.minus_at * dt).exp() * &psi };
            let sigma_next = &b_t * &psi_next;

            let mut events: Vec<f64> = Vec::new();
            for i in 0..sigma.len() {
                if sigma[i] * sigma_next[i] < 0.0 {
                    let (mut lo, mut hi) = (0.0, dt);
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        let s = self.sigma_after(&psi, mid)[i];
                        if s * sigma[i] > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if hi - lo <= 1e-15 * (1.0 + t) {
                            break;
                        }
                    }
                    events.push(0.5 * (lo + hi));
                }
            }
            events.sort_by(f64::total_cmp);

            let mut cuts = vec![0.0];
            cuts.extend(events.iter().copied());
            cuts.push(dt);
            for w in cuts.windows(2) {
                let (s0, s1) = (w[0], w[1]);
                if s1 <= s0 {
                    continue;
                }
                let u = if events.is_empty() {
                    self.control((0..sigma.len()).map(|i| if sigma[i] != 0.0 { sigma[i] } else { sigma_next[i] }))
                } else {
                    let mid = self.sigma_after(&psi, 0.5 * (s0 + s1));
                    self.control(mid.iter().copied())
                };
                x = if full && events.is_empty() {
                    &self.e_h * &x + &self.g_h * &u
                } else {
                    let (e, g) = transition(self.piece, s1 - s0);
                    &e * &x + &g * &u
                };
                if collect {
                    let (a, b) = (t + s0, t + s1);
                    match (&last_u, out.segments.last_mut()) {
                        (Some(prev), Some(seg)) if *prev == u => seg.1 = b,
                        _ => {
                            if last_u.is_some() {
                                out.switches.push(a);
                            }
                            out.segments.push((a, b, u.clone()));
                        }
                    }
                    last_u = Some(u);
                }
            }
            t += dt;
            psi = psi_next;
            sigma = sigma_next;
            if let Some(g) = target {
                let d = (&x - g).norm();
                if d < out.closest.0 {
                    out.closest = (d, t);
                }
            }
        }
        out.x = x;
        out
    }
}

/// `(exp(A dt), int_0^dt exp(A s) ds B)` from one augmented exponential.
fn transition(piece: &LinearPiece, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = piece.state_dim();
    let r = piece.control_dim();
    let mut m = DMatrix::zeros(n + r, n + r);
    m.view_mut((0, 0), (n, n)).copy_from(&(piece.a() * dt));
    m.view_mut((0, n), (n, r)).copy_from(&(piece.b() * dt));
    let e = m.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, r)).into_owned())
}

fn unit(v: &[f64]) -> Option<DVector<f64>> {
    let d = DVector::from_row_slice(v);
    let norm = d.norm();
    (norm > 1e-300 && norm.is_finite()).then(|| d / norm)
}

fn sphere_directions(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    if n == 2 {
        return (0..count)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / count as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(d) = unit(&v) {
            out.push(-&d);
            out.push(d);
        }
    }
    out.truncate(count);
    out
}

/// Bang-bang control generated by the costate `psi0` over `[0, duration]`,
/// together with its switch times.
pub fn extremal_schedule(
    piece: &LinearPiece,
    psi0: &DVector<f64>,
    bounds: &ControlBounds,
    duration: f64,
) -> Result<(ControlSchedule, Vec<f64>)> {
    if psi0.len() != piece.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "costate",
            expected: piece.state_dim(),
            found: psi0.len(),
        });
    }
    if psi0.iter().all(|c| *c == 0.0) {
        return Err(Error::TrivialCostate);
    }
    if !(duration > 0.0) {
        return Err(Error::InvalidInput(format!("duration must be > 0, got {duration}")));
    }
    let flow = Flow::new(piece, bounds, duration / 400.0);
    let run = flow.run(&DVector::zeros(piece.state_dim()), psi0, duration, None, true);
    Ok((to_schedule(&run)?, run.switches))
}

fn to_schedule(run: &Run) -> Result<ControlSchedule> {
    ControlSchedule::new(
        run.segments
            .iter()
            .map(|(a, b, u)| ControlSegment {
                t_start: *a,
                t_end: *b,
                u: ControlVector::from_unchecked(u.clone()),
            })
            .collect(),
    )
}

pub(super) fn shoot(
    piece: &LinearPiece,
    x_from: &StateVector,
    bounds: &ControlBounds,
    opts: &ShootingOptions,
) -> Result<PieceSolution> {
    let n = piece.state_dim();
    let horizon = opts
        .horizon
        .unwrap_or(10.0 * (piece.t_end() - piece.t_start()));
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("shooting horizon must be > 0, got {horizon}")));
    }
    let flow = Flow::new(piece, bounds, horizon / opts.scan_steps.max(1) as f64);
    let x0 = x_from.vector();
    let target = piece.anchor().vector();

    // scan
    let mut scan: Vec<(f64, f64, DVector<f64>)> = sphere_directions(n, opts.directions_per_dim * n, opts.seed)
        .into_iter()
        .map(|d| {
            let run = flow.run(x0, &d, horizon, Some(target), false);
            (run.closest.0, run.closest.1, d)
        })
        .filter(|c| c.1 > 0.0)
        .collect();
    scan.sort_by(|a, b| a.0.total_cmp(&b.0));

    let miss = |v: &[f64]| -> Option<DVector<f64>> {
        let t = v[n];
        if !(t > 0.0) {
            return None;
        }
        let d = unit(&v[..n])?;
        Some(flow.run(x0, &d, t, None, false).x - target)
    };
    let objective = |v: &[f64]| miss(v).map_or(f64::INFINITY, |m| m.norm_squared());

    let mut best_residual = f64::INFINITY;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for (_, t_guess, dir) in scan.iter().take(opts.candidates) {
        let mut start: Vec<f64> = dir.iter().copied().collect();
        start.push(*t_guess);
        let mut scale = vec![0.1; n];
        scale.push((0.05 * t_guess).max(1e-3));
        let (mut v, _) = nelder_mead::minimize(
            objective,
            &start,
            &scale,
            opts.max_polish_iters,
            (opts.tolerance * 1e-2).powi(2),
        );
        gauss_newton(&miss, &mut v, opts.tolerance);
        let res = objective(&v).sqrt();
        best_residual = best_residual.min(res);
        if res <= opts.tolerance {
            let t = v[n];
            if best.as_ref().is_none_or(|b| t < b.0) {
                best = Some((t, unit(&v[..n]).expect("converged direction is nonzero")));
            }
        }
    }
    let (time, psi0) = best.ok_or(Error::ShootingNonConvergence { best_residual })?;

    let run = flow.run(x0, &psi0, time, None, true);
    let schedule = to_schedule(&run)?;
    let (u_first, singular) = {
        let sigma = piece.b().transpose() * &psi0;
        (
            schedule.segments()[0].u.clone(),
            sigma.iter().any(|s| *s == 0.0),
        )
    };
    let hamiltonian = psi0.dot(&(piece.a() * x0 + piece.b() * u_first.vector()));
    Ok(PieceSolution {
        piece_index: 0,
        x_from: x_from.clone(),
        u_schedule: schedule,
        transfer_time: time,
        switch_times: run.switches,
        hamiltonian,
        psi0: AdjointState { psi: psi0, t: 0.0 },
        singular,
    })
}

/// Least-norm Gauss-Newton on the terminal miss with a finite-difference
/// Jacobian and step halving.
fn gauss_newton<F>(miss: &F, v: &mut Vec<f64>, tol: f64)
where
    F: Fn(&[f64]) -> Option<DVector<f64>>,
{
    let dim = v.len();
    let Some(mut f) = miss(v) else { return };
    for _ in 0..50 {
        if f.norm() <= tol * 1e-2 {
            return;
        }
        let mut jac = DMatrix::zeros(f.len(), dim);
        for j in 0..dim {
            let h = 1e-7 * v[j].abs().max(1.0);
            let mut hi = v.clone();
            let mut lo = v.clone();
            hi[j] += h;
            lo[j] -= h;
            let (Some(fh), Some(fl)) = (miss(&hi), miss(&lo)) else { return };
            jac.set_column(j, &((fh - fl) / (2.0 * h)));
        }
        let Ok(step) = jac.svd(true, true).solve(&f, 1e-12) else { return };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
            if let Some(ft) = miss(&trial) {
                if ft.norm() < f.norm() {
                    *v = trial;
                    f = ft;
                    improved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            return;
        }
    }
}
