//! Integral-cost problems as time-optimal ones: append the running cost as
//! an extra state `x0` with `dx0/dt = f0(x, u)`, and measure time in
//! `d tau = f0(x, u) dt` so that the cost becomes `tau_1 - tau_0`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::dynamics::{integrate, ControlSchedule, ControlSegment, StateVector, Trajectory};
use crate::error::{Error, Result};

type CostFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;

/// Running cost `f0(x, u)`.
#[derive(Clone)]
pub struct CostIntegrand {
    f: Arc<CostFn>,
}

impl CostIntegrand {
    pub fn new(f: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    /// `f0 = 1`: the cost is the elapsed time.
    pub fn elapsed_time() -> Self {
        Self::new(|_, _| 1.0)
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.f)(x, u)
    }
}

impl std::fmt::Debug for CostIntegrand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CostIntegrand(..)")
    }
}

/// The system extended by the cost accumulator; state layout `(x0, x)`.
pub struct AugmentedSystem<F> {
    system: F,
    cost: CostIntegrand,
}

pub fn augment_state<F>(system: F, cost: CostIntegrand) -> AugmentedSystem<F>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    AugmentedSystem { system, cost }
}

impl<F> AugmentedSystem<F>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    pub fn rhs(&self, t: f64, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let x = z.rows(1, z.len() - 1).into_owned();
        let dx = (self.system)(t, &x, u);
        let mut out = DVector::zeros(z.len());
        out[0] = self.cost.eval(&x, u);
        out.rows_mut(1, dx.len()).copy_from(&dx);
        out
    }

    /// `(0, x)`.
    pub fn initial_state(&self, x: &StateVector) -> StateVector {
        let mut z = DVector::zeros(x.dim() + 1);
        z.rows_mut(1, x.dim()).copy_from(x.vector());
        StateVector::from_unchecked(z)
    }

    /// Accumulated cost stored in an augmented state.
    pub fn cost(z: &StateVector) -> f64 {
        z[0]
    }

    /// Original state part of an augmented state.
    pub fn plant_state(z: &StateVector) -> StateVector {
        StateVector::from_unchecked(z.vector().rows(1, z.dim() - 1).into_owned())
    }

    pub fn integrate(&self, x0: &StateVector, schedule: &ControlSchedule, step: f64) -> Result<Trajectory> {
        integrate(|t, z, u| self.rhs(t, z, u), &self.initial_state(x0), schedule, step)
    }
}

/// A trajectory indexed by the rescaled time `tau`, with `tau(t0) = t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledTrajectory {
    pub tau: Vec<f64>,
    pub trajectory: Trajectory,
}

impl RescaledTrajectory {
    /// `tau_1 - tau_0`, the integral cost along the trajectory.
    pub fn total(&self) -> f64 {
        self.tau.last().unwrap() - self.tau[0]
    }

    pub fn tau_at(&self, t: f64) -> Result<f64> {
        interpolate_monotone(&self.trajectory.times, &self.tau, t)
    }

    pub fn time_at(&self, tau: f64) -> Result<f64> {
        interpolate_monotone(&self.tau, &self.trajectory.times, tau)
    }
}

fn interpolate_monotone(xs: &[f64], ys: &[f64], at: f64) -> Result<f64> {
    let (lo, hi) = (xs[0], *xs.last().unwrap());
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    if at < lo - tol || at > hi + tol {
        return Err(Error::Domain {
            value: at,
            lower: lo,
            upper: hi,
        });
    }
    let at = at.clamp(lo, hi);
    let j = xs.partition_point(|v| *v < at);
    if j == 0 {
        return Ok(ys[0]);
    }
    if xs[j.min(xs.len() - 1)] == at {
        return Ok(ys[j.min(xs.len() - 1)]);
    }
    let w = (at - xs[j - 1]) / (xs[j] - xs[j - 1]);
    Ok(ys[j - 1] + w * (ys[j] - ys[j - 1]))
}

/// Cumulative `tau(t) = t0 + int f0 dt` over the samples by the trapezoid
/// rule, using the control in force on each step at both of its ends.
pub fn rescale_time(traj: &Trajectory, f0: &CostIntegrand) -> Result<RescaledTrajectory> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("cannot rescale an empty trajectory".into()));
    }
    let check = |index: usize, value: f64| -> Result<f64> {
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::RescaleDomain {
                index,
                time: traj.times[index],
                value,
            })
        }
    };
    let mut tau = Vec::with_capacity(traj.len());
    tau.push(traj.times[0]);
    check(0, f0.eval(traj.states[0].vector(), traj.controls[0].vector()))?;
    for i in 0..traj.len() - 1 {
        let u = traj.controls[i].vector();
        let left = check(i, f0.eval(traj.states[i].vector(), u))?;
        let right = check(i + 1, f0.eval(traj.states[i + 1].vector(), u))?;
        let dt = traj.times[i + 1] - traj.times[i];
        tau.push(tau[i] + 0.5 * dt * (left + right));
    }
    Ok(RescaledTrajectory {
        tau,
        trajectory: traj.clone(),
    })
}

fn remap(schedule: &ControlSchedule, map: impl Fn(f64) -> Result<f64>) -> Result<ControlSchedule> {
    ControlSchedule::new(
        schedule
            .segments()
            .iter()
            .map(|s| {
                Ok(ControlSegment {
                    t_start: map(s.t_start)?,
                    t_end: map(s.t_end)?,
                    u: s.u.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Expresses a schedule given in `t` on the rescaled clock.
pub fn map_schedule_forward(schedule: &ControlSchedule, rescaled: &RescaledTrajectory) -> Result<ControlSchedule> {
    remap(schedule, |t| rescaled.tau_at(t))
}

/// Maps a schedule expressed in `tau` back onto original time.
pub fn map_solution_back(schedule: &ControlSchedule, rescaled: &RescaledTrajectory) -> Result<ControlSchedule> {
    remap(schedule, |tau| rescaled.time_at(tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlVector;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use std::f64::consts::FRAC_PI_4;

    fn tan_system(_: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        dvector![x[0] * x[0] + u[0] * u[0]]
    }

    fn ones(t1: f64) -> ControlSchedule {
        ControlSchedule::constant(ControlVector::scalar(1.0), 0.0, t1).unwrap()
    }

    #[test]
    fn unit_cost_accumulates_elapsed_time() {
        let aug = augment_state(tan_system, CostIntegrand::elapsed_time());
        let traj = aug.integrate(&StateVector::scalar(0.0), &ones(0.6), 1e-3).unwrap();
        assert_abs_diff_eq!(AugmentedSystem::<fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>>::cost(traj.final_state()), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn control_energy_cost() {
        let zero = |_: f64, x: &DVector<f64>, _: &DVector<f64>| DVector::zeros(x.len());
        let aug = augment_state(zero, CostIntegrand::new(|_, u| u[0] * u[0]));
        let traj = aug.integrate(&StateVector::scalar(3.0), &ones(2.0), 0.1).unwrap();
        assert_abs_diff_eq!(traj.final_state()[0], 2.0, epsilon = 1e-12);
        assert_eq!(traj.final_state()[1], 3.0);
    }

    #[test]
    fn tangent_cost_is_one() {
        let aug = augment_state(tan_system, CostIntegrand::new(|x, _| x[0] * x[0] + 1.0));
        let traj = aug.integrate(&StateVector::scalar(0.0), &ones(FRAC_PI_4), 1e-4).unwrap();
        assert_abs_diff_eq!(traj.final_state()[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn rescaling_examples() {
        let traj = integrate(tan_system, &StateVector::scalar(0.0), &ones(0.5), 1e-3).unwrap();
        let id = rescale_time(&traj, &CostIntegrand::elapsed_time()).unwrap();
        for (t, tau) in traj.times.iter().zip(&id.tau) {
            assert_abs_diff_eq!(*t, *tau, epsilon = 1e-12);
        }
        let c = 2.5;
        let stretched = rescale_time(&traj, &CostIntegrand::new(move |_, _| c)).unwrap();
        for (t, tau) in traj.times.iter().zip(&stretched.tau) {
            assert_abs_diff_eq!(*tau, c * t, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(stretched.total(), c * 0.5, epsilon = 1e-12);

        let traj = integrate(tan_system, &StateVector::scalar(0.0), &ones(FRAC_PI_4), 1e-4).unwrap();
        let r = rescale_time(&traj, &CostIntegrand::new(|x, _| x[0] * x[0] + 1.0)).unwrap();
        assert_abs_diff_eq!(r.total(), 1.0, epsilon = 1e-5);
        assert!(r.tau.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn nonpositive_integrand_is_rejected() {
        let traj = integrate(tan_system, &StateVector::scalar(0.0), &ones(0.5), 0.1).unwrap();
        let err = rescale_time(&traj, &CostIntegrand::new(|x, _| x[0] - 0.2)).unwrap_err();
        assert!(matches!(err, Error::RescaleDomain { index: 0, .. }));
    }

    #[test]
    fn map_back_examples() {
        let traj = integrate(tan_system, &StateVector::scalar(0.0), &ones(1.0), 1e-3).unwrap();
        let sched = ControlSchedule::new(vec![
            ControlSegment { t_start: 0.0, t_end: 0.4, u: ControlVector::scalar(1.0) },
            ControlSegment { t_start: 0.4, t_end: 0.9, u: ControlVector::scalar(-1.0) },
        ])
        .unwrap();
        let id = rescale_time(&traj, &CostIntegrand::elapsed_time()).unwrap();
        let back = map_solution_back(&sched, &id).unwrap();
        for (a, b) in back.segments().iter().zip(sched.segments()) {
            assert_abs_diff_eq!(a.t_start, b.t_start, epsilon = 1e-12);
            assert_abs_diff_eq!(a.t_end, b.t_end, epsilon = 1e-12);
        }
        let c = 4.0;
        let stretched = rescale_time(&traj, &CostIntegrand::new(move |_, _| c)).unwrap();
        let back = map_solution_back(&sched, &stretched).unwrap();
        for (a, b) in back.segments().iter().zip(sched.segments()) {
            assert_abs_diff_eq!(a.t_end, b.t_end / c, epsilon = 1e-12);
        }
        let outside = ControlSchedule::constant(ControlVector::scalar(1.0), 0.0, 5.0).unwrap();
        assert!(matches!(map_solution_back(&outside, &stretched), Err(Error::Domain { .. })));
    }

    #[test]
    fn tangent_round_trip() {
        let sched = ControlSchedule::new(vec![
            ControlSegment { t_start: 0.0, t_end: 0.3, u: ControlVector::scalar(1.0) },
            ControlSegment { t_start: 0.3, t_end: FRAC_PI_4, u: ControlVector::scalar(1.0) },
        ])
        .unwrap();
        let traj = integrate(tan_system, &StateVector::scalar(0.0), &sched, 1e-4).unwrap();
        let r = rescale_time(&traj, &CostIntegrand::new(|x, _| x[0] * x[0] + 1.0)).unwrap();
        let forward = map_schedule_forward(&sched, &r).unwrap();
        // tau(t) = tan t along this trajectory
        assert_abs_diff_eq!(forward.segments()[0].t_end, 0.3f64.tan(), epsilon = 1e-6);
        let back = map_solution_back(&forward, &r).unwrap();
        for (a, b) in back.segments().iter().zip(sched.segments()) {
            assert_abs_diff_eq!(a.t_start, b.t_start, epsilon = 1e-6);
            assert_abs_diff_eq!(a.t_end, b.t_end, epsilon = 1e-6);
        }
    }
}
