//! Maximum-principle machinery for a single linear piece. The costate flow
//! selects a bang-bang control; the minimal-time transfer onto the piece's
//! anchor is built from it.

mod nelder_mead;
mod shooting;

pub use shooting::{extremal_schedule, ShootingOptions};

use nalgebra::DVector;

use crate::dynamics::{ControlBounds, ControlSchedule, ControlVector, LinearPiece, StateVector};
use crate::error::{Error, Result};

/// A costate value `psi` at local time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub psi: DVector<f64>,
    pub t: f64,
}

/// Optimal transfer across one piece. Times are local: the transfer starts
/// at 0 and ends at `transfer_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceSolution {
    pub piece_index: usize,
    pub x_from: StateVector,
    pub u_schedule: ControlSchedule,
    pub transfer_time: f64,
    pub switch_times: Vec<f64>,
    /// Hamiltonian along the optimal trajectory, under the unit costate.
    pub hamiltonian: f64,
    /// Unit-norm initial costate selected by the transfer.
    pub psi0: AdjointState,
    /// Set when some component of `B^T psi` vanished and the tie-break chose
    /// the upper bound.
    pub singular: bool,
}

/// `psi(t) = exp(-A^T t) psi0`, `t` measured from the costate's initial time.
pub fn adjoint_solve(piece: &LinearPiece, psi0: &DVector<f64>, elapsed: f64) -> Result<DVector<f64>> {
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
    if piece.state_dim() == 1 {
        return Ok(psi0 * (-piece.a()[(0, 0)] * elapsed).exp());
    }
    Ok((-piece.a().transpose() * elapsed).exp() * psi0)
}

/// Switching function `B^T psi`.
pub fn switching_function(piece: &LinearPiece, psi: &DVector<f64>) -> DVector<f64> {
    piece.b().transpose() * psi
}

fn extremal_with_flag(piece: &LinearPiece, psi: &DVector<f64>, bounds: &ControlBounds) -> (ControlVector, bool) {
    let sigma = switching_function(piece, psi);
    let mut singular = false;
    let u = sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if s < 0.0 {
                bounds.lower()[i]
            } else {
                singular |= s == 0.0;
                bounds.upper()[i]
            }
        })
        .collect::<Vec<_>>();
    (ControlVector::from_unchecked(DVector::from_vec(u)), singular)
}

/// Vertex of the control box maximizing `psi^T B u`. Components with a zero
/// switching value take the upper bound.
pub fn extremal_control(piece: &LinearPiece, psi: &DVector<f64>, bounds: &ControlBounds) -> Result<ControlVector> {
    if psi.len() != piece.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "costate",
            expected: piece.state_dim(),
            found: psi.len(),
        });
    }
    if bounds.dim() != piece.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control bounds",
            expected: piece.control_dim(),
            found: bounds.dim(),
        });
    }
    if psi.iter().all(|c| *c == 0.0) {
        return Err(Error::TrivialCostate);
    }
    Ok(extremal_with_flag(piece, psi, bounds).0)
}

/// `H = psi^T (A x + B u)`.
pub fn hamiltonian(piece: &LinearPiece, psi: &DVector<f64>, x: &StateVector, u: &ControlVector) -> Result<f64> {
    if psi.len() != piece.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "costate",
            expected: piece.state_dim(),
            found: psi.len(),
        });
    }
    Ok(psi.dot(piece.evaluate_rhs(x, u)?.vector()))
}

/// Minimal-time transfer from `x_from` onto the piece anchor with default
/// shooting options.
pub fn min_time_transfer(piece: &LinearPiece, x_from: &StateVector, bounds: &ControlBounds) -> Result<PieceSolution> {
    min_time_transfer_with(piece, x_from, bounds, &ShootingOptions::default())
}

pub fn min_time_transfer_with(
    piece: &LinearPiece,
    x_from: &StateVector,
    bounds: &ControlBounds,
    opts: &ShootingOptions,
) -> Result<PieceSolution> {
    piece.check_state(x_from)?;
    if bounds.dim() != piece.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control bounds",
            expected: piece.control_dim(),
            found: bounds.dim(),
        });
    }
    if x_from == piece.anchor() {
        let mut psi = DVector::zeros(piece.state_dim());
        psi[0] = 1.0;
        return Ok(PieceSolution {
            piece_index: 0,
            x_from: x_from.clone(),
            u_schedule: ControlSchedule::empty(),
            transfer_time: 0.0,
            switch_times: Vec::new(),
            hamiltonian: 0.0,
            psi0: AdjointState { psi, t: 0.0 },
            singular: false,
        });
    }
    if piece.state_dim() == 1 {
        scalar_transfer(piece, x_from, bounds)
    } else {
        shooting::shoot(piece, x_from, bounds, opts)
    }
}

/// Closed-form transfer for `n = 1`: the costate keeps its sign, so the
/// extremal control is a constant vertex and
/// `T = ln((a x_f + c) / (a x_0 + c)) / a` with `c = B u*`.
fn scalar_transfer(piece: &LinearPiece, x_from: &StateVector, bounds: &ControlBounds) -> Result<PieceSolution> {
    let a = piece.a()[(0, 0)];
    let x0 = x_from[0];
    let xf = piece.anchor()[0];
    let dir = xf - x0;

    let mut best: Option<(f64, f64, ControlVector, bool, f64)> = None;
    for sign in [1.0, -1.0] {
        let psi = DVector::from_element(1, sign);
        let (u, singular) = extremal_with_flag(piece, &psi, bounds);
        let c = (piece.b() * u.vector())[0];
        let g0 = a * x0 + c;
        let gf = a * xf + c;
        // the velocity must point at the target over the whole path
        let reaches = g0 != 0.0 && gf != 0.0 && g0.signum() == gf.signum() && g0.signum() == dir.signum();
        if !reaches {
            continue;
        }
        let time = if a == 0.0 { dir / g0 } else { (a * dir / g0).ln_1p() / a };
        if !(time > 0.0 && time.is_finite()) {
            continue;
        }
        if best.as_ref().is_none_or(|b| time < b.0) {
            best = Some((time, sign, u, singular, sign * g0));
        }
    }
    let (time, sign, u, singular, h) = best.ok_or_else(|| {
        Error::InfeasibleTransfer(format!(
            "no vertex control moves x = {x0} to {xf} under dx/dt = {a} x + B u"
        ))
    })?;
    Ok(PieceSolution {
        piece_index: 0,
        x_from: x_from.clone(),
        u_schedule: ControlSchedule::constant(u, 0.0, time)?,
        transfer_time: time,
        switch_times: Vec::new(),
        hamiltonian: h,
        psi0: AdjointState {
            psi: DVector::from_element(1, sign),
            t: 0.0,
        },
        singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_piece;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dvector, DMatrix};
    use proptest::prelude::*;

    fn unit() -> ControlBounds {
        ControlBounds::unit(1)
    }

    /// RK4 on `dpsi/dt = -A^T psi`, independent of the matrix exponential.
    fn adjoint_rk4(piece: &LinearPiece, psi0: &DVector<f64>, t: f64, steps: usize) -> DVector<f64> {
        let at = -piece.a().transpose();
        let h = t / steps as f64;
        let mut p = psi0.clone();
        for _ in 0..steps {
            let k1 = &at * &p;
            let k2 = &at * (&p + &k1 * (0.5 * h));
            let k3 = &at * (&p + &k2 * (0.5 * h));
            let k4 = &at * (&p + &k3 * h);
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        p
    }

    #[test]
    fn scalar_adjoint_examples() {
        let p = LinearPiece::scalar(0.5, 0.5, 0.0, 1.0, 0.5).unwrap();
        let psi = adjoint_solve(&p, &dvector![1.0], 2.0).unwrap();
        assert_abs_diff_eq!(psi[0], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(psi[0], 0.3679, epsilon = 1e-4);

        let p = LinearPiece::scalar(0.0, 1.0, 0.0, 1.0, 0.5).unwrap();
        assert_eq!(adjoint_solve(&p, &dvector![0.7], 5.0).unwrap()[0], 0.7);

        let p = LinearPiece::scalar(-0.5, 1.0, 0.0, 1.0, 0.5).unwrap();
        for t in [0.0, 1.0, 10.0, 40.0] {
            let v = adjoint_solve(&p, &dvector![1.0], t).unwrap()[0];
            assert!(v > 0.0);
            assert_abs_diff_eq!(v, (0.5 * t).exp(), epsilon = 1e-12 * (0.5 * t).exp());
        }
        assert_eq!(adjoint_solve(&p, &dvector![0.0], 1.0), Err(Error::TrivialCostate));
    }

    #[test]
    fn matrix_adjoint_matches_rk4() {
        let piece = LinearPiece::new(
            DMatrix::from_row_slice(3, 3, &[0.1, 1.0, 0.0, -0.4, 0.2, 0.3, 0.0, -1.0, -0.5]),
            DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.5]),
            0.0,
            1.0,
            StateVector::zeros(3),
        )
        .unwrap();
        let psi0 = dvector![0.3, -1.0, 0.7];
        let exact = adjoint_solve(&piece, &psi0, 1.7).unwrap();
        let rk = adjoint_rk4(&piece, &psi0, 1.7, 4000);
        assert!((exact - rk).amax() < 1e-10);
    }

    #[test]
    fn extremal_control_examples() {
        let p = LinearPiece::scalar(0.5, 0.5, 0.0, 1.0, 0.5).unwrap();
        assert_eq!(extremal_control(&p, &dvector![1.0], &unit()).unwrap()[0], 1.0);
        let p = LinearPiece::scalar(1.5, -0.5, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(extremal_control(&p, &dvector![1.0], &unit()).unwrap()[0], -1.0);
        let p = LinearPiece::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            0.0,
            1.0,
            StateVector::zeros(2),
        )
        .unwrap();
        let bounds = ControlBounds::new(vec![-2.0, 0.0], vec![3.0, 1.0]).unwrap();
        let u = extremal_control(&p, &dvector![1.0, 1.0], &bounds).unwrap();
        assert_eq!(u.as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn hamiltonian_examples() {
        let p = LinearPiece::scalar(0.5, 0.5, 0.0, 1.0, 0.5).unwrap();
        let x = StateVector::scalar(0.0);
        let u = ControlVector::scalar(1.0);
        assert_abs_diff_eq!(hamiltonian(&p, &dvector![1.0], &x, &u).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(hamiltonian(&p, &dvector![2.0], &x, &u).unwrap(), 1.0, epsilon = 1e-15);

        let p = LinearPiece::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            0.0,
            1.0,
            StateVector::zeros(2),
        )
        .unwrap();
        let x = StateVector::new(vec![1.0, 2.0]).unwrap();
        let h = hamiltonian(&p, &dvector![2.0, -1.0], &x, &ControlVector::scalar(0.0)).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn example_one_pieces() {
        let p = LinearPiece::scalar(0.5, 0.5, 0.0, 1.0, 0.5).unwrap();
        let s = min_time_transfer(&p, &StateVector::scalar(0.0), &unit()).unwrap();
        assert_eq!(s.u_schedule.segments()[0].u[0], 1.0);
        assert_abs_diff_eq!(s.transfer_time, 2.0 * 1.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.transfer_time, 0.8109, epsilon = 1e-4);

        let p = LinearPiece::scalar(1.5, -0.5, 1.0, 2.0, 1.0).unwrap();
        let s = min_time_transfer(&p, &StateVector::scalar(0.5), &unit()).unwrap();
        assert_eq!(s.u_schedule.segments()[0].u[0], -1.0);
        assert_abs_diff_eq!(s.transfer_time, (2.0 / 3.0) * (4.0f64 / 2.5).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.transfer_time, 0.3133, epsilon = 1e-4);

        let p = LinearPiece::scalar(1.75, 0.25, 1.0, 2.0, 1.0).unwrap();
        let s = min_time_transfer(&p, &StateVector::scalar(0.75), &unit()).unwrap();
        assert_eq!(s.u_schedule.segments()[0].u[0], 1.0);
        assert_abs_diff_eq!(s.transfer_time, (4.0 / 7.0) * (8.0f64 / 6.25).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.transfer_time, 0.1411, epsilon = 1e-4);
    }

    #[test]
    fn zero_time_when_already_at_anchor() {
        let p = LinearPiece::scalar(1.0, 1.0, 0.0, 1.0, 0.3).unwrap();
        let s = min_time_transfer(&p, &StateVector::scalar(0.3), &unit()).unwrap();
        assert_eq!(s.transfer_time, 0.0);
        assert!(s.u_schedule.is_empty());
    }

    #[test]
    fn infeasible_scalar_transfer() {
        // dx/dt = x + 0.1 u with x = 1 moving away from target 0 whatever u is
        let p = LinearPiece::scalar(1.0, 0.1, 0.0, 1.0, 0.0).unwrap();
        let err = min_time_transfer(&p, &StateVector::scalar(1.0), &unit()).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn closed_form_matches_forward_simulation() {
        let p = LinearPiece::scalar(1.5, -0.5, 1.0, 2.0, 1.0).unwrap();
        let x0 = StateVector::scalar(0.5);
        let s = min_time_transfer(&p, &x0, &unit()).unwrap();
        let u = s.u_schedule.segments()[0].u.clone();
        let long = ControlSchedule::constant(u, 0.0, 2.0 * s.transfer_time).unwrap();
        let traj = integrate_piece(&p, &x0, &long, 1e-5).unwrap();
        let hit = traj.times.iter().zip(&traj.states).find(|(_, x)| x[0] >= 1.0).unwrap().0;
        assert!((hit - s.transfer_time).abs() < 1e-4);
    }

    fn random_scalar_case() -> impl Strategy<Value = (f64, f64, f64, f64, f64, f64)> {
        (
            -2.0..2.0f64,
            prop_oneof![-2.0..-0.05f64, 0.05..2.0f64],
            -1.0..1.0f64,
            -1.0..1.0f64,
            -2.0..-0.1f64,
            0.1..2.0f64,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn extremal_control_maximizes(psi in prop::collection::vec(-1.0..1.0f64, 2), bmat in prop::collection::vec(-2.0..2.0f64, 6), samples in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 50)) {
            prop_assume!(psi.iter().any(|c| *c != 0.0));
            let p = LinearPiece::new(DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 3, &bmat), 0.0, 1.0, StateVector::zeros(2)).unwrap();
            let bounds = ControlBounds::new(vec![-1.0, 0.0, -3.0], vec![2.0, 1.0, -1.0]).unwrap();
            let psi = DVector::from_vec(psi);
            let u = extremal_control(&p, &psi, &bounds).unwrap();
            prop_assert!(bounds.is_vertex(&u));
            let val = |u: &DVector<f64>| psi.dot(&(p.b() * u));
            let best = val(u.vector());
            for v in bounds.vertices() {
                prop_assert!(val(v.vector()) <= best + 1e-12);
            }
            for w in samples {
                let u = DVector::from_iterator(3, (0..3).map(|i| bounds.lower()[i] + w[i] * (bounds.upper()[i] - bounds.lower()[i])));
                prop_assert!(val(&u) <= best + 1e-12);
            }
        }

        #[test]
        fn scalar_solutions_are_bang_bang_with_constant_hamiltonian((a, b, x0, xf, lo, hi) in random_scalar_case()) {
            prop_assume!((x0 - xf).abs() > 1e-3);
            let p = LinearPiece::scalar(a, b, 0.0, 1.0, xf).unwrap();
            let bounds = ControlBounds::scalar(lo, hi).unwrap();
            let x_from = StateVector::scalar(x0);
            let Ok(s) = min_time_transfer(&p, &x_from, &bounds) else { return Ok(()); };
            prop_assert!(s.transfer_time > 0.0);
            prop_assert!(s.switch_times.is_empty());
            prop_assert_eq!(s.u_schedule.segments().len(), 1);
            prop_assert!(s.u_schedule.segments().iter().all(|seg| bounds.is_vertex(&seg.u)));
            let traj = integrate_piece(&p, &x_from, &s.u_schedule, s.transfer_time / 2000.0).unwrap();
            let (mut hmin, mut hmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for (i, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
                let psi = adjoint_solve(&p, &s.psi0.psi, *t).unwrap();
                let h = hamiltonian(&p, &psi, x, &traj.controls[i]).unwrap();
                hmin = hmin.min(h);
                hmax = hmax.max(h);
            }
            prop_assert!((hmax - hmin) <= 1e-6 * s.hamiltonian.abs().max(1e-12), "H range [{hmin}, {hmax}]");
            prop_assert!((traj.final_state()[0] - xf).abs() < 1e-6 * (1.0 + xf.abs()));
        }

        #[test]
        fn costate_scaling_preserves_schedule(scale in 0.01..100.0f64, psi in prop::collection::vec(-1.0..1.0f64, 2)) {
            prop_assume!(psi.iter().any(|c| c.abs() > 1e-3));
            let p = LinearPiece::new(
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
                0.0, 1.0, StateVector::zeros(2),
            ).unwrap();
            let psi = DVector::from_vec(psi);
            let (s1, sw1) = extremal_schedule(&p, &psi, &ControlBounds::unit(1), 3.0).unwrap();
            let (s2, sw2) = extremal_schedule(&p, &(&psi * scale), &ControlBounds::unit(1), 3.0).unwrap();
            prop_assert_eq!(s1.segments().len(), s2.segments().len());
            for (a, b) in s1.segments().iter().zip(s2.segments()) {
                prop_assert_eq!(&a.u, &b.u);
                prop_assert!((a.t_end - b.t_end).abs() < 1e-9);
            }
            prop_assert_eq!(sw1.len(), sw2.len());
        }
    }
}
