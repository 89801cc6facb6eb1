//! Deterministic ODE propagation.
//!
//! Fixed-step RK4 drives training and every matrix propagation; the adaptive
//! Dormand–Prince integrator is used for evaluation runs with a stop rule.

mod dopri5;
mod event;
mod grid;
mod rk4;
mod trajectory;

pub use dopri5::integrate_adaptive;
pub use event::{Direction, StopCondition};
pub use grid::{Step, TimeGrid};
pub use rk4::integrate_fixed;
pub use trajectory::{StopReason, TerminalEvent, Trajectory};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::{Error, Result};

    fn decay(_t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-x[0]])
    }

    #[test]
    fn constant_dynamics_stay_constant() {
        let g = TimeGrid::fixed(0.0, 3.0, 0.1);
        let tr = integrate_fixed(|_, _| Ok(vec![0.0]), &[1.0], &g).unwrap();
        assert!(tr.states().iter().all(|x| x[0] == 1.0));
        assert_eq!(tr.eval(1.234).unwrap(), vec![1.0]);
    }

    #[test]
    fn exponential_growth_to_e() {
        let g = TimeGrid::fixed(0.0, 1.0, 0.001);
        let tr = integrate_fixed(|_, x| Ok(vec![x[0]]), &[1.0], &g).unwrap();
        assert!((tr.last_state()[0] - std::f64::consts::E).abs() < 1e-10);
    }

    #[test]
    fn polynomial_dynamics_are_exact() {
        let g = TimeGrid::fixed(0.0, 2.0, 0.25);
        let tr = integrate_fixed(|_, x| Ok(vec![x[1], 0.0]), &[0.0, 1.0], &g).unwrap();
        assert_eq!(tr.last_state(), &[2.0, 1.0]);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let g = TimeGrid::fixed(0.0, 5.0, 0.01);
        let f = |t: f64, x: &[f64]| Ok(vec![x[1], -x[0].sin() + 0.1 * t.cos()]);
        let a = integrate_fixed(f, &[0.3, 0.0], &g).unwrap();
        let b = integrate_fixed(f, &[0.3, 0.0], &g).unwrap();
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn fourth_order_convergence_on_linear_system() {
        // x' = A x with A = [[0, 1], [-2, -0.3]]; reference from a very fine grid.
        let f = |_t: f64, x: &[f64]| Ok(vec![x[1], -2.0 * x[0] - 0.3 * x[1]]);
        let end =
            |dt: f64| integrate_fixed(f, &[1.0, 0.0], &TimeGrid::fixed(0.0, 2.0, dt)).unwrap().last_state().to_vec();
        let reference = end(1e-4);
        let err = |dt: f64| {
            let e = end(dt);
            ((e[0] - reference[0]).powi(2) + (e[1] - reference[1]).powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 14.0, "ratio {ratio}");
    }

    #[test]
    fn non_finite_state_is_reported() {
        let g = TimeGrid::fixed(0.0, 1.0, 0.1);
        let err = integrate_fixed(|_, x| Ok(vec![x[0] * 1e300]), &[1e10], &g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    #[test]
    fn adaptive_decay_matches_closed_form() {
        let g = TimeGrid::adaptive(0.0, 5.0, 1e-9, 1e-12);
        let tr = integrate_adaptive(decay, &[1.0], &g, &StopCondition::time_limit(10.0)).unwrap();
        assert_eq!(tr.t_end(), 5.0);
        assert!((tr.last_state()[0] - (-5.0f64).exp()).abs() < 1e-8);
        assert!(tr.event().is_none());
    }

    #[test]
    fn event_localizes_half_life() {
        let g = TimeGrid::adaptive(0.0, 5.0, 1e-9, 1e-12);
        let stop = StopCondition::crossing(|_, x| x[0] - 0.5, Direction::Falling, 5.0);
        let tr = integrate_adaptive(decay, &[1.0], &g, &stop).unwrap();
        let ev = tr.event().unwrap();
        assert_eq!(ev.reason, StopReason::Condition);
        assert!((ev.t - 2f64.ln()).abs() < 1e-6);
        assert_eq!(tr.t_end(), ev.t);
    }

    #[test]
    fn max_time_terminates_first() {
        let g = TimeGrid::adaptive(0.0, 5.0, 1e-7, 1e-9);
        let tr = integrate_adaptive(decay, &[1.0], &g, &StopCondition::time_limit(2.0)).unwrap();
        assert_eq!(tr.t_end(), 2.0);
        assert_eq!(tr.event().unwrap().reason, StopReason::MaxTime);
    }

    #[test]
    fn eval_at_knots_and_between() {
        let g = TimeGrid::fixed(0.0, 1.0, 0.1);
        let tr = integrate_fixed(|_, _| Ok(vec![1.0]), &[0.0], &g).unwrap();
        assert_eq!(tr.eval(0.0).unwrap(), vec![0.0]);
        for (t, x) in tr.times().iter().zip(tr.states()) {
            assert_eq!(&tr.eval(*t).unwrap(), x);
        }
        assert!((tr.eval(0.37).unwrap()[0] - 0.37).abs() < 1e-12);
        assert!(matches!(tr.eval(1.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn adaptive_dense_output_matches_reintegration() {
        let rtol = 1e-8;
        let g = TimeGrid::adaptive(0.0, 6.0, rtol, 1e-10);
        let f = |_t: f64, x: &[f64]| Ok(vec![x[1], -x[0]]);
        let tr = integrate_adaptive(f, &[1.0, 0.0], &g, &StopCondition::time_limit(6.0)).unwrap();
        let k = tr.len() / 3;
        let (tk, xk) = (tr.times()[k], tr.states()[k].clone());
        let tq = 0.5 * (tr.times()[k + 1] + tr.times()[k + 2]);
        let dense = tr.eval(tq).unwrap();
        let re =
            integrate_adaptive(f, &xk, &TimeGrid::adaptive(tk, tq, rtol * 1e-3, 1e-14), &StopCondition::time_limit(tq))
                .unwrap();
        for i in 0..2 {
            let scale = 1.0f64.max(dense[i].abs());
            assert!((dense[i] - re.last_state()[i]).abs() <= 10.0 * rtol * scale);
        }
    }
}
