use nalgebra::{DMatrix, DVector};

use super::*;
use crate::odeint::{integrate_fixed, TimeGrid, Trajectory};
use crate::plants::{
    double_integrator, double_integrator_gramian, double_integrator_phi, scalar_plant, LinearPlant, System,
};

fn baseline<P: System>(plant: &P, theta: &[f64], x0: &[f64], grid: &TimeGrid) -> Trajectory {
    integrate_fixed(|t, x| plant.closed_loop(t, x, theta), x0, grid).unwrap()
}

fn single(t: f64, z: &[f64], h: DMatrix<f64>) -> InterimConstraintSet {
    InterimConstraintSet::new(h, vec![(t, DVector::from_column_slice(z))]).unwrap()
}

#[test]
fn scalar_sensitivity_is_time() {
    let plant = scalar_plant(0.0, 1.0);
    let grid = TimeGrid::fixed(0.0, 1.0, 0.01);
    let base = baseline(&plant, &[0.0], &[0.0], &grid);
    let sens = propagate_m(&plant, &[0.0], &base, &grid).unwrap();
    assert_eq!(sens.m(0.0).unwrap()[(0, 0)], 0.0);
    for &t in &[0.25, 0.5, 0.733, 1.0] {
        assert!((sens.m(t).unwrap()[(0, 0)] - t).abs() < 1e-12);
    }
    let set = single(1.0, &[1.0], DMatrix::identity(1, 1));
    let res = correct_parameters(&sens, &set, &base, &[0.0], DEFAULT_PINV_RTOL).unwrap();
    assert!((res.delta_theta().unwrap()[0] - 1.0).abs() < 1e-12);
    let tr = apply_correction(&plant, &[0.0], &res, &[0.0], &grid, None).unwrap();
    assert!((tr.last_state()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn double_integrator_sensitivity_closed_form() {
    let plant = double_integrator(0);
    let grid = TimeGrid::fixed(0.0, 2.0, 0.01);
    let base = baseline(&plant, &[0.3], &[0.0, 0.0], &grid);
    let sens = propagate_m(&plant, &[0.3], &base, &grid).unwrap();
    for &t in &[0.5, 1.37, 2.0] {
        let m = sens.m(t).unwrap();
        assert!((m[(0, 0)] - t * t / 2.0).abs() < 1e-12);
        assert!((m[(1, 0)] - t).abs() < 1e-12);
        let phi = sens.phi(t, 0.5).unwrap();
        assert!((phi - double_integrator_phi(t, 0.5)).abs().max() < 1e-12);
    }
}

#[test]
fn zero_request_gives_zero_corrections() {
    let plant = double_integrator(1);
    let grid = TimeGrid::fixed(0.0, 1.0, 0.01);
    let theta = [0.2, -0.1];
    let base = baseline(&plant, &theta, &[0.0, 0.0], &grid);
    let xf = base.last_state().to_vec();
    let set = single(1.0, &xf, DMatrix::identity(2, 2));
    let sens = propagate_m(&plant, &theta, &base, &grid).unwrap();
    let res = correct_parameters(&sens, &set, &base, &[0.0, 0.0], DEFAULT_PINV_RTOL).unwrap();
    assert!(res.delta_theta().unwrap().iter().all(|v| *v == 0.0));
    let gram = propagate_un(&plant, &theta, &base, &Weighting::diagonal(&[1.0]), &grid).unwrap();
    let res = correct_control(&gram, &set, &base, &[0.0, 0.0]).unwrap();
    let sched = res.schedule().unwrap();
    assert!(sched.samples().iter().all(|(_, u)| u[0] == 0.0));
    let tr = apply_correction(&plant, &theta, &res, &[0.0, 0.0], &grid, None).unwrap();
    assert_eq!(tr.states(), base.states());
}

#[test]
fn parameter_correction_is_exact_on_linear_plant() {
    let plant = double_integrator(3);
    let grid = TimeGrid::fixed(0.0, 2.0, 0.01);
    let theta = [0.1, 0.0, -0.2, 0.05];
    let x0 = [0.0, 0.0];
    let base = baseline(&plant, &theta, &x0, &grid);
    let set = InterimConstraintSet::new(
        DMatrix::identity(2, 2),
        vec![(1.0, DVector::from_vec(vec![0.5, 0.2])), (2.0, DVector::from_vec(vec![1.0, -0.3]))],
    )
    .unwrap();
    let sens = propagate_m(&plant, &theta, &base, &grid).unwrap();
    // A perturbed start is handled through the free response.
    let x0p = [0.05, -0.02];
    let res = correct_parameters(&sens, &set, &base, &x0p, 0.0).unwrap();
    assert!(res.max_predicted_residual() < 1e-10);
    let tr = apply_correction(&plant, &theta, &res, &x0p, &grid, None).unwrap();
    for r in realised_residuals(&tr, &set).unwrap().iter().flatten() {
        assert!(r.abs() < 1e-9, "{r}");
    }
}

#[test]
fn trivial_gramians() {
    let plant = LinearPlant::lti(DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
    let grid = TimeGrid::fixed(0.0, 1.0, 0.1);
    let theta = [0.0, 0.0];
    let base = baseline(&plant, &theta, &[1.0, 1.0], &grid);
    let g = propagate_un(&plant, &theta, &base, &Weighting::diagonal(&[1.0, 1.0]), &grid).unwrap();
    for &t in &[0.0, 0.3, 0.55, 1.0] {
        assert!((g.u(t).unwrap() - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!((g.n_mat(t).unwrap() - DMatrix::identity(2, 2) * t).abs().max() < 1e-14);
    }
}

#[test]
fn double_integrator_gramian_and_min_energy_control() {
    let plant = double_integrator(0);
    let grid = TimeGrid::fixed(0.0, 1.0, 0.001);
    let theta = [0.0];
    let base = baseline(&plant, &theta, &[0.0, 0.0], &grid);
    let g = propagate_un(&plant, &theta, &base, &Weighting::diagonal(&[1.0]), &grid).unwrap();
    let set = single(1.0, &[1.0, 0.0], DMatrix::identity(2, 2));
    let psi = assemble_psi(&g, &set).unwrap();
    assert!((&psi - double_integrator_gramian(1.0)).abs().max() < 1e-12);
    let res = correct_control(&g, &set, &base, &[0.0, 0.0]).unwrap();
    let mu = match &res.correction {
        Correction::Control { multipliers, .. } => multipliers.clone(),
        _ => unreachable!(),
    };
    assert!((mu[0] - 12.0).abs() < 1e-9 && (mu[1] + 6.0).abs() < 1e-9);
    let sched = res.schedule().unwrap();
    for &t in &[0.0, 0.1234, 0.5, 0.9, 1.0] {
        assert!((sched.eval(t)[0] - (6.0 - 12.0 * t)).abs() < 1e-9);
    }
    assert_eq!(sched.eval(1.0001), vec![0.0]);
    let tr = apply_correction(&plant, &theta, &res, &[0.0, 0.0], &grid, None).unwrap();
    let xf = tr.last_state();
    assert!((xf[0] - 1.0).abs() < 1e-9 && xf[1].abs() < 1e-9);
    assert!((sched.energy() - 12.0).abs() < 1e-4);
}

/// Direct composite-Simpson quadrature of the windowed Gramian blocks for
/// the double integrator with `H = I`, `R = 1`.
fn quadrature_psi(times: &[f64]) -> DMatrix<f64> {
    let k = times.len();
    let mut psi = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        for j in 0..k {
            let upper = times[i].min(times[j]);
            let steps = 2000;
            let h = upper / steps as f64;
            let mut acc = DMatrix::zeros(2, 2);
            for s in 0..=steps {
                let tau = s as f64 * h;
                let w = if s == 0 || s == steps {
                    1.0
                } else if s % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let gi = DVector::from_vec(vec![times[i] - tau, 1.0]);
                let gj = DVector::from_vec(vec![times[j] - tau, 1.0]);
                acc += gi * gj.transpose() * (w * h / 3.0);
            }
            psi.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&acc);
        }
    }
    psi
}

#[test]
fn windowed_gramian_matches_quadrature_and_is_symmetric() {
    let plant = double_integrator(0);
    let grid = TimeGrid::fixed(0.0, 2.0, 0.01);
    let base = baseline(&plant, &[0.0], &[0.0, 0.0], &grid);
    let g = propagate_un(&plant, &[0.0], &base, &Weighting::diagonal(&[1.0]), &grid).unwrap();
    let set = InterimConstraintSet::new(
        DMatrix::identity(2, 2),
        vec![(1.0, DVector::from_vec(vec![1.0, 0.0])), (2.0, DVector::from_vec(vec![0.0, 0.0]))],
    )
    .unwrap();
    let psi = assemble_psi(&g, &set).unwrap();
    let quad = quadrature_psi(&[1.0, 2.0]);
    assert!((&psi - &quad).abs().max() < 1e-8);
    assert!((&psi - psi.transpose()).abs().max() <= 1e-10 * psi.abs().max());
    assert!(psi.clone().cholesky().is_some());
    let res = correct_control(&g, &set, &base, &[0.0, 0.0]).unwrap();
    let tr = apply_correction(&plant, &[0.0], &res, &[0.0, 0.0], &grid, None).unwrap();
    for r in realised_residuals(&tr, &set).unwrap().iter().flatten() {
        assert!(r.abs() < 1e-6, "{r}");
    }
}

#[test]
fn n_is_monotone_and_u_composes() {
    let plant = LinearPlant::lti(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
    .with_time_variation(DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]), DMatrix::zeros(2, 1));
    let grid = TimeGrid::fixed(0.0, 3.0, 0.005);
    let base = baseline(&plant, &[0.2], &[1.0, 0.0], &grid);
    let g = propagate_un(&plant, &[0.2], &base, &Weighting::diagonal(&[2.0]), &grid).unwrap();
    let mut prev = g.n_mat(0.0).unwrap();
    for k in 1..=30 {
        let n = g.n_mat(0.1 * k as f64).unwrap();
        let diff = &n - &prev;
        let eig = nalgebra::SymmetricEigen::new((&diff + diff.transpose()) * 0.5);
        assert!(eig.eigenvalues.min() >= -1e-12);
        prev = n;
    }
    let (t1, t2, t3) = (0.4, 1.7, 2.9);
    let lhs = g.phi(t3, t1).unwrap();
    let rhs = g.phi(t3, t2).unwrap() * g.phi(t2, t1).unwrap();
    assert!((&lhs - &rhs).abs().max() <= 1e-9 * lhs.abs().max());
}

#[test]
fn terminal_formula_agrees_with_windowed_form() {
    let plant = LinearPlant::lti(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 1.0, 0.5]),
    )
    .with_time_variation(
        DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.2, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -0.1]),
    );
    let grid = TimeGrid::fixed(0.0, 1.5, 0.005);
    let theta = [0.3, -0.4];
    let x0 = [0.5, 0.1];
    let base = baseline(&plant, &theta, &x0, &grid);
    let w = Weighting::constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    let zf = DVector::from_element(1, 0.7);
    let dx0 = [0.02, -0.01];
    let g = propagate_un(&plant, &theta, &base, &w, &grid).unwrap();
    let set = InterimConstraintSet::new(h.clone(), vec![(1.5, zf.clone())]).unwrap();
    let res = correct_control(&g, &set, &base, &dx0).unwrap();
    let direct = final_time_control(&plant, &theta, &base, &w, &grid, &h, &zf, &dx0).unwrap();
    let sched = res.schedule().unwrap();
    let scale = direct.iter().flat_map(|(_, u)| u.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    for (t, u) in direct {
        for (a, b) in sched.eval(t).iter().zip(&u) {
            assert!((a - b).abs() <= 1e-10 * scale, "t = {t}: {a} vs {b}");
        }
    }
}

#[test]
fn feedback_mode_meets_constraints_on_linear_plant() {
    let plant = double_integrator(1);
    let grid = TimeGrid::fixed(0.0, 2.0, 0.01);
    let theta = [0.1, -0.05];
    let base = baseline(&plant, &theta, &[0.0, 0.0], &grid);
    let set = single(2.0, &[0.4, 0.1], DMatrix::identity(2, 2));
    let sens = propagate_m(&plant, &theta, &base, &grid).unwrap();
    let x0 = [0.02, 0.0];
    let corr = Corrector::Parameter { sensitivity: &sens, rel_tol: 0.0 };
    let tr = apply_feedback(&plant, &theta, &base, corr, &set, &x0, &grid, None, 0.5).unwrap();
    assert_eq!(tr.epochs.len(), 4);
    let tr = tr.trajectory;
    assert_eq!(tr.t_end(), 2.0);
    for r in realised_residuals(&tr, &set).unwrap().iter().flatten() {
        assert!(r.abs() < 1e-9, "{r}");
    }
    let g = propagate_un(&plant, &theta, &base, &Weighting::diagonal(&[1.0]), &grid).unwrap();
    let tr = apply_feedback(&plant, &theta, &base, Corrector::Control { gramians: &g }, &set, &x0, &grid, None, 0.5)
        .unwrap()
        .trajectory;
    for r in realised_residuals(&tr, &set).unwrap().iter().flatten() {
        assert!(r.abs() < 1e-6, "{r}");
    }
}

#[test]
fn constraint_outside_horizon_is_rejected() {
    let plant = scalar_plant(0.0, 1.0);
    let grid = TimeGrid::fixed(0.0, 1.0, 0.1);
    let base = baseline(&plant, &[0.0], &[0.0], &grid);
    let sens = propagate_m(&plant, &[0.0], &base, &grid).unwrap();
    let set = single(1.5, &[1.0], DMatrix::identity(1, 1));
    assert!(matches!(correct_parameters(&sens, &set, &base, &[0.0], 0.005), Err(crate::Error::InvalidConstraints(_))));
}

#[test]
fn record_serialises() {
    let plant = scalar_plant(0.0, 1.0);
    let grid = TimeGrid::fixed(0.0, 1.0, 0.5);
    let base = baseline(&plant, &[0.0], &[0.0], &grid);
    let sens = propagate_m(&plant, &[0.0], &base, &grid).unwrap();
    let set = single(1.0, &[1.0], DMatrix::identity(1, 1));
    let res = correct_parameters(&sens, &set, &base, &[0.0], 0.005).unwrap();
    let json = serde_json::to_value(res.record()).unwrap();
    assert_eq!(json["kind"], "parameter");
    assert_eq!(json["diagnostics"]["rank"], 1);
}
