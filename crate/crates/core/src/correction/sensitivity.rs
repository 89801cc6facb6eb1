use nalgebra::{DMatrix, DVector};

use super::constraints::InterimConstraintSet;
use super::linearise::{Form, JacobianTable};
use super::pinv::pinv_solve;
use super::{Correction, CorrectionResult, Diagnostics};
use crate::error::{Error, Result};
use crate::odeint::{integrate_fixed, TimeGrid, Trajectory};
use crate::plants::System;

/// `M(t) = ∂x(t)/∂θ` along the baseline, together with the closed-loop
/// fundamental matrix `U_θ(t) = Φ_θ(t, t₀)`.
///
/// Both are propagated as one flattened column-major state `[U_θ, M]` with
/// `U̇_θ = A_θ U_θ`, `Ṁ = A_θ M + B_θ`, `U_θ(t₀) = I`, `M(t₀) = 0`.
#[derive(Clone, Debug)]
pub struct SensitivityMatrix {
    n: usize,
    l: usize,
    traj: Trajectory,
}

impl SensitivityMatrix {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn param_dim(&self) -> usize {
        self.l
    }

    pub fn t_start(&self) -> f64 {
        self.traj.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn m(&self, t: f64) -> Result<DMatrix<f64>> {
        let y = self.traj.eval(t)?;
        Ok(DMatrix::from_column_slice(self.n, self.l, &y[self.n * self.n..]))
    }

    /// `Φ_θ(t, t₀)`.
    pub fn u(&self, t: f64) -> Result<DMatrix<f64>> {
        let y = self.traj.eval(t)?;
        Ok(DMatrix::from_column_slice(self.n, self.n, &y[..self.n * self.n]))
    }

    /// `Φ_θ(t₂, t₁) = U_θ(t₂) U_θ(t₁)⁻¹`.
    pub fn phi(&self, t2: f64, t1: f64) -> Result<DMatrix<f64>> {
        let u1 = self.u(t1)?;
        let u2 = self.u(t2)?;
        solve_right(&u2, &u1, t1)
    }

    /// Sensitivity to a parameter change applied from `tc` on:
    /// `M(t) - Φ_θ(t, tc) M(tc)`.
    pub fn m_from(&self, t: f64, tc: f64) -> Result<DMatrix<f64>> {
        if tc == self.t_start() {
            return self.m(t);
        }
        Ok(self.m(t)? - self.phi(t, tc)? * self.m(tc)?)
    }
}

/// `X = A B⁻¹` via an LU solve of `Bᵀ Xᵀ = Aᵀ`.
pub(crate) fn solve_right(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let xt = b.transpose().lu().solve(&a.transpose()).ok_or(Error::SingularU { t, condition: f64::INFINITY })?;
    Ok(xt.transpose())
}

/// Propagates the sensitivity matrix on a fixed grid, with Jacobians taken
/// along `baseline` (dense output between knots) at the nominal parameters.
pub fn propagate_m<P: System>(
    plant: &P,
    theta_star: &[f64],
    baseline: &Trajectory,
    grid: &TimeGrid,
) -> Result<SensitivityMatrix> {
    let (n, l) = (plant.state_dim(), plant.param_dim());
    if theta_star.len() != l {
        return Err(Error::LengthMismatch { expected: l, got: theta_star.len() });
    }
    let table = JacobianTable::build(plant, theta_star, baseline, grid, Form::Parameter)?;
    let mut y0 = vec![0.0; n * n + n * l];
    for i in 0..n {
        y0[i * n + i] = 1.0;
    }
    let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let s = table.slot(t)?;
        let (a, b) = (&table.a[s], &table.b[s]);
        let u = DMatrix::from_column_slice(n, n, &y[..n * n]);
        let m = DMatrix::from_column_slice(n, l, &y[n * n..]);
        let du = a * u;
        let dm = a * m + b;
        let mut out = Vec::with_capacity(y.len());
        out.extend_from_slice(du.as_slice());
        out.extend_from_slice(dm.as_slice());
        Ok(out)
    };
    let traj = integrate_fixed(rhs, &y0, grid).map_err(|e| match e {
        Error::NonFiniteState { t } => Error::NonFinite(format!("sensitivity propagation at t = {t}")),
        other => other,
    })?;
    Ok(SensitivityMatrix { n, l, traj })
}

/// Minimum-norm parameter increment meeting the stacked linearised
/// constraints `H [M(t₁); …; M(t_N)] θ̃ = Z - F`, where `Zᵢ = zᵢ - H x*(tᵢ)` and
/// `Fᵢ = H Φ_θ(tᵢ, t₀) x̃₀`.
pub fn correct_parameters(
    sens: &SensitivityMatrix,
    constraints: &InterimConstraintSet,
    baseline: &Trajectory,
    x_tilde0: &[f64],
    rel_tol: f64,
) -> Result<CorrectionResult> {
    correct_parameters_from(sens, constraints, baseline, sens.t_start(), x_tilde0, rel_tol)
}

/// As [`correct_parameters`] but re-initialised at `tc` with state deviation
/// `x̃(tc)`. Only constraints after `tc` should be passed.
pub(crate) fn correct_parameters_from(
    sens: &SensitivityMatrix,
    constraints: &InterimConstraintSet,
    baseline: &Trajectory,
    tc: f64,
    x_tilde: &[f64],
    rel_tol: f64,
) -> Result<CorrectionResult> {
    let n = sens.state_dim();
    if constraints.state_dim() != n {
        return Err(Error::InvalidConstraints(format!("H has {} columns, state has {n}", constraints.state_dim())));
    }
    if x_tilde.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: x_tilde.len() });
    }
    constraints.check_span(tc, sens.t_end())?;
    let h = constraints.h();
    let p = constraints.output_dim();
    let rows = p * constraints.len();
    let mut l = DMatrix::zeros(rows, sens.param_dim());
    let mut rhs = DVector::zeros(rows);
    let xt = DVector::from_column_slice(x_tilde);
    for (i, (ti, zi)) in constraints.targets().iter().enumerate() {
        let block = h * sens.m_from(*ti, tc)?;
        l.view_mut((i * p, 0), (p, sens.param_dim())).copy_from(&block);
        let z_star = h * DVector::from_vec(baseline.eval(*ti)?);
        let free = h * (sens.phi(*ti, tc)? * &xt);
        rhs.rows_mut(i * p, p).copy_from(&(zi - z_star - free));
    }
    let sol = pinv_solve(&l, &rhs, rel_tol)?;
    let resid = &l * &sol.x - &rhs;
    let predicted_residuals = resid.as_slice().chunks(p).map(|c| c.to_vec()).collect();
    let diagnostics = Diagnostics {
        rank: Some(sol.rank),
        condition: sol.condition(),
        singular_values: sol.singular_values.clone(),
        singular_values_retained: sol.retained.clone(),
    };
    Ok(CorrectionResult {
        correction: Correction::Parameter { delta_theta: sol.x.as_slice().to_vec() },
        predicted_residuals,
        diagnostics,
    })
}
