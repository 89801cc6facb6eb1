use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::constraints::InterimConstraintSet;
use super::linearise::{Form, JacobianTable};
use super::schedule::ControlSchedule;
use super::sensitivity::solve_right;
use super::{Correction, CorrectionResult, Diagnostics};
use crate::error::{Error, Result};
use crate::odeint::{integrate_fixed, TimeGrid, Trajectory};
use crate::plants::System;

/// Above this condition number `U(t)` is treated as singular.
pub const MAX_U_CONDITION: f64 = 1e12;
/// Above this condition number `Ψ̄` is rejected.
pub const MAX_PSI_CONDITION: f64 = 1e10;

/// Control weighting `R(t)`, symmetric positive definite.
#[derive(Clone)]
pub struct Weighting(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>);

impl Weighting {
    pub fn constant(r: DMatrix<f64>) -> Self {
        Self(Arc::new(move |_| r.clone()))
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self::constant(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn from_fn<F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static>(f: F) -> Self {
        Self(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        (self.0)(t)
    }

    fn inverse_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let r = self.at(t);
        let chol = r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config(format!("weighting is not positive definite at t = {t}")))?;
        Ok(chol.inverse())
    }
}

impl std::fmt::Debug for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Weighting(..)")
    }
}

/// Fundamental matrix `U̇ = A_u U` and `Ṅ = U⁻¹ B_u R⁻¹ B_uᵀ U⁻ᵀ` along the
/// baseline, plus the node tables needed to build `ũ`.
#[derive(Clone, Debug)]
pub struct GramianBundle {
    n: usize,
    m: usize,
    traj: Trajectory,
    nodes: Vec<f64>,
    b_nodes: Vec<DMatrix<f64>>,
    r_inv_nodes: Vec<DMatrix<f64>>,
}

fn condition(u: &DMatrix<f64>) -> f64 {
    let s = u.singular_values();
    let (hi, lo) = (s.max(), s.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

pub fn propagate_un<P: System>(
    plant: &P,
    theta_star: &[f64],
    baseline: &Trajectory,
    weighting: &Weighting,
    grid: &TimeGrid,
) -> Result<GramianBundle> {
    let (n, m) = (plant.state_dim(), plant.control_dim());
    if theta_star.len() != plant.param_dim() {
        return Err(Error::LengthMismatch { expected: plant.param_dim(), got: theta_star.len() });
    }
    let table = JacobianTable::build(plant, theta_star, baseline, grid, Form::Control)?;
    let r_inv_stage: Vec<DMatrix<f64>> =
        super::linearise::stage_times(&table.nodes).iter().map(|&t| weighting.inverse_at(t)).collect::<Result<_>>()?;
    let mut y0 = vec![0.0; 2 * n * n];
    for i in 0..n {
        y0[i * n + i] = 1.0;
    }
    let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let s = table.slot(t)?;
        let u = DMatrix::from_column_slice(n, n, &y[..n * n]);
        let cond = condition(&u);
        if !(cond <= MAX_U_CONDITION) {
            return Err(Error::SingularU { t, condition: cond });
        }
        let du = &table.a[s] * &u;
        let yb = u.lu().solve(&table.b[s]).ok_or(Error::SingularU { t, condition: cond })?;
        let dn = &yb * &r_inv_stage[s] * yb.transpose();
        let mut out = Vec::with_capacity(y.len());
        out.extend_from_slice(du.as_slice());
        out.extend_from_slice(dn.as_slice());
        Ok(out)
    };
    let traj = integrate_fixed(rhs, &y0, grid).map_err(|e| match e {
        Error::NonFiniteState { t } => Error::NonFinite(format!("Gramian propagation at t = {t}")),
        other => other,
    })?;
    let nodes = table.nodes.clone();
    let b_nodes = (0..nodes.len()).map(|k| table.b[JacobianTable::node_slot(k)].clone()).collect();
    let r_inv_nodes = (0..nodes.len()).map(|k| r_inv_stage[JacobianTable::node_slot(k)].clone()).collect();
    Ok(GramianBundle { n, m, traj, nodes, b_nodes, r_inv_nodes })
}

impl GramianBundle {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn t_start(&self) -> f64 {
        self.traj.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn u(&self, t: f64) -> Result<DMatrix<f64>> {
        let y = self.traj.eval(t)?;
        Ok(DMatrix::from_column_slice(self.n, self.n, &y[..self.n * self.n]))
    }

    pub fn n_mat(&self, t: f64) -> Result<DMatrix<f64>> {
        let y = self.traj.eval(t)?;
        Ok(DMatrix::from_column_slice(self.n, self.n, &y[self.n * self.n..]))
    }

    /// `Φ(t₂, t₁) = U(t₂) U(t₁)⁻¹` by an LU solve.
    pub fn phi(&self, t2: f64, t1: f64) -> Result<DMatrix<f64>> {
        solve_right(&self.u(t2)?, &self.u(t1)?, t1)
    }

    /// Stored baseline `B_u` at node `k`.
    pub fn input_matrix_at_node(&self, k: usize) -> &DMatrix<f64> {
        &self.b_nodes[k]
    }
}

/// Block matrix `Ψ̄` with `Ψᵢⱼ = H U(tᵢ) N(min(tᵢ, tⱼ)) Uᵀ(tⱼ) Hᵀ`.
pub fn assemble_psi(bundle: &GramianBundle, constraints: &InterimConstraintSet) -> Result<DMatrix<f64>> {
    assemble_psi_from(bundle, constraints, bundle.t_start())
}

/// Windows restricted to `[tc, ·]`: `N` is replaced by `N - N(tc)`.
pub(crate) fn assemble_psi_from(
    bundle: &GramianBundle,
    constraints: &InterimConstraintSet,
    tc: f64,
) -> Result<DMatrix<f64>> {
    if constraints.state_dim() != bundle.n {
        return Err(Error::InvalidConstraints(format!(
            "H has {} columns, state has {}",
            constraints.state_dim(),
            bundle.n
        )));
    }
    constraints.check_span(tc, bundle.t_end())?;
    let h = constraints.h();
    let p = constraints.output_dim();
    let times = constraints.times();
    let n_c = if tc == bundle.t_start() { None } else { Some(bundle.n_mat(tc)?) };
    let hu: Vec<DMatrix<f64>> = times.iter().map(|&t| Ok(h * bundle.u(t)?)).collect::<Result<_>>()?;
    let mut psi = DMatrix::zeros(p * times.len(), p * times.len());
    for i in 0..times.len() {
        for j in 0..times.len() {
            let mut nm = bundle.n_mat(times[i].min(times[j]))?;
            if let Some(nc) = &n_c {
                nm -= nc;
            }
            let block = &hu[i] * nm * hu[j].transpose();
            psi.view_mut((i * p, j * p), (p, p)).copy_from(&block);
        }
    }
    Ok(psi)
}

fn symmetric_condition(psi: &DMatrix<f64>) -> f64 {
    let s = psi.singular_values();
    let (hi, lo) = (s.max(), s.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Minimum-energy corrective input meeting the linearised constraints.
pub fn correct_control(
    bundle: &GramianBundle,
    constraints: &InterimConstraintSet,
    baseline: &Trajectory,
    x_tilde0: &[f64],
) -> Result<CorrectionResult> {
    correct_control_from(bundle, constraints, baseline, bundle.t_start(), x_tilde0)
}

pub(crate) fn correct_control_from(
    bundle: &GramianBundle,
    constraints: &InterimConstraintSet,
    baseline: &Trajectory,
    tc: f64,
    x_tilde: &[f64],
) -> Result<CorrectionResult> {
    let n = bundle.n;
    if x_tilde.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: x_tilde.len() });
    }
    let psi = assemble_psi_from(bundle, constraints, tc)?;
    let cond = symmetric_condition(&psi);
    if !(cond <= MAX_PSI_CONDITION) {
        return Err(Error::IllConditionedPsi { condition: cond });
    }
    let h = constraints.h();
    let p = constraints.output_dim();
    let xt = DVector::from_column_slice(x_tilde);
    let mut rhs = DVector::zeros(psi.nrows());
    for (i, (ti, zi)) in constraints.targets().iter().enumerate() {
        let z_star = h * DVector::from_vec(baseline.eval(*ti)?);
        let free = h * (bundle.phi(*ti, tc)? * &xt);
        rhs.rows_mut(i * p, p).copy_from(&(zi - z_star - free));
    }
    let mu = psi.clone().lu().solve(&rhs).ok_or(Error::IllConditionedPsi { condition: cond })?;
    let resid = &psi * &mu - &rhs;

    let windows = constraints.times();
    let mut costate = Vec::with_capacity(windows.len());
    let mut contrib = Vec::with_capacity(windows.len());
    let u_nodes: Vec<DMatrix<f64>> = bundle.nodes.iter().map(|&t| bundle.u(t)).collect::<Result<_>>()?;
    for (i, &ti) in windows.iter().enumerate() {
        let mu_i = mu.rows(i * p, p).into_owned();
        let w = bundle.u(ti)?.transpose() * (h.transpose() * mu_i);
        let mut lam_i = Vec::with_capacity(bundle.nodes.len());
        let mut c_i = Vec::with_capacity(bundle.nodes.len());
        for (k, uk) in u_nodes.iter().enumerate() {
            let lam = uk
                .transpose()
                .lu()
                .solve(&w)
                .ok_or(Error::SingularU { t: bundle.nodes[k], condition: f64::INFINITY })?;
            c_i.push(&bundle.r_inv_nodes[k] * bundle.b_nodes[k].transpose() * &lam);
            lam_i.push(lam);
        }
        costate.push(lam_i);
        contrib.push(c_i);
    }
    let schedule = ControlSchedule {
        start: tc,
        nodes: bundle.nodes.clone(),
        windows,
        contrib,
        costate,
        r_inv: bundle.r_inv_nodes.clone(),
        control_dim: bundle.m,
    };
    Ok(CorrectionResult {
        correction: Correction::Control { schedule, multipliers: mu.as_slice().to_vec() },
        predicted_residuals: resid.as_slice().chunks(p).map(|c| c.to_vec()).collect(),
        diagnostics: Diagnostics { rank: None, condition: cond, ..Default::default() },
    })
}

/// Terminal-only correction computed independently of the windowed blocks:
/// the output Gramian `W(t_f)` is propagated directly
/// (`Ẇ = A_u W + W A_uᵀ + B_u R⁻¹ B_uᵀ`) and
/// `ũ(t) = R⁻¹ B_uᵀ Φᵀ(t_f, t) Hᵀ (H W(t_f) Hᵀ)⁻¹ (z_f - z*(t_f) - H Φ(t_f, t₀) x̃₀)`.
///
/// Returns `ũ` at the grid nodes.
#[allow(clippy::too_many_arguments)]
pub fn final_time_control<P: System>(
    plant: &P,
    theta_star: &[f64],
    baseline: &Trajectory,
    weighting: &Weighting,
    grid: &TimeGrid,
    h: &DMatrix<f64>,
    z_f: &DVector<f64>,
    x_tilde0: &[f64],
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = plant.state_dim();
    let table = JacobianTable::build(plant, theta_star, baseline, grid, Form::Control)?;
    let stages = super::linearise::stage_times(&table.nodes);
    let q_stage: Vec<DMatrix<f64>> = stages
        .iter()
        .enumerate()
        .map(|(s, &t)| Ok(&table.b[s] * weighting.inverse_at(t)? * table.b[s].transpose()))
        .collect::<Result<_>>()?;
    let mut y0 = vec![0.0; 2 * n * n];
    for i in 0..n {
        y0[i * n + i] = 1.0;
    }
    let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let s = table.slot(t)?;
        let a = &table.a[s];
        let u = DMatrix::from_column_slice(n, n, &y[..n * n]);
        let w = DMatrix::from_column_slice(n, n, &y[n * n..]);
        let du = a * u;
        let dw = a * &w + &w * a.transpose() + &q_stage[s];
        let mut out = du.as_slice().to_vec();
        out.extend_from_slice(dw.as_slice());
        Ok(out)
    };
    let traj = integrate_fixed(rhs, &y0, grid)?;
    let tf = grid.tf;
    let yf = traj.eval(tf)?;
    let uf = DMatrix::from_column_slice(n, n, &yf[..n * n]);
    let wf = DMatrix::from_column_slice(n, n, &yf[n * n..]);
    let psi = h * wf * h.transpose();
    let rhs = z_f - h * DVector::from_vec(baseline.eval(tf)?) - h * (&uf * DVector::from_column_slice(x_tilde0));
    let nu = psi.lu().solve(&rhs).ok_or(Error::IllConditionedPsi { condition: f64::INFINITY })?;
    let hnu = h.transpose() * nu;
    table
        .nodes
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let y = traj.eval(t)?;
            let uk = DMatrix::from_column_slice(n, n, &y[..n * n]);
            let phi = solve_right(&uf, &uk, t)?;
            let b = &table.b[JacobianTable::node_slot(k)];
            let u = weighting.inverse_at(t)? * b.transpose() * phi.transpose() * &hnu;
            Ok((t, u.as_slice().to_vec()))
        })
        .collect()
}
