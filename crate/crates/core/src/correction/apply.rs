use nalgebra::DVector;

use super::constraints::InterimConstraintSet;
use super::gramian::{correct_control_from, GramianBundle};
use super::schedule::ControlSchedule;
use super::sensitivity::{correct_parameters_from, SensitivityMatrix};
use super::{Correction, CorrectionResult};
use crate::diff::jacobian_d;
use crate::error::{Error, Result};
use crate::odeint::{integrate_adaptive, integrate_fixed, Step, StopCondition, StopReason, TimeGrid, Trajectory};
use crate::plants::{OpenLoop, System};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Correction computed once at `t₀` and held.
    SingleShot,
    /// Correction recomputed from the measured state every `period` seconds.
    Feedback { period: f64 },
}

/// Fixed grids ignore `stop`; adaptive grids default to stopping at `tf`.
pub fn propagate<F>(f: F, x0: &[f64], grid: &TimeGrid, stop: Option<&StopCondition>) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    match grid.step {
        Step::Fixed(_) => integrate_fixed(f, x0, grid),
        Step::Adaptive { .. } => match stop {
            Some(s) => integrate_adaptive(f, x0, grid, s),
            None => integrate_adaptive(f, x0, grid, &StopCondition::time_limit(grid.tf)),
        },
    }
}

/// Propagates `grid` in pieces split at the interior `breaks`; `make`
/// receives each piece's end time. Stops early once `stop` fires.
fn propagate_split<F, G>(
    breaks: &[f64],
    x0: &[f64],
    grid: &TimeGrid,
    stop: Option<&StopCondition>,
    mut make: G,
) -> Result<Trajectory>
where
    G: FnMut(f64) -> F,
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&b| b > grid.t0 && b < grid.tf).collect();
    cuts.dedup();
    cuts.push(grid.tf);
    let mut pieces = Vec::with_capacity(cuts.len());
    let (mut lo, mut x) = (grid.t0, x0.to_vec());
    for hi in cuts {
        let piece = propagate(make(hi), &x, &TimeGrid { t0: lo, tf: hi, step: grid.step }, stop)?;
        let halted = piece.t_end() < hi || piece.event().is_some_and(|e| e.reason == StopReason::Condition);
        x = piece.last_state().to_vec();
        pieces.push(piece);
        if halted {
            break;
        }
        lo = hi;
    }
    Trajectory::concat(pieces)
}

type Increment<'a> = Box<dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + 'a>;

fn closed_loop_with<'a, P: System>(
    plant: &'a P,
    theta: &[f64],
    extra: Option<Increment<'a>>,
) -> impl FnMut(f64, &[f64]) -> Result<Vec<f64>> + 'a {
    let theta = theta.to_vec();
    move |t, x| match &extra {
        None => plant.closed_loop(t, x, &theta),
        Some(du) => {
            let mut u = plant.policy::<f64>(t, x, &theta)?;
            for (ui, di) in u.iter_mut().zip(du(t, x)?) {
                *ui += di;
            }
            plant.saturate(&mut u);
            plant.dynamics(t, x, &u)
        }
    }
}

/// Propagates the corrected closed loop once: `θ* + θ̃` for a parameter
/// correction, `u = sat(π(x, θ*) + ũ(t))` for a control correction.
pub fn apply_correction<P: System>(
    plant: &P,
    theta_star: &[f64],
    result: &CorrectionResult,
    x0: &[f64],
    grid: &TimeGrid,
    stop: Option<&StopCondition>,
) -> Result<Trajectory> {
    match &result.correction {
        Correction::Parameter { delta_theta } => {
            if delta_theta.len() != theta_star.len() {
                return Err(Error::LengthMismatch { expected: theta_star.len(), got: delta_theta.len() });
            }
            let theta: Vec<f64> = theta_star.iter().zip(delta_theta).map(|(a, b)| a + b).collect();
            propagate(closed_loop_with(plant, &theta, None), x0, grid, stop)
        }
        Correction::Control { schedule, .. } => {
            if schedule.control_dim() != plant.control_dim() {
                return Err(Error::KindMismatch);
            }
            propagate_split(schedule.windows(), x0, grid, stop, |hi| {
                let du: Increment<'_> = Box::new(move |t: f64, _x: &[f64]| Ok(schedule.eval_before(t, hi)));
                closed_loop_with(plant, theta_star, Some(du))
            })
        }
    }
}

/// Source of re-initialised corrections for feedback operation.
#[derive(Clone, Copy, Debug)]
pub enum Corrector<'a> {
    Parameter { sensitivity: &'a SensitivityMatrix, rel_tol: f64 },
    Control { gramians: &'a GramianBundle },
}

/// One feedback interval and the correction that was active on it.
#[derive(Clone, Debug)]
pub struct FeedbackEpoch {
    pub start: f64,
    pub end: f64,
    /// `None` once no constraint lies ahead.
    pub correction: Option<CorrectionResult>,
}

#[derive(Clone, Debug)]
pub struct FeedbackRun {
    pub trajectory: Trajectory,
    pub epochs: Vec<FeedbackEpoch>,
}

impl FeedbackRun {
    /// Control applied at `(t, x)` on the run.
    pub fn control<P: System>(
        &self,
        plant: &P,
        theta_star: &[f64],
        baseline: &Trajectory,
        t: f64,
        x: &[f64],
    ) -> Result<Vec<f64>> {
        let idx = self.epochs.iter().rposition(|e| e.start <= t).unwrap_or(0);
        let Some(res) = &self.epochs[idx].correction else {
            return plant.policy::<f64>(t, x, theta_star);
        };
        match &res.correction {
            Correction::Parameter { .. } => applied_control(plant, theta_star, Some(res), t, x),
            Correction::Control { schedule, .. } => {
                let du = feedback_increment(plant, theta_star, baseline, schedule, t, t, x)?;
                Ok(add_saturated(plant, plant.policy::<f64>(t, x, theta_star)?, &du))
            }
        }
    }
}

fn add_saturated<P: System>(plant: &P, mut u: Vec<f64>, du: &[f64]) -> Vec<f64> {
    for (ui, di) in u.iter_mut().zip(du) {
        *ui += di;
    }
    plant.saturate(&mut u);
    u
}

fn feedback_increment<P: System>(
    plant: &P,
    theta_star: &[f64],
    baseline: &Trajectory,
    schedule: &ControlSchedule,
    t: f64,
    upper: f64,
    xm: &[f64],
) -> Result<Vec<f64>> {
    let xs = baseline.eval(t)?;
    let u_star = plant.policy::<f64>(t, &xs, theta_star)?;
    let b = jacobian_d(&OpenLoop(plant), t, xm, &u_star)?;
    Ok(schedule.eval_with_input_matrix_before(t, upper, &b))
}

/// Control applied at `(t, x)` by a single-shot run with `correction`.
pub fn applied_control<P: System>(
    plant: &P,
    theta_star: &[f64],
    correction: Option<&CorrectionResult>,
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    match correction.map(|c| &c.correction) {
        None => plant.policy::<f64>(t, x, theta_star),
        Some(Correction::Parameter { delta_theta }) => {
            let theta: Vec<f64> = theta_star.iter().zip(delta_theta).map(|(a, b)| a + b).collect();
            plant.policy::<f64>(t, x, &theta)
        }
        Some(Correction::Control { schedule, .. }) => {
            Ok(add_saturated(plant, plant.policy::<f64>(t, x, theta_star)?, &schedule.eval(t)))
        }
    }
}

/// Feedback operation: at each epoch `t_c` the deviation `x(t_c) - x*(t_c)`
/// re-initialises the correction over the remaining constraints. Control
/// corrections also re-linearise `B_u` at the measured state and the stored
/// baseline input.
#[allow(clippy::too_many_arguments)]
pub fn apply_feedback<P: System>(
    plant: &P,
    theta_star: &[f64],
    baseline: &Trajectory,
    corrector: Corrector<'_>,
    constraints: &InterimConstraintSet,
    x0: &[f64],
    grid: &TimeGrid,
    stop: Option<&StopCondition>,
    period: f64,
) -> Result<FeedbackRun> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Config(format!("feedback period must be positive, got {period}")));
    }
    grid.validate()?;
    let span = grid.tf - grid.t0;
    let count = ((span / period) - 1e-9).ceil().max(1.0) as usize;
    let mut pieces: Vec<Trajectory> = Vec::with_capacity(count);
    let mut epochs = Vec::with_capacity(count);
    let mut x = x0.to_vec();
    for j in 0..count {
        let tc = grid.t0 + j as f64 * period;
        let tn = if j + 1 == count { grid.tf } else { grid.t0 + (j + 1) as f64 * period };
        let seg_grid = TimeGrid { t0: tc, tf: tn, step: grid.step };
        let x_star = baseline.eval(tc)?;
        let x_tilde: Vec<f64> = x.iter().zip(&x_star).map(|(a, b)| a - b).collect();
        let remaining = constraints.after(tc);
        let (piece, correction) = match (remaining, corrector) {
            (None, _) => (propagate(closed_loop_with(plant, theta_star, None), &x, &seg_grid, stop)?, None),
            (Some(rest), Corrector::Parameter { sensitivity, rel_tol }) => {
                let res = correct_parameters_from(sensitivity, &rest, baseline, tc, &x_tilde, rel_tol)?;
                (apply_correction(plant, theta_star, &res, &x, &seg_grid, stop)?, Some(res))
            }
            (Some(rest), Corrector::Control { gramians }) => {
                let res = correct_control_from(gramians, &rest, baseline, tc, &x_tilde)?;
                let schedule = res.schedule().expect("control correction");
                let piece = propagate_split(schedule.windows(), &x, &seg_grid, stop, |hi| {
                    let du: Increment<'_> = Box::new(move |t: f64, xm: &[f64]| {
                        feedback_increment(plant, theta_star, baseline, schedule, t, hi, xm)
                    });
                    closed_loop_with(plant, theta_star, Some(du))
                })?;
                (piece, Some(res.clone()))
            }
        };
        x = piece.last_state().to_vec();
        let halted = piece.event().is_some() && piece.t_end() < tn;
        let halted = halted || piece.event().is_some_and(|e| e.t >= stop.map_or(f64::INFINITY, |s| s.max_time));
        epochs.push(FeedbackEpoch { start: tc, end: piece.t_end(), correction });
        pieces.push(piece);
        if halted {
            break;
        }
    }
    Ok(FeedbackRun { trajectory: Trajectory::concat(pieces)?, epochs })
}

/// `H x(tᵢ) - zᵢ` for every constraint, from a propagated trajectory.
pub fn realised_residuals(traj: &Trajectory, constraints: &InterimConstraintSet) -> Result<Vec<Vec<f64>>> {
    constraints
        .targets()
        .iter()
        .map(|(t, z)| {
            let r = constraints.h() * DVector::from_vec(traj.eval(*t)?) - z;
            Ok(r.as_slice().to_vec())
        })
        .collect()
}
