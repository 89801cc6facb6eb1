//! Mars experiment runs: baseline, corrected runs and initial-position
//! ensembles built on a trained policy.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{
    applied_control, apply_correction, apply_feedback, correct_control, correct_parameters, propagate, propagate_m,
    propagate_un, CorrectionResult, Corrector, Diagnostics, GramianBundle, InterimConstraintSet, SensitivityMatrix,
};
use crate::error::{Error, Result};
use crate::odeint::{integrate_fixed, StopReason, Trajectory};
use crate::plants::{MarsSystem, System};
use crate::scenario::ScenarioConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Theta,
    U,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::None, Method::Theta, Method::U];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Theta => "theta",
            Method::U => "u",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "theta" => Ok(Method::Theta),
            "u" => Ok(Method::U),
            other => Err(Error::Config(format!("unknown method {other:?}, expected none, theta or u"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Single,
    Feedback,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Single => "single",
            RunMode::Feedback => "feedback",
        }
    }
}

impl FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(RunMode::Single),
            "feedback" => Ok(RunMode::Feedback),
            other => Err(Error::Config(format!("unknown mode {other:?}, expected single or feedback"))),
        }
    }
}

/// Position and velocity at `t_f` must match the landing targets; mass is free.
pub fn landing_constraints(sys: &MarsSystem) -> Result<InterimConstraintSet> {
    let mut h = DMatrix::zeros(6, 7);
    for i in 0..6 {
        h[(i, i)] = 1.0;
    }
    let v = sys.vectors;
    let z = DVector::from_iterator(6, v.r_fd.iter().chain(&v.v_fd).copied());
    InterimConstraintSet::new(h, vec![(sys.mission.tf, z)])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub e_rf: f64,
    pub e_vf: f64,
    pub m_f: f64,
    pub t_final: f64,
    /// Whether the proximity rule, rather than the time limit, ended the run.
    pub stopped_early: bool,
}

impl Metrics {
    fn of(sys: &MarsSystem, traj: &Trajectory) -> Self {
        let x = traj.last_state();
        Self {
            e_rf: sys.position_error(x),
            e_vf: sys.velocity_error(x),
            m_f: x[6],
            t_final: traj.t_end(),
            stopped_early: traj.event().is_some_and(|e| e.reason == StopReason::Condition),
        }
    }
}

/// Final position in the landing site's horizontal plane `(downrange,
/// crossrange)` and the final velocity error in `(up, downrange, crossrange)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandingPoint {
    pub horizontal: [f64; 2],
    pub velocity_error: [f64; 3],
}

impl LandingPoint {
    pub fn of(sys: &MarsSystem, x: &[f64]) -> Self {
        let [up, down, cr] = sys.landing_frame();
        let v = sys.vectors;
        let dr: Vec<f64> = (0..3).map(|i| x[i] - v.r_fd[i]).collect();
        let dv: Vec<f64> = (0..3).map(|i| x[3 + i] - v.v_fd[i]).collect();
        let dot = |a: &[f64], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        Self {
            horizontal: [dot(&dr, down), dot(&dr, cr)],
            velocity_error: [dot(&dv, up), dot(&dv, down), dot(&dv, cr)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub method: Method,
    pub mode: RunMode,
    pub trajectory: Trajectory,
    /// Applied control at every trajectory knot.
    pub controls: Vec<Vec<f64>>,
    /// Corrections with the time they were computed at.
    pub corrections: Vec<(f64, CorrectionResult)>,
    pub metrics: Metrics,
}

impl RunOutput {
    pub fn diagnostics(&self) -> Option<&Diagnostics> {
        self.corrections.first().map(|(_, c)| &c.diagnostics)
    }
}

/// Trained policy, its nominal fixed-grid trajectory and the matrices the
/// corrections need.
pub struct Study {
    pub scenario: ScenarioConfig,
    pub system: MarsSystem,
    pub theta: Vec<f64>,
    pub baseline: Trajectory,
    pub constraints: InterimConstraintSet,
    pub pinv_rtol: f64,
    sensitivity: Option<SensitivityMatrix>,
    gramians: Option<GramianBundle>,
}

impl Study {
    pub fn new(scenario: ScenarioConfig, theta: Vec<f64>) -> Result<Self> {
        scenario.validate()?;
        let system = scenario.system();
        if theta.len() != system.param_dim() {
            return Err(Error::LengthMismatch { expected: system.param_dim(), got: theta.len() });
        }
        let grid = scenario.fixed_grid();
        let baseline = integrate_fixed(|t, x| system.closed_loop(t, x, &theta), &system.initial_state(), &grid)?;
        let constraints = landing_constraints(&system)?;
        let pinv_rtol = scenario.correction.pinv_rtol;
        Ok(Self { scenario, system, theta, baseline, constraints, pinv_rtol, sensitivity: None, gramians: None })
    }

    /// Propagates the matrices `method` needs, once.
    pub fn prepare(&mut self, method: Method) -> Result<()> {
        let grid = self.scenario.fixed_grid();
        match method {
            Method::None => {}
            Method::Theta if self.sensitivity.is_none() => {
                self.sensitivity = Some(propagate_m(&self.system, &self.theta, &self.baseline, &grid)?);
            }
            Method::U if self.gramians.is_none() => {
                let w = self.scenario.weighting();
                self.gramians = Some(propagate_un(&self.system, &self.theta, &self.baseline, &w, &grid)?);
            }
            _ => {}
        }
        Ok(())
    }

    pub fn sensitivity(&self) -> Option<&SensitivityMatrix> {
        self.sensitivity.as_ref()
    }

    pub fn gramians(&self) -> Option<&GramianBundle> {
        self.gramians.as_ref()
    }

    fn unprepared(method: Method) -> Error {
        Error::Config(format!("method {method} was not prepared"))
    }

    /// Evaluation run from `x0` with the adaptive solver and the landing stop rule.
    pub fn run(&self, method: Method, mode: RunMode, x0: &[f64]) -> Result<RunOutput> {
        let sys = &self.system;
        let grid = self.scenario.adaptive_grid();
        let stop = sys.stop_condition(self.scenario.mission.tf);
        let x_star0 = self.baseline.first_state();
        let x_tilde0: Vec<f64> = x0.iter().zip(x_star0).map(|(a, b)| a - b).collect();
        let theta = &self.theta;
        let (trajectory, controls, corrections) = match (method, mode) {
            (Method::None, _) => {
                let tr = propagate(|t, x| sys.closed_loop(t, x, theta), x0, &grid, Some(&stop))?;
                let u = knot_controls(&tr, |t, x| applied_control(sys, theta, None, t, x))?;
                (tr, u, Vec::new())
            }
            (_, RunMode::Single) => {
                let res = match method {
                    Method::Theta => {
                        let sens = self.sensitivity.as_ref().ok_or(Self::unprepared(method))?;
                        correct_parameters(sens, &self.constraints, &self.baseline, &x_tilde0, self.pinv_rtol)?
                    }
                    _ => {
                        let g = self.gramians.as_ref().ok_or(Self::unprepared(method))?;
                        correct_control(g, &self.constraints, &self.baseline, &x_tilde0)?
                    }
                };
                let tr = apply_correction(sys, theta, &res, x0, &grid, Some(&stop))?;
                let u = knot_controls(&tr, |t, x| applied_control(sys, theta, Some(&res), t, x))?;
                (tr, u, vec![(grid.t0, res)])
            }
            (_, RunMode::Feedback) => {
                let corrector = match method {
                    Method::Theta => Corrector::Parameter {
                        sensitivity: self.sensitivity.as_ref().ok_or(Self::unprepared(method))?,
                        rel_tol: self.pinv_rtol,
                    },
                    _ => Corrector::Control { gramians: self.gramians.as_ref().ok_or(Self::unprepared(method))? },
                };
                let period = self.scenario.correction.feedback_period;
                let run = apply_feedback(
                    sys,
                    theta,
                    &self.baseline,
                    corrector,
                    &self.constraints,
                    x0,
                    &grid,
                    Some(&stop),
                    period,
                )?;
                let u = knot_controls(&run.trajectory, |t, x| run.control(sys, theta, &self.baseline, t, x))?;
                let corr = run.epochs.iter().filter_map(|e| e.correction.clone().map(|c| (e.start, c))).collect();
                (run.trajectory, u, corr)
            }
        };
        let metrics = Metrics::of(sys, &trajectory);
        if ![metrics.e_rf, metrics.e_vf, metrics.m_f].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{method} run produced non-finite final errors")));
        }
        Ok(RunOutput { method, mode, trajectory, controls, corrections, metrics })
    }

    pub fn nominal_state(&self) -> Vec<f64> {
        self.system.initial_state()
    }

    /// Ensemble of initial states offset on a circle around `r₀`.
    pub fn ensemble_states(&self) -> Vec<(f64, Vec<f64>)> {
        let e = &self.scenario.ensemble;
        position_offsets(&self.system, e.radius, e.members)
            .into_iter()
            .map(|(alpha, d)| {
                let mut x = self.nominal_state();
                for i in 0..3 {
                    x[i] += d[i];
                }
                (alpha, x)
            })
            .collect()
    }

    /// Runs every member for each method in parallel; results are in
    /// `(method, member)` order regardless of scheduling.
    pub fn run_ensemble(&self, methods: &[Method], mode: RunMode) -> Vec<MemberOutcome> {
        self.run_ensemble_full(methods, mode).into_iter().map(|(o, _)| o).collect()
    }

    /// As [`Study::run_ensemble`], keeping each successful run.
    pub fn run_ensemble_full(&self, methods: &[Method], mode: RunMode) -> Vec<(MemberOutcome, Option<RunOutput>)> {
        let states = self.ensemble_states();
        let jobs: Vec<(Method, usize)> = methods.iter().flat_map(|&m| (0..states.len()).map(move |i| (m, i))).collect();
        jobs.par_iter()
            .map(|&(method, index)| {
                let (alpha, x0) = &states[index];
                let base = MemberOutcome { method, index, alpha: *alpha, metrics: None, landing: None, error: None };
                match self.run(method, mode, x0) {
                    Ok(out) => {
                        let outcome = MemberOutcome {
                            metrics: Some(out.metrics),
                            landing: Some(LandingPoint::of(&self.system, out.trajectory.last_state())),
                            ..base
                        };
                        (outcome, Some(out))
                    }
                    Err(e) => (MemberOutcome { error: Some(e.to_string()), ..base }, None),
                }
            })
            .collect()
    }
}

fn knot_controls<F>(traj: &Trajectory, control: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    traj.times().iter().zip(traj.states()).map(|(t, x)| control(*t, x)).collect()
}

/// `r̄ (cos α (n × v̂₀) + sin α n)` with `n = v₀ × r₀ / ‖v₀ × r₀‖`, for
/// `α = 2πk / members`.
pub fn position_offsets(sys: &MarsSystem, radius: f64, members: usize) -> Vec<(f64, [f64; 3])> {
    let (r0, v0) = (sys.vectors.r0, sys.vectors.v0);
    let cross =
        |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let unit = |a: [f64; 3]| {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    };
    let n = unit(cross(v0, r0));
    let w = cross(n, unit(v0));
    (0..members)
        .map(|k| {
            let alpha = 2.0 * PI * k as f64 / members as f64;
            let (s, c) = alpha.sin_cos();
            (alpha, [0, 1, 2].map(|i| radius * (c * w[i] + s * n[i])))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub method: Method,
    pub index: usize,
    pub alpha: f64,
    pub metrics: Option<Metrics>,
    pub landing: Option<LandingPoint>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; `NaN` for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub method: Method,
    pub members: usize,
    pub successes: usize,
    /// False when some members failed and the statistics cover the rest only.
    pub complete: bool,
    pub e_rf: MeanStd,
    pub e_vf: MeanStd,
    pub m_f: MeanStd,
}

pub fn ensemble_stats(outcomes: &[MemberOutcome], method: Method) -> EnsembleStats {
    let mine: Vec<&MemberOutcome> = outcomes.iter().filter(|o| o.method == method).collect();
    let ok: Vec<Metrics> = mine.iter().filter_map(|o| o.metrics).collect();
    let pick = |f: fn(&Metrics) -> f64| MeanStd::of(&ok.iter().map(f).collect::<Vec<_>>());
    EnsembleStats {
        method,
        members: mine.len(),
        successes: ok.len(),
        complete: ok.len() == mine.len(),
        e_rf: pick(|m| m.e_rf),
        e_vf: pick(|m| m.e_vf),
        m_f: pick(|m| m.m_f),
    }
}

pub const CSV_SCHEMA: &str = "# nodecorr-timeseries v1";
pub const CSV_COLUMNS: [&str; 13] =
    ["t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "m", "delta_t", "sigma_t", "eta_t", "e_r", "e_v"];

/// Knot-by-knot time series with a schema line and a header.
pub fn time_series_csv(sys: &MarsSystem, run: &RunOutput) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    let traj = &run.trajectory;
    for ((t, x), u) in traj.times().iter().zip(traj.states()).zip(&run.controls) {
        let row: Vec<String> = std::iter::once(*t)
            .chain(x.iter().copied())
            .chain(u.iter().copied())
            .chain([sys.position_error(x), sys.velocity_error(x)])
            .map(|v| v.to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
