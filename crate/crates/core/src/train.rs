//! Baseline policy optimisation with ADAM on the discrete-adjoint gradient.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{cost_gradient, cost_value, AdjointRhs, Dual, Scalar};
use crate::error::{Error, Result};
use crate::odeint::{TimeGrid, Trajectory};
use crate::plants::{MarsSystem, System};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub k_rf: f64,
    pub k_vf: f64,
    pub k_t: f64,
    pub k_theta: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { k_rf: 1e6, k_vf: 1e5, k_t: 1.0, k_theta: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    /// Iterations without a best-so-far improvement before the rate decays.
    pub patience: usize,
    pub decay: f64,
    pub max_decays: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 3000,
            patience: 100,
            decay: 0.1,
            max_decays: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub weights: CostWeights,
    pub adam: AdamConfig,
    /// Check the gradient against central differences on three random
    /// coordinates at every accepted iterate.
    pub audit: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if ![w.k_rf, w.k_vf, w.k_t, w.k_theta].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Config("cost weights must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("invalid ADAM hyperparameters".into()));
        }
        if a.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(a.decay > 0.0 && a.decay < 1.0) {
            return Err(Error::Config("decay factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Smooth scalar objective over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub checks: usize,
    pub failures: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    /// Cost at each iterate, in order.
    pub history: Vec<f64>,
    /// Best cost seen up to each iterate.
    pub best_history: Vec<f64>,
    pub best_cost: f64,
    pub best_iteration: usize,
    pub lr_decays: Vec<usize>,
    pub audit: Option<AuditSummary>,
}

/// Central-difference check on `count` coordinates drawn with `rng`.
fn audit_step<O: Objective>(
    obj: &O,
    theta: &[f64],
    grad: &[f64],
    rng: &mut ChaCha8Rng,
    count: usize,
    summary: &mut AuditSummary,
) -> Result<()> {
    for _ in 0..count {
        let j = rng.random_range(0..theta.len());
        let h = 1e-5 * theta[j].abs().max(1.0);
        let mut tp = theta.to_vec();
        tp[j] += h;
        let fp = obj.value(&tp)?;
        tp[j] -= 2.0 * h;
        let fm = obj.value(&tp)?;
        let fd = (fp - fm) / (2.0 * h);
        let rel = (grad[j] - fd).abs() / fd.abs().max(1e-8);
        summary.checks += 1;
        if (grad[j] - fd).abs() > 1e-3 * fd.abs() + 1e-6 {
            summary.failures += 1;
        }
        summary.max_rel_error = summary.max_rel_error.max(rel);
    }
    Ok(())
}

/// ADAM with a best-so-far record and step decay on plateaus.
///
/// Returns the best parameters seen.
pub fn minimize<O: Objective>(
    obj: &O,
    theta0: &[f64],
    cfg: &AdamConfig,
    audit_seed: Option<u64>,
) -> Result<(Vec<f64>, OptimReport)> {
    if theta0.len() != obj.dim() {
        return Err(Error::LengthMismatch { expected: obj.dim(), got: theta0.len() });
    }
    let l = theta0.len();
    let mut theta = theta0.to_vec();
    let (mut m, mut v) = (vec![0.0; l], vec![0.0; l]);
    let mut lr = cfg.lr;
    let mut best = (f64::INFINITY, theta.clone(), 0usize);
    let mut since_best = 0usize;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best_history = Vec::with_capacity(cfg.iterations);
    let mut lr_decays = Vec::new();
    let mut audit = audit_seed.map(|s| (ChaCha8Rng::seed_from_u64(s), AuditSummary::default()));
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for it in 0..cfg.iterations {
        let (cost, grad) =
            obj.value_grad(&theta).map_err(|e| Error::Diverged { iteration: it, reason: e.to_string() })?;
        if !cost.is_finite() {
            return Err(Error::Diverged { iteration: it, reason: "non-finite cost".into() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it, reason: "non-finite gradient".into() });
        }
        if let Some((rng, summary)) = audit.as_mut() {
            audit_step(obj, &theta, &grad, rng, 3, summary)?;
        }
        history.push(cost);
        if cost < best.0 {
            best = (cost, theta.clone(), it);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience && lr_decays.len() < cfg.max_decays {
                lr *= cfg.decay;
                lr_decays.push(it);
                since_best = 0;
            }
        }
        best_history.push(best.0);
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for j in 0..l {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
            let mh = m[j] / (1.0 - b1t);
            let vh = v[j] / (1.0 - b2t);
            theta[j] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    let report = OptimReport {
        history,
        best_history,
        best_cost: best.0,
        best_iteration: best.2,
        lr_decays,
        audit: audit.map(|(_, s)| s),
    };
    Ok((best.1, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostComponents {
    pub position: f64,
    pub velocity: f64,
    pub fuel: f64,
    pub regulariser: f64,
    pub total: f64,
}

/// Mars closed loop augmented with the throttle integral `q̇ = δ_T`.
pub struct MarsObjective<'a> {
    pub system: &'a MarsSystem,
    pub weights: CostWeights,
    pub grid: TimeGrid,
}

impl AdjointRhs for MarsObjective<'_> {
    fn state_dim(&self) -> usize {
        8
    }

    fn param_dim(&self) -> usize {
        self.system.param_dim()
    }

    fn eval(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let sys = self.system;
        let u = sys.net.forward_with(theta, &sys.policy_input(&x[..7]));
        let mut f = sys.dynamics.rhs(t, &x[..7], &u)?;
        f.push(u[0]);
        Ok(f)
    }

    fn vjp(&self, t: f64, x: &[f64], theta: &[f64], lambda: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        const K: usize = 10;
        let sys = self.system;
        let input = sys.policy_input(&x[..7]);
        let u = sys.net.forward_with(theta, &input);
        let xd: Vec<Dual<K>> = (0..7).map(|i| Dual::variable(x[i], i)).collect();
        let ud: Vec<Dual<K>> = (0..3).map(|i| Dual::variable(u[i], 7 + i)).collect();
        let f = sys.dynamics.rhs(t, &xd, &ud)?;
        let mut g = [0.0; K];
        for (fi, li) in f.iter().zip(lambda) {
            for (gk, dk) in g.iter_mut().zip(fi.d.iter()) {
                *gk += li * dk;
            }
        }
        let mut gu = [g[7], g[8], g[9]];
        gu[0] += lambda[7];
        let (_, g_in, g_theta) = sys.net.vjp(theta, &input, &gu);
        let mut gx = g[..7].to_vec();
        let (s0, v0) = (sys.mission.s0, sys.mission.v0);
        for i in 0..3 {
            gx[i] += g_in[i] / s0;
            gx[3 + i] += g_in[3 + i] / v0;
        }
        gx.push(0.0);
        Ok((gx, g_theta))
    }
}

impl MarsObjective<'_> {
    pub fn initial_state(&self) -> Vec<f64> {
        let mut x = self.system.initial_state();
        x.push(0.0);
        x
    }

    fn loss(&self, x: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let c = self.components_at(x, theta);
        let sys = self.system;
        let (r_fd, v_fd) = (sys.vectors.r_fd, sys.vectors.v_fd);
        let (s0, v0) = (sys.mission.s0, sys.mission.v0);
        let w = &self.weights;
        let mut gx = vec![0.0; 8];
        for i in 0..3 {
            gx[i] = 2.0 * w.k_rf * (x[i] - r_fd[i]) / (s0 * s0);
            gx[3 + i] = 2.0 * w.k_vf * (x[3 + i] - v_fd[i]) / (v0 * v0);
        }
        gx[7] = w.k_t;
        let gt = theta.iter().map(|v| 2.0 * w.k_theta * v).collect();
        Ok((c.total, gx, gt))
    }

    fn components_at(&self, x: &[f64], theta: &[f64]) -> CostComponents {
        let sys = self.system;
        let w = &self.weights;
        let er = sys.position_error(x);
        let ev = sys.velocity_error(x);
        let position = w.k_rf * er * er / (sys.mission.s0 * sys.mission.s0);
        let velocity = w.k_vf * ev * ev / (sys.mission.v0 * sys.mission.v0);
        let fuel = w.k_t * x[7];
        let regulariser = w.k_theta * theta.iter().map(|v| v * v).sum::<f64>();
        CostComponents { position, velocity, fuel, regulariser, total: position + velocity + fuel + regulariser }
    }

    /// Separate cost terms and the fixed-grid trajectory (augmented state).
    pub fn components(&self, theta: &[f64]) -> Result<(CostComponents, Trajectory)> {
        let loss = |x: &[f64], th: &[f64]| self.loss(x, th);
        let (_, traj) = cost_value(self, &loss, theta, &self.initial_state(), &self.grid)?;
        let c = self.components_at(traj.last_state(), theta);
        if !c.total.is_finite() {
            return Err(Error::NonFiniteCost);
        }
        Ok((c, traj))
    }
}

impl Objective for MarsObjective<'_> {
    fn dim(&self) -> usize {
        self.system.param_dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let loss = |x: &[f64], th: &[f64]| self.loss(x, th);
        Ok(cost_value(self, &loss, theta, &self.initial_state(), &self.grid)?.0)
    }

    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let loss = |x: &[f64], th: &[f64]| self.loss(x, th);
        let g = cost_gradient(self, &loss, theta, &self.initial_state(), &self.grid)?;
        Ok((g.value, g.gradient))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub best_cost: f64,
    pub best_iteration: usize,
    pub lr_decays: Vec<usize>,
    pub components: CostComponents,
    pub theta: Vec<f64>,
    pub audit: Option<AuditSummary>,
    /// Elapsed seconds; not written to disk so reports stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Trains the Mars policy from the Glorot initialisation for `seed`.
pub fn train_mars(
    system: &MarsSystem,
    config: &TrainConfig,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(Vec<f64>, TrainReport)> {
    config.validate()?;
    let start = Instant::now();
    let obj = MarsObjective { system, weights: config.weights, grid: *grid };
    let theta0 = system.net.init(seed);
    let audit_seed = config.audit.then_some(seed ^ 0x5eed_a0d1);
    let (theta, rep) = minimize(&obj, &theta0, &config.adam, audit_seed)?;
    let (components, _) = obj.components(&theta)?;
    let report = TrainReport {
        format: "nodecorr-train-report".into(),
        version: 1,
        seed,
        iterations: rep.history.len(),
        history: rep.history,
        best_cost: rep.best_cost,
        best_iteration: rep.best_iteration,
        lr_decays: rep.lr_decays,
        components,
        theta: theta.clone(),
        audit: rep.audit,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((theta, report))
}
