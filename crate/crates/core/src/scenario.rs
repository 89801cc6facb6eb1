//! File-loadable scenario: plant, mission, solver, training and correction
//! settings for the Mars descent.
//!
//! Angles are written in degrees and the rotation rate in rad/day; both are
//! converted to SI on load. Missing keys take the defaults below, unknown keys
//! are rejected.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correction::{Weighting, DEFAULT_PINV_RTOL};
use crate::error::{Error, Result};
use crate::odeint::TimeGrid;
use crate::plants::{MarsParams, MarsSystem, MissionSpec};
use crate::train::TrainConfig;

const DEG: f64 = PI / 180.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionSection {
    pub h0: f64,
    pub v0: f64,
    pub gamma0_deg: f64,
    pub s0: f64,
    pub m0: f64,
    pub theta_fd_deg: f64,
    pub v_fd: f64,
    pub tf: f64,
}

impl Default for MissionSection {
    fn default() -> Self {
        let m = MissionSpec::default();
        Self {
            h0: m.h0,
            v0: m.v0,
            gamma0_deg: m.gamma0 / DEG,
            s0: m.s0,
            m0: m.m0,
            theta_fd_deg: m.theta_fd / DEG,
            v_fd: m.v_fd,
            tf: m.tf,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSection {
    pub m_dry: f64,
    pub m_sw: f64,
    pub isp: f64,
    pub beta0: f64,
    pub lift_to_drag: f64,
    pub sigma_l_deg: f64,
    pub t_max: f64,
    pub t_min: f64,
    pub eta_min_deg: f64,
    pub eta_max_deg: f64,
    pub sigma_min_deg: f64,
    pub sigma_max_deg: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        let p = MarsParams::default();
        Self {
            m_dry: p.m_dry,
            m_sw: p.m_sw,
            isp: p.isp,
            beta0: p.beta0,
            lift_to_drag: p.lift_to_drag,
            sigma_l_deg: p.sigma_l / DEG,
            t_max: p.t_max,
            t_min: p.t_min,
            eta_min_deg: p.eta_min / DEG,
            eta_max_deg: p.eta_max / DEG,
            sigma_min_deg: p.sigma_min / DEG,
            sigma_max_deg: p.sigma_max / DEG,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentSection {
    pub mu: f64,
    pub r_m: f64,
    pub omega_rad_per_day: f64,
    pub rho0: f64,
    pub h_scale: f64,
    pub g0: f64,
    pub wind: [f64; 3],
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        let p = MarsParams::default();
        Self {
            mu: p.mu,
            r_m: p.r_m,
            omega_rad_per_day: 2.0 * PI / 1.025957,
            rho0: p.rho0,
            h_scale: p.h_scale,
            g0: p.g0,
            wind: p.wind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Fixed step for training and matrix propagation, s.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { dt: 0.05, rtol: 1e-7, atol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectionSection {
    pub pinv_rtol: f64,
    /// Diagonal of the control weighting, in control order.
    pub weighting: [f64; 3],
    /// Re-correction interval in feedback mode, s.
    pub feedback_period: f64,
}

impl Default for CorrectionSection {
    fn default() -> Self {
        Self { pinv_rtol: DEFAULT_PINV_RTOL, weighting: [10.0, 1.0, 1.0], feedback_period: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    /// Initial position offset radius, m.
    pub radius: f64,
    pub members: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { radius: 100.0, members: 16 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mission: MissionSection,
    pub vehicle: VehicleSection,
    pub environment: EnvironmentSection,
    pub solver: SolverSection,
    pub training: TrainConfig,
    pub correction: CorrectionSection,
    pub ensemble: EnsembleSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        self.mission().validate()?;
        self.training.validate()?;
        self.fixed_grid().validate()?;
        self.adaptive_grid().validate()?;
        self.fixed_grid().fixed_steps()?;
        let c = &self.correction;
        if !(c.pinv_rtol > 0.0 && c.pinv_rtol < 1.0) {
            return Err(Error::Config(format!("pinv_rtol must lie in (0, 1), got {}", c.pinv_rtol)));
        }
        if !c.weighting.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(Error::Config("weighting entries must be positive".into()));
        }
        if !(c.feedback_period > 0.0) {
            return Err(Error::Config("feedback_period must be positive".into()));
        }
        if self.ensemble.members == 0 || !(self.ensemble.radius >= 0.0) {
            return Err(Error::Config("ensemble needs members >= 1 and radius >= 0".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> MarsParams {
        let (v, e) = (&self.vehicle, &self.environment);
        MarsParams {
            mu: e.mu,
            r_m: e.r_m,
            omega: e.omega_rad_per_day / 86_400.0,
            rho0: e.rho0,
            h_scale: e.h_scale,
            g0: e.g0,
            wind: e.wind,
            m_dry: v.m_dry,
            m_sw: v.m_sw,
            isp: v.isp,
            beta0: v.beta0,
            lift_to_drag: v.lift_to_drag,
            sigma_l: v.sigma_l_deg * DEG,
            t_max: v.t_max,
            t_min: v.t_min,
            eta_min: v.eta_min_deg * DEG,
            eta_max: v.eta_max_deg * DEG,
            sigma_min: v.sigma_min_deg * DEG,
            sigma_max: v.sigma_max_deg * DEG,
        }
    }

    pub fn mission(&self) -> MissionSpec {
        let m = &self.mission;
        MissionSpec {
            h0: m.h0,
            v0: m.v0,
            gamma0: m.gamma0_deg * DEG,
            s0: m.s0,
            m0: m.m0,
            theta_fd: m.theta_fd_deg * DEG,
            v_fd: m.v_fd,
            tf: m.tf,
        }
    }

    pub fn system(&self) -> MarsSystem {
        MarsSystem::new(self.params(), self.mission())
    }

    pub fn fixed_grid(&self) -> TimeGrid {
        TimeGrid::fixed(0.0, self.mission.tf, self.solver.dt)
    }

    pub fn adaptive_grid(&self) -> TimeGrid {
        TimeGrid::adaptive(0.0, self.mission.tf, self.solver.rtol, self.solver.atol)
    }

    pub fn weighting(&self) -> Weighting {
        Weighting::constant(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&self.correction.weighting)))
    }

    /// Copy with the final time replaced.
    pub fn with_tf(&self, tf: f64) -> Result<Self> {
        let mut s = self.clone();
        s.mission.tf = tf;
        s.validate()?;
        Ok(s)
    }
}
