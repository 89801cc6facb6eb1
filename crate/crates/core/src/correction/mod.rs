//! Incremental corrections of a trained closed-loop system so that the
//! performance output `z = H x` meets interim equality constraints.
//!
//! Two methods share the plumbing here:
//! * parameter correction: a minimum-norm `θ̃` from the sensitivity matrix
//!   `M(t) = ∂x(t)/∂θ` and an SVD pseudoinverse;
//! * control correction: a minimum-energy additive input `ũ(t)` from the
//!   windowed Gramian blocks built on the fundamental matrix `U` and `N`.

mod apply;
mod constraints;
mod gramian;
mod linearise;
mod pinv;
mod schedule;
mod sensitivity;

pub use apply::{
    applied_control, apply_correction, apply_feedback, propagate, realised_residuals, Corrector, FeedbackEpoch,
    FeedbackRun, Mode,
};
pub use constraints::InterimConstraintSet;
pub use gramian::{
    assemble_psi, correct_control, final_time_control, propagate_un, GramianBundle, Weighting, MAX_PSI_CONDITION,
    MAX_U_CONDITION,
};
pub use pinv::{pinv_solve, PinvSolution, DEFAULT_PINV_RTOL};
pub use schedule::ControlSchedule;
pub use sensitivity::{correct_parameters, propagate_m, SensitivityMatrix};

use serde::Serialize;

/// What a correction changes.
#[derive(Clone, Debug)]
pub enum Correction {
    Parameter { delta_theta: Vec<f64> },
    Control { schedule: ControlSchedule, multipliers: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Rank kept by the pseudoinverse (parameter kind).
    pub rank: Option<usize>,
    pub singular_values: Vec<f64>,
    pub singular_values_retained: Vec<f64>,
    /// `σ_max / σ_min` of the retained spectrum, or the 2-norm condition of `Ψ̄`.
    pub condition: f64,
}

#[derive(Clone, Debug)]
pub struct CorrectionResult {
    pub correction: Correction,
    /// Linear-model residual `z(tᵢ) - zᵢ` per constraint.
    pub predicted_residuals: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl CorrectionResult {
    pub fn kind(&self) -> &'static str {
        match self.correction {
            Correction::Parameter { .. } => "parameter",
            Correction::Control { .. } => "control",
        }
    }

    pub fn delta_theta(&self) -> Option<&[f64]> {
        match &self.correction {
            Correction::Parameter { delta_theta } => Some(delta_theta),
            Correction::Control { .. } => None,
        }
    }

    pub fn schedule(&self) -> Option<&ControlSchedule> {
        match &self.correction {
            Correction::Control { schedule, .. } => Some(schedule),
            Correction::Parameter { .. } => None,
        }
    }

    /// Largest predicted residual relative to the largest requested change.
    pub fn max_predicted_residual(&self) -> f64 {
        self.predicted_residuals.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Serializable view: `θ̃`, or `ũ` sampled on its grid with `μ̄`.
    pub fn record(&self) -> CorrectionRecord {
        let (delta_theta, control, multipliers) = match &self.correction {
            Correction::Parameter { delta_theta } => (Some(delta_theta.clone()), None, None),
            Correction::Control { schedule, multipliers } => {
                (None, Some(schedule.samples()), Some(multipliers.clone()))
            }
        };
        CorrectionRecord {
            kind: self.kind(),
            delta_theta,
            control,
            multipliers,
            predicted_residuals: self.predicted_residuals.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectionRecord {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_theta: Option<Vec<f64>>,
    /// `(t, ũ(t))` on the schedule grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<Vec<(f64, Vec<f64>)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Vec<f64>>,
    pub predicted_residuals: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

#[cfg(test)]
mod tests;
