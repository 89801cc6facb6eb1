//! Plant models sharing one interface: open-loop dynamics `f_u(t, x, u)`,
//! a policy `π(t, x, θ)`, and the closed-loop form `f_θ = f_u(t, x, π(t, x, θ))`.

pub mod linear;
pub mod mars;

use crate::diff::{Scalar, VectorField};
use crate::error::Result;

pub use linear::{double_integrator, double_integrator_gramian, double_integrator_phi, scalar_plant, LinearPlant};
pub use mars::{f_sw, mission_vectors, MarsDynamics, MarsParams, MarsSystem, MissionSpec, MissionVectors};

pub trait System: Sync + Send {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Open-loop right-hand side `f_u`.
    fn dynamics<S: Scalar>(&self, t: f64, x: &[S], u: &[S]) -> Result<Vec<S>>;

    /// Feedback policy `π(t, x, θ)`.
    fn policy<S: Scalar>(&self, t: f64, x: &[S], theta: &[S]) -> Result<Vec<S>>;

    /// Closed-loop right-hand side `f_θ`.
    fn closed_loop<S: Scalar>(&self, t: f64, x: &[S], theta: &[S]) -> Result<Vec<S>> {
        let u = self.policy(t, x, theta)?;
        self.dynamics(t, x, &u)
    }

    /// Clamp a commanded control to the actuator limits. Identity by default.
    fn saturate(&self, _u: &mut [f64]) {}
}

/// `f_θ` viewed as a vector field with the parameters as decision argument.
pub struct ClosedLoop<'a, P>(pub &'a P);

/// `f_u` viewed as a vector field with the control as decision argument.
pub struct OpenLoop<'a, P>(pub &'a P);

impl<P: System> VectorField for ClosedLoop<'_, P> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn decision_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn eval<S: Scalar>(&self, t: f64, x: &[S], d: &[S]) -> Result<Vec<S>> {
        self.0.closed_loop(t, x, d)
    }
}

impl<P: System> VectorField for OpenLoop<'_, P> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn decision_dim(&self) -> usize {
        self.0.control_dim()
    }
    fn eval<S: Scalar>(&self, t: f64, x: &[S], d: &[S]) -> Result<Vec<S>> {
        self.0.dynamics(t, x, d)
    }
}
