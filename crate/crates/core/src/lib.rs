//! Neural-network feedback policies inside ODEs, trained with a discrete
//! adjoint and refined by incremental corrections that enforce interim-point
//! equality constraints on a linear output of the state.
//!
//! * [`odeint`]: fixed-step RK4 and adaptive Dormand–Prince with dense output.
//! * [`diff`]: dual-number Jacobians and adjoint gradients.
//! * [`policy`]: the bounded multilayer perceptron.
//! * [`plants`]: linear oracle plants and the Mars powered-descent model.
//! * [`correction`]: parameter and control-function corrections.
//! * [`train`]: ADAM baseline training.
//! * [`scenario`], [`pipeline`], [`verify`]: configuration, experiment runs
//!   and the self-check suite used by the command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correction;
pub mod diff;
pub mod error;
pub mod odeint;
pub mod pipeline;
pub mod plants;
pub mod policy;
pub mod scenario;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
