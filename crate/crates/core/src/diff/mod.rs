//! Derivatives: dual-number Jacobians and the discrete adjoint gradient.

mod adjoint;
mod dual;
mod jacobian;

pub use adjoint::{cost_gradient, cost_value, AdjointRhs, CostGradient, DualAdjoint, TerminalLoss};
pub use dual::{Dual, Scalar};
pub use jacobian::{jacobian_d, jacobian_d_chunked, jacobian_fd, jacobian_x, VectorField, DECISION_CHUNK, STATE_CHUNK};
