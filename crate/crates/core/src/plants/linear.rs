//! Linear oracle plants.
//!
//! `ẋ = A(t) x + B(t) u` with `A(t) = A0 + t A1`, `B(t) = B0 + t B1`, and the
//! policy `u = K x + P(t) θ`, where channel `c` of `P(t) θ` is the polynomial
//! `Σ_k θ[c (deg + 1) + k] t^k`. The closed loop is linear in both `x` and `θ`,
//! so the linearised correction models are exact.
//!
//! Closed forms used by the tests:
//!
//! * scalar `ẋ = a x + b θ`, `x(0) = x0`: `Φ(t, τ) = e^{a (t - τ)}`,
//!   `M(t) = b (e^{a t} - 1) / a` (`= b t` when `a = 0`).
//! * double integrator `ẋ1 = x2, ẋ2 = u`: `Φ(t, τ) = [[1, t - τ], [0, 1]]`;
//!   with `u = θ` (constant), `M(t) = [t²/2, t]ᵀ`; with `R = 1` and a single
//!   full-state constraint at `tf` (from `t0 = 0`),
//!   `Ψ = [[tf³/3, tf²/2], [tf²/2, tf]]`.

use nalgebra::DMatrix;

use super::System;
use crate::diff::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearPlant {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub basis_degree: usize,
}

impl LinearPlant {
    pub fn lti(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let (n, m) = (a.nrows(), b.ncols());
        Self {
            a1: DMatrix::zeros(n, n),
            b1: DMatrix::zeros(n, m),
            gain: DMatrix::zeros(m, n),
            a0: a,
            b0: b,
            basis_degree: 0,
        }
    }

    pub fn with_gain(mut self, gain: DMatrix<f64>) -> Self {
        self.gain = gain;
        self
    }

    pub fn with_basis_degree(mut self, degree: usize) -> Self {
        self.basis_degree = degree;
        self
    }

    pub fn with_time_variation(mut self, a1: DMatrix<f64>, b1: DMatrix<f64>) -> Self {
        self.a1 = a1;
        self.b1 = b1;
        self
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        &self.a0 + &self.a1 * t
    }

    pub fn b(&self, t: f64) -> DMatrix<f64> {
        &self.b0 + &self.b1 * t
    }
}

/// `ẋ = a x + b u`, `u = θ`.
pub fn scalar_plant(a: f64, b: f64) -> LinearPlant {
    LinearPlant::lti(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b))
}

/// `ẋ1 = x2`, `ẋ2 = u`, `u = θ0 + θ1 t + … ` up to `basis_degree`.
pub fn double_integrator(basis_degree: usize) -> LinearPlant {
    LinearPlant::lti(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .with_basis_degree(basis_degree)
}

/// Closed-form state transition matrix of the double integrator.
pub fn double_integrator_phi(t2: f64, t1: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, t2 - t1, 0.0, 1.0])
}

/// Closed-form `Ψ` for a single full-state constraint at `tf`, `R = 1`, `t0 = 0`.
pub fn double_integrator_gramian(tf: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[tf.powi(3) / 3.0, tf * tf / 2.0, tf * tf / 2.0, tf])
}

fn matvec<S: Scalar>(m0: &DMatrix<f64>, m1: &DMatrix<f64>, t: f64, v: &[S], out: &mut [S]) {
    for i in 0..m0.nrows() {
        for (j, vj) in v.iter().enumerate() {
            let c = m0[(i, j)] + t * m1[(i, j)];
            if c != 0.0 {
                out[i] += *vj * c;
            }
        }
    }
}

impl System for LinearPlant {
    fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b0.ncols()
    }

    fn param_dim(&self) -> usize {
        self.control_dim() * (self.basis_degree + 1)
    }

    fn dynamics<S: Scalar>(&self, t: f64, x: &[S], u: &[S]) -> Result<Vec<S>> {
        if x.len() != self.state_dim() {
            return Err(Error::LengthMismatch { expected: self.state_dim(), got: x.len() });
        }
        if u.len() != self.control_dim() {
            return Err(Error::LengthMismatch { expected: self.control_dim(), got: u.len() });
        }
        let mut out = vec![S::zero(); self.state_dim()];
        matvec(&self.a0, &self.a1, t, x, &mut out);
        matvec(&self.b0, &self.b1, t, u, &mut out);
        Ok(out)
    }

    fn policy<S: Scalar>(&self, t: f64, x: &[S], theta: &[S]) -> Result<Vec<S>> {
        if theta.len() != self.param_dim() {
            return Err(Error::LengthMismatch { expected: self.param_dim(), got: theta.len() });
        }
        let m = self.control_dim();
        let k = self.basis_degree + 1;
        let mut u = vec![S::zero(); m];
        let zeros = DMatrix::zeros(m, self.state_dim());
        matvec(&self.gain, &zeros, 0.0, x, &mut u);
        for (c, uc) in u.iter_mut().enumerate() {
            let mut p = 1.0;
            for j in 0..k {
                *uc += theta[c * k + j] * p;
                p *= t;
            }
        }
        Ok(u)
    }
}
