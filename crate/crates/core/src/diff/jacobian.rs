//! Dense Jacobians of vector fields `f(t, x, d)` by forward-mode seeding.

use nalgebra::DMatrix;

use super::dual::{Dual, Scalar};
use crate::error::{Error, Result};

/// Seeds per pass when differentiating with respect to the state.
pub const STATE_CHUNK: usize = 8;
/// Seeds per pass for the decision argument (parameters or controls).
pub const DECISION_CHUNK: usize = 32;

/// A right-hand side `f(t, x, d)` that can be evaluated on any [`Scalar`].
///
/// `d` is the decision argument: the parameter vector for the closed-loop
/// form, the control for the open-loop form.
pub trait VectorField: Sync {
    fn state_dim(&self) -> usize;
    fn decision_dim(&self) -> usize;
    fn eval<S: Scalar>(&self, t: f64, x: &[S], d: &[S]) -> Result<Vec<S>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Wrt {
    State,
    Decision,
}

fn chunked<const K: usize, F: VectorField>(f: &F, t: f64, x: &[f64], d: &[f64], wrt: Wrt) -> Result<DMatrix<f64>> {
    let n = f.state_dim();
    if x.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: x.len() });
    }
    if d.len() != f.decision_dim() {
        return Err(Error::LengthMismatch { expected: f.decision_dim(), got: d.len() });
    }
    let cols = match wrt {
        Wrt::State => n,
        Wrt::Decision => d.len(),
    };
    let mut jac = DMatrix::zeros(n, cols);
    let mut start = 0;
    while start < cols {
        let width = K.min(cols - start);
        let seed = |vals: &[f64], active: bool| -> Vec<Dual<K>> {
            vals.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if active && j >= start && j < start + width {
                        Dual::variable(v, j - start)
                    } else {
                        Dual::constant(v)
                    }
                })
                .collect()
        };
        let xd = seed(x, wrt == Wrt::State);
        let dd = seed(d, wrt == Wrt::Decision);
        let out = f.eval(t, &xd, &dd)?;
        if out.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: out.len() });
        }
        for (i, yi) in out.iter().enumerate() {
            for lane in 0..width {
                let v = yi.d[lane];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("d f[{i}] / d {:?}[{}] at t = {t}", wrt, start + lane)));
                }
                jac[(i, start + lane)] = v;
            }
        }
        start += width;
    }
    Ok(jac)
}

/// `∂f/∂x` at `(t, x, d)`.
pub fn jacobian_x<F: VectorField>(f: &F, t: f64, x: &[f64], d: &[f64]) -> Result<DMatrix<f64>> {
    chunked::<STATE_CHUNK, F>(f, t, x, d, Wrt::State)
}

/// `∂f/∂d` at `(t, x, d)`, seeded in chunks of [`DECISION_CHUNK`].
pub fn jacobian_d<F: VectorField>(f: &F, t: f64, x: &[f64], d: &[f64]) -> Result<DMatrix<f64>> {
    chunked::<DECISION_CHUNK, F>(f, t, x, d, Wrt::Decision)
}

/// `∂f/∂d` with an explicit chunk width; the result does not depend on `K`.
pub fn jacobian_d_chunked<const K: usize, F: VectorField>(f: &F, t: f64, x: &[f64], d: &[f64]) -> Result<DMatrix<f64>> {
    chunked::<K, F>(f, t, x, d, Wrt::Decision)
}

/// Central finite-difference Jacobian, used as an oracle in tests and in
/// the `verify` command.
pub fn jacobian_fd<G>(g: G, at: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let base = g(at)?;
    let mut jac = DMatrix::zeros(base.len(), at.len());
    let mut p = at.to_vec();
    for j in 0..at.len() {
        let h = steps[j];
        p[j] = at[j] + h;
        let fp = g(&p)?;
        p[j] = at[j] - h;
        let fm = g(&p)?;
        p[j] = at[j];
        for i in 0..base.len() {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}
