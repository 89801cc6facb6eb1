//! Reverse accumulation through fixed-step RK4 (discrete adjoint).
//!
//! The gradient returned is exact for the discretised map `θ ↦ J(x_N(θ), θ)`,
//! where `x_N` is the RK4 endpoint on the given grid.

use nalgebra::DVector;

use super::dual::Scalar;
use super::jacobian::{jacobian_d, jacobian_x, VectorField};
use crate::error::{Error, Result};
use crate::odeint::{integrate_fixed, TimeGrid, Trajectory};

/// Right-hand side `f(t, x, θ)` with a vector-Jacobian product.
pub trait AdjointRhs: Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<Vec<f64>>;
    /// `(λᵀ ∂f/∂x, λᵀ ∂f/∂θ)` at `(t, x, θ)`.
    fn vjp(&self, t: f64, x: &[f64], theta: &[f64], lambda: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Terminal loss `ℓ(x_N, θ)` with its gradients.
pub trait TerminalLoss {
    /// Returns `(ℓ, ∂ℓ/∂x_N, ∂ℓ/∂θ)`.
    fn eval(&self, x_final: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)>;
}

impl<F> TerminalLoss for F
where
    F: Fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)>,
{
    fn eval(&self, x_final: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self(x_final, theta)
    }
}

/// Adapter giving any [`VectorField`] an [`AdjointRhs`] through dense dual
/// Jacobians. Adequate for small plants; large models should implement
/// [`AdjointRhs::vjp`] directly.
pub struct DualAdjoint<'a, F>(pub &'a F);

impl<F: VectorField> AdjointRhs for DualAdjoint<'_, F> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn param_dim(&self) -> usize {
        self.0.decision_dim()
    }
    fn eval(&self, t: f64, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let xs: Vec<f64> = x.to_vec();
        let out = self.0.eval::<f64>(t, &xs, theta)?;
        Ok(out.iter().map(|v| v.value()).collect())
    }
    fn vjp(&self, t: f64, x: &[f64], theta: &[f64], lambda: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = DVector::from_column_slice(lambda);
        let ax = jacobian_x(self.0, t, x, theta)?;
        let bt = jacobian_d(self.0, t, x, theta)?;
        Ok(((ax.transpose() * &l).as_slice().to_vec(), (bt.transpose() * &l).as_slice().to_vec()))
    }
}

#[derive(Clone, Debug)]
pub struct CostGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Forward trajectory on the grid used for the gradient.
    pub trajectory: Trajectory,
}

/// Forward RK4 only; the value matches [`cost_gradient`] exactly.
pub fn cost_value<F: AdjointRhs, L: TerminalLoss>(
    f: &F,
    loss: &L,
    theta: &[f64],
    x0: &[f64],
    grid: &TimeGrid,
) -> Result<(f64, Trajectory)> {
    check_dims(f, theta, x0)?;
    let traj = integrate_fixed(|t, x| f.eval(t, x, theta), x0, grid)?;
    let (value, _, _) = loss.eval(traj.last_state(), theta)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    Ok((value, traj))
}

/// Value and gradient of `ℓ(x_N(θ), θ)` through the RK4 recursion.
pub fn cost_gradient<F: AdjointRhs, L: TerminalLoss>(
    f: &F,
    loss: &L,
    theta: &[f64],
    x0: &[f64],
    grid: &TimeGrid,
) -> Result<CostGradient> {
    let (_, traj) = cost_value(f, loss, theta, x0, grid)?;
    let (value, gx, gtheta) = loss.eval(traj.last_state(), theta)?;
    let mut lambda = gx;
    let mut grad = gtheta;
    let times = traj.times();
    let states = traj.states();
    for k in (0..times.len() - 1).rev() {
        let (t, h) = (times[k], times[k + 1] - times[k]);
        let x = &states[k];
        let half = 0.5 * h;
        let k1 = f.eval(t, x, theta)?;
        let x2 = axpy(x, half, &k1);
        let k2 = f.eval(t + half, &x2, theta)?;
        let x3 = axpy(x, half, &k2);
        let k3 = f.eval(t + half, &x3, theta)?;
        let x4 = axpy(x, h, &k3);

        let b4 = scaled(&lambda, h / 6.0);
        let (a4x, a4t) = f.vjp(t + h, &x4, theta, &b4)?;
        let b3 = combine(&lambda, h / 3.0, &a4x, h);
        let (a3x, a3t) = f.vjp(t + half, &x3, theta, &b3)?;
        let b2 = combine(&lambda, h / 3.0, &a3x, half);
        let (a2x, a2t) = f.vjp(t + half, &x2, theta, &b2)?;
        let b1 = combine(&lambda, h / 6.0, &a2x, half);
        let (a1x, a1t) = f.vjp(t, x, theta, &b1)?;

        for i in 0..lambda.len() {
            lambda[i] += a1x[i] + a2x[i] + a3x[i] + a4x[i];
        }
        for j in 0..grad.len() {
            grad[j] += a1t[j] + a2t[j] + a3t[j] + a4t[j];
        }
        if !(lambda.iter().all(|v| v.is_finite()) && grad.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteGradient { step: k });
        }
    }
    Ok(CostGradient { value, gradient: grad, trajectory: traj })
}

fn check_dims<F: AdjointRhs>(f: &F, theta: &[f64], x0: &[f64]) -> Result<()> {
    if theta.len() != f.param_dim() {
        return Err(Error::LengthMismatch { expected: f.param_dim(), got: theta.len() });
    }
    if x0.len() != f.state_dim() {
        return Err(Error::LengthMismatch { expected: f.state_dim(), got: x0.len() });
    }
    Ok(())
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn scaled(v: &[f64], a: f64) -> Vec<f64> {
    v.iter().map(|x| a * x).collect()
}

fn combine(l: &[f64], a: f64, g: &[f64], b: f64) -> Vec<f64> {
    l.iter().zip(g).map(|(li, gi)| a * li + b * gi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Scalar;

    /// `ẋ = θ₀` for a scalar state, with an extra unused parameter.
    struct Drift;

    impl VectorField for Drift {
        fn state_dim(&self) -> usize {
            1
        }
        fn decision_dim(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, _t: f64, _x: &[S], d: &[S]) -> Result<Vec<S>> {
            Ok(vec![d[0]])
        }
    }

    /// `ẋ = -θ₀ x + θ₁ sin t`.
    struct Decay;

    impl VectorField for Decay {
        fn state_dim(&self) -> usize {
            1
        }
        fn decision_dim(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, t: f64, x: &[S], d: &[S]) -> Result<Vec<S>> {
            Ok(vec![-(d[0] * x[0]) + d[1] * t.sin()])
        }
    }

    fn grid() -> TimeGrid {
        TimeGrid::fixed(0.0, 1.0, 0.01)
    }

    #[test]
    fn pure_regulariser_gives_two_theta() {
        let theta = [0.3, -1.2];
        let loss = |_x: &[f64], th: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            Ok((th.iter().map(|v| v * v).sum(), vec![0.0], th.iter().map(|v| 2.0 * v).collect()))
        };
        let g = cost_gradient(&DualAdjoint(&Drift), &loss, &theta, &[0.0], &grid()).unwrap();
        assert_eq!(g.gradient, vec![0.6, -2.4]);
    }

    #[test]
    fn drift_squared_endpoint() {
        let theta = [0.7, 5.0];
        let loss = |x: &[f64], _th: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            Ok((x[0] * x[0], vec![2.0 * x[0]], vec![0.0, 0.0]))
        };
        let g = cost_gradient(&DualAdjoint(&Drift), &loss, &theta, &[0.0], &grid()).unwrap();
        assert!((g.value - 0.49).abs() < 1e-12);
        assert!((g.gradient[0] - 1.4).abs() < 1e-12);
        assert_eq!(g.gradient[1], 0.0);
    }

    #[test]
    fn matches_finite_differences_on_nonlinear_map() {
        let theta = [0.8, 0.4];
        let loss = |x: &[f64], th: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            Ok(((x[0] - 1.0).powi(2) + th[1] * th[1], vec![2.0 * (x[0] - 1.0)], vec![0.0, 2.0 * th[1]]))
        };
        let f = DualAdjoint(&Decay);
        let g = cost_gradient(&f, &loss, &theta, &[2.0], &grid()).unwrap();
        for j in 0..2 {
            let h = 1e-6;
            let mut tp = theta;
            tp[j] += h;
            let fp = cost_value(&f, &loss, &tp, &[2.0], &grid()).unwrap().0;
            tp[j] -= 2.0 * h;
            let fm = cost_value(&f, &loss, &tp, &[2.0], &grid()).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((g.gradient[j] - fd).abs() < 1e-8 * fd.abs().max(1.0), "{j}: {} vs {fd}", g.gradient[j]);
        }
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        struct Blow;
        impl AdjointRhs for Blow {
            fn state_dim(&self) -> usize {
                1
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn eval(&self, _t: f64, _x: &[f64], _th: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
            fn vjp(&self, t: f64, _x: &[f64], _th: &[f64], _l: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
                let v = if t > 0.5 { f64::NAN } else { 0.0 };
                Ok((vec![v], vec![0.0]))
            }
        }
        let loss = |x: &[f64], _th: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> { Ok((x[0], vec![1.0], vec![0.0])) };
        let err = cost_gradient(&Blow, &loss, &[0.0], &[0.0], &grid()).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { step: 99 });
    }
}
