use std::collections::BTreeMap;

use super::grid::TimeGrid;
use super::trajectory::{Interpolant, Trajectory};
use crate::error::{Error, Result};

#[inline]
pub(crate) fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

pub(crate) fn check_finite(t: f64, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// One classical Runge–Kutta step. Returns the new state; `k1` is `f(t, x)`.
pub(crate) fn rk4_step<F>(f: &mut F, t: f64, x: &[f64], k1: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let half = 0.5 * h;
    let k2 = f(t + half, &axpy(x, half, k1))?;
    let k3 = f(t + half, &axpy(x, half, &k2))?;
    let k4 = f(t + h, &axpy(x, h, &k3))?;
    let sixth = h / 6.0;
    Ok((0..x.len()).map(|i| x[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Fixed-step classical RK4 over the grid nodes.
///
/// The right-hand side is also evaluated at every knot (including the last)
/// to build the Hermite dense output, so stage calls are `4 * steps + 1`.
pub fn integrate_fixed<F>(mut f: F, x0: &[f64], grid: &TimeGrid) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let nodes = grid.nodes()?;
    check_finite(grid.t0, x0)?;
    let mut states = Vec::with_capacity(nodes.len());
    let mut derivs = Vec::with_capacity(nodes.len());
    let mut x = x0.to_vec();
    let mut k1 = f(nodes[0], &x)?;
    check_finite(nodes[0], &k1)?;
    for w in nodes.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let next = rk4_step(&mut f, t, &x, &k1, t_next - t)?;
        check_finite(t_next, &next)?;
        states.push(std::mem::replace(&mut x, next));
        derivs.push(k1);
        k1 = f(t_next, &x)?;
        check_finite(t_next, &k1)?;
    }
    states.push(x);
    derivs.push(k1);
    Ok(Trajectory::new(nodes, states, Interpolant::Hermite { derivs, left: BTreeMap::new() }, None))
}
