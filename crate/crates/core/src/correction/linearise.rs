//! Jacobians along a baseline at every RK4 stage time of a fixed grid.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diff::{jacobian_d, jacobian_x};
use crate::error::{Error, Result};
use crate::odeint::{TimeGrid, Trajectory};
use crate::plants::{ClosedLoop, OpenLoop, System};

/// Which linearisation of the plant to tabulate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Form {
    /// `∂f_θ/∂x`, `∂f_θ/∂θ` at `(x*(t), θ*)`.
    Parameter,
    /// `∂f_u/∂x`, `∂f_u/∂u` at `(x*(t), u*(t))`.
    Control,
}

/// Stage times are `t_k` (even slots) and `t_k + h_k / 2` (odd slots).
pub(crate) struct JacobianTable {
    pub nodes: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

pub(crate) fn stage_times(nodes: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * nodes.len() - 1);
    for w in nodes.windows(2) {
        out.push(w[0]);
        out.push(w[0] + 0.5 * (w[1] - w[0]));
    }
    out.push(*nodes.last().unwrap());
    out
}

impl JacobianTable {
    pub fn build<P: System>(
        plant: &P,
        theta: &[f64],
        baseline: &Trajectory,
        grid: &TimeGrid,
        form: Form,
    ) -> Result<Self> {
        let nodes = grid.nodes()?;
        if nodes[0] < baseline.t_start() || *nodes.last().unwrap() > baseline.t_end() {
            return Err(Error::OutOfRange {
                t: *nodes.last().unwrap(),
                start: baseline.t_start(),
                end: baseline.t_end(),
            });
        }
        let times = stage_times(&nodes);
        let pairs: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> = times
            .par_iter()
            .map(|&t| {
                let x = baseline.eval(t)?;
                match form {
                    Form::Parameter => {
                        let f = ClosedLoop(plant);
                        Ok((jacobian_x(&f, t, &x, theta)?, jacobian_d(&f, t, &x, theta)?))
                    }
                    Form::Control => {
                        let u = plant.policy::<f64>(t, &x, theta)?;
                        let f = OpenLoop(plant);
                        Ok((jacobian_x(&f, t, &x, &u)?, jacobian_d(&f, t, &x, &u)?))
                    }
                }
            })
            .collect();
        let mut a = Vec::with_capacity(pairs.len());
        let mut b = Vec::with_capacity(pairs.len());
        for p in pairs {
            let (ai, bi) = p?;
            a.push(ai);
            b.push(bi);
        }
        Ok(Self { nodes, a, b })
    }

    /// Slot index for a stage time produced by the RK4 driver on `nodes`.
    pub fn slot(&self, t: f64) -> Result<usize> {
        let k = self.nodes.partition_point(|&tk| tk <= t).saturating_sub(1);
        if self.nodes[k] == t {
            return Ok(2 * k);
        }
        if k + 1 < self.nodes.len() {
            let mid = self.nodes[k] + 0.5 * (self.nodes[k + 1] - self.nodes[k]);
            if mid == t {
                return Ok(2 * k + 1);
            }
        }
        Err(Error::InvalidGrid(format!("t = {t} is not a stage time of the tabulated grid")))
    }

    pub fn node_slot(k: usize) -> usize {
        2 * k
    }
}
