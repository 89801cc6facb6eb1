use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when none is configured.
pub const DEFAULT_PINV_RTOL: f64 = 0.005;

#[derive(Clone, Debug, PartialEq)]
pub struct PinvSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub retained: Vec<f64>,
}

impl PinvSolution {
    pub fn condition(&self) -> f64 {
        match (self.retained.first(), self.retained.last()) {
            (Some(hi), Some(lo)) if *lo > 0.0 => hi / lo,
            _ => f64::INFINITY,
        }
    }
}

/// Minimum-norm solution of `L x = b` by truncated SVD, dropping singular
/// values below `rel_tol · σ_max`.
pub fn pinv_solve(l: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Result<PinvSolution> {
    if b.len() != l.nrows() {
        return Err(Error::LengthMismatch { expected: l.nrows(), got: b.len() });
    }
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::Config(format!("pseudoinverse tolerance must lie in [0, 1), got {rel_tol}")));
    }
    if l.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudoinverse input".into()));
    }
    let svd = l.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors");
    let vt = svd.v_t.as_ref().expect("right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &c| svd.singular_values[c].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let cutoff = rel_tol * sigma_max;
    let mut x = DVector::zeros(l.ncols());
    let mut retained = Vec::new();
    for &k in &order {
        let s = svd.singular_values[k];
        if !(s > cutoff) || s == 0.0 {
            continue;
        }
        retained.push(s);
        let coef = u.column(k).dot(b) / s;
        x += vt.row(k).transpose() * coef;
    }
    if retained.is_empty() {
        return Err(Error::RankZero { sigma_max });
    }
    Ok(PinvSolution { x, rank: retained.len(), singular_values: sigma, retained })
}
