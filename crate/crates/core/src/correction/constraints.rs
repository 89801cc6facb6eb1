use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Targets `z(tᵢ) = zᵢ` on the output `z = H x`, sorted by time.
#[derive(Clone, Debug, PartialEq)]
pub struct InterimConstraintSet {
    h: DMatrix<f64>,
    targets: Vec<(f64, DVector<f64>)>,
}

impl InterimConstraintSet {
    pub fn new(h: DMatrix<f64>, targets: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidConstraints("at least one target is required".into()));
        }
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::InvalidConstraints("output matrix is empty".into()));
        }
        for (t, z) in &targets {
            if z.len() != h.nrows() {
                return Err(Error::InvalidConstraints(format!(
                    "target at t = {t} has {} entries, H has {} rows",
                    z.len(),
                    h.nrows()
                )));
            }
            if !t.is_finite() || z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConstraints(format!("non-finite target at t = {t}")));
            }
        }
        if targets.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidConstraints("constraint times must be strictly increasing".into()));
        }
        Ok(Self { h, targets })
    }

    /// One constraint on the full state.
    pub fn final_state(tf: f64, target: &[f64]) -> Result<Self> {
        let n = target.len();
        Self::new(DMatrix::identity(n, n), vec![(tf, DVector::from_column_slice(target))])
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn targets(&self) -> &[(f64, DVector<f64>)] {
        &self.targets
    }

    pub fn times(&self) -> Vec<f64> {
        self.targets.iter().map(|(t, _)| *t).collect()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    /// Constraints strictly after `t`, used when re-initialising mid-flight.
    pub fn after(&self, t: f64) -> Option<Self> {
        let rest: Vec<_> = self.targets.iter().filter(|(ti, _)| *ti > t).cloned().collect();
        if rest.is_empty() {
            None
        } else {
            Some(Self { h: self.h.clone(), targets: rest })
        }
    }

    pub(crate) fn check_span(&self, start: f64, end: f64) -> Result<()> {
        let (first, last) = (self.targets[0].0, self.targets[self.targets.len() - 1].0);
        if first < start || last > end {
            return Err(Error::InvalidConstraints(format!(
                "constraint times [{first}, {last}] fall outside [{start}, {end}]"
            )));
        }
        Ok(())
    }
}
