use crate::error::{Error, Result};

/// Step control for a propagation interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Step {
    /// Fixed step size in seconds; snapped so that it divides `tf - t0`.
    Fixed(f64),
    /// Error-controlled steps with relative/absolute tolerances.
    Adaptive { rtol: f64, atol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    pub step: Step,
}

impl TimeGrid {
    pub fn fixed(t0: f64, tf: f64, dt: f64) -> Self {
        Self { t0, tf, step: Step::Fixed(dt) }
    }

    pub fn adaptive(t0: f64, tf: f64, rtol: f64, atol: f64) -> Self {
        Self { t0, tf, step: Step::Adaptive { rtol, atol } }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.tf.is_finite() && self.t0 < self.tf) {
            return Err(Error::InvalidGrid(format!("need t0 < tf, got [{}, {}]", self.t0, self.tf)));
        }
        match self.step {
            Step::Fixed(dt) if !(dt > 0.0 && dt.is_finite()) => {
                Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")))
            }
            Step::Adaptive { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
                Err(Error::InvalidGrid(format!("tolerances must be positive, got {rtol}, {atol}")))
            }
            _ => Ok(()),
        }
    }

    /// Number of fixed steps and the snapped step size.
    pub fn fixed_steps(&self) -> Result<(usize, f64)> {
        self.validate()?;
        let Step::Fixed(dt) = self.step else {
            return Err(Error::InvalidGrid("fixed-step integration needs a fixed grid".into()));
        };
        let span = self.tf - self.t0;
        let steps = (span / dt).round().max(1.0);
        if ((steps * dt) - span).abs() > 1e-6 * span {
            return Err(Error::InvalidGrid(format!("dt = {dt} does not divide [{}, {}]", self.t0, self.tf)));
        }
        Ok((steps as usize, span / steps))
    }

    /// Grid node times `t0 + k h`, computed by multiplication so the last node
    /// is exactly `tf`.
    pub fn nodes(&self) -> Result<Vec<f64>> {
        let (steps, h) = self.fixed_steps()?;
        Ok((0..=steps).map(|k| if k == steps { self.tf } else { self.t0 + k as f64 * h }).collect())
    }

    pub fn with_tf(&self, tf: f64) -> Self {
        Self { tf, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mars_default_grid_has_861_nodes() {
        let g = TimeGrid::fixed(0.0, 43.0, 0.05);
        let nodes = g.nodes().unwrap();
        assert_eq!(nodes.len(), 861);
        assert_eq!(*nodes.last().unwrap(), 43.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::fixed(1.0, 1.0, 0.1).validate().is_err());
        assert!(TimeGrid::fixed(0.0, 1.0, -0.1).validate().is_err());
        assert!(TimeGrid::fixed(0.0, 1.0, 0.3).fixed_steps().is_err());
        assert!(TimeGrid::adaptive(0.0, 1.0, 0.0, 1e-9).validate().is_err());
    }
}
