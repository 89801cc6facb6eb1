use std::sync::Arc;

type Predicate = dyn Fn(f64, &[f64]) -> bool + Send + Sync;

/// Which sign change of a scalar guard triggers a stop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Stop once `g(t, x) <= 0`.
    Falling,
    /// Stop once `g(t, x) >= 0`.
    Rising,
}

/// Terminates adaptive propagation at the first time the predicate holds,
/// or at `max_time`.
#[derive(Clone)]
pub struct StopCondition {
    predicate: Arc<Predicate>,
    pub max_time: f64,
}

impl std::fmt::Debug for StopCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StopCondition").field("max_time", &self.max_time).finish_non_exhaustive()
    }
}

impl StopCondition {
    pub fn new<P>(predicate: P, max_time: f64) -> Self
    where
        P: Fn(f64, &[f64]) -> bool + Send + Sync + 'static,
    {
        Self { predicate: Arc::new(predicate), max_time }
    }

    pub fn crossing<G>(guard: G, direction: Direction, max_time: f64) -> Self
    where
        G: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        match direction {
            Direction::Falling => Self::new(move |t, x| guard(t, x) <= 0.0, max_time),
            Direction::Rising => Self::new(move |t, x| guard(t, x) >= 0.0, max_time),
        }
    }

    /// Only the time limit applies.
    pub fn time_limit(max_time: f64) -> Self {
        Self::new(|_, _| false, max_time)
    }

    pub fn is_met(&self, t: f64, x: &[f64]) -> bool {
        (self.predicate)(t, x)
    }
}
