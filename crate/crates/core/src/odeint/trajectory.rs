use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The stop predicate became true.
    Condition,
    /// Propagation reached the stop condition's `max_time`.
    MaxTime,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerminalEvent {
    pub t: f64,
    pub reason: StopReason,
}

#[derive(Clone, Debug)]
pub(crate) enum Interpolant {
    /// Cubic Hermite from the right-hand side at every knot.
    /// `left` holds the one-sided derivative at knots where segments were
    /// joined and the right-hand side jumps.
    Hermite { derivs: Vec<Vec<f64>>, left: BTreeMap<usize, Vec<f64>> },
    /// Dormand–Prince continuous extension, one per interval. `h` is the
    /// length of the step the coefficients were built for, which exceeds the
    /// interval when the step was cut short by an event.
    Dopri { segments: Vec<DopriSegment> },
}

#[derive(Clone, Debug)]
pub(crate) struct DopriSegment {
    pub h: f64,
    pub rcont: [Vec<f64>; 5],
}

/// Time-ordered state record with dense output between knots.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    interp: Interpolant,
    event: Option<TerminalEvent>,
}

impl Trajectory {
    pub(crate) fn new(
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        interp: Interpolant,
        event: Option<TerminalEvent>,
    ) -> Self {
        debug_assert_eq!(times.len(), states.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self { times, states, interp, event }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn first_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn event(&self) -> Option<TerminalEvent> {
        self.event
    }

    /// State at `t`, exact at knots and dense-interpolated elsewhere.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (start, end) = (self.t_start(), self.t_end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let idx = self.times.partition_point(|&tk| tk < t);
        if idx < self.times.len() && self.times[idx] == t {
            return Ok(self.states[idx].clone());
        }
        let i = idx - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        Ok(match &self.interp {
            Interpolant::Hermite { derivs, left } => {
                let h = t1 - t0;
                let s = (t - t0) / h;
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = (s3 - 2.0 * s2 + s) * h;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = (s3 - s2) * h;
                let (d0, d1) = (&derivs[i], left.get(&(i + 1)).unwrap_or(&derivs[i + 1]));
                (0..y0.len()).map(|k| h00 * y0[k] + h10 * d0[k] + h01 * y1[k] + h11 * d1[k]).collect()
            }
            Interpolant::Dopri { segments } => dopri_eval(&segments[i], t0, t),
        })
    }
}

impl Trajectory {
    /// Joins consecutive pieces that share their junction times. The first
    /// piece's end state is replaced by the next piece's start state (they
    /// coincide when the pieces were chained). The terminal event of the last
    /// piece is kept.
    pub fn concat(pieces: Vec<Trajectory>) -> Result<Trajectory> {
        let mut iter = pieces.into_iter();
        let mut acc = iter.next().ok_or_else(|| Error::InvalidGrid("no trajectory pieces".into()))?;
        for next in iter {
            if next.t_start() != acc.t_end() || next.dim() != acc.dim() {
                return Err(Error::InvalidGrid(format!("pieces do not join: {} vs {}", acc.t_end(), next.t_start())));
            }
            let junction = acc.times.len() - 1;
            acc.times.pop();
            acc.states.pop();
            acc.times.extend_from_slice(&next.times);
            acc.states.extend(next.states);
            match (&mut acc.interp, next.interp) {
                (Interpolant::Hermite { derivs, left }, Interpolant::Hermite { derivs: nd, left: nl }) => {
                    let end = derivs.pop().expect("non-empty");
                    if end != nd[0] {
                        left.insert(junction, end);
                    }
                    derivs.extend(nd);
                    left.extend(nl.into_iter().map(|(k, v)| (k + junction, v)));
                }
                (Interpolant::Dopri { segments }, Interpolant::Dopri { segments: ns }) => segments.extend(ns),
                _ => return Err(Error::InvalidGrid("cannot join fixed-step and adaptive pieces".into())),
            }
            acc.event = next.event;
        }
        Ok(acc)
    }
}

pub(crate) fn dopri_eval(seg: &DopriSegment, t_old: f64, t: f64) -> Vec<f64> {
    let th = (t - t_old) / seg.h;
    let th1 = 1.0 - th;
    let [r0, r1, r2, r3, r4] = &seg.rcont;
    (0..r0.len()).map(|k| r0[k] + th * (r1[k] + th1 * (r2[k] + th * (r3[k] + th1 * r4[k])))).collect()
}
