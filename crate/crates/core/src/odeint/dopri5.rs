//! Dormand–Prince 5(4) with the classic 4th-order continuous extension.

use super::event::StopCondition;
use super::grid::{Step, TimeGrid};
use super::rk4::check_finite;
use super::trajectory::{dopri_eval, DopriSegment, Interpolant, StopReason, TerminalEvent, Trajectory};
use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 1_000_000;
const BISECTION_ITERS: usize = 60;

fn lin(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        let ch = c * h;
        for (o, ki) in out.iter_mut().zip(k.iter()) {
            *o += ch * ki;
        }
    }
    out
}

fn rms(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / n.max(1) as f64).sqrt()
}

/// Adaptive Dormand–Prince propagation that halts at the first point where
/// `stop` holds, at `stop.max_time`, or at `grid.tf`, whichever comes first.
pub fn integrate_adaptive<F>(mut f: F, x0: &[f64], grid: &TimeGrid, stop: &StopCondition) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    grid.validate()?;
    let Step::Adaptive { rtol, atol } = grid.step else {
        return Err(Error::InvalidGrid("adaptive integration needs tolerances".into()));
    };
    let t0 = grid.t0;
    let t_end = grid.tf.min(stop.max_time);
    if !(t_end > t0) {
        return Err(Error::InvalidGrid(format!("max_time {} precedes t0 {t0}", stop.max_time)));
    }
    let n = x0.len();
    let h_min = 1e-14 * (grid.tf - t0);
    check_finite(t0, x0)?;

    let mut times = vec![t0];
    let mut states = vec![x0.to_vec()];
    let mut segments: Vec<DopriSegment> = Vec::new();
    if stop.is_met(t0, x0) {
        // Degenerate: nothing to integrate. Keep a zero-length record.
        return Ok(Trajectory::new(
            times,
            states,
            Interpolant::Dopri { segments },
            Some(TerminalEvent { t: t0, reason: StopReason::Condition }),
        ));
    }

    let mut t = t0;
    let mut y = x0.to_vec();
    let mut k1 = f(t, &y)?;
    check_finite(t, &k1)?;
    let sk = |a: &[f64], b: &[f64], i: usize| atol + rtol * a[i].abs().max(b[i].abs());

    // Initial step guess.
    let mut h = {
        let d0 = rms((0..n).map(|i| y[i] / sk(&y, &y, i)), n);
        let d1 = rms((0..n).map(|i| k1[i] / sk(&y, &y, i)), n);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(t_end - t0);
        let y1: Vec<f64> = (0..n).map(|i| y[i] + h0 * k1[i]).collect();
        let f1 = f(t + h0, &y1)?;
        let d2 = rms((0..n).map(|i| (f1[i] - k1[i]) / sk(&y, &y, i)), n) / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(t_end - t0)
    };

    let mut reject = false;
    let mut event = None;
    for _ in 0..MAX_STEPS {
        let last = t + h >= t_end - 1e-12 * (t_end - t0).abs();
        if last {
            h = t_end - t;
        }
        let k2 = f(t + C2 * h, &lin(&y, h, &[(A21, &k1)]))?;
        let k3 = f(t + C3 * h, &lin(&y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(t + C4 * h, &lin(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = f(t + C5 * h, &lin(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = f(t + h, &lin(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y_new = lin(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t_end } else { t + h };
        let k7 = f(t_new, &y_new)?;

        let finite = y_new.iter().chain(k7.iter()).all(|v| v.is_finite());
        let err = if finite {
            rms(
                (0..n).map(|i| {
                    let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                    e / sk(&y, &y_new, i)
                }),
                n,
            )
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            let ydiff: Vec<f64> = (0..n).map(|i| y_new[i] - y[i]).collect();
            let bspl: Vec<f64> = (0..n).map(|i| h * k1[i] - ydiff[i]).collect();
            let r3: Vec<f64> = (0..n).map(|i| ydiff[i] - h * k7[i] - bspl[i]).collect();
            let r4: Vec<f64> = (0..n)
                .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
                .collect();
            let seg = DopriSegment { h, rcont: [y.clone(), ydiff, bspl, r3, r4] };

            if stop.is_met(t_new, &y_new) {
                // Bisect for the first time the predicate holds.
                let (mut lo, mut hi) = (t, t_new);
                for _ in 0..BISECTION_ITERS {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if stop.is_met(mid, &dopri_eval(&seg, t, mid)) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let y_ev = if hi == t_new { y_new.clone() } else { dopri_eval(&seg, t, hi) };
                check_finite(hi, &y_ev)?;
                times.push(hi);
                states.push(y_ev);
                segments.push(seg);
                event = Some(TerminalEvent { t: hi, reason: StopReason::Condition });
                break;
            }

            check_finite(t_new, &y_new)?;
            times.push(t_new);
            states.push(y_new.clone());
            segments.push(seg);
            t = t_new;
            y = y_new;
            k1 = k7;
            if last {
                if t_end == stop.max_time {
                    event = Some(TerminalEvent { t, reason: StopReason::MaxTime });
                }
                break;
            }
            let mut fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX);
            if reject {
                fac = fac.min(1.0);
            }
            reject = false;
            h *= fac;
        } else {
            reject = true;
            let fac = if err.is_finite() { (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0) } else { FAC_MIN };
            h *= fac;
            if h < h_min {
                return Err(if finite { Error::StepUnderflow { t, h } } else { Error::NonFiniteState { t } });
            }
        }
    }
    if event.is_none() && times.last() != Some(&t_end) {
        return Err(Error::StepUnderflow { t, h });
    }
    Ok(Trajectory::new(times, states, Interpolant::Dopri { segments }, event))
}
