//! Three-degree-of-freedom powered descent at Mars in a planet-fixed frame.
//!
//! State `x = [r (m), v (m/s), m (kg)]`, control `u = [δ_T, σ_T, η_T]`
//! (throttle, thrust azimuth and elevation in rad). Forces are resolved on
//! the wind-axes triad built from `v_a = v - v_w` and `r`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::System;
use crate::diff::Scalar;
use crate::error::{Error, Result};
use crate::odeint::StopCondition;
use crate::policy::{Bound, PolicyNetwork};

const DEG: f64 = PI / 180.0;
const SECONDS_PER_DAY: f64 = 86_400.0;
/// Below this `‖v_a × r‖ / (‖v_a‖ ‖r‖)` the triad uses the mission-plane normal.
pub const TRIAD_SINGULARITY: f64 = 1e-6;

/// Vehicle and environment constants, SI units throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarsParams {
    pub mu: f64,
    pub r_m: f64,
    /// Rotation rate about the planet Z axis, rad/s.
    pub omega: f64,
    pub rho0: f64,
    pub h_scale: f64,
    pub g0: f64,
    pub wind: [f64; 3],
    pub m_dry: f64,
    pub m_sw: f64,
    pub isp: f64,
    pub beta0: f64,
    pub lift_to_drag: f64,
    pub sigma_l: f64,
    pub t_max: f64,
    pub t_min: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for MarsParams {
    fn default() -> Self {
        Self {
            mu: 4.282837e13,
            r_m: 3389.5e3,
            omega: 2.0 * PI / 1.025957 / SECONDS_PER_DAY,
            rho0: 0.0263,
            h_scale: 10153.6,
            g0: 9.805,
            wind: [0.0; 3],
            m_dry: 51_600.0,
            m_sw: 1.0,
            isp: 360.0,
            beta0: 379.0,
            lift_to_drag: 0.54,
            sigma_l: 0.0,
            t_max: 8e5,
            t_min: 0.2 * 8e5,
            eta_min: -90.0 * DEG,
            eta_max: 90.0 * DEG,
            sigma_min: -180.0 * DEG,
            sigma_max: 180.0 * DEG,
        }
    }
}

impl MarsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("r_m", self.r_m),
            ("h_scale", self.h_scale),
            ("g0", self.g0),
            ("m_dry", self.m_dry),
            ("m_sw", self.m_sw),
            ("isp", self.isp),
            ("beta0", self.beta0),
            ("t_max", self.t_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho0 >= 0.0 && self.omega >= 0.0 && self.lift_to_drag >= 0.0) {
            return Err(Error::Config("rho0, omega and lift_to_drag must be non-negative".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max) {
            return Err(Error::Config("need 0 < t_min < t_max".into()));
        }
        if !(self.eta_min < self.eta_max && self.sigma_min < self.sigma_max) {
            return Err(Error::Config("angle limits must satisfy min < max".into()));
        }
        Ok(())
    }

    /// Policy output bounds `[δ_T, σ_T, η_T]`.
    pub fn control_bounds(&self) -> [Bound; 3] {
        [
            Bound::new(self.t_min / self.t_max, 1.0),
            Bound::new(self.sigma_min, self.sigma_max),
            Bound::new(self.eta_min, self.eta_max),
        ]
    }

    pub fn density(&self, altitude: f64) -> f64 {
        self.rho0 * (-altitude / self.h_scale).exp()
    }
}

/// Mission geometry and timing (Table-style inputs, SI units, angles in rad).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub h0: f64,
    pub v0: f64,
    pub gamma0: f64,
    pub s0: f64,
    pub m0: f64,
    pub theta_fd: f64,
    pub v_fd: f64,
    pub tf: f64,
}

impl Default for MissionSpec {
    fn default() -> Self {
        Self {
            h0: 2480.0,
            v0: 505.0,
            gamma0: 0.0,
            s0: 11_500.0,
            m0: 62_000.0,
            theta_fd: 45.0 * DEG,
            v_fd: 2.5,
            tf: 43.0,
        }
    }
}

impl MissionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.tf > 0.0 && self.v0 > 0.0 && self.m0 > 0.0) {
            return Err(Error::Config("s0, tf, v0 and m0 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MissionVectors {
    pub r0: [f64; 3],
    pub v0: [f64; 3],
    pub r_fd: [f64; 3],
    pub v_fd: [f64; 3],
}

/// Planar (XZ) initial and desired final conditions; `θ0 = θ_fd - s0 / R_M`.
pub fn mission_vectors(spec: &MissionSpec, r_m: f64) -> MissionVectors {
    let theta0 = spec.theta_fd - spec.s0 / r_m;
    let rr = r_m + spec.h0;
    let r0 = [rr * theta0.cos(), 0.0, rr * theta0.sin()];
    let psi = theta0 - spec.gamma0;
    let v0 = [-spec.v0 * psi.sin(), 0.0, spec.v0 * psi.cos()];
    let r_fd = [r_m * spec.theta_fd.cos(), 0.0, r_m * spec.theta_fd.sin()];
    let v_fd = [-spec.v_fd * spec.theta_fd.cos(), 0.0, -spec.v_fd * spec.theta_fd.sin()];
    MissionVectors { r0, v0, r_fd, v_fd }
}

/// Smooth thrust switch: `(1 - cos(π clamp((m - m_dry) / m_sw, 0, 1))) / 2`.
pub fn f_sw<S: Scalar>(m: S, m_dry: f64, m_sw: f64) -> S {
    let s = (m - m_dry) / m_sw;
    if s.value() <= 0.0 {
        S::zero()
    } else if s.value() >= 1.0 {
        S::cst(1.0)
    } else {
        (-(s * PI).cos() + 1.0) * 0.5
    }
}

#[inline]
fn cross<S: Scalar>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn dot<S: Scalar>(a: [S; 3], b: [S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn scale<S: Scalar>(a: [S; 3], s: S) -> [S; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Open-loop Mars dynamics with everything needed to evaluate `f_u`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarsDynamics {
    pub params: MarsParams,
    /// `C_D S`, fixed from the initial mass and ballistic coefficient.
    pub drag_area: f64,
    /// Unit normal of the mission plane, oriented like `v0 × r0`.
    pub fallback_normal: [f64; 3],
}

impl MarsDynamics {
    pub fn new(params: MarsParams, spec: &MissionSpec) -> Self {
        let mv = mission_vectors(spec, params.r_m);
        let n = cross(mv.v0, mv.r0);
        let nn = dot(n, n).sqrt();
        Self { drag_area: spec.m0 / params.beta0, fallback_normal: scale(n, 1.0 / nn), params }
    }

    /// Thrust magnitude `f_sw(m) T_max δ_T`.
    pub fn thrust<S: Scalar>(&self, m: S, throttle: S) -> S {
        f_sw(m, self.params.m_dry, self.params.m_sw) * throttle * self.params.t_max
    }

    pub fn rhs<S: Scalar>(&self, _t: f64, x: &[S], u: &[S]) -> Result<Vec<S>> {
        if x.len() != 7 {
            return Err(Error::LengthMismatch { expected: 7, got: x.len() });
        }
        if u.len() != 3 {
            return Err(Error::LengthMismatch { expected: 3, got: u.len() });
        }
        let p = &self.params;
        let r = [x[0], x[1], x[2]];
        let v = [x[3], x[4], x[5]];
        let m = x[6];
        let (throttle, sigma_t, eta_t) = (u[0], u[1], u[2]);

        let r_norm = dot(r, r).sqrt();
        let va = [v[0] - p.wind[0], v[1] - p.wind[1], v[2] - p.wind[2]];
        let va_norm = dot(va, va).sqrt();
        if !(va_norm.value() > 0.0) || !(r_norm.value() > 0.0) {
            return Err(Error::DegenerateTriad);
        }
        let va_hat = scale(va, va_norm.recip());

        let c = cross(va, r);
        let c_norm = dot(c, c).sqrt();
        let n_hat = if c_norm.value() / (va_norm.value() * r_norm.value()) < TRIAD_SINGULARITY {
            // Mission-plane normal, made orthogonal to v̂_a.
            let nf =
                [S::cst(self.fallback_normal[0]), S::cst(self.fallback_normal[1]), S::cst(self.fallback_normal[2])];
            let proj = dot(nf, va_hat);
            let q = [nf[0] - va_hat[0] * proj, nf[1] - va_hat[1] * proj, nf[2] - va_hat[2] * proj];
            let qn = dot(q, q).sqrt();
            if !(qn.value() > 0.0) {
                return Err(Error::DegenerateTriad);
            }
            scale(q, qn.recip())
        } else {
            scale(c, c_norm.recip())
        };
        let l_hat = cross(n_hat, va_hat);

        let altitude = r_norm - p.r_m;
        let rho = (altitude * (-1.0 / p.h_scale)).exp() * p.rho0;
        let drag = rho * va_norm * va_norm * (0.5 * self.drag_area);
        let lift = drag * p.lift_to_drag;
        let thrust = self.thrust(m, throttle);

        let (cl, sl) = (p.sigma_l.cos(), p.sigma_l.sin());
        let ce = eta_t.cos();
        let t_l = ce * sigma_t.cos() * thrust;
        let t_n = ce * sigma_t.sin() * thrust;
        let t_v = eta_t.sin() * thrust;

        let inv_m = m.recip();
        let r3 = r_norm * r_norm * r_norm;
        let grav = (r3.recip()) * (-p.mu);
        let w = p.omega;
        let mut out = Vec::with_capacity(7);
        out.extend_from_slice(&v);
        for k in 0..3 {
            let force = l_hat[k] * (lift * cl + t_l) + n_hat[k] * (lift * sl + t_n) + va_hat[k] * (t_v - drag);
            let coriolis = match k {
                0 => v[1] * (2.0 * w),
                1 => v[0] * (-2.0 * w),
                _ => S::zero(),
            };
            let centrifugal = match k {
                0 => r[0] * (w * w),
                1 => r[1] * (w * w),
                _ => S::zero(),
            };
            out.push(r[k] * grav + force * inv_m + coriolis + centrifugal);
        }
        out.push(thrust * (-1.0 / (p.isp * p.g0)));
        Ok(out)
    }
}

/// Closed-loop Mars system: dynamics plus the network policy fed with
/// normalised position and velocity errors.
#[derive(Clone, Debug)]
pub struct MarsSystem {
    pub dynamics: MarsDynamics,
    pub mission: MissionSpec,
    pub vectors: MissionVectors,
    pub net: PolicyNetwork,
    /// Stop-rule proximity radius, m.
    pub stop_radius: f64,
}

impl MarsSystem {
    pub fn new(params: MarsParams, mission: MissionSpec) -> Self {
        let net = PolicyNetwork::mars(params.control_bounds());
        let vectors = mission_vectors(&mission, params.r_m);
        let dynamics = MarsDynamics::new(params, &mission);
        Self { dynamics, mission, vectors, net, stop_radius: 100.0 }
    }

    pub fn params(&self) -> &MarsParams {
        &self.dynamics.params
    }

    pub fn initial_state(&self) -> Vec<f64> {
        let MissionVectors { r0, v0, .. } = self.vectors;
        vec![r0[0], r0[1], r0[2], v0[0], v0[1], v0[2], self.mission.m0]
    }

    /// `[(r - r_fd) / s0, (v - v_fd) / V0]`.
    pub fn policy_input<S: Scalar>(&self, x: &[S]) -> [S; 6] {
        let MissionVectors { r_fd, v_fd, .. } = self.vectors;
        let (s0, v0) = (self.mission.s0, self.mission.v0);
        [
            (x[0] - r_fd[0]) / s0,
            (x[1] - r_fd[1]) / s0,
            (x[2] - r_fd[2]) / s0,
            (x[3] - v_fd[0]) / v0,
            (x[4] - v_fd[1]) / v0,
            (x[5] - v_fd[2]) / v0,
        ]
    }

    pub fn position_error(&self, x: &[f64]) -> f64 {
        let r_fd = self.vectors.r_fd;
        ((x[0] - r_fd[0]).powi(2) + (x[1] - r_fd[1]).powi(2) + (x[2] - r_fd[2]).powi(2)).sqrt()
    }

    pub fn velocity_error(&self, x: &[f64]) -> f64 {
        let v_fd = self.vectors.v_fd;
        ((x[3] - v_fd[0]).powi(2) + (x[4] - v_fd[1]).powi(2) + (x[5] - v_fd[2]).powi(2)).sqrt()
    }

    /// `(t ≥ max_time) ∨ (‖r - r_fd‖ ≤ radius ∧ v · (r - r_fd) ≥ 0)`.
    pub fn stop_condition(&self, max_time: f64) -> StopCondition {
        let r_fd = self.vectors.r_fd;
        let radius = self.stop_radius;
        StopCondition::new(
            move |_t, x| {
                let d = [x[0] - r_fd[0], x[1] - r_fd[1], x[2] - r_fd[2]];
                let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                dist <= radius && x[3] * d[0] + x[4] * d[1] + x[5] * d[2] >= 0.0
            },
            max_time,
        )
    }

    /// Local frame at the landing site: `(up, downrange, crossrange)` with
    /// up `= r̂_fd`, crossrange the mission-plane normal `r0 × v0`, and
    /// downrange completing the right-handed triad.
    pub fn landing_frame(&self) -> [[f64; 3]; 3] {
        let r_fd = self.vectors.r_fd;
        let nr = dot(r_fd, r_fd).sqrt();
        let up = scale(r_fd, 1.0 / nr);
        let cr = scale(self.dynamics.fallback_normal, -1.0);
        let down = cross(cr, up);
        [up, down, cr]
    }
}

impl System for MarsSystem {
    fn state_dim(&self) -> usize {
        7
    }

    fn control_dim(&self) -> usize {
        3
    }

    fn param_dim(&self) -> usize {
        self.net.param_count()
    }

    fn dynamics<S: Scalar>(&self, t: f64, x: &[S], u: &[S]) -> Result<Vec<S>> {
        self.dynamics.rhs(t, x, u)
    }

    fn policy<S: Scalar>(&self, _t: f64, x: &[S], theta: &[S]) -> Result<Vec<S>> {
        if theta.len() != self.net.param_count() {
            return Err(Error::LengthMismatch { expected: self.net.param_count(), got: theta.len() });
        }
        Ok(self.net.forward_with(theta, &self.policy_input(x)))
    }

    fn saturate(&self, u: &mut [f64]) {
        for (ui, b) in u.iter_mut().zip(self.params().control_bounds()) {
            *ui = ui.clamp(b.lb, b.ub);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{jacobian_d, jacobian_fd, jacobian_x};
    use crate::odeint::{integrate_fixed, TimeGrid};
    use crate::plants::{ClosedLoop, OpenLoop};

    fn system() -> MarsSystem {
        MarsSystem::new(MarsParams::default(), MissionSpec::default())
    }

    #[test]
    fn thrust_switch_values() {
        assert_eq!(f_sw(51_600.0, 51_600.0, 1.0), 0.0);
        assert_eq!(f_sw(51_601.0, 51_600.0, 1.0), 1.0);
        assert!((f_sw(51_600.5, 51_600.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(f_sw(40_000.0, 51_600.0, 1.0), 0.0);
    }

    #[test]
    fn dry_vehicle_has_no_thrust() {
        let sys = system();
        let mut x = sys.initial_state();
        x[6] = sys.params().m_dry;
        let d = sys.dynamics(0.0, &x, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(d[6], 0.0);
        let coast = {
            let mut p = sys.params().clone();
            p.t_max = 1e-300;
            p.t_min = 1e-301;
            MarsDynamics::new(p, &sys.mission).rhs(0.0, &x, &[1.0, 0.0, 0.0]).unwrap()
        };
        for k in 3..6 {
            assert!((d[k] - coast[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn density_profile() {
        let p = MarsParams::default();
        assert_eq!(p.density(0.0), 0.0263);
        assert!((p.density(p.h_scale) - 0.0263 / std::f64::consts::E).abs() < 1e-15);
        assert!(p.density(100.0) < p.density(0.0));
    }

    #[test]
    fn mission_geometry() {
        let sys = system();
        let mv = sys.vectors;
        let rn = dot(mv.r0, mv.r0).sqrt();
        assert!((rn - 3_391_980.0).abs() < 1e-6);
        assert!(dot(mv.r0, mv.v0).abs() <= 1e-9 * rn * 505.0);
        let rfd_hat = scale(mv.r_fd, 1.0 / dot(mv.r_fd, mv.r_fd).sqrt());
        for k in 0..3 {
            assert!((mv.v_fd[k] + 2.5 * rfd_hat[k]).abs() < 1e-12);
        }
        let s = sys.params().r_m * (dot(mv.r0, mv.r_fd) / (rn * sys.params().r_m)).acos();
        assert!((s - 11_500.0).abs() < 1e-3);
    }

    #[test]
    fn omega_converted_to_rad_per_second() {
        let w = MarsParams::default().omega;
        assert!((w - 7.088218e-5).abs() < 1e-10);
    }

    #[test]
    fn circular_orbit_keeps_radius() {
        let mut p = MarsParams::default();
        p.rho0 = 0.0;
        p.omega = 0.0;
        let spec = MissionSpec::default();
        let dynamics = MarsDynamics::new(p.clone(), &spec);
        let rr = p.r_m + 200_000.0;
        let vc = (p.mu / rr).sqrt();
        let period = 2.0 * PI * rr / vc;
        let x0 = [rr, 0.0, 0.0, 0.0, 0.0, vc, p.m_dry];
        let steps = 20_000.0;
        let grid = TimeGrid::fixed(0.0, period, period / steps);
        let tr = integrate_fixed(|t, x| dynamics.rhs(t, x, &[0.2, 0.0, 0.0]), &x0, &grid).unwrap();
        for x in tr.states() {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            assert!((r - rr).abs() / rr < 1e-6);
        }
    }

    #[test]
    fn rhs_jacobians_match_finite_differences() {
        let sys = system();
        let x = sys.initial_state();
        let u = [0.7, 0.1, -0.4];
        let a = jacobian_x(&OpenLoop(&sys), 0.0, &x, &u).unwrap();
        let steps = [1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-3, 1e-2];
        let afd = jacobian_fd(|xx| sys.dynamics(0.0, xx, &u), &x, &steps).unwrap();
        assert_rel(&a, &afd, 1e-6);
        let b = jacobian_d(&OpenLoop(&sys), 0.0, &x, &u).unwrap();
        let bfd = jacobian_fd(|uu| sys.dynamics(0.0, &x, uu), &u, &[1e-4; 3]).unwrap();
        assert_rel(&b, &bfd, 1e-6);
    }

    #[test]
    fn closed_loop_composes_policy_and_dynamics() {
        let sys = system();
        let theta = sys.net.init(2);
        let x = sys.initial_state();
        let u = sys.net.forward_with(&theta, &sys.policy_input(&x));
        assert_eq!(sys.closed_loop(0.0, &x, &theta).unwrap(), sys.dynamics(0.0, &x, &u).unwrap());
        // At the target state the network sees a zero input.
        let mut xt = x.clone();
        xt[..3].copy_from_slice(&sys.vectors.r_fd);
        xt[3..6].copy_from_slice(&sys.vectors.v_fd);
        assert_eq!(sys.policy(0.0, &xt, &theta).unwrap(), sys.net.forward_with(&theta, &[0.0; 6]));
        let bt = jacobian_d(&ClosedLoop(&sys), 0.0, &x, &theta).unwrap();
        let mut coords = vec![0usize, 33, 70, 120, 181, 205];
        coords.sort();
        for j in coords {
            let h = 1e-5;
            let mut tp = theta.clone();
            tp[j] += h;
            let fp = sys.closed_loop(0.0, &x, &tp).unwrap();
            tp[j] -= 2.0 * h;
            let fm = sys.closed_loop(0.0, &x, &tp).unwrap();
            for i in 0..7 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((bt[(i, j)] - fd).abs() <= 1e-6 * (fd.abs() + 1e-3), "({i},{j}) {} vs {fd}", bt[(i, j)]);
            }
        }
    }

    #[test]
    fn vertical_descent_uses_plane_normal() {
        let sys = system();
        let mut x = sys.initial_state();
        x[..3].copy_from_slice(&sys.vectors.r_fd);
        x[3..6].copy_from_slice(&sys.vectors.v_fd);
        let d = sys.dynamics(0.0, &x, &[0.5, 0.0, 0.0]).unwrap();
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn saturate_clamps_to_limits() {
        let sys = system();
        let mut u = [1.3, 0.0, -3.0];
        sys.saturate(&mut u);
        assert_eq!(u, [1.0, 0.0, -90.0 * DEG]);
    }

    fn assert_rel(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>, tol: f64) {
        for j in 0..b.ncols() {
            let col = b.column(j).abs().max();
            for i in 0..b.nrows() {
                let (x, y) = (a[(i, j)], b[(i, j)]);
                assert!((x - y).abs() <= tol * y.abs().max(1e-3 * col), "({i},{j}) {x} vs {y}");
            }
        }
    }
}
