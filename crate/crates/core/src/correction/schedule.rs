use nalgebra::{DMatrix, DVector};

/// Corrective input `ũ(t) = R⁻¹(t) B_uᵀ(t) Σᵢ 1(t ≤ tᵢ) λᵢ(t)` with
/// `λᵢ(t) = Φᵀ(tᵢ, t) Hᵀ μᵢ`, tabulated on grid nodes and linearly
/// interpolated in between. Zero before the start time and after the last
/// window.
#[derive(Clone, Debug)]
pub struct ControlSchedule {
    pub(crate) start: f64,
    pub(crate) nodes: Vec<f64>,
    pub(crate) windows: Vec<f64>,
    /// `[constraint][node]` control contributions with the baseline `B_u`.
    pub(crate) contrib: Vec<Vec<DVector<f64>>>,
    /// `[constraint][node]` costates `λᵢ`.
    pub(crate) costate: Vec<Vec<DVector<f64>>>,
    pub(crate) r_inv: Vec<DMatrix<f64>>,
    pub(crate) control_dim: usize,
}

impl ControlSchedule {
    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn windows(&self) -> &[f64] {
        &self.windows
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    fn bracket(&self, t: f64) -> (usize, f64) {
        let k = self.nodes.partition_point(|&tk| tk <= t).saturating_sub(1).min(self.nodes.len() - 2);
        let s = (t - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        (k, s.clamp(0.0, 1.0))
    }

    fn active(&self, t: f64) -> bool {
        t >= self.start && t >= self.nodes[0] && t <= *self.nodes.last().unwrap()
    }

    /// `ũ(t)` with the stored baseline input matrix.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.eval_before(t, t)
    }

    /// `ũ(t)` with the windows that are still open just before `upper`, so a
    /// propagation piece ending at a constraint time sees the left limit.
    pub fn eval_before(&self, t: f64, upper: f64) -> Vec<f64> {
        let mut out = DVector::zeros(self.control_dim);
        if self.active(t) {
            let (k, s) = self.bracket(t);
            for (i, &ti) in self.windows.iter().enumerate() {
                if upper <= ti {
                    let c = &self.contrib[i];
                    out += &c[k] * (1.0 - s) + &c[k + 1] * s;
                }
            }
        }
        out.as_slice().to_vec()
    }

    /// `ũ(t)` using an input matrix `B_u` evaluated elsewhere (for example at
    /// the measured state).
    pub fn eval_with_input_matrix(&self, t: f64, b: &DMatrix<f64>) -> Vec<f64> {
        self.eval_with_input_matrix_before(t, t, b)
    }

    pub fn eval_with_input_matrix_before(&self, t: f64, upper: f64, b: &DMatrix<f64>) -> Vec<f64> {
        if !self.active(t) {
            return vec![0.0; self.control_dim];
        }
        let (k, s) = self.bracket(t);
        let mut lam = DVector::zeros(b.nrows());
        for (i, &ti) in self.windows.iter().enumerate() {
            if upper <= ti {
                let c = &self.costate[i];
                lam += &c[k] * (1.0 - s) + &c[k + 1] * s;
            }
        }
        let r_inv = &self.r_inv[k] * (1.0 - s) + &self.r_inv[k + 1] * s;
        (r_inv * b.transpose() * lam).as_slice().to_vec()
    }

    /// `(t_k, ũ(t_k))` at the grid nodes from the start time on.
    pub fn samples(&self) -> Vec<(f64, Vec<f64>)> {
        self.nodes.iter().filter(|&&t| t >= self.start).map(|&t| (t, self.eval(t))).collect()
    }

    /// `∫ ũᵀ R ũ dt` by the trapezoidal rule on the nodes.
    pub fn energy(&self) -> f64 {
        let vals: Vec<f64> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let u = DVector::from_vec(self.eval(t));
                let r = self.r_inv[k].clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(u.len(), u.len()));
                u.dot(&(r * &u))
            })
            .collect();
        self.nodes.windows(2).zip(vals.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
    }
}
