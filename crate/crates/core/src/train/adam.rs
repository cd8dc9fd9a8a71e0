//! Adam with row-level bookkeeping for tensors that grow and shrink.

/// First and second moments of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step_by(params, grads, |_| lr);
    }

    /// Update with a per-element learning rate.
    pub fn step_by(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), self.m.len(), "parameter/moment length");
        assert_eq!(grads.len(), self.m.len(), "gradient/moment length");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr(i) * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn retain_rows(&mut self, stride: usize, keep: &[bool]) {
        crate::scene::retain_rows(&mut self.m, stride, keep);
        crate::scene::retain_rows(&mut self.v, stride, keep);
    }

    /// Append `rows` rows of zero moments.
    pub fn push_zero_rows(&mut self, stride: usize, rows: usize) {
        self.m.resize(self.m.len() + stride * rows, 0.0);
        self.v.resize(self.v.len() + stride * rows, 0.0);
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Optimizer state for every per-Gaussian tensor, kept row-aligned with the
/// cloud through densification.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianAdam {
    pub positions: Adam,
    pub log_scales: Adam,
    pub rotations: Adam,
    pub opacity_logits: Adam,
    pub sh: Adam,
    /// Association logits, once superpoints exist.
    pub logits: Option<Adam>,
    sh_stride: usize,
    k: usize,
}

impl GaussianAdam {
    pub fn new(count: usize, sh_stride: usize) -> Self {
        Self {
            positions: Adam::new(count * 3),
            log_scales: Adam::new(count * 3),
            rotations: Adam::new(count * 4),
            opacity_logits: Adam::new(count),
            sh: Adam::new(count * sh_stride),
            logits: None,
            sh_stride,
            k: 0,
        }
    }

    pub fn enable_logits(&mut self, k: usize) {
        self.k = k;
        self.logits = Some(Adam::new(self.opacity_logits.len() * k));
    }

    pub fn retain(&mut self, keep: &[bool]) {
        self.positions.retain_rows(3, keep);
        self.log_scales.retain_rows(3, keep);
        self.rotations.retain_rows(4, keep);
        self.opacity_logits.retain_rows(1, keep);
        self.sh.retain_rows(self.sh_stride, keep);
        if let Some(l) = &mut self.logits {
            l.retain_rows(self.k, keep);
        }
    }

    pub fn push_zero_rows(&mut self, rows: usize) {
        self.positions.push_zero_rows(3, rows);
        self.log_scales.push_zero_rows(3, rows);
        self.rotations.push_zero_rows(4, rows);
        self.opacity_logits.push_zero_rows(1, rows);
        self.sh.push_zero_rows(self.sh_stride, rows);
        if let Some(l) = &mut self.logits {
            l.push_zero_rows(self.k, rows);
        }
    }
}

/// Log-linear interpolation from `init` to `fin` as `progress` goes 0 → 1.
pub fn exp_lr(init: f64, fin: f64, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    (init.ln() * (1.0 - p) + fin.ln() * p).exp()
}

/// Deformation network learning rate: 1e-3 → 1e-5 log-linearly over training.
pub fn lr_schedule(iter: usize, total: usize) -> f64 {
    exp_lr(1e-3, 1e-5, iter as f64 / total.max(1) as f64)
}
