use serde::{Deserialize, Serialize};

use super::Module;

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update of `params` along `grads` (same module shape).
    pub fn update(&mut self, params: &mut dyn Module, grads: &dyn Module) {
        let mut gs: Vec<Vec<f64>> = Vec::new();
        grads.visit("", &mut |_, _, g| gs.push(g.to_vec()));
        if self.first.is_empty() {
            self.first = gs.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut idx = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_mut("", &mut |_, _, p| {
            let g = &gs[idx];
            let m = &mut first[idx];
            let v = &mut second[idx];
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }
}
