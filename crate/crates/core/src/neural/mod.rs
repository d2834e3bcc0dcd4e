//! Small differentiable-computation core.
//!
//! Gradients are hand-derived per layer: every `forward` returns a trace
//! holding what its `backward` needs. Parameter gradients accumulate into a
//! value of the same type as the module (`Module::zeros_like`), which lets
//! the optimizer walk parameters and gradients in lockstep.

pub mod checkpoint;
pub mod dense;
pub mod graph_agg;
pub mod loss;
pub mod optim;

pub use dense::{Activation, Dense, Mlp};
pub use graph_agg::{GraphAggregator, NormalizedAdjacency};
pub use optim::Adam;

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Anything with named, flat parameter blocks.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, p| n += p.len());
        n
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut("", &mut |_, _, p| p.fill(value));
    }

    /// Flattened copy of every parameter, in visit order.
    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, p| out.extend_from_slice(p));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn check_finite(op: &str, values: &Matrix) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::{Matrix, Module};

    /// Central difference of `f` along every entry of `x`.
    pub fn numeric(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        let mut out = Matrix::zeros(x.raw_dim());
        for (idx, o) in out.indexed_iter_mut() {
            let mut p = x.clone();
            p[idx] += h;
            let mut q = x.clone();
            q[idx] -= h;
            *o = (f(&p) - f(&q)) / (2.0 * h);
        }
        out
    }

    /// Central difference of `f` along every parameter of `m`.
    pub fn numeric_params<M: Module + Clone>(m: &M, f: impl Fn(&M) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let n = m.num_params();
        let shifted = |i: usize, d: f64| {
            let mut c = m.clone();
            let mut k = 0;
            c.visit_mut("", &mut |_, _, p| {
                for v in p.iter_mut() {
                    if k == i {
                        *v += d;
                    }
                    k += 1;
                }
            });
            c
        };
        (0..n).map(|i| (f(&shifted(i, h)) - f(&shifted(i, -h))) / (2.0 * h)).collect()
    }

    pub fn assert_close<'a>(analytic: impl IntoIterator<Item = &'a f64>, numeric: impl IntoIterator<Item = &'a f64>) {
        for (k, (a, n)) in analytic.into_iter().zip(numeric).enumerate() {
            let scale = a.abs().max(n.abs());
            if scale < 1e-8 {
                continue;
            }
            assert!((a - n).abs() / scale < 1e-4, "entry {k}: analytic {a}, numeric {n}");
        }
    }
}
