use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

use super::dense::{Dense, DenseTrace, Mlp, MlpTrace};
use super::{join, Activation, Matrix, Module};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::rng::Rng;

/// Row-normalized adjacency with self-loops, stored sparse. Row `v` averages
/// over `v` and every node that can reach `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    t_offsets: Vec<usize>,
    t_cols: Vec<usize>,
    t_vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_network(net: &Network) -> Self {
        let n = net.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for v in 0..n {
            let mut row: Vec<usize> = net.in_neighbors(v).iter().map(|&(u, _)| u).collect();
            row.push(v);
            row.sort_unstable();
            row.dedup();
            let w = 1.0 / row.len() as f64;
            for u in row {
                cols.push(u);
                vals.push(w);
            }
            offsets.push(cols.len());
        }
        // transpose
        let mut t_counts = vec![0usize; n + 1];
        for &c in &cols {
            t_counts[c + 1] += 1;
        }
        for i in 0..n {
            t_counts[i + 1] += t_counts[i];
        }
        let t_offsets = t_counts.clone();
        let mut fill = t_counts;
        let mut t_cols = vec![0; cols.len()];
        let mut t_vals = vec![0.0; cols.len()];
        for r in 0..n {
            for k in offsets[r]..offsets[r + 1] {
                let c = cols[k];
                t_cols[fill[c]] = r;
                t_vals[fill[c]] = vals[k];
                fill[c] += 1;
            }
        }
        Self {
            n,
            offsets,
            cols,
            vals,
            t_offsets,
            t_cols,
            t_vals,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.vals[self.offsets[r]..self.offsets[r + 1]].iter().sum()).collect()
    }

    fn spmm(offsets: &[usize], cols: &[usize], vals: &[f64], n: usize, h: &Matrix) -> Matrix {
        // h stacks blocks of n rows (one block per batch element)
        let d = h.ncols();
        let blocks = h.nrows() / n;
        let mut out = Array2::zeros(h.raw_dim());
        for b in 0..blocks {
            let base = b * n;
            for r in 0..n {
                let mut acc = out.row_mut(base + r);
                for k in offsets[r]..offsets[r + 1] {
                    let src = h.row(base + cols[k]);
                    acc.scaled_add(vals[k], &src);
                }
            }
        }
        debug_assert_eq!(out.ncols(), d);
        out
    }

    /// `Â H`, applied blockwise to a stack of `n`-row blocks.
    pub fn apply(&self, h: &Matrix) -> Matrix {
        Self::spmm(&self.offsets, &self.cols, &self.vals, self.n, h)
    }

    /// `Âᵀ G`, blockwise.
    pub fn apply_transpose(&self, g: &Matrix) -> Matrix {
        Self::spmm(&self.t_offsets, &self.t_cols, &self.t_vals, self.n, g)
    }
}

/// Per-node diffusion surrogate: message-passing layers
/// `H' = act([H ‖ ÂH] W + b)` followed by a per-node perceptron head with a
/// sigmoid output. Input and output are `batch × N` matrices of per-node
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAggregator {
    pub adjacency: Arc<NormalizedAdjacency>,
    pub layers: Vec<Dense>,
    pub head: Mlp,
}

pub struct AggregatorTrace {
    batch: usize,
    hidden: Vec<(Matrix, DenseTrace)>,
    head: MlpTrace,
}

impl GraphAggregator {
    pub fn new(adjacency: Arc<NormalizedAdjacency>, hidden: usize, message_layers: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(message_layers);
        let mut width = 1;
        for _ in 0..message_layers {
            layers.push(Dense::new(2 * width, hidden, Activation::Relu, rng));
            width = hidden;
        }
        let head = Mlp::new(&[width, hidden, 1], Activation::Relu, Activation::Sigmoid, rng);
        Self { adjacency, layers, head }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            adjacency: Arc::clone(&self.adjacency),
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, AggregatorTrace)> {
        let n = self.num_nodes();
        if x.ncols() != n {
            return Err(Error::ShapeMismatch {
                context: "graph aggregator input",
                expected: vec![x.nrows(), n],
                actual: vec![x.nrows(), x.ncols()],
            });
        }
        let batch = x.nrows();
        let mut h = x.to_shape((batch * n, 1)).expect("contiguous").to_owned();
        let mut hidden = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let agg = self.adjacency.apply(&h);
            let input = concatenate![Axis(1), h, agg];
            let (out, t) = layer.forward(&input)?;
            hidden.push((h, t));
            h = out;
        }
        let (y, head) = self.head.forward(&h)?;
        let y = y.into_shape_with_order((batch, n)).expect("contiguous");
        Ok((y, AggregatorTrace { batch, hidden, head }))
    }

    pub fn backward(&self, trace: &AggregatorTrace, grad_out: &Matrix, grad: &mut GraphAggregator) -> Matrix {
        let n = self.num_nodes();
        let g = grad_out.to_shape((trace.batch * n, 1)).expect("contiguous").to_owned();
        let mut g = self.head.backward(&trace.head, &g, &mut grad.head);
        for ((layer, (h_in, t)), gl) in self.layers.iter().zip(&trace.hidden).zip(grad.layers.iter_mut()).rev() {
            let g_in = layer.backward(t, &g, gl);
            let d = h_in.ncols();
            let g_self = g_in.slice(s![.., ..d]).to_owned();
            let g_agg = g_in.slice(s![.., d..]).to_owned();
            g = g_self + self.adjacency.apply_transpose(&g_agg);
        }
        g.into_shape_with_order((trace.batch, n)).expect("contiguous")
    }
}

impl Module for GraphAggregator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("mp{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("mp{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
