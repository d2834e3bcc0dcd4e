use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_finite, join, Matrix, Module};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(x Wᵀ + b)` over a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

pub struct DenseTrace {
    input: Matrix,
    pre: Matrix,
    output: Matrix,
}

impl Dense {
    /// Uniform fan-in initialisation, scaled for the activation.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let gain = if activation == Activation::Relu { 6.0 } else { 3.0 };
        let bound = (gain / inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, DenseTrace)> {
        if x.ncols() != self.inputs() {
            return Err(Error::ShapeMismatch {
                context: "dense input",
                expected: vec![x.nrows(), self.inputs()],
                actual: vec![x.nrows(), x.ncols()],
            });
        }
        let pre = x.dot(&self.weight.t()) + &self.bias;
        let act = self.activation;
        let output = pre.mapv(|v| act.apply(v));
        check_finite("dense forward", &output)?;
        Ok((
            output.clone(),
            DenseTrace {
                input: x.clone(),
                pre,
                output,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, trace: &DenseTrace, grad_out: &Matrix, grad: &mut Dense) -> Matrix {
        let act = self.activation;
        let mut delta = grad_out.clone();
        ndarray::Zip::from(&mut delta)
            .and(&trace.pre)
            .and(&trace.output)
            .for_each(|d, &p, &o| *d *= act.derivative(p, o));
        grad.weight += &delta.t().dot(&trace.input);
        grad.bias += &delta.sum_axis(Axis(0));
        delta.dot(&self.weight)
    }
}

impl Module for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let w = self.weight.as_slice().expect("standard layout");
        f(&join(prefix, "weight"), &[self.outputs(), self.inputs()], w);
        f(&join(prefix, "bias"), &[self.outputs()], self.bias.as_slice().expect("contiguous"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = [self.outputs(), self.inputs()];
        f(&join(prefix, "weight"), &shape, self.weight.as_slice_mut().expect("standard layout"));
        let bshape = [self.bias.len()];
        f(&join(prefix, "bias"), &bshape, self.bias.as_slice_mut().expect("contiguous"));
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

pub struct MlpTrace(Vec<DenseTrace>);

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpTrace)> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, t) = layer.forward(&h)?;
            traces.push(t);
            h = out;
        }
        Ok((h, MlpTrace(traces)))
    }

    pub fn backward(&self, trace: &MlpTrace, grad_out: &Matrix, grad: &mut Mlp) -> Matrix {
        let mut g = grad_out.clone();
        for ((layer, t), gl) in self.layers.iter().zip(&trace.0).zip(grad.layers.iter_mut()).rev() {
            g = layer.backward(t, &g, gl);
        }
        g
    }
}

impl Module for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}
