//! The cross-network source localization model.
//!
//! Two encoders map a seed vector to a dynamic latent `z_s` and a latent
//! `z_fs` that also sees per-node features. A decoder maps `[z_s ‖ z_fs]`
//! back to per-node seed probabilities, and two graph surrogates learn the
//! source and target diffusion so that a decoded seed vector can be pushed
//! through the whole cross-network differentiably.

mod infer;
mod io;
mod train;

pub use infer::{average_latents, binarize_seeds, infer_seeds, prediction_loss, InferConfig, InferenceResult, InferenceTrace, Objective, SeedRule};
pub use train::{train, train_loss, LossBreakdown, MonotonePair, SurrogateInput, TrainConfig, TrainReport};

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{transfer_max, CrossNetwork};
use crate::neural::dense::MlpTrace;
use crate::neural::graph_agg::AggregatorTrace;
use crate::neural::loss::clamp_logvar;
use crate::neural::{join, Activation, GraphAggregator, Matrix, Mlp, Module, NormalizedAdjacency};
use crate::rng::{self, stage};

/// Architecture hyperparameters. Stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub k1: usize,
    pub k2: usize,
    pub hidden: usize,
    pub feature_hidden: usize,
    pub surrogate_hidden: usize,
    pub message_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k1: 16,
            k2: 16,
            hidden: 128,
            feature_hidden: 16,
            surrogate_hidden: 64,
            message_layers: 2,
        }
    }
}

/// Encoders and decoder; trained together on one learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub feature_mlp: Mlp,
    pub encoder_dynamic: Mlp,
    pub encoder_static: Mlp,
    pub decoder: Mlp,
}

impl Vae {
    fn zeros_like(&self) -> Self {
        Self {
            feature_mlp: self.feature_mlp.zeros_like(),
            encoder_dynamic: self.encoder_dynamic.zeros_like(),
            encoder_static: self.encoder_static.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

impl Module for Vae {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.feature_mlp.visit(&join(prefix, "feature_mlp"), f);
        self.encoder_dynamic.visit(&join(prefix, "encoder_dynamic"), f);
        self.encoder_static.visit(&join(prefix, "encoder_static"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.feature_mlp.visit_mut(&join(prefix, "feature_mlp"), f);
        self.encoder_dynamic.visit_mut(&join(prefix, "encoder_dynamic"), f);
        self.encoder_static.visit_mut(&join(prefix, "encoder_static"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnslModel {
    pub config: ModelConfig,
    pub vae: Vae,
    pub surrogate_source: GraphAggregator,
    pub surrogate_target: GraphAggregator,
    n_source: usize,
    n_target: usize,
    bridges: Arc<Vec<(usize, usize)>>,
    features: Arc<Matrix>,
}

/// Dynamic and static latent codes, one row per case.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub z_s: Matrix,
    pub z_fs: Matrix,
}

impl LatentPair {
    pub fn dims(&self) -> (usize, usize) {
        (self.z_s.ncols(), self.z_fs.ncols())
    }
}

pub(crate) struct Encoded {
    pub mu_s: Matrix,
    pub lv_s: Matrix,
    pub mu_fs: Matrix,
    pub lv_fs: Matrix,
    pub z_s: Matrix,
    pub z_fs: Matrix,
    eps: Option<(Matrix, Matrix)>,
    lv_s_mask: Matrix,
    lv_fs_mask: Matrix,
    enc1: MlpTrace,
    enc2: MlpTrace,
    feat: MlpTrace,
}

pub(crate) struct SurrogateOut {
    pub y_s: Matrix,
    pub x_t: Matrix,
    pub y_t: Matrix,
    args: Vec<Vec<Option<usize>>>,
    tr_s: AggregatorTrace,
    tr_t: AggregatorTrace,
}

impl CnslModel {
    pub fn new(cross: &CrossNetwork, config: ModelConfig, seed: u64) -> Result<Self> {
        if config.k1 == 0 || config.k2 == 0 || config.hidden == 0 || config.surrogate_hidden == 0 {
            return Err(Error::Config("latent and hidden sizes must be positive".into()));
        }
        let mut r = rng::stream(seed, &[stage::INIT]);
        let features = cross.source_features_or_default();
        let (n, nt, f) = (cross.n_source(), cross.n_target(), features.cols());
        let h = config.hidden;
        let vae = Vae {
            feature_mlp: Mlp::new(&[f, config.feature_hidden, 1], Activation::Relu, Activation::Tanh, &mut r),
            encoder_dynamic: Mlp::new(&[n, h, h, 2 * config.k1], Activation::Relu, Activation::Identity, &mut r),
            encoder_static: Mlp::new(&[2 * n, h, h, 2 * config.k2], Activation::Relu, Activation::Identity, &mut r),
            decoder: Mlp::new(&[config.k1 + config.k2, h, h, n], Activation::Relu, Activation::Sigmoid, &mut r),
        };
        let adj_s = Arc::new(NormalizedAdjacency::from_network(&cross.source));
        let adj_t = Arc::new(NormalizedAdjacency::from_network(&cross.target));
        let surrogate_source = GraphAggregator::new(adj_s, config.surrogate_hidden, config.message_layers, &mut r);
        let surrogate_target = GraphAggregator::new(adj_t, config.surrogate_hidden, config.message_layers, &mut r);
        let features = Array2::from_shape_vec((n, f), features.data().to_vec()).expect("feature shape");
        Ok(Self {
            config,
            vae,
            surrogate_source,
            surrogate_target,
            n_source: n,
            n_target: nt,
            bridges: Arc::new(cross.bridges.pairs.clone()),
            features: Arc::new(features),
        })
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Same architecture, all parameters zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            vae: self.vae.zeros_like(),
            surrogate_source: self.surrogate_source.zeros_like(),
            surrogate_target: self.surrogate_target.zeros_like(),
            n_source: self.n_source,
            n_target: self.n_target,
            bridges: Arc::clone(&self.bridges),
            features: Arc::clone(&self.features),
        }
    }

    fn check_rows(&self, context: &'static str, x: &Matrix, cols: usize) -> Result<()> {
        if x.ncols() != cols {
            return Err(Error::ShapeMismatch {
                context,
                expected: vec![x.nrows(), cols],
                actual: vec![x.nrows(), x.ncols()],
            });
        }
        Ok(())
    }

    /// Runs both encoders on a batch of seed vectors. With `eps` the latents
    /// are reparameterized samples, otherwise the posterior means.
    pub(crate) fn encode_batch(&self, x: &Matrix, eps: Option<(Matrix, Matrix)>) -> Result<Encoded> {
        self.check_rows("encoder input", x, self.n_source)?;
        let (k1, k2) = (self.config.k1, self.config.k2);
        let b = x.nrows();
        let (out1, enc1) = self.vae.encoder_dynamic.forward(x)?;
        let mu_s = out1.slice(s![.., ..k1]).to_owned();
        let (lv_s, lv_s_mask) = clamp_logvar(&out1.slice(s![.., k1..]).to_owned());

        let (emb, feat) = self.vae.feature_mlp.forward(&self.features)?;
        let emb_row = emb.t().to_owned(); // 1 × N
        let emb_rows = emb_row.broadcast((b, self.n_source)).expect("broadcast").to_owned();
        let input2 = concatenate![Axis(1), *x, emb_rows];
        let (out2, enc2) = self.vae.encoder_static.forward(&input2)?;
        let mu_fs = out2.slice(s![.., ..k2]).to_owned();
        let (lv_fs, lv_fs_mask) = clamp_logvar(&out2.slice(s![.., k2..]).to_owned());

        let (z_s, z_fs) = match &eps {
            Some((e1, e2)) => (
                crate::neural::loss::reparameterize(&mu_s, &lv_s, e1)?,
                crate::neural::loss::reparameterize(&mu_fs, &lv_fs, e2)?,
            ),
            None => (mu_s.clone(), mu_fs.clone()),
        };
        Ok(Encoded {
            mu_s,
            lv_s,
            mu_fs,
            lv_fs,
            z_s,
            z_fs,
            eps,
            lv_s_mask,
            lv_fs_mask,
            enc1,
            enc2,
            feat,
        })
    }

    /// Backpropagates latent and distribution-parameter gradients through
    /// both encoders and the feature perceptron.
    pub(crate) fn encode_backward(&self, enc: &Encoded, g_z_s: &Matrix, g_z_fs: &Matrix, g_mu_lv: [(&Matrix, &Matrix); 2], grads: &mut CnslModel) {
        let (mut g_mu_s, mut g_lv_s) = (g_z_s.clone(), Matrix::zeros(enc.lv_s.raw_dim()));
        let (mut g_mu_fs, mut g_lv_fs) = (g_z_fs.clone(), Matrix::zeros(enc.lv_fs.raw_dim()));
        if let Some((e1, e2)) = &enc.eps {
            g_lv_s = crate::neural::loss::reparameterize_backward(&enc.lv_s, e1, g_z_s).1;
            g_lv_fs = crate::neural::loss::reparameterize_backward(&enc.lv_fs, e2, g_z_fs).1;
        }
        g_mu_s += g_mu_lv[0].0;
        g_lv_s += g_mu_lv[0].1;
        g_mu_fs += g_mu_lv[1].0;
        g_lv_fs += g_mu_lv[1].1;
        g_lv_s *= &enc.lv_s_mask;
        g_lv_fs *= &enc.lv_fs_mask;

        let g_out1 = concatenate![Axis(1), g_mu_s, g_lv_s];
        self.vae.encoder_dynamic.backward(&enc.enc1, &g_out1, &mut grads.vae.encoder_dynamic);
        let g_out2 = concatenate![Axis(1), g_mu_fs, g_lv_fs];
        let g_in2 = self.vae.encoder_static.backward(&enc.enc2, &g_out2, &mut grads.vae.encoder_static);
        let g_emb = g_in2.slice(s![.., self.n_source..]).sum_axis(Axis(0));
        let g_emb = g_emb.into_shape_with_order((self.n_source, 1)).expect("column");
        self.vae.feature_mlp.backward(&enc.feat, &g_emb, &mut grads.vae.feature_mlp);
    }

    pub(crate) fn decode_batch(&self, z_s: &Matrix, z_fs: &Matrix) -> Result<(Matrix, MlpTrace)> {
        self.check_rows("decoder z_s", z_s, self.config.k1)?;
        self.check_rows("decoder z_fs", z_fs, self.config.k2)?;
        let z = concatenate![Axis(1), *z_s, *z_fs];
        self.vae.decoder.forward(&z)
    }

    /// Returns the gradients with respect to `(z_s, z_fs)`.
    pub(crate) fn decode_backward(&self, trace: &MlpTrace, g_x: &Matrix, grads: &mut CnslModel) -> (Matrix, Matrix) {
        let g = self.vae.decoder.backward(trace, g_x, &mut grads.vae.decoder);
        let k1 = self.config.k1;
        (g.slice(s![.., ..k1]).to_owned(), g.slice(s![.., k1..]).to_owned())
    }

    pub(crate) fn surrogate_batch(&self, x: &Matrix) -> Result<SurrogateOut> {
        self.check_rows("surrogate input", x, self.n_source)?;
        let (y_s, tr_s) = self.surrogate_source.forward(x)?;
        let mut x_t = Matrix::zeros((x.nrows(), self.n_target));
        let mut args = Vec::with_capacity(x.nrows());
        for (b, row) in y_s.outer_iter().enumerate() {
            let vals: Vec<f64> = row.to_vec();
            let (t, a) = transfer_max(&vals, self.bridges.iter().copied(), self.n_target);
            x_t.row_mut(b).assign(&ndarray::Array1::from(t));
            args.push(a);
        }
        let (y_t, tr_t) = self.surrogate_target.forward(&x_t)?;
        Ok(SurrogateOut {
            y_s,
            x_t,
            y_t,
            args,
            tr_s,
            tr_t,
        })
    }

    /// Gradient with respect to the surrogate input given gradients on
    /// `y_s` and `y_t`.
    pub(crate) fn surrogate_backward(&self, out: &SurrogateOut, g_y_s: &Matrix, g_y_t: &Matrix, grads: &mut CnslModel) -> Matrix {
        let g_x_t = self.surrogate_target.backward(&out.tr_t, g_y_t, &mut grads.surrogate_target);
        let mut g_ys = g_y_s.clone();
        for (b, args) in out.args.iter().enumerate() {
            for (v, a) in args.iter().enumerate() {
                if let Some(u) = a {
                    g_ys[[b, *u]] += g_x_t[[b, v]];
                }
            }
        }
        self.surrogate_source.backward(&out.tr_s, &g_ys, &mut grads.surrogate_source)
    }

    /// Samples latents for one seed vector and returns them with both KL
    /// terms.
    pub fn encode(&self, x_s: &[f64], rng: &mut rng::Rng) -> Result<(LatentPair, f64, f64)> {
        let x = row(x_s);
        let eps = (standard_normal(rng, 1, self.config.k1), standard_normal(rng, 1, self.config.k2));
        let enc = self.encode_batch(&x, Some(eps))?;
        let kl_s = crate::neural::loss::kl_total(&enc.mu_s, &enc.lv_s)?;
        let kl_fs = crate::neural::loss::kl_total(&enc.mu_fs, &enc.lv_fs)?;
        Ok((LatentPair { z_s: enc.z_s, z_fs: enc.z_fs }, kl_s, kl_fs))
    }

    /// Posterior means for one seed vector.
    pub fn encode_mean(&self, x_s: &[f64]) -> Result<LatentPair> {
        let enc = self.encode_batch(&row(x_s), None)?;
        Ok(LatentPair { z_s: enc.mu_s, z_fs: enc.mu_fs })
    }

    /// Per-node seed probabilities for each latent row.
    pub fn decode(&self, latents: &LatentPair) -> Result<Matrix> {
        Ok(self.decode_batch(&latents.z_s, &latents.z_fs)?.0)
    }

    /// `(ŷ_s, x̂_t, ŷ_t)` for one seed-probability vector.
    pub fn surrogate_forward(&self, x_hat: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let out = self.surrogate_batch(&row(x_hat))?;
        Ok((out.y_s.row(0).to_vec(), out.x_t.row(0).to_vec(), out.y_t.row(0).to_vec()))
    }
}

impl Module for CnslModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.vae.visit(&join(prefix, "vae"), f);
        self.surrogate_source.visit(&join(prefix, "surrogate_source"), f);
        self.surrogate_target.visit(&join(prefix, "surrogate_target"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.vae.visit_mut(&join(prefix, "vae"), f);
        self.surrogate_source.visit_mut(&join(prefix, "surrogate_source"), f);
        self.surrogate_target.visit_mut(&join(prefix, "surrogate_target"), f);
    }
}

pub(crate) fn row(v: &[f64]) -> Matrix {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

pub(crate) fn standard_normal(rng: &mut rng::Rng, rows: usize, cols: usize) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}
