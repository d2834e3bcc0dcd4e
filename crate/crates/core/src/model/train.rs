use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{standard_normal, CnslModel};
use crate::diffusion::DiffusionSample;
use crate::error::{Error, Result};
use crate::graph::SeedVector;
use crate::neural::loss::{bce, kl_diag_gaussian, mse, Reduction};
use crate::neural::{Adam, Matrix};
use crate::rng::{self, stage, Rng};

/// What the diffusion surrogates see during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateInput {
    /// The observed seed vector; surrogates fit the simulator directly.
    Seeds,
    /// The decoded seed probabilities; diffusion errors also reach the
    /// decoder and encoders.
    #[default]
    Decoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_vae: f64,
    pub lr_psi1: f64,
    pub lr_psi2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Monotonicity penalty weight.
    pub lambda: f64,
    /// Capacity penalty weight.
    pub gamma: f64,
    pub capacity_s: f64,
    pub capacity_fs: f64,
    /// Subsets drawn per batch for the monotonicity penalty.
    pub monotone_subsets: usize,
    pub surrogate_input: SurrogateInput,
    /// Trailing share of the training samples held out for model selection.
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_vae: 1e-4,
            lr_psi1: 5e-3,
            lr_psi2: 1e-2,
            epochs: 15,
            batch_size: 2,
            lambda: 1.0,
            gamma: 1.0,
            capacity_s: 5.0,
            capacity_fs: 5.0,
            monotone_subsets: 3,
            validation_fraction: 0.1,
            surrogate_input: SurrogateInput::Decoded,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_vae", self.lr_vae), ("lr_psi1", self.lr_psi1), ("lr_psi2", self.lr_psi2)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config("lambda and gamma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One superset seed vector and subsets of it; the surrogate's target
/// prediction for the superset should dominate each subset's.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonePair {
    pub superset: Vec<f64>,
    pub subsets: Vec<Vec<f64>>,
}

impl MonotonePair {
    /// Draws `count` subsets of `superset` by dropping each seed with
    /// probability one half, always dropping at least one.
    pub fn sample(superset: &SeedVector, count: usize, rng: &mut Rng) -> Option<Self> {
        let support = superset.support();
        if support.is_empty() || count == 0 {
            return None;
        }
        let subsets = (0..count)
            .map(|_| {
                let mut keep: Vec<bool> = support.iter().map(|_| rng.random_bool(0.5)).collect();
                if keep.iter().all(|&k| k) {
                    keep[rng.random_range(0..support.len())] = false;
                }
                let mut v = vec![0.0; superset.len()];
                for (&u, _) in support.iter().zip(&keep).filter(|(_, &k)| k) {
                    v[u] = 1.0;
                }
                v
            })
            .collect();
        Some(Self {
            superset: superset.to_f64(),
            subsets,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub diffusion_source: f64,
    pub diffusion_target: f64,
    pub kl_s: f64,
    pub kl_fs: f64,
    pub capacity: f64,
    pub monotone: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Total loss of every optimizer step, in order.
    pub loss_history: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// Epoch whose parameters were kept (0-based); `None` when no
    /// validation split was used and the last epoch wins.
    pub best_epoch: Option<usize>,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Mean seed count over the fitted samples; the default top-m size.
    pub mean_seed_count: f64,
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, cols: usize) -> Matrix {
    let data: Vec<f64> = rows.flatten().collect();
    Array2::from_shape_vec((data.len() / cols.max(1), cols), data).expect("rectangular batch")
}

/// Loss of one batch with its exact gradient. The latent noise is drawn from
/// `rng`, so cloning the generator reproduces the same objective.
pub fn train_loss(model: &CnslModel, batch: &[&DiffusionSample], pairs: &[MonotonePair], cfg: &TrainConfig, rng: &mut Rng) -> Result<(LossBreakdown, CnslModel)> {
    if batch.is_empty() {
        return Err(Error::Invalid("training batch is empty".into()));
    }
    let (n, nt) = (model.n_source(), model.n_target());
    for s in batch {
        if s.x_s.len() != n || s.y_s.len() != n || s.y_t.len() != nt {
            return Err(Error::SizeMismatch {
                context: "training sample",
                expected: n,
                actual: s.x_s.len(),
            });
        }
    }
    let b = batch.len();
    let x = stack(batch.iter().map(|s| s.x_s.to_f64()), n);
    let y_s = stack(batch.iter().map(|s| s.y_s.0.clone()), n);
    let y_t = stack(batch.iter().map(|s| s.y_t.0.clone()), nt);

    let eps = (standard_normal(rng, b, model.config.k1), standard_normal(rng, b, model.config.k2));
    let enc = model.encode_batch(&x, Some(eps))?;
    let (x_hat, dec_trace) = model.decode_batch(&enc.z_s, &enc.z_fs)?;
    let decoded_input = cfg.surrogate_input == SurrogateInput::Decoded;
    let out = model.surrogate_batch(if decoded_input { &x_hat } else { &x })?;

    let (recon, g_recon) = bce(&x_hat, &x, Reduction::SumPerRow)?;
    let (diff_s, g_ys) = mse(&out.y_s, &y_s, Reduction::SumPerRow)?;
    let (diff_t, g_yt) = mse(&out.y_t, &y_t, Reduction::SumPerRow)?;
    let (kl_rows_s, mut g_mu_s, mut g_lv_s) = kl_diag_gaussian(&enc.mu_s, &enc.lv_s)?;
    let (kl_rows_fs, mut g_mu_fs, mut g_lv_fs) = kl_diag_gaussian(&enc.mu_fs, &enc.lv_fs)?;
    let kl_s = kl_rows_s.iter().sum::<f64>() / b as f64;
    let kl_fs = kl_rows_fs.iter().sum::<f64>() / b as f64;
    let hinge_scale = |kl: f64, cap: f64| if kl > cap { cfg.gamma / b as f64 } else { 0.0 };
    let (hs, hfs) = (hinge_scale(kl_s, cfg.capacity_s), hinge_scale(kl_fs, cfg.capacity_fs));
    g_mu_s *= hs;
    g_lv_s *= hs;
    g_mu_fs *= hfs;
    g_lv_fs *= hfs;
    let capacity = cfg.gamma * ((kl_s - cfg.capacity_s).max(0.0) + (kl_fs - cfg.capacity_fs).max(0.0));

    let mut grads = model.zeros_like();
    let g_x_surr = model.surrogate_backward(&out, &g_ys, &g_yt, &mut grads);
    let g_x_hat = if decoded_input { g_recon + g_x_surr } else { g_recon };
    let (g_zs, g_zfs) = model.decode_backward(&dec_trace, &g_x_hat, &mut grads);
    model.encode_backward(&enc, &g_zs, &g_zfs, [(&g_mu_s, &g_lv_s), (&g_mu_fs, &g_lv_fs)], &mut grads);

    let mut monotone = 0.0;
    if cfg.lambda > 0.0 {
        let total_subsets: usize = pairs.iter().map(|p| p.subsets.len()).sum();
        for p in pairs {
            let rows = std::iter::once(p.superset.clone()).chain(p.subsets.iter().cloned());
            let xp = stack(rows, n);
            let outp = model.surrogate_batch(&xp)?;
            let mut g = Matrix::zeros(outp.y_t.raw_dim());
            let scale = cfg.lambda / total_subsets as f64;
            for j in 1..xp.nrows() {
                for v in 0..nt {
                    let d = outp.y_t[[j, v]] - outp.y_t[[0, v]];
                    if d > 0.0 {
                        monotone += scale * d * d;
                        g[[j, v]] += 2.0 * scale * d;
                        g[[0, v]] -= 2.0 * scale * d;
                    }
                }
            }
            let zero_ys = Matrix::zeros(outp.y_s.raw_dim());
            model.surrogate_backward(&outp, &zero_ys, &g, &mut grads);
        }
    }

    let total = recon + diff_s + diff_t + capacity + monotone;
    let breakdown = LossBreakdown {
        reconstruction: recon,
        diffusion_source: diff_s,
        diffusion_target: diff_t,
        kl_s,
        kl_fs,
        capacity,
        monotone,
        total,
    };
    if !total.is_finite() {
        return Err(Error::NonFinite {
            op: format!("training loss {breakdown:?}"),
        });
    }
    Ok((breakdown, grads))
}

fn make_pairs(batch: &[&DiffusionSample], cfg: &TrainConfig, rng: &mut Rng) -> Vec<MonotonePair> {
    if cfg.lambda == 0.0 {
        return Vec::new();
    }
    MonotonePair::sample(&batch[0].x_s, cfg.monotone_subsets, rng).into_iter().collect()
}

fn validation_loss(model: &CnslModel, samples: &[DiffusionSample], cfg: &TrainConfig) -> Result<f64> {
    let mut r = rng::stream(cfg.rng_seed, &[stage::TRAIN, u64::MAX]);
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let batch: Vec<&DiffusionSample> = chunk.iter().collect();
        let pairs = make_pairs(&batch, cfg, &mut r);
        total += train_loss(model, &batch, &pairs, cfg, &mut r)?.0.total * batch.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Fits the model with three Adam groups (encoders and decoder, source
/// surrogate, target surrogate). When a validation split exists the
/// parameters with the lowest validation loss are kept.
pub fn train(model: &mut CnslModel, samples: &[DiffusionSample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let n_val = if samples.len() >= 2 {
        ((samples.len() as f64 * cfg.validation_fraction).round() as usize).min(samples.len() - 1)
    } else {
        0
    };
    let (fit, val) = samples.split_at(samples.len() - n_val);
    let mean_seed_count = fit.iter().map(|s| s.x_s.count() as f64).sum::<f64>() / fit.len() as f64;
    let mut report = TrainReport {
        train_samples: fit.len(),
        validation_samples: val.len(),
        mean_seed_count,
        ..Default::default()
    };
    let mut opt_vae = Adam::new(cfg.lr_vae);
    let mut opt_s = Adam::new(cfg.lr_psi1);
    let mut opt_t = Adam::new(cfg.lr_psi2);
    let mut best: Option<(f64, CnslModel)> = None;
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.rng_seed, &[stage::TRAIN, epoch as u64]);
        order.shuffle(&mut r);
        let mut epoch_total = 0.0;
        let mut steps = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&DiffusionSample> = idx.iter().map(|&i| &fit[i]).collect();
            let pairs = make_pairs(&batch, cfg, &mut r);
            let (loss, grads) = train_loss(model, &batch, &pairs, cfg, &mut r)?;
            opt_vae.update(&mut model.vae, &grads.vae);
            opt_s.update(&mut model.surrogate_source, &grads.surrogate_source);
            opt_t.update(&mut model.surrogate_target, &grads.surrogate_target);
            report.loss_history.push(loss.total);
            epoch_total += loss.total;
            steps += 1;
        }
        report.epoch_losses.push(epoch_total / steps as f64);
        log::debug!("epoch {epoch}: mean loss {:.4}", epoch_total / steps as f64);
        if !val.is_empty() {
            let v = validation_loss(model, val, cfg)?;
            report.validation_losses.push(v);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                report.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(report)
}

/// Mean seed count of a set of seed vectors, as used for top-m binarization.
pub(crate) fn mean_count(seeds: &[SeedVector]) -> f64 {
    seeds.iter().map(|s| s.count() as f64).sum::<f64>() / seeds.len().max(1) as f64
}
