use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::mean_count;
use super::{row, CnslModel, LatentPair};
use crate::error::{Error, Result};
use crate::graph::{InfectionVector, SeedVector};
use crate::neural::loss::{bce, mse, Reduction};
use crate::neural::{check_finite, Matrix};
use crate::rng::{self, stage};

/// What the target-network prediction is pulled toward during inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// The observed infection vector.
    #[default]
    Observed,
    /// Every target node infected.
    SpreadMax,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "observed" => Ok(Self::Observed),
            "spread-max" | "spread_max" => Ok(Self::SpreadMax),
            other => Err(Error::Config(format!("unknown objective '{other}' (expected observed or spread-max)"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Observed => "observed",
            Self::SpreadMax => "spread-max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum SeedRule {
    /// Top-m with m the rounded mean training seed count.
    #[default]
    Expected,
    TopM(usize),
    Threshold(f64),
}

impl FromStr for SeedRule {
    type Err = Error;

    /// Accepts `expected`, `top:<m>` or `threshold:<t>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad seed rule '{s}' (expected, top:<m> or threshold:<t>)"));
        match s.split_once(':') {
            None if s.eq_ignore_ascii_case("expected") => Ok(Self::Expected),
            Some(("top", m)) => m.trim().parse().map(Self::TopM).map_err(|_| bad()),
            Some(("threshold", t)) => match t.trim().parse::<f64>() {
                Ok(t) if (0.0..=1.0).contains(&t) => Ok(Self::Threshold(t)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Training seed sets averaged into the starting latents.
    pub k: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub rule: SeedRule,
    pub objective: Objective,
    /// Weight of the hardened-seed BCE term relative to the target error.
    pub seed_weight: f64,
    /// Independent descents, each from its own sample of training sets.
    pub restarts: usize,
    /// Decoded probabilities are averaged over this many lowest-loss
    /// restarts.
    pub ensemble: usize,
    pub rng_seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            k: 10,
            iterations: 2,
            alpha: 0.1,
            rule: SeedRule::Expected,
            objective: Objective::Observed,
            seed_weight: 1.0,
            restarts: 1,
            ensemble: 1,
            rng_seed: 0,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.restarts == 0 || self.ensemble == 0 || self.ensemble > self.restarts {
            return Err(Error::Config(format!(
                "need 1 <= ensemble <= restarts, got ensemble {} and restarts {}",
                self.ensemble, self.restarts
            )));
        }
        if !(self.seed_weight >= 0.0) {
            return Err(Error::Config("seed_weight must be non-negative".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub objective: Objective,
    /// Prediction loss before each latent step, then after the last one.
    pub losses: Vec<f64>,
    pub gradient_norms: Vec<f64>,
    pub seeds_selected: usize,
    pub sampled_training_sets: Vec<usize>,
    /// Final loss of every restart, in restart order.
    pub restart_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub seeds: SeedVector,
    pub probs: Vec<f64>,
    pub latents: LatentPair,
    pub trace: InferenceTrace,
}

/// Mean of the posterior means of both encoders over `seed_sets`.
pub fn average_latents(model: &CnslModel, seed_sets: &[&SeedVector]) -> Result<LatentPair> {
    if seed_sets.is_empty() {
        return Err(Error::Invalid("no training seed sets to average".into()));
    }
    let n = model.n_source();
    let data: Vec<f64> = seed_sets.iter().flat_map(|s| s.to_f64()).collect();
    if data.len() != n * seed_sets.len() {
        return Err(Error::SizeMismatch {
            context: "seed set",
            expected: n,
            actual: seed_sets.iter().map(|s| s.len()).find(|&l| l != n).unwrap_or(0),
        });
    }
    let x = Matrix::from_shape_vec((seed_sets.len(), n), data).expect("rectangular");
    let enc = model.encode_batch(&x, None)?;
    let mean = |m: &Matrix| m.mean_axis(ndarray::Axis(0)).expect("non-empty").insert_axis(ndarray::Axis(0));
    Ok(LatentPair {
        z_s: mean(&enc.mu_s),
        z_fs: mean(&enc.mu_fs),
    })
}

/// The inference objective at `latents` and its gradient with respect to
/// `z_s`: BCE of the decoded seed probabilities against themselves
/// hardened at 0.5 (scaled by `seed_weight`), plus the squared error of the
/// target prediction.
pub fn prediction_loss(model: &CnslModel, latents: &LatentPair, target: &[f64], seed_weight: f64) -> Result<(f64, Matrix)> {
    if target.len() != model.n_target() {
        return Err(Error::SizeMismatch {
            context: "inference target",
            expected: model.n_target(),
            actual: target.len(),
        });
    }
    let (x_hat, dec) = model.decode_batch(&latents.z_s, &latents.z_fs)?;
    let hard = x_hat.mapv(|p| if p >= 0.5 { 1.0 } else { 0.0 });
    let out = model.surrogate_batch(&x_hat)?;
    let (l_seed, g_seed) = bce(&x_hat, &hard, Reduction::SumPerRow)?;
    let (l_pred, g_yt) = mse(&out.y_t, &row(target), Reduction::SumPerRow)?;
    let mut scratch = model.zeros_like();
    let g_x = model.surrogate_backward(&out, &Matrix::zeros(out.y_s.raw_dim()), &g_yt, &mut scratch) + g_seed * seed_weight;
    let (g_zs, _) = model.decode_backward(&dec, &g_x, &mut scratch);
    check_finite("inference gradient", &g_zs)?;
    Ok((seed_weight * l_seed + l_pred, g_zs))
}

struct Descent {
    latents: LatentPair,
    losses: Vec<f64>,
    gradient_norms: Vec<f64>,
    picked: Vec<usize>,
}

fn descend(model: &CnslModel, target: &[f64], training_seeds: &[SeedVector], cfg: &InferConfig, restart: usize) -> Result<Descent> {
    let mut r = rng::stream(cfg.rng_seed, &[stage::INFER, restart as u64]);
    let k = cfg.k.min(training_seeds.len());
    let mut picked = sample(&mut r, training_seeds.len(), k).into_vec();
    picked.sort_unstable();
    let chosen: Vec<&SeedVector> = picked.iter().map(|&i| &training_seeds[i]).collect();
    let mut latents = average_latents(model, &chosen)?;
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    let mut gradient_norms = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let (loss, g) = prediction_loss(model, &latents, target, cfg.seed_weight)?;
        losses.push(loss);
        gradient_norms.push(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        latents.z_s.scaled_add(-cfg.alpha, &g);
    }
    losses.push(prediction_loss(model, &latents, target, cfg.seed_weight)?.0);
    Ok(Descent {
        latents,
        losses,
        gradient_norms,
        picked,
    })
}

/// Locates seeds for one observation by gradient descent on the dynamic
/// latent, starting from averaged training latents. With several restarts
/// the lowest final loss wins and its latents and trace are reported.
pub fn infer_seeds(model: &CnslModel, y_t: &InfectionVector, training_seeds: &[SeedVector], cfg: &InferConfig) -> Result<InferenceResult> {
    cfg.validate()?;
    if training_seeds.is_empty() {
        return Err(Error::Invalid("inference needs training seed sets".into()));
    }
    if y_t.len() != model.n_target() {
        return Err(Error::SizeMismatch {
            context: "observation",
            expected: model.n_target(),
            actual: y_t.len(),
        });
    }
    let target = match cfg.objective {
        Objective::Observed => y_t.0.clone(),
        Objective::SpreadMax => vec![1.0; model.n_target()],
    };
    let runs = (0..cfg.restarts)
        .into_par_iter()
        .map(|i| descend(model, &target, training_seeds, cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let final_loss = |d: &Descent| *d.losses.last().expect("at least one loss");
    let restart_losses: Vec<f64> = runs.iter().map(final_loss).collect();
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| restart_losses[a].total_cmp(&restart_losses[b]).then(a.cmp(&b)));

    let mut probs = vec![0.0; model.n_source()];
    for &i in &order[..cfg.ensemble] {
        for (p, q) in probs.iter_mut().zip(model.decode(&runs[i].latents)?.row(0)) {
            *p += q;
        }
    }
    probs.iter_mut().for_each(|p| *p /= cfg.ensemble as f64);
    let rule = match cfg.rule {
        SeedRule::Expected => SeedRule::TopM(mean_count(training_seeds).round() as usize),
        r => r,
    };
    let seeds = binarize_seeds(&probs, rule);
    let best = runs.into_iter().nth(order[0]).expect("at least one restart");
    Ok(InferenceResult {
        trace: InferenceTrace {
            objective: cfg.objective,
            losses: best.losses,
            gradient_norms: best.gradient_norms,
            seeds_selected: seeds.count(),
            sampled_training_sets: best.picked,
            restart_losses,
        },
        seeds,
        probs,
        latents: best.latents,
    })
}

/// Top-m (ties to the lowest index) or thresholding. `Expected` behaves as
/// top-0 here since no training statistics are available.
pub fn binarize_seeds(probs: &[f64], rule: SeedRule) -> SeedVector {
    match rule {
        SeedRule::Threshold(t) => SeedVector(probs.iter().map(|&p| p >= t).collect()),
        SeedRule::TopM(m) => {
            let mut idx: Vec<usize> = (0..probs.len()).collect();
            idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            idx.truncate(m);
            SeedVector::from_support(probs.len(), &idx)
        }
        SeedRule::Expected => SeedVector::zeros(probs.len()),
    }
}
