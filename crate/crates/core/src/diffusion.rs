//! Stochastic diffusion simulators (LT, IC, SIS) and the cross-network
//! forward process used to build training data.
//!
//! Every Monte-Carlo run draws its randomness up front, in a fixed order
//! that does not depend on the initial active set: one uniform per node for
//! the Bernoulli hand-off, then one coin per edge (IC) or one threshold per
//! node (LT). Two runs with the same stream therefore share their edge coins
//! and thresholds, which makes superset seeds dominate subset seeds run by
//! run.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CrossNetwork, InfectionVector, Network, SeedVector};
use crate::rng::{self, stage, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionModel {
    Lt,
    Ic,
    Sis,
}

impl fmt::Display for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffusionModel::Lt => "LT",
            DiffusionModel::Ic => "IC",
            DiffusionModel::Sis => "SIS",
        })
    }
}

impl FromStr for DiffusionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lt" => Ok(Self::Lt),
            "ic" => Ok(Self::Ic),
            "sis" => Ok(Self::Sis),
            _ => Err(Error::Config(format!("unknown diffusion model {s:?} (expected lt, ic or sis)"))),
        }
    }
}

/// Parses a pattern such as `lt2ic` into (source model, target model).
pub fn parse_pattern(s: &str) -> Result<(DiffusionModel, DiffusionModel)> {
    let lower = s.to_ascii_lowercase();
    let (a, b) = lower
        .split_once('2')
        .ok_or_else(|| Error::Config(format!("diffusion pattern {s:?} must look like `lt2ic`")))?;
    Ok((a.parse()?, b.parse()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LtThreshold {
    /// Fresh `U(0, 1]` threshold per node per run.
    Uniform,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub model: DiffusionModel,
    pub ic_edge_prob: f64,
    pub lt_threshold: LtThreshold,
    pub sis_infect_prob: f64,
    pub sis_recover_prob: f64,
    pub max_steps: usize,
    pub mc_samples: usize,
    pub rng_seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            model: DiffusionModel::Ic,
            ic_edge_prob: 0.1,
            lt_threshold: LtThreshold::Uniform,
            sis_infect_prob: 0.1,
            sis_recover_prob: 0.05,
            max_steps: 20,
            mc_samples: 100,
            rng_seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn new(model: DiffusionModel) -> Self {
        Self {
            model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} must lie in [0, 1]")))
            }
        };
        unit("ic_edge_prob", self.ic_edge_prob)?;
        unit("sis_infect_prob", self.sis_infect_prob)?;
        unit("sis_recover_prob", self.sis_recover_prob)?;
        if let LtThreshold::Fixed(t) = self.lt_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("fixed LT threshold {t} must lie in (0, 1]")));
            }
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One training example: seeds, source spread, hand-off and target spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSample {
    pub x_s: SeedVector,
    pub y_s: InfectionVector,
    pub x_t: InfectionVector,
    pub y_t: InfectionVector,
}

/// Per-run randomness that is independent of the initial state.
struct RunDraws {
    init_uniform: Vec<f64>,
    edge_live: Vec<bool>,
    thresholds: Vec<f64>,
}

impl RunDraws {
    fn draw(net: &Network, cfg: &DiffusionConfig, rng: &mut Rng) -> Self {
        let n = net.num_nodes();
        let init_uniform = (0..n).map(|_| rng.random::<f64>()).collect();
        let (edge_live, thresholds) = match cfg.model {
            DiffusionModel::Ic => ((0..net.num_edges()).map(|_| rng.random::<f64>() < cfg.ic_edge_prob).collect(), Vec::new()),
            DiffusionModel::Lt => {
                let th = match cfg.lt_threshold {
                    LtThreshold::Uniform => (0..n).map(|_| 1.0 - rng.random::<f64>()).collect(),
                    LtThreshold::Fixed(t) => vec![t; n],
                };
                (Vec::new(), th)
            }
            DiffusionModel::Sis => (Vec::new(), Vec::new()),
        };
        Self {
            init_uniform,
            edge_live,
            thresholds,
        }
    }
}

fn run_ic(net: &Network, active: &mut [bool], live: &[bool], max_steps: usize) {
    let mut frontier: Vec<usize> = (0..active.len()).filter(|&v| active[v]).collect();
    let mut next = Vec::new();
    for _ in 0..max_steps {
        if frontier.is_empty() {
            break;
        }
        for &u in &frontier {
            for &(v, e) in net.out_neighbors(u) {
                if live[e] && !active[v] {
                    active[v] = true;
                    next.push(v);
                }
            }
        }
        std::mem::swap(&mut frontier, &mut next);
        next.clear();
    }
}

fn run_lt(net: &Network, active: &mut [bool], thresholds: &[f64], max_steps: usize) {
    let n = active.len();
    let mut newly = Vec::new();
    for _ in 0..max_steps {
        newly.clear();
        for v in 0..n {
            if active[v] {
                continue;
            }
            let deg = net.in_degree(v);
            if deg == 0 {
                continue;
            }
            let hits = net.in_neighbors(v).iter().filter(|&&(u, _)| active[u]).count();
            if hits as f64 / deg as f64 >= thresholds[v] {
                newly.push(v);
            }
        }
        if newly.is_empty() {
            break;
        }
        for &v in &newly {
            active[v] = true;
        }
    }
}

fn run_sis(net: &Network, active: &mut [bool], cfg: &DiffusionConfig, rng: &mut Rng) {
    let n = active.len();
    let initial: Vec<bool> = active.to_vec();
    let mut infected = active.to_vec();
    let mut next = vec![false; n];
    for _ in 0..cfg.max_steps {
        next.copy_from_slice(&infected);
        for u in 0..n {
            if !infected[u] {
                continue;
            }
            for &(v, _) in net.out_neighbors(u) {
                if !infected[v] && rng.random::<f64>() < cfg.sis_infect_prob {
                    next[v] = true;
                }
            }
            if rng.random::<f64>() < cfg.sis_recover_prob {
                next[u] = false;
            }
        }
        std::mem::swap(&mut infected, &mut next);
    }
    for v in 0..n {
        active[v] = infected[v] || initial[v];
    }
}

fn simulate_from(net: &Network, init_probs: &[f64], cfg: &DiffusionConfig, rng: &mut Rng) -> Vec<bool> {
    let draws = RunDraws::draw(net, cfg, rng);
    let mut active: Vec<bool> = init_probs.iter().zip(&draws.init_uniform).map(|(&p, &u)| u < p).collect();
    match cfg.model {
        DiffusionModel::Ic => run_ic(net, &mut active, &draws.edge_live, cfg.max_steps),
        DiffusionModel::Lt => run_lt(net, &mut active, &draws.thresholds, cfg.max_steps),
        DiffusionModel::Sis => run_sis(net, &mut active, cfg, rng),
    }
    active
}

/// One realized diffusion from a fixed seed set.
pub fn simulate_once(net: &Network, seeds: &SeedVector, cfg: &DiffusionConfig, rng: &mut Rng) -> Result<Vec<bool>> {
    if seeds.len() != net.num_nodes() {
        return Err(Error::SizeMismatch {
            context: "simulate_once seeds",
            expected: net.num_nodes(),
            actual: seeds.len(),
        });
    }
    Ok(simulate_from(net, &seeds.to_f64(), cfg, rng))
}

/// Empirical infection frequency over `cfg.mc_samples` runs whose initial
/// actives are drawn as independent Bernoulli(`init_probs[v]`). Run `i` uses
/// the stream `(cfg.rng_seed, tag, i)`, so the result is independent of the
/// worker count.
pub fn monte_carlo_from(net: &Network, init_probs: &[f64], cfg: &DiffusionConfig, tag: u64) -> Result<InfectionVector> {
    cfg.validate()?;
    let n = net.num_nodes();
    if init_probs.len() != n {
        return Err(Error::SizeMismatch {
            context: "monte_carlo initial probabilities",
            expected: n,
            actual: init_probs.len(),
        });
    }
    let counts = (0..cfg.mc_samples as u64)
        .into_par_iter()
        .fold(
            || vec![0u32; n],
            |mut acc, run| {
                let mut rng = rng::stream(cfg.rng_seed, &[tag, run]);
                for (c, hit) in acc.iter_mut().zip(simulate_from(net, init_probs, cfg, &mut rng)) {
                    *c += hit as u32;
                }
                acc
            },
        )
        .reduce(
            || vec![0u32; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let m = cfg.mc_samples as f64;
    Ok(InfectionVector(counts.into_iter().map(|c| c as f64 / m).collect()))
}

pub fn monte_carlo_probs(net: &Network, seeds: &SeedVector, cfg: &DiffusionConfig) -> Result<InfectionVector> {
    if seeds.len() != net.num_nodes() {
        return Err(Error::SizeMismatch {
            context: "monte_carlo_probs seeds",
            expected: net.num_nodes(),
            actual: seeds.len(),
        });
    }
    monte_carlo_from(net, &seeds.to_f64(), cfg, stage::SOURCE_DIFFUSION)
}

/// Source diffusion, bridge hand-off, then target diffusion seeded
/// stochastically from the handed-off probabilities.
pub fn cross_network_diffuse(cross: &CrossNetwork, x_s: &SeedVector, cfg_s: &DiffusionConfig, cfg_t: &DiffusionConfig) -> Result<DiffusionSample> {
    let y_s = monte_carlo_probs(&cross.source, x_s, cfg_s)?;
    let x_t = cross.bridge_transfer(&y_s)?;
    let y_t = monte_carlo_from(&cross.target, &x_t.0, cfg_t, stage::TARGET_DIFFUSION)?;
    Ok(DiffusionSample {
        x_s: x_s.clone(),
        y_s,
        x_t,
        y_t,
    })
}

/// Number of seeds drawn for a given fraction: `ceil(fraction * n)`.
pub fn seed_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Draws `n_samples` uniform seed sets of size `ceil(seed_fraction * N_s)`
/// and diffuses each one. Sample `k` depends only on `(rng_seed, k)`.
pub fn generate_dataset(
    cross: &CrossNetwork,
    n_samples: usize,
    seed_fraction: f64,
    cfg_s: &DiffusionConfig,
    cfg_t: &DiffusionConfig,
    rng_seed: u64,
) -> Result<Vec<DiffusionSample>> {
    if !(seed_fraction > 0.0 && seed_fraction < 1.0) {
        return Err(Error::Config(format!("seed_fraction {seed_fraction} must lie in (0, 1)")));
    }
    cfg_s.validate()?;
    cfg_t.validate()?;
    let n = cross.n_source();
    let m = seed_count(seed_fraction, n).min(n);
    (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(rng_seed, &[stage::DATASET_SEEDS, k]);
            let mut support = sample_indices(&mut rng, n, m).into_vec();
            support.sort_unstable();
            let x_s = SeedVector::from_support(n, &support);
            let cs = DiffusionConfig {
                rng_seed: rng::derive_seed(rng_seed, &[stage::DATASET_SAMPLE, k, 0]),
                ..cfg_s.clone()
            };
            let ct = DiffusionConfig {
                rng_seed: rng::derive_seed(rng_seed, &[stage::DATASET_SAMPLE, k, 1]),
                ..cfg_t.clone()
            };
            cross_network_diffuse(cross, &x_s, &cs, &ct)
        })
        .collect()
}

/// Runs `x_small` and `x_small ∪ extra` under common random numbers and
/// returns `(y_t_small, y_t_big)`. With shared edge coins (IC) or shared
/// thresholds (LT) the big outcome dominates the small one exactly.
pub fn coupled_monotonic_pair(
    cross: &CrossNetwork,
    x_small: &SeedVector,
    extra: &[usize],
    cfg_s: &DiffusionConfig,
    cfg_t: &DiffusionConfig,
) -> Result<(InfectionVector, InfectionVector)> {
    for cfg in [cfg_s, cfg_t] {
        if cfg.model == DiffusionModel::Sis {
            return Err(Error::Invalid("coupled pairs need IC or LT; SIS draws are state dependent".into()));
        }
    }
    if let Some(&v) = extra.iter().find(|&&v| v >= x_small.len() || x_small.0[v]) {
        return Err(Error::Invalid(format!("extra seed {v} overlaps the small seed set or is out of range")));
    }
    let mut big = x_small.clone();
    for &v in extra {
        big.0[v] = true;
    }
    let small = cross_network_diffuse(cross, x_small, cfg_s, cfg_t)?;
    let big = cross_network_diffuse(cross, &big, cfg_s, cfg_t)?;
    Ok((small.y_t, big.y_t))
}

/// Single-network coupled runs: returns the per-run outcomes for both seed
/// sets using identical streams.
pub fn coupled_runs(net: &Network, small: &SeedVector, big: &SeedVector, cfg: &DiffusionConfig, runs: usize) -> Result<Vec<(Vec<bool>, Vec<bool>)>> {
    cfg.validate()?;
    if small.len() != net.num_nodes() || big.len() != net.num_nodes() {
        return Err(Error::SizeMismatch {
            context: "coupled_runs seeds",
            expected: net.num_nodes(),
            actual: small.len().max(big.len()),
        });
    }
    (0..runs as u64)
        .map(|run| {
            let a = simulate_once(net, small, cfg, &mut rng::stream(cfg.rng_seed, &[stage::SOURCE_DIFFUSION, run]))?;
            let b = simulate_once(net, big, cfg, &mut rng::stream(cfg.rng_seed, &[stage::SOURCE_DIFFUSION, run]))?;
            Ok((a, b))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BridgeLinks;

    fn path3() -> Network {
        Network::new("p", 3, vec![(0, 1), (1, 2)], false).unwrap()
    }

    fn ic(p: f64) -> DiffusionConfig {
        DiffusionConfig {
            ic_edge_prob: p,
            ..DiffusionConfig::new(DiffusionModel::Ic)
        }
    }

    #[test]
    fn ic_certain_and_impossible_transmission() {
        let g = path3();
        let seeds = SeedVector::from_support(3, &[0]);
        let mut r = rng::stream(1, &[]);
        assert_eq!(simulate_once(&g, &seeds, &ic(1.0), &mut r).unwrap(), vec![true; 3]);
        assert_eq!(simulate_once(&g, &seeds, &ic(0.0), &mut r).unwrap(), vec![true, false, false]);
    }

    #[test]
    fn lt_fixed_threshold_star() {
        let star = Network::new("star", 5, (1..5).map(|v| (0, v)).collect(), false).unwrap();
        let cfg = DiffusionConfig {
            lt_threshold: LtThreshold::Fixed(0.5),
            max_steps: 1,
            ..DiffusionConfig::new(DiffusionModel::Lt)
        };
        let out = simulate_once(&star, &SeedVector::from_support(5, &[0]), &cfg, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(out, vec![true; 5]);
    }

    #[test]
    fn sis_reports_seeds_even_after_recovery() {
        let cfg = DiffusionConfig {
            sis_infect_prob: 0.0,
            sis_recover_prob: 1.0,
            ..DiffusionConfig::new(DiffusionModel::Sis)
        };
        let out = simulate_once(&path3(), &SeedVector::from_support(3, &[1]), &cfg, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(out, vec![false, true, false]);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let r = simulate_once(&path3(), &SeedVector::zeros(2), &ic(0.5), &mut rng::stream(0, &[]));
        assert!(matches!(r, Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn single_edge_half_probability() {
        let g = Network::new("e", 2, vec![(0, 1)], false).unwrap();
        let cfg = DiffusionConfig {
            mc_samples: 100_000,
            rng_seed: 3,
            ..ic(0.5)
        };
        let y = monte_carlo_probs(&g, &SeedVector::from_support(2, &[0]), &cfg).unwrap();
        assert_eq!(y.0[0], 1.0);
        assert!((y.0[1] - 0.5).abs() < 0.01, "{}", y.0[1]);
    }

    #[test]
    fn all_seeded_is_all_ones() {
        let cfg = DiffusionConfig::new(DiffusionModel::Sis);
        let y = monte_carlo_probs(&path3(), &SeedVector(vec![true; 3]), &cfg).unwrap();
        assert_eq!(y.0, vec![1.0; 3]);
    }

    #[test]
    fn cross_diffusion_without_bridges_is_silent() {
        let cross = CrossNetwork::new(path3(), path3(), BridgeLinks::default());
        let s = cross_network_diffuse(&cross, &SeedVector::from_support(3, &[0]), &ic(1.0), &ic(1.0)).unwrap();
        assert_eq!(s.y_t.0, vec![0.0; 3]);
    }

    #[test]
    fn certain_transmission_reaches_bridge_component() {
        // one source node, a bridge into node 1 of a target with two components
        let src = Network::empty("s", 1);
        let tgt = Network::new("t", 5, vec![(0, 1), (1, 2), (3, 4)], false).unwrap();
        let cross = CrossNetwork::new(src, tgt, BridgeLinks::new(vec![(0, 1)]));
        let s = cross_network_diffuse(&cross, &SeedVector(vec![true]), &ic(1.0), &ic(1.0)).unwrap();
        assert_eq!(s.y_t.0, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dataset_seed_counts_and_determinism() {
        let src = Network::new("s", 30, (0..29).map(|i| (i, i + 1)).collect(), false).unwrap();
        let cross = CrossNetwork::new(src.clone(), src, BridgeLinks::new((0..30).map(|i| (i, i)).collect()));
        let cfg = DiffusionConfig {
            mc_samples: 20,
            ..ic(0.3)
        };
        let a = generate_dataset(&cross, 4, 0.1, &cfg, &cfg, 9).unwrap();
        let b = generate_dataset(&cross, 4, 0.1, &cfg, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.x_s.count() == 3));
        assert!(generate_dataset(&cross, 0, 0.1, &cfg, &cfg, 9).unwrap().is_empty());
        assert!(generate_dataset(&cross, 1, 1.0, &cfg, &cfg, 9).is_err());
        assert_eq!(seed_count(0.1, 1204), 121);
        assert_eq!(seed_count(0.1, 50), 5);
    }

    #[test]
    fn coupled_pair_with_no_extra_is_identical() {
        let g = path3();
        let cross = CrossNetwork::new(g.clone(), g, BridgeLinks::new(vec![(2, 0)]));
        let x = SeedVector::from_support(3, &[0]);
        let (a, b) = coupled_monotonic_pair(&cross, &x, &[], &ic(0.5), &ic(0.5)).unwrap();
        assert_eq!(a, b);
        assert!(coupled_monotonic_pair(&cross, &x, &[0], &ic(0.5), &ic(0.5)).is_err());
    }

    #[test]
    fn pattern_parsing() {
        assert_eq!(parse_pattern("LT2sis").unwrap(), (DiffusionModel::Lt, DiffusionModel::Sis));
        assert!(parse_pattern("lt-ic").is_err());
    }
}
