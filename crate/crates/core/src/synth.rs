//! Synthetic cross-networks: a cross-platform-scale generator and a small
//! toy instance for end-to-end checks.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BridgeLinks, CrossNetwork, Network, NodeFeatures};
use crate::rng::{self, stage, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_source: usize,
    pub e_source: usize,
    pub n_target: usize,
    pub e_target: usize,
    /// Expected bridge links per source node.
    pub bridges_per_source: f64,
    /// Extra random feature columns on top of the structural ones.
    pub random_features: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::cross_platform()
    }
}

impl SynthConfig {
    /// Sizes of the crawled repository/question cross-network.
    pub fn cross_platform() -> Self {
        Self {
            n_source: 1204,
            e_source: 1043,
            n_target: 3862,
            e_target: 3149,
            bridges_per_source: 0.6,
            random_features: 2,
        }
    }

    /// 50-node source, 80-node target.
    pub fn toy() -> Self {
        Self {
            n_source: 50,
            e_source: 50,
            n_target: 80,
            e_target: 100,
            bridges_per_source: 3.0,
            random_features: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n, e) in [("source", self.n_source, self.e_source), ("target", self.n_target, self.e_target)] {
            if n == 0 {
                return Err(Error::Config(format!("{name} network needs at least one node")));
            }
            if e > n * (n - 1) / 2 {
                return Err(Error::Config(format!("{name} network cannot hold {e} edges on {n} nodes")));
            }
        }
        if !(self.bridges_per_source >= 0.0) || self.bridges_per_source * self.n_source as f64 > (self.n_source * self.n_target) as f64 {
            return Err(Error::Config("bridges_per_source out of range".into()));
        }
        Ok(())
    }
}

/// Undirected graph with exactly `e` edges. Endpoints are drawn with
/// probability proportional to degree + 1, which gives a heavy-tailed
/// degree distribution similar to interaction graphs.
pub fn preferential_graph(name: &str, n: usize, e: usize, rng: &mut Rng) -> Result<Network> {
    let mut deg = vec![0usize; n];
    let mut pool: Vec<usize> = (0..n).collect();
    let mut seen = HashSet::with_capacity(e);
    let mut edges = Vec::with_capacity(e);
    let mut attempts = 0usize;
    while edges.len() < e {
        attempts += 1;
        // Uniform fallback keeps dense requests from stalling.
        let pick = |rng: &mut Rng, pool: &[usize]| if attempts > 50 * e.max(1) { rng.random_range(0..n) } else { pool[rng.random_range(0..pool.len())] };
        let u = rng.random_range(0..n);
        let v = pick(rng, &pool);
        if u == v || !seen.insert((u.min(v), u.max(v))) {
            continue;
        }
        edges.push((u.min(v), u.max(v)));
        deg[u] += 1;
        deg[v] += 1;
        pool.push(u);
        pool.push(v);
    }
    Network::new(name, n, edges, false)
}

/// Source features: normalized degree, normalized bridge out-count, a
/// constant, then `random` standard-normal columns.
fn source_features(net: &Network, bridges: &BridgeLinks, random: usize, rng: &mut Rng) -> NodeFeatures {
    use rand_distr::{Distribution, StandardNormal};
    let n = net.num_nodes();
    let mut out_b = vec![0usize; n];
    for &(u, _) in &bridges.pairs {
        out_b[u] += 1;
    }
    let deg: Vec<usize> = (0..n).map(|u| net.out_degree(u)).collect();
    let max_d = deg.iter().copied().max().unwrap_or(0).max(1) as f64;
    let max_b = out_b.iter().copied().max().unwrap_or(0).max(1) as f64;
    let cols = 3 + random;
    let mut data = Vec::with_capacity(n * cols);
    for u in 0..n {
        data.push(deg[u] as f64 / max_d);
        data.push(out_b[u] as f64 / max_b);
        data.push(1.0);
        for _ in 0..random {
            data.push(StandardNormal.sample(rng));
        }
    }
    NodeFeatures::new(n, cols, data).expect("feature shape")
}

/// Builds a cross-network with the configured sizes. Bridges leave source
/// nodes chosen proportionally to degree + 1 and land on uniform target
/// nodes; every source node with at least one edge gets a chance.
pub fn generate_cross_network(cfg: &SynthConfig, seed: u64) -> Result<CrossNetwork> {
    cfg.validate()?;
    let mut r = rng::stream(seed, &[stage::SYNTH, 0]);
    let source = preferential_graph("source", cfg.n_source, cfg.e_source, &mut r)?;
    let mut r = rng::stream(seed, &[stage::SYNTH, 1]);
    let target = preferential_graph("target", cfg.n_target, cfg.e_target, &mut r)?;
    let mut r = rng::stream(seed, &[stage::SYNTH, 2]);
    let n_bridges = (cfg.bridges_per_source * cfg.n_source as f64).round() as usize;
    let weights: Vec<usize> = (0..cfg.n_source).flat_map(|u| std::iter::repeat_n(u, source.out_degree(u) + 1)).collect();
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n_bridges);
    while pairs.len() < n_bridges {
        let u = weights[r.random_range(0..weights.len())];
        let v = r.random_range(0..cfg.n_target);
        if seen.insert((u, v)) {
            pairs.push((u, v));
        }
    }
    pairs.sort_unstable();
    let bridges = BridgeLinks::new(pairs);
    let mut r = rng::stream(seed, &[stage::SYNTH, 3]);
    let feats = source_features(&source, &bridges, cfg.random_features, &mut r);
    Ok(CrossNetwork::new(source, target, bridges).with_source_features(feats))
}
