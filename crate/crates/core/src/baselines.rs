//! Label-propagation source identification (LPSI) and its cross-network
//! adapter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CrossNetwork, InfectionVector, Network, SeedVector};
use crate::model::{binarize_seeds, SeedRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum LpsiRule {
    /// Nodes whose positive score beats every neighbor's.
    LocalMaxima,
    TopM(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpsiConfig {
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub rule: LpsiRule,
}

impl Default for LpsiConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tol: 1e-6,
            max_iter: 1000,
            rule: LpsiRule::LocalMaxima,
        }
    }
}

impl LpsiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("lpsi alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("lpsi tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpsiScores {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Symmetrically normalized adjacency `D^{-1/2} W D^{-1/2}` of the
/// undirected version of `net`, as neighbor lists.
fn normalized_neighbors(net: &Network) -> Vec<Vec<(usize, f64)>> {
    let n = net.num_nodes();
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in net.edges() {
        nbrs[u].push(v);
        nbrs[v].push(u);
    }
    for l in &mut nbrs {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<f64> = nbrs.iter().map(|l| l.len() as f64).collect();
    nbrs.iter()
        .enumerate()
        .map(|(u, l)| l.iter().map(|&v| (v, 1.0 / (deg[u] * deg[v]).sqrt())).collect())
        .collect()
}

/// Iterates `s ← α S s + (1 − α) labels` from `s = labels` until the
/// largest change drops below `tol`. On hitting `max_iter` the last iterate
/// is returned with `converged = false`.
pub fn lpsi_scores(net: &Network, labels: &[f64], cfg: &LpsiConfig) -> Result<LpsiScores> {
    cfg.validate()?;
    if labels.len() != net.num_nodes() {
        return Err(Error::SizeMismatch {
            context: "lpsi labels",
            expected: net.num_nodes(),
            actual: labels.len(),
        });
    }
    let s_mat = normalized_neighbors(net);
    let mut s = labels.to_vec();
    let mut next = vec![0.0; s.len()];
    for it in 1..=cfg.max_iter {
        let mut delta: f64 = 0.0;
        for (u, row) in s_mat.iter().enumerate() {
            let prop: f64 = row.iter().map(|&(v, w)| w * s[v]).sum();
            next[u] = cfg.alpha * prop + (1.0 - cfg.alpha) * labels[u];
            delta = delta.max((next[u] - s[u]).abs());
        }
        std::mem::swap(&mut s, &mut next);
        if delta < cfg.tol {
            log::debug!("lpsi converged after {it} iterations");
            return Ok(LpsiScores {
                scores: s,
                iterations: it,
                converged: true,
            });
        }
    }
    log::warn!("lpsi did not converge within {} iterations", cfg.max_iter);
    Ok(LpsiScores {
        scores: s,
        iterations: cfg.max_iter,
        converged: false,
    })
}

fn local_maxima(net: &Network, scores: &[f64]) -> SeedVector {
    let nbrs = normalized_neighbors(net);
    SeedVector(
        scores
            .iter()
            .enumerate()
            .map(|(u, &s)| s > 0.0 && nbrs[u].iter().all(|&(v, _)| s > scores[v]))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpsiCrossResult {
    pub seeds: SeedVector,
    /// Converged scores on the source network.
    pub scores: Vec<f64>,
    pub target_scores: Vec<f64>,
    pub iterations: (usize, usize),
}

/// Runs LPSI on the target with labels `±1` from `y_t` thresholded at 0.5,
/// carries the converged scores back over the bridges (maximum over a
/// source node's bridges, 0 without any), then runs LPSI on the source with
/// those values as labels.
pub fn lpsi_cross(cross: &CrossNetwork, y_t: &InfectionVector, cfg: &LpsiConfig) -> Result<LpsiCrossResult> {
    let (ns, nt) = (cross.n_source(), cross.n_target());
    if y_t.len() != nt {
        return Err(Error::SizeMismatch {
            context: "lpsi observation",
            expected: nt,
            actual: y_t.len(),
        });
    }
    let labels_t: Vec<f64> = y_t.as_slice().iter().map(|&p| if p >= 0.5 { 1.0 } else { -1.0 }).collect();
    let target = lpsi_scores(&cross.target, &labels_t, cfg)?;
    let mut labels_s: Vec<Option<f64>> = vec![None; ns];
    for &(u, v) in &cross.bridges.pairs {
        if u >= ns || v >= nt {
            return Err(Error::Invalid(format!("bridge ({u}, {v}) out of range")));
        }
        let t = target.scores[v];
        labels_s[u] = Some(labels_s[u].map_or(t, |c: f64| c.max(t)));
    }
    let labels_s: Vec<f64> = labels_s.into_iter().map(|l| l.unwrap_or(0.0)).collect();
    let source = lpsi_scores(&cross.source, &labels_s, cfg)?;
    let seeds = match cfg.rule {
        LpsiRule::LocalMaxima => local_maxima(&cross.source, &source.scores),
        LpsiRule::TopM(m) => binarize_seeds(&source.scores, SeedRule::TopM(m)),
    };
    Ok(LpsiCrossResult {
        seeds,
        scores: source.scores,
        target_scores: target.scores,
        iterations: (target.iterations, source.iterations),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BridgeLinks;

    /// Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn closed_form(net: &Network, labels: &[f64], alpha: f64) -> Vec<f64> {
        let n = net.num_nodes();
        let mut deg = vec![0.0f64; n];
        let edges: std::collections::HashSet<(usize, usize)> = net.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        for &(u, v) in &edges {
            deg[u] += 1.0;
            deg[v] += 1.0;
        }
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(u, v) in &edges {
            let w = alpha / (deg[u] * deg[v]).sqrt();
            a[u][v] -= w;
            a[v][u] -= w;
        }
        dense_solve(a, labels.iter().map(|l| (1.0 - alpha) * l).collect())
    }

    #[test]
    fn path_matches_linear_solve() {
        let net = Network::new("p", 4, vec![(0, 1), (1, 2), (2, 3)], false).unwrap();
        let labels = [1.0, 1.0, -1.0, -1.0];
        let cfg = LpsiConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let got = lpsi_scores(&net, &labels, &cfg).unwrap();
        assert!(got.converged);
        for (g, e) in got.scores.iter().zip(closed_form(&net, &labels, 0.5)) {
            assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
    }

    #[test]
    fn trivial_fixpoints() {
        let net = Network::new("p", 3, vec![(0, 1), (1, 2)], false).unwrap();
        let labels = [1.0, -1.0, 1.0];
        let tiny = LpsiConfig {
            alpha: 1e-9,
            ..Default::default()
        };
        let s = lpsi_scores(&net, &labels, &tiny).unwrap().scores;
        assert!(s.iter().zip(labels).all(|(a, b)| (a - b).abs() < 1e-8));
        // Without edges the fixpoint is the scaled prior (1 − α)·labels.
        let empty = Network::empty("e", 3);
        for alpha in [0.2, 0.5, 0.9] {
            let cfg = LpsiConfig {
                alpha,
                ..Default::default()
            };
            let s = lpsi_scores(&empty, &labels, &cfg).unwrap().scores;
            assert!(s.iter().zip(labels).all(|(a, b)| (a - (1.0 - alpha) * b).abs() < 1e-15));
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let net = Network::new("p", 4, vec![(0, 1), (1, 2), (2, 3)], false).unwrap();
        let cfg = LpsiConfig {
            alpha: 0.99,
            tol: 1e-15,
            max_iter: 3,
            ..Default::default()
        };
        let out = lpsi_scores(&net, &[1.0, -1.0, 1.0, -1.0], &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
    }

    #[test]
    fn chain_head_is_predicted() {
        // Source path 0-1-2 whose head 0 bridges into the target path 0-1.
        let s = Network::new("s", 3, vec![(0, 1), (1, 2)], false).unwrap();
        let t = Network::new("t", 2, vec![(0, 1)], false).unwrap();
        let cross = CrossNetwork::new(s, t, BridgeLinks::new(vec![(0, 0)]));
        let y = InfectionVector::new(vec![1.0, 1.0]).unwrap();
        let out = lpsi_cross(&cross, &y, &LpsiConfig::default()).unwrap();
        assert_eq!(out.seeds.support(), vec![0]);
        let cfg = LpsiConfig {
            rule: LpsiRule::TopM(1),
            ..Default::default()
        };
        assert_eq!(lpsi_cross(&cross, &y, &cfg).unwrap().seeds.support(), vec![0]);
    }

    #[test]
    fn no_bridges_is_degenerate() {
        let s = Network::new("s", 3, vec![(0, 1), (1, 2)], false).unwrap();
        let t = Network::new("t", 2, vec![(0, 1)], false).unwrap();
        let cross = CrossNetwork::new(s, t, BridgeLinks::default());
        let y = InfectionVector::new(vec![1.0, 0.0]).unwrap();
        let out = lpsi_cross(&cross, &y, &LpsiConfig::default()).unwrap();
        assert_eq!(out.scores, vec![0.0; 3]);
        assert_eq!(out.seeds.count(), 0);
    }
}
