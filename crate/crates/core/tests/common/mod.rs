//! Oracles shared by the integration test targets.

#![allow(dead_code)]

use rand::Rng as _;

use cnsl_core::rng::Rng;

/// `m` distinct random edges without self-loops.
pub fn random_edges(r: &mut Rng, n: usize, m: usize, directed: bool) -> Vec<(usize, usize)> {
    let mut set = std::collections::BTreeSet::new();
    while set.len() < m {
        let (u, v) = (r.random_range(0..n), r.random_range(0..n));
        if u != v {
            set.insert(if directed { (u, v) } else { (u.min(v), u.max(v)) });
        }
    }
    set.into_iter().collect()
}

/// Exact IC marginals: sum over all live/blocked edge patterns of the
/// pattern weight times reachability from the seeds. An undirected edge is
/// one coin serving both directions.
pub fn enumerate_ic(n: usize, edges: &[(usize, usize)], directed: bool, seeds: &[usize], p: f64) -> Vec<f64> {
    let m = edges.len();
    let mut out = vec![0.0; n];
    for mask in 0u32..(1 << m) {
        let live = mask.count_ones() as i32;
        let w = p.powi(live) * (1.0 - p).powi(m as i32 - live);
        let mut reached = vec![false; n];
        let mut stack: Vec<usize> = seeds.to_vec();
        for &s in seeds {
            reached[s] = true;
        }
        while let Some(u) = stack.pop() {
            for (e, &(a, b)) in edges.iter().enumerate() {
                if mask >> e & 1 == 0 {
                    continue;
                }
                let next = if a == u {
                    Some(b)
                } else if !directed && b == u {
                    Some(a)
                } else {
                    None
                };
                if let Some(v) = next {
                    if !reached[v] {
                        reached[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        for v in 0..n {
            if reached[v] {
                out[v] += w;
            }
        }
    }
    out
}
