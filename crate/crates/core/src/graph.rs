//! Cross-network data model: two graphs joined by directed bridge links.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOURCE_EDGES_FILE: &str = "source.edges";
pub const TARGET_EDGES_FILE: &str = "target.edges";
pub const BRIDGES_FILE: &str = "bridges.tsv";
pub const SOURCE_FEATURES_FILE: &str = "source_features.csv";
pub const TARGET_FEATURES_FILE: &str = "target_features.csv";

/// A simple graph with dense `0..num_nodes` node ids.
///
/// Adjacency is kept in compressed form. Every adjacency entry carries the
/// id of the edge it came from, so simulators can attach per-edge state
/// (coin flips) that is shared by both directions of an undirected edge.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    directed: bool,
    out_offsets: Vec<usize>,
    out_adj: Vec<(usize, usize)>,
    in_offsets: Vec<usize>,
    in_adj: Vec<(usize, usize)>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes
            && self.directed == other.directed
            && self.edge_set() == other.edge_set()
    }
}

fn build_csr(n: usize, arcs: impl Iterator<Item = (usize, usize, usize)> + Clone) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut offsets = vec![0usize; n + 1];
    for (u, _, _) in arcs.clone() {
        offsets[u + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut adj = vec![(0, 0); offsets[n]];
    for (u, v, e) in arcs {
        adj[fill[u]] = (v, e);
        fill[u] += 1;
    }
    (offsets, adj)
}

impl Network {
    /// Builds a network, rejecting out-of-range endpoints, self-loops and
    /// duplicate edges. For undirected graphs `(u, v)` and `(v, u)` are the
    /// same edge.
    pub fn new(name: impl Into<String>, num_nodes: usize, edges: Vec<(usize, usize)>, directed: bool) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        for (i, &(u, v)) in edges.iter().enumerate() {
            for w in [u, v] {
                if w >= num_nodes {
                    return Err(Error::IndexOutOfRange {
                        what: "edge endpoint".into(),
                        index: w,
                        len: num_nodes,
                        line: i + 1,
                    });
                }
            }
            if u == v {
                return Err(Error::Invalid(format!("self-loop on node {u} (edge {})", i + 1)));
            }
            let key = if directed { (u, v) } else { (u.min(v), u.max(v)) };
            if !seen.insert(key) {
                return Err(Error::DuplicateEdge(u, v, i + 1));
            }
        }
        Ok(Self::build(name.into(), num_nodes, edges, directed))
    }

    fn build(name: String, num_nodes: usize, edges: Vec<(usize, usize)>, directed: bool) -> Self {
        let fwd = edges.iter().enumerate().map(|(e, &(u, v))| (u, v, e));
        let (out_offsets, out_adj, in_offsets, in_adj) = if directed {
            let (oo, oa) = build_csr(num_nodes, fwd);
            let (io, ia) = build_csr(num_nodes, edges.iter().enumerate().map(|(e, &(u, v))| (v, u, e)));
            (oo, oa, io, ia)
        } else {
            let both = edges
                .iter()
                .enumerate()
                .flat_map(|(e, &(u, v))| [(u, v, e), (v, u, e)]);
            let (oo, oa) = build_csr(num_nodes, both);
            (oo.clone(), oa.clone(), oo, oa)
        };
        Self {
            name,
            num_nodes,
            edges,
            directed,
            out_offsets,
            out_adj,
            in_offsets,
            in_adj,
        }
    }

    pub fn empty(name: impl Into<String>, num_nodes: usize) -> Self {
        Self::build(name.into(), num_nodes, Vec::new(), false)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Neighbors reachable from `u` as `(node, edge_id)`.
    pub fn out_neighbors(&self, u: usize) -> &[(usize, usize)] {
        &self.out_adj[self.out_offsets[u]..self.out_offsets[u + 1]]
    }

    /// Neighbors that can reach `v` as `(node, edge_id)`.
    pub fn in_neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.in_adj[self.in_offsets[v]..self.in_offsets[v + 1]]
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.out_offsets[u + 1] - self.out_offsets[u]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_offsets[v + 1] - self.in_offsets[v]
    }

    /// Canonical edge set (endpoints sorted for undirected graphs).
    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges
            .iter()
            .map(|&(u, v)| if self.directed { (u, v) } else { (u.min(v), u.max(v)) })
            .collect()
    }

    /// Subgraph induced by `keep`, relabelled to `0..keep.len()` in the
    /// order given.
    pub fn induced_subgraph(&self, name: impl Into<String>, keep: &[usize]) -> Network {
        let mut index = vec![usize::MAX; self.num_nodes];
        for (i, &v) in keep.iter().enumerate() {
            index[v] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| index[u] != usize::MAX && index[v] != usize::MAX)
            .map(|&(u, v)| (index[u], index[v]))
            .collect();
        Self::build(name.into(), keep.len(), edges, self.directed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(16 * self.edges.len() + 32);
        out.push_str(&format!("# {}\nnodes={}\n", self.name, self.num_nodes));
        if self.directed {
            out.push_str("directed=true\n");
        }
        for &(u, v) in &self.edges {
            out.push_str(&format!("{u}\t{v}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads an edge list with a `nodes=N` header. `#` starts a comment.
    pub fn load(path: &Path, name: impl Into<String>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut num_nodes = None;
        let mut directed = false;
        let mut edges = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(n) = line.strip_prefix("nodes=") {
                num_nodes = Some(
                    n.trim()
                        .parse::<usize>()
                        .map_err(|e| parse_err(lineno, format!("bad node count: {e}")))?,
                );
                continue;
            }
            if let Some(d) = line.strip_prefix("directed=") {
                directed = matches!(d.trim(), "true" | "1");
                continue;
            }
            let (u, v) = parse_pair(line).ok_or_else(|| parse_err(lineno, format!("expected `u<TAB>v`, got {line:?}")))?;
            edges.push((u, v));
            lines.push(lineno);
        }
        let n = num_nodes.ok_or_else(|| parse_err(1, "missing `nodes=N` header".into()))?;
        // Re-check here so errors name the file line rather than the edge ordinal.
        let mut seen = HashSet::new();
        for (&(u, v), &lineno) in edges.iter().zip(&lines) {
            for w in [u, v] {
                if w >= n {
                    return Err(Error::IndexOutOfRange {
                        what: format!("{}: edge endpoint", path.display()),
                        index: w,
                        len: n,
                        line: lineno,
                    });
                }
            }
            if u == v {
                return Err(parse_err(lineno, format!("self-loop on node {u}")));
            }
            let key = if directed { (u, v) } else { (u.min(v), u.max(v)) };
            if !seen.insert(key) {
                return Err(Error::DuplicateEdge(u, v, lineno));
            }
        }
        Ok(Self::build(name.into(), n, edges, directed))
    }
}

fn parse_pair(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split(|c: char| c == '\t' || c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
    let u = it.next()?.parse().ok()?;
    let v = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((u, v))
}

/// Directed `(source_node, target_node)` links.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeLinks {
    pub pairs: Vec<(usize, usize)>,
}

impl BridgeLinks {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# source\ttarget\n");
        for &(u, v) in &self.pairs {
            out.push_str(&format!("{u}\t{v}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let pair = parse_pair(line).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `u_source<TAB>v_target`, got {line:?}"),
            })?;
            pairs.push(pair);
        }
        Ok(Self { pairs })
    }
}

/// Dense `rows × cols` real feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NodeFeatures {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::SizeMismatch {
                context: "feature matrix",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("non-finite feature at row {}, column {}", i / cols.max(1), i % cols.max(1))));
        }
        Ok(Self { rows, cols, data })
    }

    /// Normalized degree plus a constant column; used when a network ships
    /// without features.
    pub fn structural(net: &Network) -> Self {
        let n = net.num_nodes();
        let max_deg = (0..n).map(|v| net.out_degree(v)).max().unwrap_or(0).max(1) as f64;
        let mut data = Vec::with_capacity(2 * n);
        for v in 0..n {
            data.push(net.out_degree(v) as f64 / max_deg);
            data.push(1.0);
        }
        Self { rows: n, cols: 2, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = self.row(r).iter().map(|x| x.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Header-less CSV, one row per node.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let row = parsed.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("expected {c} columns, got {}", row.len()),
                    })
                }
                _ => {}
            }
            data.extend(row);
            rows += 1;
        }
        Self::new(rows, cols.unwrap_or(0), data)
    }
}

/// Binary seed indicator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedVector(pub Vec<bool>);

impl SeedVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn from_support(n: usize, support: &[usize]) -> Self {
        let mut bits = vec![false; n];
        for &i in support {
            bits[i] = true;
        }
        Self(bits)
    }

    /// Accepts exact 0/1 values only.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if x == 0.0 {
                    Ok(false)
                } else if x == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::Invalid(format!("seed entry {i} is {x}, expected 0 or 1")))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-node infection probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectionVector(pub Vec<f64>);

impl InfectionVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Invalid(format!("infection probability {p} at node {i} outside [0, 1]")));
        }
        Ok(Self(probs))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<&SeedVector> for InfectionVector {
    fn from(s: &SeedVector) -> Self {
        InfectionVector(s.to_f64())
    }
}

/// Writes `node_index,value` rows.
pub fn write_vector_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 12);
    for (i, v) in values.iter().enumerate() {
        writeln!(buf, "{i},{v}").expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads `node_index,value` rows. A non-numeric first line is treated as a
/// header. Missing indices are an error.
pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (a.trim(), b.trim()),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected `node_index,value`".into(),
                })
            }
        };
        match (a.parse::<usize>(), b.parse::<f64>()) {
            (Ok(idx), Ok(v)) => entries.push((idx, v)),
            _ if i == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("cannot parse {line:?}"),
                })
            }
        }
    }
    let n = entries.len();
    let mut out = vec![f64::NAN; n];
    for (idx, v) in entries {
        if idx >= n {
            return Err(Error::IndexOutOfRange {
                what: format!("{}: vector index", path.display()),
                index: idx,
                len: n,
                line: 0,
            });
        }
        out[idx] = v;
    }
    if let Some(missing) = out.iter().position(|x| x.is_nan()) {
        return Err(Error::Invalid(format!("{}: missing entry for node {missing}", path.display())));
    }
    Ok(out)
}

/// Max-aggregated transfer along `pairs`. Returns the transferred values and,
/// for each destination, the origin that supplied the maximum (lowest origin
/// index on ties). Destinations without an incoming link get 0 and `None`.
pub fn transfer_max(values: &[f64], pairs: impl Iterator<Item = (usize, usize)>, n_dest: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut out = vec![0.0; n_dest];
    let mut arg: Vec<Option<usize>> = vec![None; n_dest];
    for (from, to) in pairs {
        let x = values[from];
        match arg[to] {
            None => {
                out[to] = x;
                arg[to] = Some(from);
            }
            Some(prev) => {
                if x > out[to] || (x == out[to] && from < prev) {
                    out[to] = x;
                    arg[to] = Some(from);
                }
            }
        }
    }
    (out, arg)
}

/// Hands source-side infection probabilities to the target network: each
/// target node takes the maximum over its incoming bridges.
pub fn bridge_transfer(y_s: &InfectionVector, bridges: &BridgeLinks, n_source: usize, n_target: usize) -> Result<InfectionVector> {
    if y_s.len() != n_source {
        return Err(Error::SizeMismatch {
            context: "bridge_transfer source vector",
            expected: n_source,
            actual: y_s.len(),
        });
    }
    if let Some(&(u, v)) = bridges.pairs.iter().find(|&&(u, v)| u >= n_source || v >= n_target) {
        return Err(Error::Invalid(format!("bridge ({u}, {v}) out of range for {n_source}/{n_target} nodes")));
    }
    Ok(InfectionVector(transfer_max(&y_s.0, bridges.pairs.iter().copied(), n_target).0))
}

/// Source graph, target graph and the bridges between them.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossNetwork {
    pub source: Network,
    pub target: Network,
    pub bridges: BridgeLinks,
    pub source_features: Option<NodeFeatures>,
    /// Loaded and saved but not consumed by the model.
    pub target_features: Option<NodeFeatures>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    BridgeOutOfRange { index: usize, pair: (usize, usize) },
    DuplicateBridge { pair: (usize, usize) },
    FeatureRows { network: &'static str, rows: usize, nodes: usize },
    NonFiniteFeature { network: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BridgeOutOfRange { index, pair } => write!(f, "bridge #{index} {pair:?} references a node outside its network"),
            Violation::DuplicateBridge { pair } => write!(f, "duplicate bridge {pair:?}"),
            Violation::FeatureRows { network, rows, nodes } => write!(f, "{network} features have {rows} rows but the network has {nodes} nodes"),
            Violation::NonFiniteFeature { network } => write!(f, "{network} features contain non-finite values"),
        }
    }
}

impl CrossNetwork {
    pub fn new(source: Network, target: Network, bridges: BridgeLinks) -> Self {
        Self {
            source,
            target,
            bridges,
            source_features: None,
            target_features: None,
        }
    }

    pub fn with_source_features(mut self, f: NodeFeatures) -> Self {
        self.source_features = Some(f);
        self
    }

    pub fn n_source(&self) -> usize {
        self.source.num_nodes()
    }

    pub fn n_target(&self) -> usize {
        self.target.num_nodes()
    }

    /// Source features, or structural defaults when none were supplied.
    pub fn source_features_or_default(&self) -> NodeFeatures {
        self.source_features.clone().unwrap_or_else(|| NodeFeatures::structural(&self.source))
    }

    /// Lists every violated invariant; empty on success.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (ns, nt) = (self.n_source(), self.n_target());
        let mut seen = HashSet::new();
        for (index, &pair) in self.bridges.pairs.iter().enumerate() {
            if pair.0 >= ns || pair.1 >= nt {
                out.push(Violation::BridgeOutOfRange { index, pair });
            } else if !seen.insert(pair) {
                out.push(Violation::DuplicateBridge { pair });
            }
        }
        for (network, feats, nodes) in [
            ("source", &self.source_features, ns),
            ("target", &self.target_features, nt),
        ] {
            if let Some(f) = feats {
                if f.rows() != nodes {
                    out.push(Violation::FeatureRows { network, rows: f.rows(), nodes });
                }
                if f.data().iter().any(|x| !x.is_finite()) {
                    out.push(Violation::NonFiniteFeature { network });
                }
            }
        }
        out
    }

    pub fn bridge_transfer(&self, y_s: &InfectionVector) -> Result<InfectionVector> {
        bridge_transfer(y_s, &self.bridges, self.n_source(), self.n_target())
    }

    /// Writes the graph files into `dir` (which must exist).
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        self.source.save(&dir.join(SOURCE_EDGES_FILE))?;
        self.target.save(&dir.join(TARGET_EDGES_FILE))?;
        self.bridges.save(&dir.join(BRIDGES_FILE))?;
        if let Some(f) = &self.source_features {
            f.save(&dir.join(SOURCE_FEATURES_FILE))?;
        }
        if let Some(f) = &self.target_features {
            f.save(&dir.join(TARGET_FEATURES_FILE))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let opt = |name: &str| -> Option<PathBuf> {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        let mut cross = load_cross_network(
            &dir.join(SOURCE_EDGES_FILE),
            &dir.join(TARGET_EDGES_FILE),
            &dir.join(BRIDGES_FILE),
            opt(SOURCE_FEATURES_FILE).as_deref(),
        )?;
        if let Some(p) = opt(TARGET_FEATURES_FILE) {
            cross.target_features = Some(NodeFeatures::load(&p)?);
            if let Some(v) = cross.validate().into_iter().next() {
                return Err(Error::Invalid(v.to_string()));
            }
        }
        Ok(cross)
    }
}

/// Loads and validates a cross-network from its component files.
pub fn load_cross_network(source_edges: &Path, target_edges: &Path, bridges: &Path, source_features: Option<&Path>) -> Result<CrossNetwork> {
    let source = Network::load(source_edges, "source")?;
    let target = Network::load(target_edges, "target")?;
    let bridges = BridgeLinks::load(bridges)?;
    for (i, &(u, v)) in bridges.pairs.iter().enumerate() {
        if u >= source.num_nodes() {
            return Err(Error::IndexOutOfRange {
                what: "bridge source".into(),
                index: u,
                len: source.num_nodes(),
                line: i + 1,
            });
        }
        if v >= target.num_nodes() {
            return Err(Error::IndexOutOfRange {
                what: "bridge target".into(),
                index: v,
                len: target.num_nodes(),
                line: i + 1,
            });
        }
    }
    let mut cross = CrossNetwork::new(source, target, bridges);
    if let Some(p) = source_features {
        cross.source_features = Some(NodeFeatures::load(p)?);
    }
    if let Some(v) = cross.validate().into_iter().next() {
        return Err(Error::Invalid(v.to_string()));
    }
    Ok(cross)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Network {
        Network::new("p", 3, vec![(0, 1), (1, 2)], false).unwrap()
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(Network::new("x", 3, vec![(0, 5)], false), Err(Error::IndexOutOfRange { index: 5, .. })));
        assert!(matches!(Network::new("x", 3, vec![(0, 1), (1, 0)], false), Err(Error::DuplicateEdge(1, 0, 2))));
        assert!(Network::new("x", 3, vec![(0, 1), (1, 0)], true).is_ok());
        assert!(Network::new("x", 3, vec![(1, 1)], false).is_err());
    }

    #[test]
    fn undirected_adjacency_is_symmetric() {
        let g = path3();
        assert_eq!(g.out_neighbors(1), &[(0, 0), (2, 1)]);
        assert_eq!(g.in_neighbors(1), g.out_neighbors(1));
        let d = Network::new("d", 3, vec![(0, 1), (1, 2)], true).unwrap();
        assert_eq!(d.out_neighbors(1), &[(2, 1)]);
        assert_eq!(d.in_neighbors(1), &[(0, 0)]);
    }

    #[test]
    fn load_reports_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.edges");
        fs::write(&p, "# toy\nnodes=3\n0\t1\n1\t5\n").unwrap();
        match Network::load(&p, "g") {
            Err(Error::IndexOutOfRange { index: 5, line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "nodes=3\n0\t1\nzero\t1\n").unwrap();
        assert!(matches!(Network::load(&p, "g"), Err(Error::Parse { line: 3, .. })));
        fs::write(&p, "nodes=3\n0\t1\n1\t0\n").unwrap();
        assert!(matches!(Network::load(&p, "g"), Err(Error::DuplicateEdge(1, 0, 3))));
    }

    #[test]
    fn empty_bridge_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cross = CrossNetwork::new(path3(), path3(), BridgeLinks::default());
        cross.save_dir(dir.path()).unwrap();
        fs::write(dir.path().join(BRIDGES_FILE), "").unwrap();
        let back = CrossNetwork::load_dir(dir.path()).unwrap();
        assert!(back.bridges.is_empty());
    }

    #[test]
    fn bridge_transfer_examples() {
        let y = InfectionVector(vec![1.0, 0.0]);
        let x = bridge_transfer(&y, &BridgeLinks::new(vec![(0, 2)]), 2, 3).unwrap();
        assert_eq!(x.0, vec![0.0, 0.0, 1.0]);

        let y = InfectionVector(vec![0.3, 0.7]);
        let x = bridge_transfer(&y, &BridgeLinks::new(vec![(0, 1), (1, 1)]), 2, 2).unwrap();
        assert_eq!(x.0[1], 0.7);

        let x = bridge_transfer(&y, &BridgeLinks::default(), 2, 4).unwrap();
        assert_eq!(x.0, vec![0.0; 4]);

        assert!(matches!(
            bridge_transfer(&y, &BridgeLinks::default(), 3, 4),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn validate_reports_violations() {
        let cross = CrossNetwork::new(path3(), path3(), BridgeLinks::new(vec![(0, 1), (2, 2)]));
        assert!(cross.validate().is_empty());

        let dup = CrossNetwork::new(path3(), path3(), BridgeLinks::new(vec![(0, 1), (0, 1)]));
        assert_eq!(dup.validate(), vec![Violation::DuplicateBridge { pair: (0, 1) }]);

        let feats = NodeFeatures::new(2, 1, vec![0.0, 1.0]).unwrap();
        let bad = CrossNetwork::new(path3(), path3(), BridgeLinks::default()).with_source_features(feats);
        assert_eq!(bad.validate(), vec![Violation::FeatureRows { network: "source", rows: 2, nodes: 3 }]);
    }

    #[test]
    fn vector_csv_roundtrip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        write_vector_csv(&p, &[0.25, 1.0, 0.1 + 0.2]).unwrap();
        assert_eq!(read_vector_csv(&p).unwrap(), vec![0.25, 1.0, 0.1 + 0.2]);
        fs::write(&p, "node_index,value\n1,0.5\n0,1\n").unwrap();
        assert_eq!(read_vector_csv(&p).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn induced_subgraph_keeps_only_internal_edges() {
        let g = Network::new("g", 4, vec![(0, 1), (1, 2), (2, 3), (0, 3)], false).unwrap();
        let s = g.induced_subgraph("s", &[3, 0, 2]);
        assert_eq!(s.num_nodes(), 3);
        let set = s.edge_set();
        assert_eq!(set, [(0, 2), (0, 1)].into_iter().collect());
    }
}
