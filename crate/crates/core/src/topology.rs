//! Network graphs, mixing matrices and the conversion from mixing weights to
//! the penalty weights of the consensus objective.
//!
//! Node indices are zero-based in memory. The graph text format and the
//! human-facing `edges_one_based` accessor use one-based indices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::matkit::DenseMatrix;

/// Tolerance for the unit row-sum and symmetry checks on mixing matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

const ERDOS_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TopologyKind {
    Ring,
    Star,
    Complete,
    Erdos { p: f64 },
}

impl TopologyKind {
    /// Parse a kind name, taking the edge probability separately for `erdos`.
    pub fn from_parts(name: &str, p: Option<f64>) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ring" => Ok(Self::Ring),
            "star" => Ok(Self::Star),
            "complete" => Ok(Self::Complete),
            "erdos" => {
                let p = p.ok_or_else(|| {
                    Error::InvalidArgument("erdos topology needs an edge probability p".into())
                })?;
                Ok(Self::Erdos { p })
            }
            other => Err(Error::InvalidArgument(format!("unknown topology '{other}'"))),
        }
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    /// Accepts `ring`, `star`, `complete`, `erdos:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, p)) => {
                let p = p
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad probability '{p}': {e}")))?;
                Self::from_parts(name, Some(p))
            }
            None => Self::from_parts(s, None),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ring => write!(f, "ring"),
            Self::Star => write!(f, "star"),
            Self::Complete => write!(f, "complete"),
            Self::Erdos { p } => write!(f, "erdos:{p}"),
        }
    }
}

/// Undirected simple graph on `nodes` vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Build from zero-based pairs. Self-loops and out-of-range nodes are
    /// rejected; duplicates (in either orientation) collapse.
    pub fn new(nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {}", a + 1)));
            }
            if a >= nodes || b >= nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) outside 1..={nodes}",
                    a + 1,
                    b + 1
                )));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        Ok(Self { nodes, edges })
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Zero-based `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edges_one_based(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(a, b)| (a + 1, b + 1)).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        connected(&self.adjacency())
    }

    /// `J` on the first line, then one one-based `i j` pair per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.nodes)?;
        for (a, b) in self.edges_one_based() {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut nodes = None;
        let mut pairs = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let parse = |t: &str| {
                t.parse::<usize>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad index '{t}': {e}"),
                })
            };
            match (nodes, toks.as_slice()) {
                (None, [j]) => nodes = Some(parse(j)?),
                (Some(_), [a, b]) => {
                    let (a, b) = (parse(a)?, parse(b)?);
                    if a == 0 || b == 0 {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "node indices are one-based".into(),
                        });
                    }
                    pairs.push((a - 1, b - 1));
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unexpected line '{line}'"),
                    })
                }
            }
        }
        let nodes = nodes.ok_or(Error::Parse {
            line: 1,
            msg: "missing node count".into(),
        })?;
        Self::new(nodes, pairs)
    }
}

fn connected(adj: &[Vec<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == adj.len()
}

/// Deterministic graph for `(kind, nodes, seed)`. Only `Erdos` consumes the
/// seed: attempt `a` draws with sub-seed `seed + a` until connected.
pub fn build_graph(kind: TopologyKind, nodes: usize, seed: u64) -> Result<Graph> {
    if nodes < 2 {
        return Err(Error::InvalidArgument(format!(
            "network needs J >= 2 nodes, got {nodes}"
        )));
    }
    match kind {
        TopologyKind::Ring => Graph::new(nodes, (0..nodes).map(|i| (i, (i + 1) % nodes))),
        TopologyKind::Star => Graph::new(nodes, (1..nodes).map(|i| (0, i))),
        TopologyKind::Complete => Graph::new(
            nodes,
            (0..nodes).flat_map(|i| (i + 1..nodes).map(move |j| (i, j))),
        ),
        TopologyKind::Erdos { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "erdos probability must lie in (0, 1], got {p}"
                )));
            }
            for attempt in 0..ERDOS_MAX_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
                let mut pairs = Vec::new();
                for i in 0..nodes {
                    for j in i + 1..nodes {
                        if rng.random::<f64>() < p {
                            pairs.push((i, j));
                        }
                    }
                }
                let g = Graph::new(nodes, pairs)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::ConnectivityCap {
                attempts: ERDOS_MAX_ATTEMPTS,
                nodes,
                p,
            })
        }
    }
}

/// Symmetric, nonnegative `J x J` mixing weights with unit row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    wtilde: DenseMatrix,
}

impl MixingMatrix {
    pub fn new(wtilde: DenseMatrix) -> Result<Self> {
        let (r, c) = wtilde.shape();
        if r != c || r == 0 {
            return Err(mismatch("MixingMatrix::new", "nonempty square", format!("{r}x{c}")));
        }
        for i in 0..r {
            let mut sum = 0.0;
            for j in 0..r {
                let x = wtilde.get(i, j);
                if x < 0.0 {
                    return Err(Error::InvalidMixing(format!(
                        "negative entry {x} at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                if (x - wtilde.get(j, i)).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMixing(format!(
                        "asymmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                sum += x;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMixing(format!(
                    "row {} sums to {sum}, expected 1",
                    i + 1
                )));
            }
        }
        Ok(Self { wtilde })
    }

    /// Skip validation. Only for negative controls that need a matrix
    /// violating the unit row-sum condition.
    pub fn from_raw_unchecked(wtilde: DenseMatrix) -> Self {
        Self { wtilde }
    }

    pub fn identity(nodes: usize) -> Self {
        Self {
            wtilde: DenseMatrix::identity(nodes),
        }
    }

    pub fn nodes(&self) -> usize {
        self.wtilde.rows()
    }

    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.wtilde.get(j, i)
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.wtilde
    }

    /// Graph on the off-diagonal support of the weights.
    pub fn support_graph(&self) -> Graph {
        let n = self.nodes();
        let pairs = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.wtilde.get(i, j) > 0.0);
        Graph::new(n, pairs).expect("support pairs are valid by construction")
    }

    /// Off-diagonal weight only on edges of `g`.
    pub fn respects(&self, g: &Graph) -> bool {
        self.support_graph().edges().all(|(i, j)| g.has_edge(i, j))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::new(DenseMatrix::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.wtilde.save(path)
    }
}

/// Metropolis-Hastings weights: `1 / (1 + max(deg_i, deg_j))` on each edge,
/// the remainder of each row on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.node_count();
    let deg = g.degrees();
    let mut w = DenseMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let x = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w.set(i, j, x);
        w.set(j, i, x);
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w.get(i, j)).sum();
        w.set(i, i, 1.0 - off);
    }
    MixingMatrix::new(w)
}

/// `(W + I) / 2`: halves every off-diagonal weight, pushing the diagonal
/// above one half.
pub fn lazy_fix(m: &MixingMatrix) -> MixingMatrix {
    let n = m.nodes();
    let w = DenseMatrix::from_fn(n, n, |i, j| {
        let x = m.weight(i, j);
        if i == j {
            (x + 1.0) / 2.0
        } else {
            x / 2.0
        }
    });
    MixingMatrix { wtilde: w }
}

/// Largest off-diagonal row sum, `max_j sum_{i != j} w~_ji`.
pub fn omega(m: &MixingMatrix) -> f64 {
    let n = m.nodes();
    (0..n)
        .map(|j| (0..n).filter(|&i| i != j).map(|i| m.weight(j, i)).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Connectivity of the off-diagonal support (breadth-first search).
pub fn is_connected(m: &MixingMatrix) -> bool {
    m.support_graph().is_connected()
}

/// Penalty weights `w_ji = w~_ji / (4 mu)` off the diagonal, zero on it.
#[derive(Debug, Clone, PartialEq)]
pub struct GdWeights {
    w: DenseMatrix,
    mu: f64,
}

impl GdWeights {
    /// Direct construction; `w` must be square, symmetric and nonnegative
    /// with a zero diagonal.
    pub fn new(w: DenseMatrix, mu: f64) -> Result<Self> {
        let (r, c) = w.shape();
        if r != c {
            return Err(mismatch("GdWeights::new", "square", format!("{r}x{c}")));
        }
        for i in 0..r {
            if w.get(i, i) != 0.0 {
                return Err(Error::InvalidArgument("GD weights need a zero diagonal".into()));
            }
            for j in 0..r {
                if w.get(i, j) < 0.0 || w.get(i, j) != w.get(j, i) {
                    return Err(Error::InvalidArgument(
                        "GD weights must be symmetric and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(Self { w, mu })
    }

    pub fn nodes(&self) -> usize {
        self.w.rows()
    }

    #[inline]
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.w.get(j, i)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.w
    }
}

pub fn to_gd_weights(m: &MixingMatrix, mu: f64) -> Result<GdWeights> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "stepsize must be positive and finite, got {mu}"
        )));
    }
    let n = m.nodes();
    let w = DenseMatrix::from_fn(n, n, |j, i| {
        if i == j {
            0.0
        } else {
            m.weight(j, i) / (4.0 * mu)
        }
    });
    Ok(GdWeights { w, mu })
}
