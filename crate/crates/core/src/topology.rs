//! Communication graphs and the metrics the protocol parameters depend on.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::frame_info::NodeId;

/// Placements tried by [`Topology::unit_disk`] before giving up.
pub const MAX_RESAMPLES: usize = 10_000;

/// Largest graph [`Topology::chromatic_number_distance2`] searches exactly.
pub const EXACT_COLORING_LIMIT: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("graph needs at least {min} nodes, got {got}")]
    TooSmall { min: usize, got: usize },
    #[error("edge ({u}, {v}) names a node outside 0..{n}")]
    NodeOutOfRange { u: u32, v: u32, n: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("graph is not connected")]
    Disconnected,
    #[error("no connected placement with max degree <= {cap} after {tries} tries")]
    NoPlacement { cap: usize, tries: usize },
    #[error("exact coloring is limited to {EXACT_COLORING_LIMIT} nodes, graph has {0}; use greedy_distance2_coloring")]
    TooLargeForExact(usize),
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// `(δ, Δ, diam)`: maximum degree, maximum two-hop neighborhood size and
/// diameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metrics {
    pub max_degree: usize,
    pub max_two_hop: usize,
    pub diameter: usize,
}

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    adj: Vec<Vec<NodeId>>,
    matrix: Vec<bool>,
}

impl Topology {
    /// Builds a graph from an edge list. Duplicate edges are merged.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::TooSmall { min: 1, got: 0 });
        }
        let mut matrix = vec![false; n * n];
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(TopologyError::NodeOutOfRange { u, v, n });
            }
            if u == v {
                return Err(TopologyError::SelfLoop(u));
            }
            matrix[u as usize * n + v as usize] = true;
            matrix[v as usize * n + u as usize] = true;
        }
        let adj = (0..n)
            .map(|u| {
                (0..n)
                    .filter(|&v| matrix[u * n + v])
                    .map(|v| NodeId(v as u32))
                    .collect()
            })
            .collect();
        Ok(Self { n, adj, matrix })
    }

    /// Star with `leaves` leaves `0..leaves` and the center `leaves`.
    pub fn star(leaves: usize) -> Result<Self, TopologyError> {
        if leaves == 0 {
            return Err(TopologyError::TooSmall { min: 1, got: 0 });
        }
        let center = leaves as u32;
        let edges: Vec<_> = (0..center).map(|l| (l, center)).collect();
        Self::from_edges(leaves + 1, &edges)
    }

    /// 4-neighbor lattice; node `(x, y)` has id `y * width + x`.
    pub fn grid(width: usize, height: usize) -> Result<Self, TopologyError> {
        if width == 0 || height == 0 {
            return Err(TopologyError::TooSmall { min: 1, got: 0 });
        }
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let v = (y * width + x) as u32;
                if x + 1 < width {
                    edges.push((v, v + 1));
                }
                if y + 1 < height {
                    edges.push((v, v + width as u32));
                }
            }
        }
        Self::from_edges(width * height, &edges)
    }

    pub fn path(n: usize) -> Result<Self, TopologyError> {
        Self::grid(n, 1)
    }

    pub fn complete(n: usize) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for u in 0..n as u32 {
            for v in (u + 1)..n as u32 {
                edges.push((u, v));
            }
        }
        Self::from_edges(n, &edges)
    }

    /// Random geometric graph: `n` points uniform in a `side x side` square,
    /// joined when at most `radius` apart. Placements are redrawn until the
    /// graph is connected and no degree exceeds `degree_cap`.
    pub fn unit_disk<R: Rng + ?Sized>(
        n: usize,
        radius: f64,
        side: f64,
        rng: &mut R,
        degree_cap: usize,
    ) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::TooSmall { min: 1, got: 0 });
        }
        let r2 = radius * radius;
        for _ in 0..MAX_RESAMPLES {
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..=side), rng.gen_range(0.0..=side)))
                .collect();
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    let (dx, dy) = (pts[u].0 - pts[v].0, pts[u].1 - pts[v].1);
                    if dx * dx + dy * dy <= r2 {
                        edges.push((u as u32, v as u32));
                    }
                }
            }
            let g = Self::from_edges(n, &edges)?;
            if g.is_connected() && g.adj.iter().all(|a| a.len() <= degree_cap) {
                return Ok(g);
            }
        }
        Err(TopologyError::NoPlacement {
            cap: degree_cap,
            tries: MAX_RESAMPLES,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n as u32).map(NodeId)
    }

    /// Edges `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, nbrs) in self.adj.iter().enumerate() {
            for v in nbrs {
                if (u as u32) < v.0 {
                    out.push((u as u32, v.0));
                }
            }
        }
        out
    }

    /// `δ_i`, ascending.
    pub fn neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.adj[i.index()]
    }

    pub fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.matrix[a.index() * self.n + b.index()]
    }

    pub fn degree(&self, i: NodeId) -> usize {
        self.adj[i.index()].len()
    }

    /// Hop distances from `src`; `None` for unreachable nodes.
    pub fn distances_from(&self, src: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[src.index()] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap();
            for &v in &self.adj[u.index()] {
                if dist[v.index()].is_none() {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// `Δ_i`: nodes at distance 1 or 2 from `i`, ascending.
    pub fn two_hop(&self, i: NodeId) -> Vec<NodeId> {
        let mut seen = vec![false; self.n];
        seen[i.index()] = true;
        for &v in &self.adj[i.index()] {
            seen[v.index()] = true;
            for &w in &self.adj[v.index()] {
                seen[w.index()] = true;
            }
        }
        seen[i.index()] = false;
        (0..self.n).filter(|&k| seen[k]).map(|k| NodeId(k as u32)).collect()
    }

    pub fn is_connected(&self) -> bool {
        self.distances_from(NodeId(0)).iter().all(Option::is_some)
    }

    pub fn metrics(&self) -> Result<Metrics, TopologyError> {
        let mut diameter = 0;
        for src in self.nodes() {
            for d in self.distances_from(src) {
                diameter = diameter.max(d.ok_or(TopologyError::Disconnected)?);
            }
        }
        Ok(Metrics {
            max_degree: self.adj.iter().map(Vec::len).max().unwrap_or(0),
            max_two_hop: self.nodes().map(|i| self.two_hop(i).len()).max().unwrap_or(0),
            diameter,
        })
    }

    /// Graph with node `v` renamed to `perm[v]`.
    pub fn relabel(&self, perm: &[u32]) -> Topology {
        assert_eq!(perm.len(), self.n, "permutation length");
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .map(|(u, v)| (perm[u as usize], perm[v as usize]))
            .collect();
        Topology::from_edges(self.n, &edges).expect("relabeling keeps the graph valid")
    }

    /// Distance-2 coloring by first fit in id order. Colors are `0..k`.
    pub fn greedy_distance2_coloring(&self) -> Vec<u32> {
        let mut color: Vec<Option<u32>> = vec![None; self.n];
        for i in self.nodes() {
            let taken: Vec<u32> = self.two_hop(i).iter().filter_map(|j| color[j.index()]).collect();
            color[i.index()] = (0..).find(|c| !taken.contains(c));
        }
        color.into_iter().map(|c| c.unwrap()).collect()
    }

    /// Exact chromatic number of the square graph.
    pub fn chromatic_number_distance2(&self) -> Result<usize, TopologyError> {
        if self.n > EXACT_COLORING_LIMIT {
            return Err(TopologyError::TooLargeForExact(self.n));
        }
        let square: Vec<u32> = self
            .nodes()
            .map(|i| self.two_hop(i).iter().fold(0u32, |m, j| m | 1 << j.0))
            .collect();
        // color the most constrained nodes first
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by_key(|&v| std::cmp::Reverse(square[v].count_ones()));
        let lower = self.nodes().map(|i| self.degree(i) + 1).max().unwrap_or(1);
        let upper = self.greedy_distance2_coloring().iter().max().map_or(1, |c| *c as usize + 1);
        for k in lower..upper {
            let mut color = vec![u32::MAX; self.n];
            if color_with(&square, &order, 0, k as u32, 0, &mut color) {
                return Ok(k);
            }
        }
        Ok(upper)
    }

    /// Parses the edge-list format: a header line `n m`, then `m` lines `u v`.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let pair = |line: usize, l: &str| -> Result<(u64, u64), TopologyError> {
            let err = |msg: &str| TopologyError::Parse { line, msg: msg.to_string() };
            let mut it = l.split_whitespace();
            let a = it.next().ok_or_else(|| err("expected two integers"))?;
            let b = it.next().ok_or_else(|| err("expected two integers"))?;
            if it.next().is_some() {
                return Err(err("expected two integers"));
            }
            let a = a.parse().map_err(|_| err(&format!("not an integer: {a}")))?;
            let b = b.parse().map_err(|_| err(&format!("not an integer: {b}")))?;
            Ok((a, b))
        };
        let (line, header) = lines.next().ok_or(TopologyError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let (n, m) = pair(line, header)?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let (u, v) = pair(line, l)?;
            let to_u32 = |x: u64| {
                u32::try_from(x).map_err(|_| TopologyError::Parse { line, msg: format!("node id {x} too large") })
            };
            edges.push((to_u32(u)?, to_u32(v)?));
        }
        if edges.len() as u64 != m {
            return Err(TopologyError::Parse {
                line,
                msg: format!("header announces {m} edges, found {}", edges.len()),
            });
        }
        Self::from_edges(n as usize, &edges)
    }

    pub fn to_edge_list(&self) -> String {
        let edges = self.edges();
        let mut out = format!("{} {}\n", self.n, edges.len());
        for (u, v) in edges {
            writeln!(out, "{u} {v}").unwrap();
        }
        out
    }
}

fn color_with(square: &[u32], order: &[usize], pos: usize, k: u32, used: u32, color: &mut [u32]) -> bool {
    let Some(&v) = order.get(pos) else {
        return true;
    };
    let mut forbidden = 0u64;
    let mut nbrs = square[v];
    while nbrs != 0 {
        let w = nbrs.trailing_zeros() as usize;
        nbrs &= nbrs - 1;
        if color[w] != u32::MAX {
            forbidden |= 1 << color[w];
        }
    }
    // a fresh color is interchangeable with any other fresh one
    for c in 0..k.min(used + 1) {
        if forbidden & (1 << c) == 0 {
            color[v] = c;
            if color_with(square, order, pos + 1, k, used.max(c + 1), color) {
                return true;
            }
        }
    }
    color[v] = u32::MAX;
    false
}
