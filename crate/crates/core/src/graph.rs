//! Robot communication graphs, graph shift operators and polynomial graph filters.
//!
//! A graph filter of order `K` maps an `N × F_in` node signal `X` to
//!
//! ```text
//! Z = Σ_{k=0}^{K} S^k X H_k
//! ```
//!
//! where `S` is a shift operator supported on the graph's edges and each tap
//! `H_k` is an `F_in × F_out` matrix. Node `n`'s output only depends on nodes
//! within `K` hops of `n`, and relabeling the nodes permutes the output rows
//! the same way.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{distance, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("k = {k} is outside 1..={max} for a graph on {n} nodes")]
    InvalidK { k: usize, max: usize, n: usize },
    #[error("threshold must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not a permutation of 0..{0}")]
    InvalidPermutation(usize),
}

/// How edges are chosen from robot positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConstruction {
    /// Connect each robot to its `k` nearest robots, then symmetrize by union.
    KNearest { k: usize },
    /// Connect every pair within `radius` of each other.
    Threshold { radius: f64 },
}

impl Default for GraphConstruction {
    fn default() -> Self {
        GraphConstruction::KNearest { k: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `S = A`
    RawAdjacency,
    /// `S = D^{-1/2} A D^{-1/2}`
    DegreeNormalized,
    /// `S = D̃^{-1/2} (A + I) D̃^{-1/2}`
    #[default]
    SelfLoopNormalized,
}

/// Graph construction and normalization used to turn robot positions into a
/// shift operator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub construction: GraphConstruction,
    pub normalization: Normalization,
}

impl GraphConfig {
    pub fn shift_operator(&self, positions: &[Point]) -> Result<ShiftOperator, GraphError> {
        Ok(shift_operator(
            &build_graph(positions, self.construction)?,
            self.normalization,
        ))
    }
}

/// An undirected simple graph on robots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobotGraph {
    neighbors: Vec<BTreeSet<usize>>,
}

impl RobotGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            neighbors: vec![BTreeSet::new(); n],
        }
    }

    /// Build from an edge list; self-loops are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::empty(n);
        for (i, j) in edges {
            g.add_edge(i, j);
        }
        g
    }

    fn add_edge(&mut self, i: usize, j: usize) {
        if i != j {
            self.neighbors[i].insert(j);
            self.neighbors[j].insert(i);
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[node].iter().copied()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.n_nodes() == 0 || k_hop_neighborhood(self, 0, self.n_nodes()).len() == self.n_nodes()
    }

    /// One `i j` pair per line, preceded by a header with the node count.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes {}\n", self.n_nodes());
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }
}

/// Build the robot graph from positions.
///
/// With fewer than two robots the graph is edgeless regardless of
/// `construction`.
pub fn build_graph(
    positions: &[Point],
    construction: GraphConstruction,
) -> Result<RobotGraph, GraphError> {
    let n = positions.len();
    let mut graph = RobotGraph::empty(n);
    match construction {
        GraphConstruction::KNearest { k } => {
            if n < 2 {
                return Ok(graph);
            }
            if k == 0 || k > n - 1 {
                return Err(GraphError::InvalidK { k, max: n - 1, n });
            }
            for (i, &p) in positions.iter().enumerate() {
                let mut ranked: Vec<(f64, usize)> = positions
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, &q)| (distance(p, q), j))
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in ranked.iter().take(k) {
                    graph.add_edge(i, j);
                }
            }
        }
        GraphConstruction::Threshold { radius } => {
            if !(radius.is_finite() && radius >= 0.0) {
                return Err(GraphError::InvalidThreshold(radius));
            }
            for i in 0..n {
                for j in i + 1..n {
                    if distance(positions[i], positions[j]) <= radius {
                        graph.add_edge(i, j);
                    }
                }
            }
        }
    }
    Ok(graph)
}

/// Sparse `N × N` matrix stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    rows: Vec<Vec<(usize, f64)>>,
    /// Set when degree normalization met a degree-0 node (treated as degree 1).
    pub had_isolated_nodes: bool,
}

impl ShiftOperator {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Build from a dense matrix, keeping exact nonzeros.
    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let rows = dense
            .outer_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        Self {
            rows,
            had_isolated_nodes: false,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut out = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[[i, j]] = v;
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `S X`
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, v) in row {
                dst.scaled_add(v, &x.row(j));
            }
        }
        out
    }

    /// `Sᵀ X`
    pub fn apply_transpose(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, row) in self.rows.iter().enumerate() {
            let src = x.row(i);
            for &(j, v) in row {
                out.row_mut(j).scaled_add(v, &src);
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        let dense = self.to_dense();
        dense == dense.t()
    }
}

pub fn shift_operator(graph: &RobotGraph, normalization: Normalization) -> ShiftOperator {
    let n = graph.n_nodes();
    let mut had_isolated_nodes = false;
    let rows = match normalization {
        Normalization::RawAdjacency => (0..n)
            .map(|i| graph.neighbors(i).map(|j| (j, 1.0)).collect())
            .collect(),
        Normalization::DegreeNormalized => {
            let inv_sqrt: Vec<f64> = (0..n)
                .map(|i| {
                    let d = graph.degree(i);
                    if d == 0 {
                        had_isolated_nodes = true;
                    }
                    1.0 / (d.max(1) as f64).sqrt()
                })
                .collect();
            (0..n)
                .map(|i| {
                    graph
                        .neighbors(i)
                        .map(|j| (j, inv_sqrt[i] * inv_sqrt[j]))
                        .collect()
                })
                .collect()
        }
        Normalization::SelfLoopNormalized => {
            let inv_sqrt: Vec<f64> = (0..n)
                .map(|i| 1.0 / ((graph.degree(i) + 1) as f64).sqrt())
                .collect();
            (0..n)
                .map(|i| {
                    let mut row: Vec<(usize, f64)> = graph
                        .neighbors(i)
                        .chain(std::iter::once(i))
                        .map(|j| (j, inv_sqrt[i] * inv_sqrt[j]))
                        .collect();
                    row.sort_by_key(|&(j, _)| j);
                    row
                })
                .collect()
        }
    };
    ShiftOperator {
        rows,
        had_isolated_nodes,
    }
}

/// Filter taps `H_0..H_K`, each `F_in × F_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTaps {
    taps: Vec<Array2<f64>>,
}

impl FilterTaps {
    pub fn new(taps: Vec<Array2<f64>>) -> Result<Self, GraphError> {
        let Some(first) = taps.first() else {
            return Err(GraphError::DimensionMismatch(
                "a filter needs at least one tap".into(),
            ));
        };
        let dim = first.dim();
        if let Some(bad) = taps.iter().find(|t| t.dim() != dim) {
            return Err(GraphError::DimensionMismatch(format!(
                "taps have shapes {dim:?} and {:?}",
                bad.dim()
            )));
        }
        Ok(Self { taps })
    }

    pub fn zeros(order: usize, f_in: usize, f_out: usize) -> Self {
        Self {
            taps: vec![Array2::zeros((f_in, f_out)); order + 1],
        }
    }

    /// Polynomial order `K` (number of taps minus one).
    pub fn order(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn f_in(&self) -> usize {
        self.taps[0].nrows()
    }

    pub fn f_out(&self) -> usize {
        self.taps[0].ncols()
    }

    pub fn taps(&self) -> &[Array2<f64>] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.taps
    }
}

/// `Σ_k S^k X H_k`, evaluated by repeated sparse shifts of `X`.
pub fn filter_apply(
    s: &ShiftOperator,
    x: ArrayView2<'_, f64>,
    taps: &FilterTaps,
) -> Result<Array2<f64>, GraphError> {
    check_signal(s, x, taps)?;
    let mut shifted = x.to_owned();
    let mut z = shifted.dot(&taps.taps[0]);
    for h in &taps.taps[1..] {
        shifted = s.apply(shifted.view());
        z += &shifted.dot(h);
    }
    Ok(z)
}

pub(crate) fn check_signal(
    s: &ShiftOperator,
    x: ArrayView2<'_, f64>,
    taps: &FilterTaps,
) -> Result<(), GraphError> {
    if x.nrows() != s.n() {
        return Err(GraphError::DimensionMismatch(format!(
            "signal has {} rows but the shift operator is {}x{}",
            x.nrows(),
            s.n(),
            s.n()
        )));
    }
    if x.ncols() != taps.f_in() {
        return Err(GraphError::DimensionMismatch(format!(
            "signal has {} features but the taps expect {}",
            x.ncols(),
            taps.f_in()
        )));
    }
    Ok(())
}

/// All nodes reachable from `node` in at most `k` edges, including `node`.
pub fn k_hop_neighborhood(graph: &RobotGraph, node: usize, k: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([node]);
    let mut queue = VecDeque::from([(node, 0usize)]);
    while let Some((u, d)) = queue.pop_front() {
        if d == k {
            continue;
        }
        for v in graph.neighbors(u) {
            if seen.insert(v) {
                queue.push_back((v, d + 1));
            }
        }
    }
    seen
}

/// A relabeling of nodes: new node `i` is old node `perm[i]`.
///
/// As a matrix this is `Pᵀ` with `(Pᵀ)_{i, perm[i]} = 1`, so `Pᵀ X` takes row
/// `perm[i]` of `X` into row `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self, GraphError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(GraphError::InvalidPermutation(n));
            }
        }
        Ok(Self(perm))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// `Pᵀ X`
    pub fn permute_rows(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.select(Axis(0), &self.0)
    }
}

/// `(PᵀSP, PᵀX)`
pub fn permute_graph(
    s: &ShiftOperator,
    x: ArrayView2<'_, f64>,
    p: &Permutation,
) -> Result<(ShiftOperator, Array2<f64>), GraphError> {
    if p.len() != s.n() || x.nrows() != s.n() {
        return Err(GraphError::DimensionMismatch(format!(
            "permutation of {} nodes, operator of {}, signal of {} rows",
            p.len(),
            s.n(),
            x.nrows()
        )));
    }
    let mut inverse = vec![0; p.len()];
    for (new, &old) in p.as_slice().iter().enumerate() {
        inverse[old] = new;
    }
    let rows = p
        .as_slice()
        .iter()
        .map(|&old| {
            let mut row: Vec<(usize, f64)> =
                s.rows[old].iter().map(|&(j, v)| (inverse[j], v)).collect();
            row.sort_by_key(|&(j, _)| j);
            row
        })
        .collect();
    let permuted = ShiftOperator {
        rows,
        had_isolated_nodes: s.had_isolated_nodes,
    };
    Ok((permuted, p.permute_rows(x)))
}
