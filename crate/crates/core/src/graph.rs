//! Directed graphs of coupling matrices: unions, spanning trees and
//! scrambling.
//!
//! Orientation follows the coupling: `G[i][j] > 0` is an edge `j -> i`
//! (vertex `j` influences vertex `i`).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hajnal::is_scrambling;
use crate::linalg::{Matrix, StochasticMatrix};
use crate::source::CouplingSource;

#[derive(Clone, PartialEq, Eq)]
pub struct Digraph {
    m: usize,
    // adj[i * m + j] is the edge j -> i
    adj: Vec<bool>,
}

impl fmt::Debug for Digraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Digraph")
            .field("m", &self.m)
            .field("edges", &self.edges().collect::<Vec<_>>())
            .finish()
    }
}

impl Digraph {
    pub fn empty(m: usize) -> Self {
        Digraph {
            m,
            adj: vec![false; m * m],
        }
    }

    /// Builds a graph from `(from, to)` pairs.
    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Digraph::empty(m);
        for &(j, i) in edges {
            if i >= m || j >= m {
                return Err(Error::invalid(format!("edge {j} -> {i} out of range for m={m}")));
            }
            g.add_edge(j, i);
        }
        Ok(g)
    }

    /// Edge `j -> i` iff `G[i][j] > threshold`.
    pub fn from_matrix(g: &Matrix, threshold: f64) -> Result<Self> {
        let m = g.require_square()?;
        if !(threshold >= 0.0) {
            return Err(Error::invalid(format!("threshold must be >= 0, got {threshold}")));
        }
        Ok(Digraph {
            m,
            adj: g.data().iter().map(|&x| x > threshold).collect(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.m
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adj[to * self.m + from]
    }

    pub fn add_edge(&mut self, from: usize, to: usize) {
        self.adj[to * self.m + from] = true;
    }

    /// All edges as `(from, to)`, ordered by `from` then `to`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m;
        (0..m).flat_map(move |j| (0..m).filter(move |&i| self.has_edge(j, i)).map(move |i| (j, i)))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }

    fn out_neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(move |&i| i != v && self.adj[i * self.m + v])
    }

    /// Smallest root from which every vertex is reachable, found through the
    /// strongly connected component condensation: a root exists iff exactly
    /// one component has no incoming edge from another component.
    pub fn has_spanning_tree(&self) -> Option<usize> {
        if self.m == 0 {
            return None;
        }
        let comp = self.scc();
        let ncomp = comp.iter().max().map_or(0, |c| c + 1);
        let mut has_incoming = vec![false; ncomp];
        for (j, i) in self.edges() {
            if comp[i] != comp[j] {
                has_incoming[comp[i]] = true;
            }
        }
        let mut sources = (0..ncomp).filter(|&c| !has_incoming[c]);
        let source = sources.next()?;
        if sources.next().is_some() {
            return None;
        }
        (0..self.m).find(|&v| comp[v] == source)
    }

    /// Same answer as [`Digraph::has_spanning_tree`] by a search from every
    /// vertex in index order. Quadratic; kept as a cross-check.
    pub fn spanning_tree_root_by_search(&self) -> Option<usize> {
        (0..self.m).find(|&r| self.reachable_from(r).iter().all(|&x| x))
    }

    fn reachable_from(&self, root: usize) -> Vec<bool> {
        let mut seen = vec![false; self.m];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            for w in self.out_neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }

    /// Iterative Tarjan; returns the component id of every vertex.
    fn scc(&self) -> Vec<usize> {
        const UNSEEN: usize = usize::MAX;
        let m = self.m;
        let succ: Vec<Vec<usize>> = (0..m).map(|v| self.out_neighbors(v).collect()).collect();
        let mut index = vec![UNSEEN; m];
        let mut low = vec![0; m];
        let mut on_stack = vec![false; m];
        let mut comp = vec![UNSEEN; m];
        let mut stack = Vec::new();
        let mut next_index = 0;
        let mut next_comp = 0;
        // call frames: (vertex, position in its successor list)
        let mut frames: Vec<(usize, usize)> = Vec::new();
        for start in 0..m {
            if index[start] != UNSEEN {
                continue;
            }
            frames.push((start, 0));
            index[start] = next_index;
            low[start] = next_index;
            next_index += 1;
            stack.push(start);
            on_stack[start] = true;
            while let Some(&mut (v, ref mut pos)) = frames.last_mut() {
                if let Some(&w) = succ[v].get(*pos) {
                    *pos += 1;
                    if index[w] == UNSEEN {
                        index[w] = next_index;
                        low[w] = next_index;
                        next_index += 1;
                        stack.push(w);
                        on_stack[w] = true;
                        frames.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                    continue;
                }
                frames.pop();
                if let Some(&(parent, _)) = frames.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
        comp
    }

    /// Every pair of distinct vertices has a common in-neighbor. A vertex
    /// counts as its own in-neighbor only through a stored self-loop.
    pub fn is_scrambling_graph(&self) -> bool {
        let m = self.m;
        (0..m).all(|i| {
            (i + 1..m).all(|j| (0..m).any(|k| self.adj[i * m + k] && self.adj[j * m + k]))
        })
    }
}

/// Edge union of graphs on the same vertex set.
pub fn union(graphs: &[Digraph]) -> Result<Digraph> {
    let first = graphs.first().ok_or(Error::EmptyList)?;
    let mut out = first.clone();
    for g in &graphs[1..] {
        if g.m != out.m {
            return Err(Error::DimensionMismatch {
                expected: out.m,
                got: g.m,
            });
        }
        for (a, b) in out.adj.iter_mut().zip(&g.adj) {
            *a |= *b;
        }
    }
    Ok(out)
}

/// Whether the union of the `t_len` graphs `Gamma(t0), ..., Gamma(t0 + t_len - 1)`
/// has a spanning tree.
pub fn window_has_spanning_tree(
    source: &mut dyn CouplingSource,
    t0: u64,
    t_len: u64,
) -> Result<bool> {
    if t_len == 0 {
        return Err(Error::invalid("window length must be >= 1"));
    }
    let mut acc = Digraph::empty(source.dim());
    for t in t0..t0 + t_len {
        let g = Digraph::from_matrix(source.at(t)?.as_matrix(), 0.0)?;
        acc = union(&[acc, g])?;
    }
    Ok(acc.has_spanning_tree().is_some())
}

/// Verifies that the left product of `m - 1` stochastic matrices with
/// positive diagonals and spanning trees is scrambling.
pub fn scrambling_product_check(matrices: &[StochasticMatrix]) -> Result<bool> {
    let m = match matrices.first() {
        Some(g) => g.dim(),
        None => return Err(Error::EmptyList),
    };
    if matrices.len() != m.saturating_sub(1).max(1) {
        return Err(Error::invalid(format!(
            "expected {} matrices for m={m}, got {}",
            m.saturating_sub(1).max(1),
            matrices.len()
        )));
    }
    for (index, g) in matrices.iter().enumerate() {
        if g.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: g.dim(),
            });
        }
        if let Some(i) = (0..m).find(|&i| !(g[(i, i)] > 0.0)) {
            return Err(Error::PreconditionViolated {
                index,
                reason: format!("diagonal entry {i} is zero"),
            });
        }
        if Digraph::from_matrix(g, 0.0)?.has_spanning_tree().is_none() {
            return Err(Error::PreconditionViolated {
                index,
                reason: "graph has no spanning tree".into(),
            });
        }
    }
    let mut product = matrices[0].clone();
    for g in &matrices[1..] {
        product = g.compose(&product)?;
    }
    Ok(is_scrambling(&product))
}

/// Edge-list text: a header `m <count>` then one `j i` line per edge `j -> i`,
/// 0-based.
impl fmt::Display for Digraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "m {}", self.m)?;
        for (j, i) in self.edges() {
            writeln!(f, "{j} {i}")?;
        }
        Ok(())
    }
}

impl FromStr for Digraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::invalid("missing header line"))?;
        let m = header
            .strip_prefix("m ")
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::invalid(format!("bad header `{header}`")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace().map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(j)), Some(Ok(i)), None) => edges.push((j, i)),
                _ => return Err(Error::invalid(format!("bad edge line `{line}`"))),
            }
        }
        Digraph::from_edges(m, &edges)
    }
}
