//! Neighbor structures over samples and the Laplacian quadratic form.
//!
//! Adjacency is unweighted, symmetric and loop-free. Label and region modes
//! are stored as group ids (every group is a clique) so that memory stays
//! linear in the number of samples; kNN graphs keep explicit neighbor lists.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{param, shape, Error, Result};
use crate::scalar::{squared_distance, Scalar};
use crate::segmentation::RegionMap;

/// Which rule produced an adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    Knn,
    Label,
    Region,
}

#[derive(Debug, Clone, PartialEq)]
enum Structure {
    /// Sorted neighbor list per node.
    Lists(Vec<Vec<usize>>),
    /// Group id per node plus the members of each group, ascending.
    Groups { group: Vec<usize>, members: Vec<Vec<usize>> },
}

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    mode: AdjacencyMode,
    structure: Structure,
}

impl SparseAdjacency {
    /// Builds from undirected pairs; duplicates are merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], mode: AdjacencyMode) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(param(format!("edge ({i},{j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(param(format!("self-loop on node {i}")));
            }
            lists[i].push(j);
            lists[j].push(i);
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self {
            n,
            mode,
            structure: Structure::Lists(lists),
        })
    }

    /// Every pair of nodes sharing a group id is connected.
    pub fn from_groups(group: Vec<usize>, mode: AdjacencyMode) -> Self {
        let n = group.len();
        let mut relabel = HashMap::new();
        let mut dense = Vec::with_capacity(n);
        for &g in &group {
            let next = relabel.len();
            dense.push(*relabel.entry(g).or_insert(next));
        }
        let mut members = vec![Vec::new(); relabel.len()];
        for (i, &g) in dense.iter().enumerate() {
            members[g].push(i);
        }
        Self {
            n,
            mode,
            structure: Structure::Groups {
                group: dense,
                members,
            },
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> AdjacencyMode {
        self.mode
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        if i == j || i >= self.n || j >= self.n {
            return false;
        }
        match &self.structure {
            Structure::Lists(l) => l[i].binary_search(&j).is_ok(),
            Structure::Groups { group, .. } => group[i] == group[j],
        }
    }

    pub fn degree(&self, i: usize) -> usize {
        match &self.structure {
            Structure::Lists(l) => l[i].len(),
            Structure::Groups { group, members } => members[group[i]].len() - 1,
        }
    }

    /// Neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        match &self.structure {
            Structure::Lists(l) => l[i].clone(),
            Structure::Groups { group, members } => {
                members[group[i]].iter().copied().filter(|&j| j != i).collect()
            }
        }
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            out.extend(self.neighbors(i).into_iter().filter(|&j| j > i).map(|j| (i, j)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        match &self.structure {
            Structure::Lists(l) => l.iter().map(Vec::len).sum::<usize>() / 2,
            Structure::Groups { members, .. } => {
                members.iter().map(|m| m.len() * (m.len() - 1) / 2).sum()
            }
        }
    }

    /// Induced subgraph on `batch`, relabelled `0..m` in batch order.
    pub fn restrict_to_batch(&self, batch: &[usize]) -> Result<Self> {
        let mut local = HashMap::with_capacity(batch.len());
        for (pos, &g) in batch.iter().enumerate() {
            if g >= self.n {
                return Err(param(format!("batch index {g} out of range")));
            }
            if local.insert(g, pos).is_some() {
                return Err(param(format!("duplicate batch index {g}")));
            }
        }
        let structure = match &self.structure {
            Structure::Groups { group, .. } => {
                return Ok(Self::from_groups(
                    batch.iter().map(|&g| group[g]).collect(),
                    self.mode,
                ))
            }
            Structure::Lists(lists) => Structure::Lists(
                batch
                    .iter()
                    .map(|&g| {
                        let mut l: Vec<usize> =
                            lists[g].iter().filter_map(|j| local.get(j).copied()).collect();
                        l.sort_unstable();
                        l
                    })
                    .collect(),
            ),
        };
        Ok(Self {
            n: batch.len(),
            mode: self.mode,
            structure,
        })
    }

    /// Row of 0/1 weights for node `i` (used as the compression mask).
    pub fn mask_row(&self, i: usize) -> Vec<bool> {
        let mut row = vec![false; self.n];
        for j in self.neighbors(i) {
            row[j] = true;
        }
        row
    }

    /// Writes sorted `i,j` lines, one per undirected edge.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        for (i, j) in self.edges() {
            writeln!(w, "{i},{j}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an edge list written by [`SparseAdjacency::export`].
    pub fn import(path: impl AsRef<Path>, n: usize, mode: AdjacencyMode) -> Result<Self> {
        let r = BufReader::new(File::open(path.as_ref())?);
        let mut edges = Vec::new();
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: no + 1,
                msg: format!("expected `i,j`, found `{line}`"),
            };
            let (a, b) = line.split_once(',').ok_or_else(bad)?;
            let i = a.trim().parse().map_err(|_| bad())?;
            let j = b.trim().parse().map_err(|_| bad())?;
            edges.push((i, j));
        }
        Self::from_edges(n, &edges, mode)
    }
}

/// Exact k-nearest-neighbor graph, symmetrized by union. Ties in distance go
/// to the lower sample index.
pub fn knn_adjacency<T: Scalar>(data: &DataMatrix<T>, k: usize) -> Result<SparseAdjacency> {
    knn_adjacency_rows(data.values().view(), k)
}

pub fn knn_adjacency_rows<T: Scalar>(x: ArrayView2<T>, k: usize) -> Result<SparseAdjacency> {
    let n = x.nrows();
    if k < 1 || k >= n {
        return Err(param(format!("k must satisfy 1 <= k < n (k = {k}, n = {n})")));
    }
    let rows: Vec<&[T]> = x
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("row-major data"))
        .collect();
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(T, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (squared_distance(rows[i], rows[j]), j)));
        cand.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1))
        });
        edges.extend(cand[..k].iter().map(|&(_, j)| (i, j)));
    }
    SparseAdjacency::from_edges(n, &edges, AdjacencyMode::Knn)
}

/// Same-class cliques. Every sample must be labelled.
pub fn label_adjacency(labels: &[Option<usize>]) -> Result<SparseAdjacency> {
    let group = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| {
                Error::Mode(format!(
                    "sample {i} is unlabelled; exclude unlabelled samples before building label adjacency"
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseAdjacency::from_groups(group, AdjacencyMode::Label))
}

/// Same-region cliques over a full image of `n` pixels.
pub fn region_adjacency(regions: &RegionMap, n: usize) -> Result<SparseAdjacency> {
    if regions.len() != n {
        return Err(shape(format!(
            "region map covers {} pixels, data has {n} samples",
            regions.len()
        )));
    }
    Ok(SparseAdjacency::from_groups(regions.ids().to_vec(), AdjacencyMode::Region))
}

/// `Y^T L Y` (trace over embedding columns), i.e. the sum over undirected
/// edges of `‖y_i − y_j‖²`. Equals half the ordered-pair sum.
pub fn laplacian_quadratic<T: Scalar>(adj: &SparseAdjacency, y: ArrayView2<T>) -> Result<T> {
    check_rows(adj, y)?;
    let mut total = T::zero();
    match &adj.structure {
        Structure::Lists(lists) => {
            for (i, l) in lists.iter().enumerate() {
                let yi = y.row(i);
                for &j in l.iter().filter(|&&j| j > i) {
                    let yj = y.row(j);
                    total += yi.iter().zip(yj.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
                }
            }
        }
        Structure::Groups { members, .. } => {
            // per clique: g·Σ‖y_i‖² − ‖Σ y_i‖²
            for m in members.iter().filter(|m| m.len() > 1) {
                let g = T::from_count(m.len());
                for col in y.columns() {
                    let (mut s, mut s2) = (T::zero(), T::zero());
                    for &i in m {
                        s += col[i];
                        s2 += col[i] * col[i];
                    }
                    total += g * s2 - s * s;
                }
            }
        }
    }
    Ok(total.max(T::zero()))
}

/// Gradient of [`laplacian_quadratic`] with respect to `Y`: `2 L Y`.
pub fn laplacian_gradient<T: Scalar>(adj: &SparseAdjacency, y: ArrayView2<T>) -> Result<Array2<T>> {
    check_rows(adj, y)?;
    let two = T::lit(2.0);
    let mut grad = Array2::zeros(y.raw_dim());
    match &adj.structure {
        Structure::Lists(lists) => {
            for (i, l) in lists.iter().enumerate() {
                let mut g = grad.row_mut(i);
                for &j in l {
                    for c in 0..y.ncols() {
                        g[c] += two * (y[[i, c]] - y[[j, c]]);
                    }
                }
            }
        }
        Structure::Groups { members, .. } => {
            for m in members.iter().filter(|m| m.len() > 1) {
                let g = T::from_count(m.len());
                for c in 0..y.ncols() {
                    let s: T = m.iter().map(|&i| y[[i, c]]).sum();
                    for &i in m {
                        grad[[i, c]] = two * (g * y[[i, c]] - s);
                    }
                }
            }
        }
    }
    Ok(grad)
}

fn check_rows<T>(adj: &SparseAdjacency, y: ArrayView2<T>) -> Result<()> {
    if adj.n != y.nrows() {
        return Err(shape(format!(
            "adjacency has {} nodes, embedding has {} rows",
            adj.n,
            y.nrows()
        )));
    }
    Ok(())
}
