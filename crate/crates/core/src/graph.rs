//! Cosine-distance kNN similarity graphs and the symmetric normalized
//! propagation operator `D^-1/2 (Edge + I) D^-1/2`.
//!
//! Node order is always labeled instances first (`0..P`), then unlabeled
//! (`P..N`).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Distances are clamped to this floor before inversion into edge weights.
pub const DISTANCE_FLOOR: f64 = 1e-6;

/// `1 - cos(u, v)`, in `[0, 2]`. A zero vector is at distance 1 from everything.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "cosine distance between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine distance with a zero-norm vector; using distance 1");
    }
    Ok(distance_with_norms(u, v, nu, nv))
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance_with_norms(u: &[f64], v: &[f64], nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

/// Edge weight for a given distance (inverse distance, floored).
pub fn edge_weight(distance: f64) -> f64 {
    1.0 / distance.max(DISTANCE_FLOOR)
}

/// One directed kNN entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
    pub weight: f64,
}

/// A symmetrized weighted kNN graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    labeled: usize,
    k: usize,
    /// Directed kNN lists before symmetrization, nearest first.
    neighbors: Vec<Vec<Neighbor>>,
    /// Symmetrized edges `(i, j, weight)` sorted by `(i, j)`; both
    /// directions are stored.
    edges: Vec<(usize, usize, f64)>,
    distance_evaluations: u64,
}

impl SimilarityGraph {
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of labeled nodes `P`; they occupy indices `0..P`.
    pub fn labeled_count(&self) -> usize {
        self.labeled
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, node: usize) -> &[Neighbor] {
        &self.neighbors[node]
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Number of pairwise distance computations performed while building.
    pub fn distance_evaluations(&self) -> u64 {
        self.distance_evaluations
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search_by(|&(a, b, _)| (a, b).cmp(&(i, j))).is_ok()
    }

    /// Edge list text, one `i,j,weight` line per stored direction.
    pub fn render_edge_list(&self) -> String {
        let mut out = String::from("i,j,weight\n");
        for &(i, j, w) in &self.edges {
            let _ = writeln!(out, "{i},{j},{w:e}");
        }
        out
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render_edge_list()).map_err(|e| Error::io(path, e))
    }
}

/// Packed strict upper triangle of a symmetric distance matrix.
struct TriangleDistances {
    n: usize,
    values: Vec<f64>,
}

impl TriangleDistances {
    fn compute(points: &[&[f64]], norms: &[f64], evaluations: &mut u64) -> Self {
        let n = points.len();
        let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                values.push(distance_with_norms(points[i], points[j], norms[i], norms[j]));
            }
        }
        *evaluations += values.len() as u64;
        TriangleDistances { n, values }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // offset of row a in the packed layout
        let row_start = a * (2 * self.n - a - 1) / 2;
        self.values[row_start + (b - a - 1)]
    }
}

fn check_inputs(features: &[&[f64]], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if features.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 nodes to build a graph, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().position(|f| f.len() != dim) {
        return Err(Error::Dimension(format!(
            "node {bad} has feature length {}, expected {dim}",
            features[bad].len()
        )));
    }
    let norms: Vec<f64> = features.iter().map(|f| norm(f)).collect();
    let zero = norms.iter().filter(|&&n| n == 0.0).count();
    if zero > 0 {
        log::warn!("{zero} zero-norm feature vectors; their cosine distance is fixed at 1");
    }
    Ok(norms)
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Keeps the `k` smallest `(distance, index)` candidates, nearest first.
fn top_k(mut candidates: Vec<(f64, usize)>, k: usize) -> Vec<Neighbor> {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_distance_then_index);
        candidates.truncate(k);
    }
    candidates.sort_by(by_distance_then_index);
    candidates
        .into_iter()
        .map(|(distance, index)| Neighbor {
            index,
            distance,
            weight: edge_weight(distance),
        })
        .collect()
}

fn assemble(n: usize, labeled: usize, k: usize, neighbors: Vec<Vec<Neighbor>>, evaluations: u64) -> SimilarityGraph {
    let mut edges = Vec::with_capacity(2 * n * k.min(n));
    for (i, list) in neighbors.iter().enumerate() {
        for nb in list {
            edges.push((i, nb.index, nb.weight));
            edges.push((nb.index, i, nb.weight));
        }
    }
    edges.sort_by_key(|a| (a.0, a.1));
    edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    SimilarityGraph {
        n,
        labeled,
        k,
        neighbors,
        edges,
        distance_evaluations: evaluations,
    }
}

/// Exact kNN graph over all `N` nodes, `N(N-1)/2` distance evaluations.
///
/// `labeled` only records how many leading nodes are labeled. With `k >= N`
/// the result is the complete graph.
pub fn build_knn_exact(features: &[&[f64]], labeled: usize, k: usize) -> Result<SimilarityGraph> {
    let norms = check_inputs(features, k)?;
    let n = features.len();
    if k >= n {
        log::warn!("k={k} >= N={n}; building the complete graph");
    }
    let mut evaluations = 0;
    let table = TriangleDistances::compute(features, &norms, &mut evaluations);
    let neighbors = (0..n)
        .map(|i| {
            let candidates = (0..n).filter(|&j| j != i).map(|j| (table.get(i, j), j)).collect();
            top_k(candidates, k)
        })
        .collect();
    Ok(assemble(n, labeled.min(n), k, neighbors, evaluations))
}

/// Approximate kNN graph with no unlabeled-to-unlabeled candidate pairs.
///
/// Labeled nodes rank all other nodes; unlabeled nodes rank labeled nodes
/// only. Exactly `P(P-1)/2 + PQ` distances are computed.
pub fn build_knn_approx(labeled: &[&[f64]], unlabeled: &[&[f64]], k: usize) -> Result<SimilarityGraph> {
    let p = labeled.len();
    let q = unlabeled.len();
    let all: Vec<&[f64]> = labeled.iter().chain(unlabeled).copied().collect();
    let norms = check_inputs(&all, k)?;
    if p == 0 {
        return Err(Error::InvalidArgument(
            "approximate graph needs at least one labeled node".into(),
        ));
    }
    let n = p + q;
    if k >= n {
        log::warn!("k={k} >= N={n}; every node keeps all of its candidates");
    }
    let mut evaluations = 0;
    let ll = TriangleDistances::compute(labeled, &norms[..p], &mut evaluations);
    let mut lu = Vec::with_capacity(p * q);
    for i in 0..p {
        for u in 0..q {
            lu.push(distance_with_norms(labeled[i], unlabeled[u], norms[i], norms[p + u]));
        }
    }
    evaluations += lu.len() as u64;

    let mut neighbors = Vec::with_capacity(n);
    for i in 0..p {
        let candidates = (0..p)
            .filter(|&j| j != i)
            .map(|j| (ll.get(i, j), j))
            .chain((0..q).map(|u| (lu[i * q + u], p + u)))
            .collect();
        neighbors.push(top_k(candidates, k));
    }
    for u in 0..q {
        let candidates = (0..p).map(|i| (lu[i * q + u], i)).collect();
        neighbors.push(top_k(candidates, k));
    }
    Ok(assemble(n, p, k, neighbors, evaluations))
}

/// Sparse symmetric matrix in compressed sparse row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    degrees: Vec<f64>,
}

/// `D^-1/2 (Edge + I) D^-1/2` with `D_ii = sum_j (Edge + I)_ij`.
pub fn normalize(graph: &SimilarityGraph) -> NormalizedAdjacency {
    normalize_edges(graph.n, &graph.edges)
}

/// Normalizes an explicit symmetric edge list sorted by `(i, j)` without
/// self loops.
pub fn normalize_edges(n: usize, edges: &[(usize, usize, f64)]) -> NormalizedAdjacency {
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(edges.len() + n);
    let mut raw = Vec::with_capacity(edges.len() + n);
    row_ptr.push(0);
    let mut e = 0;
    for i in 0..n {
        let mut diag_done = false;
        while e < edges.len() && edges[e].0 == i {
            let (_, j, w) = edges[e];
            if !diag_done && j > i {
                col_idx.push(i);
                raw.push(1.0);
                diag_done = true;
            }
            col_idx.push(j);
            raw.push(w);
            e += 1;
        }
        if !diag_done {
            col_idx.push(i);
            raw.push(1.0);
        }
        row_ptr.push(col_idx.len());
    }
    let degrees: Vec<f64> = (0..n).map(|i| raw[row_ptr[i]..row_ptr[i + 1]].iter().sum()).collect();
    let mut values = raw;
    for i in 0..n {
        for idx in row_ptr[i]..row_ptr[i + 1] {
            values[idx] /= (degrees[i] * degrees[col_idx[idx]]).sqrt();
        }
    }
    NormalizedAdjacency {
        n,
        row_ptr,
        col_idx,
        values,
        degrees,
    }
}

impl NormalizedAdjacency {
    /// The `n x n` identity operator (every node isolated).
    pub fn identity(n: usize) -> Self {
        normalize_edges(n, &[])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `D_ii`, the row sums of `Edge + I`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// Sparse-dense product `self * dense`; rows are reduced in column order.
    pub fn matmul(&self, dense: ArrayView2<f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "adjacency is {n}x{n} but dense operand has {} rows",
                dense.nrows(),
                n = self.n
            )));
        }
        let cols = dense.ncols();
        let mut out = Array2::<f64>::zeros((self.n, cols));
        for i in 0..self.n {
            let mut out_row = out.row_mut(i);
            let acc = out_row.as_slice_mut().expect("fresh array is contiguous");
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.values[idx];
                let src = dense.row(self.col_idx[idx]);
                for (a, s) in acc.iter_mut().zip(src.iter()) {
                    *a += w * s;
                }
            }
        }
        Ok(out)
    }

    /// Applies a node permutation: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> NormalizedAdjacency {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for &old in perm {
            let mut row: Vec<(usize, f64)> = self.row(old).map(|(j, v)| (inverse[j], v)).collect();
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        NormalizedAdjacency {
            n: self.n,
            row_ptr,
            col_idx,
            values,
            degrees: perm.iter().map(|&old| self.degrees[old]).collect(),
        }
    }
}
