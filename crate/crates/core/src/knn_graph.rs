//! Weighted k-nearest-neighbor proximity graphs.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::points::{squared_distance, Points};

pub const DEFAULT_K: usize = 10;
/// Added to every distance before inversion so duplicates get a finite weight.
pub const DISTANCE_FLOOR: f64 = 1e-10;

/// Undirected weighted graph in compressed adjacency form. Every edge is
/// stored in both endpoint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    volumes: Vec<f64>,
}

impl ProximityGraph {
    /// Build from an undirected edge list. Pairs may appear in either
    /// orientation; duplicates and self-loops are rejected.
    pub fn from_edges(volumes: Vec<f64>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = volumes.len();
        let mut degree = vec![0usize; n];
        let mut seen: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop on node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("edge ({i}, {j}) has weight {w}")));
            }
            seen.push((i.min(j), i.max(j)));
            degree[i] += 1;
            degree[j] += 1;
        }
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate edge"));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        for &(i, j, w) in edges {
            neighbors[fill[i]] = j;
            weights[fill[i]] = w;
            fill[i] += 1;
            neighbors[fill[j]] = i;
            weights[fill[j]] = w;
            fill[j] += 1;
        }
        // sort each row by neighbor index so iteration order is canonical
        for i in 0..n {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            let mut row: Vec<(usize, f64)> = neighbors[lo..hi].iter().copied().zip(weights[lo..hi].iter().copied()).collect();
            row.sort_unstable_by_key(|&(j, _)| j);
            for (k, (j, w)) in row.into_iter().enumerate() {
                neighbors[lo + k] = j;
                weights[lo + k] = w;
            }
        }
        Ok(Self {
            offsets,
            neighbors,
            weights,
            volumes,
        })
    }

    pub fn node_count(&self) -> usize {
        self.volumes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// `(neighbor, weight)` pairs of node `i`, ascending by neighbor.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        self.neighbors[lo..hi].iter().copied().zip(self.weights[lo..hi].iter().copied())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.weights[self.offsets[i]..self.offsets[i + 1]].iter().sum()
    }

    /// Each undirected edge once, as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.node_count()).flat_map(move |i| self.neighbors(i).filter(move |&(j, _)| j > i).map(move |(j, w)| (i, j, w)))
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        self.neighbors[lo..hi].binary_search(&j).ok().map(|k| self.weights[lo + k])
    }

    /// Text edge list, one `i j w` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w}")?;
        }
        Ok(())
    }
}

/// Indices of the `k` nearest other points to `i`; ties go to the lower index.
pub fn nearest_neighbors(points: &Points, i: usize, k: usize) -> Vec<usize> {
    let q = points.row(i);
    let mut cand: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (squared_distance(q, points.row(j)), j))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Symmetrized k-NN graph with inverse-distance weights. Exact brute force.
pub fn build_knn_graph(points: &Points, volumes: &[f64], k: usize) -> Result<ProximityGraph> {
    let n = points.len();
    if volumes.len() != n {
        return Err(Error::invalid("volume count differs from point count"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let lists: Vec<Vec<usize>> = (0..n).into_par_iter().map(|i| nearest_neighbors(points, i, k)).collect();
    let mut pairs: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let edges: Vec<(usize, usize, f64)> = pairs
        .into_iter()
        .map(|(i, j)| {
            let d = squared_distance(points.row(i), points.row(j)).sqrt();
            (i, j, 1.0 / (d + DISTANCE_FLOOR))
        })
        .collect();
    ProximityGraph::from_edges(volumes.to_vec(), &edges)
}
