//! Spatial adjacency and site coordinates.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Undirected site graph with planar coordinates.
///
/// Edges carry no weights; the spatial interaction strength is a single
/// scalar held by [`crate::prior::MrfSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    n_sites: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    coords: Vec<(f64, f64)>,
}

impl SpatialGraph {
    /// Builds a graph from coordinates and an edge list. Edges are stored as
    /// `(min, max)` pairs; duplicates (in either orientation) are collapsed.
    pub fn new(coords: Vec<(f64, f64)>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n_sites = coords.len();
        if n_sites == 0 {
            return Err(Error::RejectedInput("graph needs at least one site".into()));
        }
        if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::RejectedInput("site coordinates must be finite".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::RejectedInput(format!("self-loop at site {a}")));
            }
            if a >= n_sites || b >= n_sites {
                return Err(Error::RejectedInput(format!(
                    "edge ({a}, {b}) out of range for {n_sites} sites"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n_sites];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            n_sites,
            edges,
            adjacency,
            coords,
        })
    }

    /// `rows × cols` lattice with 4-neighbourhood. Site `r * cols + c` sits at
    /// `(c, rows - 1 - r)`, so row 0 is the northernmost row.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::RejectedInput("lattice dimensions must be positive".into()));
        }
        let mut coords = Vec::with_capacity(rows * cols);
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                coords.push((c as f64, (rows - 1 - r) as f64));
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::new(coords, edges)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// Sorted neighbours of site `i`.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::RejectedInput(format!("site {i} out of range for {} sites", self.n_sites)))
    }

    /// Euclidean distance matrix between site coordinates.
    pub fn pairwise_distances(&self) -> DMatrix<f64> {
        let n = self.n_sites;
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let (xi, yi) = self.coords[i];
                let (xj, yj) = self.coords[j];
                let dist = sqrt((xi - xj) * (xi - xj) + (yi - yj) * (yi - yj));
                d[(i, j)] = dist;
                d[(j, i)] = dist;
            }
        }
        d
    }

    /// Number of connected components of the subgraph induced by `sites`.
    pub fn induced_components(&self, sites: &[usize]) -> usize {
        let mut member = vec![false; self.n_sites];
        for &s in sites {
            member[s] = true;
        }
        let mut seen = vec![false; self.n_sites];
        let mut components = 0;
        let mut stack = Vec::new();
        for &start in sites {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in &self.adjacency[v] {
                    if member[w] && !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        components
    }
}
