//! Weighted graphs, vertex fields and the spectral diffusion operator.
//!
//! Vertex functions live in the Hilbert space with inner product
//! `<u, v> = sum_i u_i v_i d_i^r`, where `d_i` is the weighted degree and
//! `r` in `[0, 1]` is fixed per graph. The Laplacian
//! `(Lap u)_i = d_i^{-r} sum_j w_ij (u_i - u_j)` is self-adjoint and positive
//! semi-definite in that inner product, and `exp(-t Lap)` is evaluated through
//! a dense eigendecomposition of the symmetrised matrix
//! `D^{-r/2} (D - W) D^{-r/2}`.

use std::collections::VecDeque;
use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected weighted edge, stored once with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(i: usize, j: usize, weight: f64) -> Self {
        Self { i, j, weight }
    }
}

/// A real-valued function on the vertices of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    pub fn ones(n: usize) -> Self {
        Self::constant(n, 1.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `max_i |u_i - v_i|`.
    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the first entry outside `[lo - tol, hi + tol]`, if any.
    pub(crate) fn first_outside(&self, lo: f64, hi: f64, tol: f64) -> Option<usize> {
        self.0
            .iter()
            .position(|&x| !x.is_finite() || x < lo - tol || x > hi + tol)
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// A finite, simple, connected, positively weighted undirected graph.
///
/// Immutable after construction; degrees and the vertex weights `d_i^r` are
/// computed once.
#[derive(Clone, Debug)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<Edge>,
    neighbours: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
    vertex_weights: Vec<f64>,
    total_mass: f64,
    r: f64,
}

impl Graph {
    /// Builds and validates a graph. Edges may be given in either
    /// orientation; they are stored with `i < j`.
    pub fn new(num_vertices: usize, edges: &[Edge], r: f64) -> Result<Self> {
        if num_vertices < 2 {
            return Err(Error::TooFewVertices(num_vertices));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidExponent(r));
        }
        let mut neighbours = vec![Vec::new(); num_vertices];
        let mut stored = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for e in edges {
            for index in [e.i, e.j] {
                if index >= num_vertices {
                    return Err(Error::IndexOutOfRange {
                        index,
                        num_vertices,
                    });
                }
            }
            if e.i == e.j {
                return Err(Error::SelfLoop(e.i));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::NonPositiveWeight {
                    i: e.i,
                    j: e.j,
                    weight: e.weight,
                });
            }
            let (i, j) = (e.i.min(e.j), e.i.max(e.j));
            if !seen.insert((i, j)) {
                return Err(Error::DuplicateEdge { i, j });
            }
            neighbours[i].push((j, e.weight));
            neighbours[j].push((i, e.weight));
            stored.push(Edge::new(i, j, e.weight));
        }

        // Breadth-first search from vertex 0.
        let mut visited = vec![false; num_vertices];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &neighbours[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if let Some(unreached) = visited.iter().position(|&v| !v) {
            return Err(Error::DisconnectedGraph { unreached });
        }

        let degrees: Vec<f64> = neighbours
            .iter()
            .map(|nb| nb.iter().map(|&(_, w)| w).sum())
            .collect();
        let vertex_weights: Vec<f64> = degrees.iter().map(|d| d.powf(r)).collect();
        let total_mass = vertex_weights.iter().sum();
        Ok(Self {
            num_vertices,
            edges: stored,
            neighbours,
            degrees,
            vertex_weights,
            total_mass,
            r,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// The inner-product weights `d_i^r`.
    pub fn vertex_weights(&self) -> &[f64] {
        &self.vertex_weights
    }

    /// `mass(1) = sum_i d_i^r`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_vertices {
            return Err(Error::DimensionMismatch {
                expected: self.num_vertices,
                found: u.len(),
            });
        }
        Ok(())
    }

    pub fn inner_product(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        self.check_dim(v)?;
        Ok(weighted_dot(&self.vertex_weights, u, v))
    }

    pub fn mass(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        Ok(weighted_sum(&self.vertex_weights, u))
    }

    /// `mass(u) / mass(1)`; exact for constant fields.
    pub fn average(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        Ok(average_with(&self.vertex_weights, self.total_mass, u))
    }

    pub fn norm(&self, u: &[f64]) -> Result<f64> {
        Ok(self.inner_product(u, u)?.sqrt())
    }

    pub fn laplacian_apply(&self, u: &[f64]) -> Result<Field> {
        self.check_dim(u)?;
        let out = self
            .neighbours
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let s: f64 = nb.iter().map(|&(j, w)| w * (u[i] - u[j])).sum();
                s / self.vertex_weights[i]
            })
            .collect();
        Ok(Field(out))
    }

    /// `(1/2) ||grad u||_E^2 = (1/2) sum_{edges} w_ij (u_j - u_i)^2`.
    pub fn dirichlet_energy(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        let s: f64 = self
            .edges
            .iter()
            .map(|e| e.weight * (u[e.j] - u[e.i]).powi(2))
            .sum();
        Ok(0.5 * s)
    }

    /// Dense Laplacian matrix `Lap` acting on column vectors.
    pub fn laplacian_matrix(&self) -> DMatrix<f64> {
        let n = self.num_vertices;
        let mut m = DMatrix::zeros(n, n);
        for e in &self.edges {
            m[(e.i, e.j)] -= e.weight / self.vertex_weights[e.i];
            m[(e.j, e.i)] -= e.weight / self.vertex_weights[e.j];
        }
        for i in 0..n {
            m[(i, i)] = self.degrees[i] / self.vertex_weights[i];
        }
        m
    }
}

pub(crate) fn weighted_dot(weights: &[f64], u: &[f64], v: &[f64]) -> f64 {
    weights
        .iter()
        .zip(u.iter().zip(v))
        .map(|(w, (a, b))| w * a * b)
        .sum()
}

pub(crate) fn weighted_sum(weights: &[f64], u: &[f64]) -> f64 {
    weights.iter().zip(u).map(|(w, a)| w * a).sum()
}

pub(crate) fn average_with(weights: &[f64], total: f64, u: &[f64]) -> f64 {
    match u.first() {
        Some(&c) if u.iter().all(|&x| x == c) => c,
        _ => weighted_sum(weights, u) / total,
    }
}

/// Eigenpairs of the graph Laplacian, orthonormal in the `d^r` inner product.
#[derive(Clone, Debug)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors of the symmetrised matrix, one per column.
    symmetric_basis: DMatrix<f64>,
    /// `d_i^{r/2}`.
    half_weights: DVector<f64>,
    vertex_weights: Vec<f64>,
    total_mass: f64,
}

const EIGEN_TOL: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

impl Spectrum {
    pub fn new(g: &Graph) -> Result<Self> {
        let n = g.num_vertices();
        let half: DVector<f64> =
            DVector::from_iterator(n, g.vertex_weights().iter().map(|w| w.sqrt()));
        let mut sym = DMatrix::<f64>::zeros(n, n);
        for e in g.edges() {
            let v = -e.weight / (half[e.i] * half[e.j]);
            sym[(e.i, e.j)] = v;
            sym[(e.j, e.i)] = v;
        }
        for i in 0..n {
            sym[(i, i)] = g.degrees()[i] / g.vertex_weights()[i];
        }
        let eig = SymmetricEigen::try_new(sym, EIGEN_TOL, EIGEN_MAX_ITER)
            .ok_or(Error::EigensolverFailure)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mu_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let eigenvalues: Vec<f64> = order
            .iter()
            .map(|&k| {
                let mu = eig.eigenvalues[k];
                if mu.abs() <= 1e-12 * mu_max || mu < 0.0 {
                    0.0
                } else {
                    mu
                }
            })
            .collect();
        let symmetric_basis = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);

        Ok(Self {
            eigenvalues,
            symmetric_basis,
            half_weights: half,
            vertex_weights: g.vertex_weights().to_vec(),
            total_mass: g.total_mass(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues in ascending order; the first is exactly zero.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap_or(&0.0)
    }

    pub fn vertex_weights(&self) -> &[f64] {
        &self.vertex_weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// The `k`-th eigenvector, normalised in the `d^r` inner product.
    pub fn eigenvector(&self, k: usize) -> Field {
        let col = self.symmetric_basis.column(k);
        Field(
            col.iter()
                .zip(self.half_weights.iter())
                .map(|(x, h)| x / h)
                .collect(),
        )
    }

    pub(crate) fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_vertices() {
            return Err(Error::DimensionMismatch {
                expected: self.num_vertices(),
                found: u.len(),
            });
        }
        Ok(())
    }

    pub fn mass(&self, u: &[f64]) -> f64 {
        weighted_sum(&self.vertex_weights, u)
    }

    pub fn average(&self, u: &[f64]) -> f64 {
        average_with(&self.vertex_weights, self.total_mass, u)
    }

    pub fn inner_product(&self, u: &[f64], v: &[f64]) -> f64 {
        weighted_dot(&self.vertex_weights, u, v)
    }

    /// Applies `filter(Lap)` for a spectral multiplier `filter(mu)`.
    ///
    /// The mean is split off first and carried through with multiplier
    /// `filter(0)`, so constants are reproduced without round-off drift in
    /// their mass.
    pub fn apply_function(&self, u: &[f64], filter: impl Fn(f64) -> f64) -> Result<Field> {
        self.check_dim(u)?;
        let mean = self.average(u);
        let f0 = filter(0.0);
        let n = self.num_vertices();
        let w = DVector::from_iterator(
            n,
            u.iter()
                .zip(self.half_weights.iter())
                .map(|(x, h)| (x - mean) * h),
        );
        let mut coeffs = self.symmetric_basis.tr_mul(&w);
        for (c, &mu) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *c *= filter(mu);
        }
        let back = &self.symmetric_basis * coeffs;
        Ok(Field(
            back.iter()
                .zip(self.half_weights.iter())
                .map(|(x, h)| f0 * mean + x / h)
                .collect(),
        ))
    }

    /// `exp(-t Lap) u`.
    pub fn diffuse(&self, u: &[f64], t: f64) -> Result<Field> {
        self.check_dim(u)?;
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        if t == 0.0 || u.iter().all(|&x| x == u[0]) {
            return Ok(Field(u.to_vec()));
        }
        self.apply_function(u, |mu| (-t * mu).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p2(r: f64) -> Graph {
        Graph::new(2, &[Edge::new(0, 1, 1.0)], r).unwrap()
    }

    fn triangle(r: f64) -> Graph {
        Graph::new(
            3,
            &[
                Edge::new(0, 1, 1.0),
                Edge::new(1, 2, 1.0),
                Edge::new(0, 2, 1.0),
            ],
            r,
        )
        .unwrap()
    }

    #[test]
    fn degrees_of_small_graphs() {
        assert_eq!(p2(0.0).degrees(), &[1.0, 1.0]);
        assert_eq!(triangle(0.0).degrees(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn construction_errors() {
        let e = Graph::new(3, &[Edge::new(0, 1, 1.0)], 0.0).unwrap_err();
        assert!(matches!(e, Error::DisconnectedGraph { unreached: 2 }));
        let e = Graph::new(2, &[Edge::new(0, 0, 1.0)], 0.0).unwrap_err();
        assert!(matches!(e, Error::SelfLoop(0)));
        let e = Graph::new(2, &[Edge::new(0, 1, -1.0)], 0.0).unwrap_err();
        assert!(matches!(e, Error::NonPositiveWeight { .. }));
        let e = Graph::new(2, &[Edge::new(0, 2, 1.0)], 0.0).unwrap_err();
        assert!(matches!(e, Error::IndexOutOfRange { index: 2, .. }));
        let e = Graph::new(2, &[Edge::new(0, 1, 1.0), Edge::new(1, 0, 2.0)], 0.0).unwrap_err();
        assert!(matches!(e, Error::DuplicateEdge { i: 0, j: 1 }));
        assert!(matches!(
            Graph::new(1, &[], 0.0).unwrap_err(),
            Error::TooFewVertices(1)
        ));
        assert!(matches!(
            Graph::new(2, &[Edge::new(0, 1, 1.0)], 1.5).unwrap_err(),
            Error::InvalidExponent(_)
        ));
    }

    #[test]
    fn inner_products_and_mass() {
        let g = p2(0.0);
        assert_eq!(g.inner_product(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(triangle(1.0).total_mass(), 6.0);
        let ip = triangle(0.5)
            .inner_product(&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0])
            .unwrap();
        assert_abs_diff_eq!(ip, 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(
            g.inner_product(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn laplacian_examples() {
        let lap = p2(0.0).laplacian_apply(&[1.0, 0.0]).unwrap();
        assert_eq!(lap.values(), &[1.0, -1.0]);
        let lap = triangle(1.0).laplacian_apply(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(lap.values(), &[1.0, -0.5, -0.5]);
        let ones = triangle(0.3).laplacian_apply(&[1.0; 3]).unwrap();
        assert!(ones.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dirichlet_examples() {
        assert_eq!(p2(0.7).dirichlet_energy(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(
            triangle(0.0).dirichlet_energy(&[1.0, 0.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(triangle(0.0).dirichlet_energy(&[0.3; 3]).unwrap(), 0.0);
    }

    #[test]
    fn spectra_of_small_graphs() {
        let s = Spectrum::new(&p2(0.0)).unwrap();
        assert_abs_diff_eq!(s.eigenvalues()[0], 0.0);
        assert_abs_diff_eq!(s.eigenvalues()[1], 2.0, epsilon = 1e-12);
        let s = Spectrum::new(&triangle(0.0)).unwrap();
        for (mu, want) in s.eigenvalues().iter().zip([0.0, 3.0, 3.0]) {
            assert_abs_diff_eq!(*mu, want, epsilon = 1e-12);
        }
        let s = Spectrum::new(&triangle(1.0)).unwrap();
        for (mu, want) in s.eigenvalues().iter().zip([0.0, 1.5, 1.5]) {
            assert_abs_diff_eq!(*mu, want, epsilon = 1e-12);
        }
        // First eigenvector is constant.
        let xi0 = s.eigenvector(0);
        assert_abs_diff_eq!(xi0[0], xi0[1], epsilon = 1e-12);
        assert_abs_diff_eq!(xi0[1], xi0[2], epsilon = 1e-12);
    }

    #[test]
    fn diffusion_examples() {
        let s = Spectrum::new(&p2(0.0)).unwrap();
        let t = 2f64.ln() / 2.0;
        let out = s.diffuse(&[1.0, 0.0], t).unwrap();
        assert_abs_diff_eq!(out[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(out[1], 0.25, epsilon = 1e-14);
        assert_eq!(s.diffuse(&[1.0, 1.0], 3.0).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(s.diffuse(&[0.3, 0.9], 0.0).unwrap().values(), &[0.3, 0.9]);
        assert!(matches!(
            s.diffuse(&[0.3, 0.9], -1.0),
            Err(Error::NegativeTime(_))
        ));
    }
}
