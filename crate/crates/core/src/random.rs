//! Seeded random instances for property suites and the CLI oracle check.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Edge, Field, Graph};
use crate::multiclass::SimplexField;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weight uniform in `(0, 1]`.
fn weight<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Connected graph: a random spanning path plus each remaining pair with
/// probability `edge_prob`; all weights uniform in `(0, 1]`.
pub fn random_connected_graph<R: Rng>(
    rng: &mut R,
    num_vertices: usize,
    edge_prob: f64,
    r: f64,
) -> Result<Graph> {
    let mut perm: Vec<usize> = (0..num_vertices).collect();
    for i in (1..num_vertices).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut edges = Vec::new();
    let mut on_path = std::collections::HashSet::new();
    for w in perm.windows(2) {
        let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
        on_path.insert((a, b));
        edges.push(Edge::new(a, b, weight(rng)));
    }
    for i in 0..num_vertices {
        for j in i + 1..num_vertices {
            if !on_path.contains(&(i, j)) && rng.random_bool(edge_prob) {
                edges.push(Edge::new(i, j, weight(rng)));
            }
        }
    }
    Graph::new(num_vertices, &edges, r)
}

/// Entries uniform in `[0, 1)`.
pub fn random_field<R: Rng>(rng: &mut R, num_vertices: usize) -> Field {
    Field::new((0..num_vertices).map(|_| rng.random()).collect())
}

/// Binary field with each entry 1 with probability one half.
pub fn random_binary_field<R: Rng>(rng: &mut R, num_vertices: usize) -> Field {
    Field::new(
        (0..num_vertices)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Rows drawn uniformly from the probability simplex.
pub fn random_simplex_field<R: Rng>(
    rng: &mut R,
    num_vertices: usize,
    num_classes: usize,
) -> Result<SimplexField> {
    let mut m = DMatrix::zeros(num_vertices, num_classes);
    for i in 0..num_vertices {
        let e: Vec<f64> = (0..num_classes)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = e.iter().sum();
        for (k, x) in e.iter().enumerate() {
            m[(i, k)] = x / total;
        }
    }
    SimplexField::normalized(m)
}
