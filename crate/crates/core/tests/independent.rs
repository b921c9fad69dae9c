//! Cross-checks against dense computations written out in the test code.

use graph_phase::multiclass::{mc_sd_step, multi_obstacle_energy, SimplexField};
use graph_phase::oracles::reference_flow;
use graph_phase::random::{random_connected_graph, random_field, random_simplex_field, seeded};
use graph_phase::trajectory::run_trajectory;
use graph_phase::{ginzburg_landau, lyapunov_h, Graph, SchemeParams, Spectrum};
use nalgebra::DMatrix;

/// Random-walk type Laplacian `D^-r (D - W)` as a dense matrix.
fn dense_laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.num_vertices();
    let mut l = DMatrix::zeros(n, n);
    for e in g.edges() {
        l[(e.i, e.j)] -= e.weight;
        l[(e.j, e.i)] -= e.weight;
        l[(e.i, e.i)] += e.weight;
        l[(e.j, e.j)] += e.weight;
    }
    for i in 0..n {
        let scale = g.degrees()[i].powf(-g.r());
        for j in 0..n {
            l[(i, j)] *= scale;
        }
    }
    l
}

/// `exp(-t L)` by scaling and squaring of a Taylor polynomial.
fn expm_neg(l: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let a = l * (-t);
    let norm = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * a.nrows() as f64;
    let squarings = norm.max(1.0).log2().ceil() as i32 + 4;
    let a = a / 2f64.powi(squarings);
    let n = a.nrows();
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[test]
fn diffusion_matches_dense_exponential() {
    let mut rng = seeded(21);
    for n in [2, 5, 9, 14] {
        for r in [0.0, 0.5, 1.0] {
            let g = random_connected_graph(&mut rng, n, 0.4, r).unwrap();
            let s = Spectrum::new(&g).unwrap();
            let u = random_field(&mut rng, n);
            let l = dense_laplacian(&g);
            for t in [0.0, 0.01, 0.3, 2.0] {
                let want = expm_neg(&l, t) * DMatrix::from_column_slice(n, 1, &u);
                let got = s.diffuse(&u, t).unwrap();
                for i in 0..n {
                    assert!(
                        (got[i] - want[i]).abs() < 1e-11,
                        "n={n} r={r} t={t}: {} vs {}",
                        got[i],
                        want[i]
                    );
                }
            }
        }
    }
}

#[test]
fn eigenvalues_match_dense_characteristic_values() {
    let mut rng = seeded(22);
    let g = random_connected_graph(&mut rng, 8, 0.5, 0.5).unwrap();
    let s = Spectrum::new(&g).unwrap();
    let mut want: Vec<f64> = dense_laplacian(&g)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .collect();
    want.sort_by(f64::total_cmp);
    let mut got = s.eigenvalues().to_vec();
    got.sort_by(f64::total_cmp);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn lyapunov_matches_dense_evaluation() {
    let mut rng = seeded(23);
    let g = random_connected_graph(&mut rng, 7, 0.5, 1.0).unwrap();
    let s = Spectrum::new(&g).unwrap();
    let u = random_field(&mut rng, 7);
    let p = SchemeParams::new(0.4, 0.1).unwrap();
    let e = expm_neg(&dense_laplacian(&g), p.tau());
    let uv = DMatrix::from_column_slice(7, 1, &u);
    let w = g.vertex_weights();
    let ip = |a: &DMatrix<f64>, b: &DMatrix<f64>| (0..7).map(|i| w[i] * a[i] * b[i]).sum::<f64>();
    let ones = DMatrix::from_element(7, 1, 1.0);
    let want = p.lambda() * ip(&uv, &(&ones - &uv)) + ip(&uv, &(&uv - &e * &uv));
    let got = lyapunov_h(&u, &p, &s).unwrap();
    assert!((got.h - want).abs() < 1e-12);
    assert!((got.h_tau - want / (2.0 * p.tau())).abs() < 1e-10);
}

#[test]
fn ginzburg_landau_matches_edge_sum() {
    let mut rng = seeded(24);
    let g = random_connected_graph(&mut rng, 9, 0.4, 0.5).unwrap();
    let u = random_field(&mut rng, 9);
    let eps = 0.3;
    let dirichlet: f64 = g
        .edges()
        .iter()
        .map(|e| 0.5 * e.weight * (u[e.i] - u[e.j]).powi(2))
        .sum();
    let potential: f64 = (0..9)
        .map(|i| g.vertex_weights()[i] * 0.5 * u[i] * (1.0 - u[i]))
        .sum();
    let want = dirichlet + potential / eps;
    assert!((ginzburg_landau(&u, &g, eps).unwrap() - want).abs() < 1e-12);
}

#[test]
fn trajectory_lyapunov_is_non_increasing_with_bounded_movement() {
    let mut rng = seeded(25);
    let g = random_connected_graph(&mut rng, 10, 0.3, 0.0).unwrap();
    let s = Spectrum::new(&g).unwrap();
    let u0 = random_field(&mut rng, 10);
    let p = SchemeParams::with_lambda(0.2, 0.5).unwrap();
    let t = run_trajectory(&u0, &g, &s, &p, 300, None).unwrap();
    let mut moved = 0.0;
    for (w, states) in t.log.windows(2).zip(t.states.windows(2)) {
        assert!(w[1].h <= w[0].h + 1e-12);
        let d: Vec<f64> = states[1]
            .iter()
            .zip(states[0].iter())
            .map(|(a, b)| a - b)
            .collect();
        moved += s.inner_product(&d, &d);
    }
    // Summed squared movement is bounded by the initial Lyapunov value.
    assert!(moved * (1.0 - p.lambda()) <= t.log[0].h + 1e-9);
}

#[test]
fn reference_flow_is_self_consistent() {
    let g = Graph::new(2, &[graph_phase::Edge::new(0, 1, 1.0)], 0.0).unwrap();
    let s = Spectrum::new(&g).unwrap();
    let a = reference_flow(&[1.0, 0.0], &g, &s, 1.0, 1.0, 1e-4).unwrap();
    let b = reference_flow(&[1.0, 0.0], &g, &s, 1.0, 1.0, 5e-5).unwrap();
    assert!(a.sup_distance(&b) <= 1e-3);
}

#[test]
fn multi_obstacle_energy_matches_direct_sum() {
    let mut rng = seeded(26);
    let g = random_connected_graph(&mut rng, 6, 0.5, 1.0).unwrap();
    let u = random_simplex_field(&mut rng, 6, 3).unwrap();
    let eps = 0.7;
    let m = u.values();
    let potential: f64 = (0..6)
        .map(|i| g.vertex_weights()[i] * (0..3).map(|k| 1.0 - m[(i, k)]).product::<f64>())
        .sum();
    let dirichlet: f64 = g
        .edges()
        .iter()
        .map(|e| {
            (0..3)
                .map(|k| 0.5 * e.weight * (m[(e.i, k)] - m[(e.j, k)]).powi(2))
                .sum::<f64>()
        })
        .sum();
    let got = multi_obstacle_energy(&u, &g, eps).unwrap();
    assert!((got.potential - potential).abs() < 1e-12);
    assert!((got.gl - (dirichlet + potential / eps)).abs() < 1e-12);
}

#[test]
fn two_class_embedding_follows_free_two_class_step() {
    let mut rng = seeded(27);
    let g = random_connected_graph(&mut rng, 12, 0.3, 0.5).unwrap();
    let s = Spectrum::new(&g).unwrap();
    let u = random_field(&mut rng, 12);
    let p = SchemeParams::new(0.25, 0.05).unwrap();
    let step = mc_sd_step(&SimplexField::from_two_class(&u), &g, &s, &p, 500, 1e-12).unwrap();
    assert!(step.converged);
    let d = s.diffuse(&u, p.tau()).unwrap();
    let lambda = p.lambda();
    for (i, &x) in step.u_next.column(0).iter().enumerate() {
        let want = ((d[i] - lambda / 2.0) / (1.0 - lambda)).clamp(0.0, 1.0);
        assert!((x - want).abs() < 1e-8, "vertex {i}: {x} vs {want}");
    }
}
