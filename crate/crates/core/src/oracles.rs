//! Brute-force and first-principles solvers used to check the closed-form
//! steps: extreme-point enumeration for the MBO polytope, projected gradient
//! descent on the step objective, and a small-step reference flow.

use crate::error::{Error, Result};
use crate::graph::{weighted_sum, Field, Graph, Spectrum};
use crate::scheme::{sd_step, SchemeParams, SNAP_TOL};

/// Enumeration is exponential; larger graphs are refused.
pub const MAX_ENUMERATION_VERTICES: usize = 12;

pub const DEFAULT_ORACLE_ITERS: usize = 2000;

const PROJECTION_TOL: f64 = 1e-12;
const PROJECTION_MAX_ITERS: usize = 100_000;
const STEP_TOL: f64 = 1e-10;

/// Feasible state that is binary except possibly at one vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremePoint {
    pub values: Field,
    pub fractional_vertex: Option<usize>,
    pub fractional_value: Option<f64>,
}

impl ExtremePoint {
    /// All entries are 0 or 1 apart from the recorded fractional vertex.
    pub fn is_structural(&self) -> bool {
        self.values.iter().enumerate().all(|(i, &x)| {
            x == 0.0 || x == 1.0 || (Some(i) == self.fractional_vertex && x > 0.0 && x < 1.0)
        })
    }

    /// Diffused values on `{u = 1}` dominate the fractional vertex, which in
    /// turn dominates `{u = 0}`.
    pub fn satisfies_ordering(&self, diffused: &[f64], tol: f64) -> bool {
        let mut low_of_ones = f64::INFINITY;
        let mut high_of_zeros = f64::NEG_INFINITY;
        for (&x, &d) in self.values.iter().zip(diffused) {
            if x == 1.0 {
                low_of_ones = low_of_ones.min(d);
            } else if x == 0.0 {
                high_of_zeros = high_of_zeros.max(d);
            }
        }
        let mid = self.fractional_vertex.map(|i| diffused[i]);
        match mid {
            Some(m) => low_of_ones + tol >= m && m + tol >= high_of_zeros,
            None => low_of_ones + tol >= high_of_zeros,
        }
    }
}

/// Extreme points of `{u in [0,1]^V : mass(u) = M}`.
pub fn enumerate_extreme_points(g: &Graph, mass: f64) -> Result<Vec<ExtremePoint>> {
    let n = g.num_vertices();
    if n > MAX_ENUMERATION_VERTICES {
        return Err(Error::GraphTooLarge {
            num_vertices: n,
            max: MAX_ENUMERATION_VERTICES,
        });
    }
    let total = g.total_mass();
    let tol = 1e-12 * (1.0 + total);
    if !(mass >= -tol && mass <= total + tol) {
        return Err(Error::MassOutOfRange { mass, max: total });
    }
    let w = g.vertex_weights();
    let mut points = Vec::new();
    for pattern in 0u32..(1 << n) {
        let binary: Vec<f64> = (0..n)
            .map(|i| if pattern >> i & 1 == 1 { 1.0 } else { 0.0 })
            .collect();
        let m = weighted_sum(w, &binary);
        if (m - mass).abs() <= tol {
            points.push(ExtremePoint {
                values: Field::new(binary.clone()),
                fractional_vertex: None,
                fractional_value: None,
            });
        }
        for i in (0..n).filter(|i| pattern >> i & 1 == 0) {
            let theta = (mass - m) / w[i];
            // Values within tolerance of 0 or 1 coincide with binary points.
            if theta > SNAP_TOL && theta < 1.0 - SNAP_TOL {
                let mut values = binary.clone();
                values[i] = theta;
                points.push(ExtremePoint {
                    values: Field::new(values),
                    fractional_vertex: Some(i),
                    fractional_value: Some(theta),
                });
            }
        }
    }
    Ok(points)
}

/// Maximum of `<p, exp(-tau Lap) u_n>` over the extreme points and every
/// point attaining it.
#[derive(Clone, Debug, PartialEq)]
pub struct MboOracle {
    pub max_value: f64,
    pub argmax: Vec<ExtremePoint>,
}

pub fn mbo_oracle(u_n: &[f64], g: &Graph, s: &Spectrum, tau: f64) -> Result<MboOracle> {
    g.check_dim(u_n)?;
    let diffused = s.diffuse(u_n, tau)?;
    let points = enumerate_extreme_points(g, s.mass(u_n))?;
    let scored: Vec<(f64, ExtremePoint)> = points
        .into_iter()
        .map(|p| (s.inner_product(&p.values, &diffused), p))
        .collect();
    let max_value = scored
        .iter()
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-12 * (1.0 + max_value.abs());
    let argmax = scored
        .into_iter()
        .filter(|(v, _)| *v >= max_value - tie)
        .map(|(_, p)| p)
        .collect();
    Ok(MboOracle { max_value, argmax })
}

/// Step-size default for [`variational_oracle`].
pub fn default_step_size(lambda: f64) -> f64 {
    0.5 / (1.0 - lambda + 1.0)
}

/// `<.,.>_V`-projection onto `[0,1]^V` intersected with `{mass = M}`, by
/// Dykstra's alternating scheme (the box step carries a correction term,
/// the hyperplane step is a uniform shift).
pub fn project_box_mass(y: &[f64], mass: f64, s: &Spectrum) -> Field {
    let total = s.total_mass();
    let mut x: Vec<f64> = y.to_vec();
    let mut correction = vec![0.0; y.len()];
    let mut boxed = vec![0.0; y.len()];
    for _ in 0..PROJECTION_MAX_ITERS {
        let mut change: f64 = 0.0;
        for i in 0..x.len() {
            let b = (x[i] + correction[i]).clamp(0.0, 1.0);
            correction[i] += x[i] - b;
            change = change.max((b - boxed[i]).abs());
            boxed[i] = b;
        }
        let shift = (mass - s.mass(&boxed)) / total;
        for i in 0..x.len() {
            x[i] = boxed[i] + shift;
        }
        if change <= PROJECTION_TOL && shift.abs() <= PROJECTION_TOL {
            break;
        }
    }
    Field::new(boxed)
}

fn step_objective(u: &[f64], diffused: &[f64], lambda: f64, s: &Spectrum) -> f64 {
    (1.0 - lambda) * s.inner_product(u, u) - 2.0 * s.inner_product(u, diffused)
}

/// Projected gradient descent on `(1 - lambda) ||u||^2 - 2 <u, e u_n>` over
/// the feasible set, stopped once an iteration moves less than `1e-10`.
pub fn variational_oracle(
    u_n: &[f64],
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    iters: usize,
    step_size: f64,
) -> Result<Field> {
    g.check_dim(u_n)?;
    if p.lambda() >= 1.0 {
        return Err(Error::LambdaIsOne);
    }
    let u_n = Field::new(u_n.to_vec());
    if let Some(index) = u_n.first_outside(0.0, 1.0, SNAP_TOL) {
        return Err(Error::DomainViolation {
            index,
            value: u_n[index],
        });
    }
    let lambda = p.lambda();
    let mass = s.mass(&u_n);
    let diffused = s.diffuse(&u_n, p.tau())?;
    let mut u = project_box_mass(&u_n, mass, s);
    for _ in 0..iters {
        let trial: Vec<f64> = u
            .iter()
            .zip(diffused.iter())
            .map(|(&x, &d)| x - step_size * (2.0 * (1.0 - lambda) * x - 2.0 * d))
            .collect();
        let next = project_box_mass(&trial, mass, s);
        let diff: Vec<f64> = next.iter().zip(u.iter()).map(|(a, b)| a - b).collect();
        u = next;
        if s.inner_product(&diff, &diff).sqrt() <= STEP_TOL {
            return Ok(u);
        }
    }
    Err(Error::NoConvergence {
        iterations: iters,
        last_value: step_objective(&u, &diffused, lambda, s),
    })
}

/// `ceil(t_final / tau_ref)` semi-discrete steps with `lambda = tau_ref / epsilon`.
pub fn reference_flow(
    u0: &[f64],
    g: &Graph,
    s: &Spectrum,
    epsilon: f64,
    t_final: f64,
    tau_ref: f64,
) -> Result<Field> {
    g.check_dim(u0)?;
    if !(tau_ref > 0.0 && tau_ref <= epsilon / 100.0) {
        return Err(Error::InvalidParameters(format!(
            "reference step {tau_ref} must lie in (0, epsilon / 100]"
        )));
    }
    if !(t_final >= 0.0) {
        return Err(Error::NegativeTime(t_final));
    }
    let p = SchemeParams::new(epsilon, tau_ref)?;
    let steps = steps_to_reach(t_final, tau_ref);
    let mut u = Field::new(u0.to_vec());
    for _ in 0..steps {
        u = sd_step(&u, g, s, &p)?.u_next;
    }
    Ok(u)
}

/// `ceil(t / tau)`, robust to `t` being a float multiple of `tau`.
pub fn steps_to_reach(t: f64, tau: f64) -> usize {
    (t / tau - 1e-9).ceil().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::scheme::mbo_step;
    use approx::assert_abs_diff_eq;

    fn p2() -> (Graph, Spectrum) {
        let g = Graph::new(2, &[Edge::new(0, 1, 1.0)], 0.0).unwrap();
        let s = Spectrum::new(&g).unwrap();
        (g, s)
    }

    fn triangle() -> (Graph, Spectrum) {
        let g = Graph::new(
            3,
            &[
                Edge::new(0, 1, 1.0),
                Edge::new(1, 2, 1.0),
                Edge::new(0, 2, 1.0),
            ],
            0.0,
        )
        .unwrap();
        let s = Spectrum::new(&g).unwrap();
        (g, s)
    }

    fn sorted_values(points: &[ExtremePoint]) -> Vec<Vec<f64>> {
        let mut v: Vec<Vec<f64>> = points.iter().map(|p| p.values.to_vec()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn extreme_points_small_graphs() {
        let (g, _) = p2();
        let pts = enumerate_extreme_points(&g, 1.0).unwrap();
        assert_eq!(sorted_values(&pts), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let pts = enumerate_extreme_points(&g, 0.5).unwrap();
        assert_eq!(sorted_values(&pts), vec![vec![0.0, 0.5], vec![0.5, 0.0]]);

        let (g, _) = triangle();
        let pts = enumerate_extreme_points(&g, 1.5).unwrap();
        assert_eq!(pts.len(), 6);
        for p in &pts {
            let mut v = p.values.to_vec();
            v.sort_by(f64::total_cmp);
            assert_eq!(v, vec![0.0, 0.5, 1.0]);
            assert!(p.is_structural());
        }
        assert!(matches!(
            enumerate_extreme_points(&g, 4.0),
            Err(Error::MassOutOfRange { .. })
        ));
    }

    #[test]
    fn enumeration_guard() {
        let edges: Vec<Edge> = (0..12).map(|i| Edge::new(i, i + 1, 1.0)).collect();
        let g = Graph::new(13, &edges, 0.0).unwrap();
        assert!(matches!(
            enumerate_extreme_points(&g, 1.0),
            Err(Error::GraphTooLarge { .. })
        ));
    }

    #[test]
    fn mbo_oracle_examples() {
        let (g, s) = p2();
        let tau = std::f64::consts::LN_2 / 2.0;
        let o = mbo_oracle(&[1.0, 0.0], &g, &s, tau).unwrap();
        assert_abs_diff_eq!(o.max_value, 0.75, epsilon = 1e-14);
        assert_eq!(o.argmax.len(), 1);
        assert_eq!(o.argmax[0].values.values(), &[1.0, 0.0]);

        let (g, s) = triangle();
        let o = mbo_oracle(&[0.4, 0.4, 0.4], &g, &s, 0.3).unwrap();
        assert_abs_diff_eq!(o.max_value, 0.4 * 1.2, epsilon = 1e-14);
        assert_eq!(
            o.argmax.len(),
            enumerate_extreme_points(&g, 1.2).unwrap().len()
        );

        let o = mbo_oracle(&[1.0, 1.0, 0.0], &g, &s, 0.3).unwrap();
        assert_eq!(o.argmax.len(), 1);
        assert_eq!(o.argmax[0].values.values(), &[1.0, 1.0, 0.0]);
        let step = mbo_step(&[1.0, 1.0, 0.0], &g, &s, 0.3).unwrap();
        assert_abs_diff_eq!(
            s.inner_product(&step.u_next, &step.diffused),
            o.max_value,
            epsilon = 1e-12
        );
    }

    #[test]
    fn projection_is_feasible_and_fixes_feasible_points() {
        let (_, s) = triangle();
        let y = [1.7, -0.4, 0.2];
        let x = project_box_mass(&y, 1.0, &s);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_abs_diff_eq!(s.mass(&x), 1.0, epsilon = 1e-11);
        // clamp(y - 0.2) already has mass 1.
        assert!(x.sup_distance(&Field::new(vec![1.0, 0.0, 0.0])) <= 1e-10);

        let f = [0.2, 0.5, 0.9];
        let x = project_box_mass(&f, 1.6, &s);
        assert!(x.sup_distance(&Field::new(f.to_vec())) <= 1e-12);
    }

    #[test]
    fn variational_oracle_examples() {
        let (g, s) = p2();
        let tau = std::f64::consts::LN_2 / 2.0;
        let p = SchemeParams::with_lambda(tau, 0.5).unwrap();
        let u = variational_oracle(&[1.0, 0.0], &g, &s, &p, 2000, default_step_size(0.5)).unwrap();
        assert!(u.sup_distance(&Field::new(vec![1.0, 0.0])) <= 1e-8);

        let (g, s) = triangle();
        let p = SchemeParams::with_lambda(0.2, 0.3).unwrap();
        let c = [0.35; 3];
        let u = variational_oracle(&c, &g, &s, &p, 2000, default_step_size(0.3)).unwrap();
        assert!(u.sup_distance(&Field::new(c.to_vec())) <= 1e-10);

        let u_n = [0.9, 0.1, 0.6];
        let u = variational_oracle(&u_n, &g, &s, &p, 2000, default_step_size(0.3)).unwrap();
        let step = sd_step(&u_n, &g, &s, &p).unwrap();
        assert!(u.sup_distance(&step.u_next) <= 1e-7);

        assert!(matches!(
            variational_oracle(&u_n, &g, &s, &p, 1, 1e-6),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn reference_flow_examples() {
        let (g, s) = p2();
        let u = reference_flow(&[0.3, 0.3], &g, &s, 1.0, 0.5, 1e-3).unwrap();
        assert!(u.sup_distance(&Field::constant(2, 0.3)) <= 1e-14);
        let u = reference_flow(&[0.0, 0.0], &g, &s, 1.0, 0.5, 1e-3).unwrap();
        assert_eq!(u.values(), &[0.0, 0.0]);
        assert!(reference_flow(&[1.0, 0.0], &g, &s, 1.0, 1.0, 0.1).is_err());

        let a = reference_flow(&[1.0, 0.0], &g, &s, 1.0, 1.0, 1e-4).unwrap();
        let b = reference_flow(&[1.0, 0.0], &g, &s, 1.0, 1.0, 5e-5).unwrap();
        assert!(a.sup_distance(&b) <= 1e-3);
        assert_abs_diff_eq!(s.mass(&a), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn steps_to_reach_handles_float_multiples() {
        assert_eq!(steps_to_reach(1.0, 0.1), 10);
        assert_eq!(steps_to_reach(1.0, 0.3), 4);
        assert_eq!(steps_to_reach(0.0, 0.3), 0);
    }
}
