//! Multi-class fields on the probability simplex and fixed-point solvers
//! for the implicit multi-class semi-discrete schemes.
//!
//! A field is an `|V| x K` matrix whose rows are probability vectors. The
//! implicit step `U = e U_n + lambda f(U) + lambda beta` has no closed form;
//! it is solved by iterating `U <- P(e U_n + lambda f(U))` where `P` is the
//! projection onto the admissible set, and the subgradient term is read off
//! the projection residual. Convergence is reported, never assumed.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{Field, Graph, Spectrum};
use crate::scheme::SchemeParams;

pub const DEFAULT_FP_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;

const ROW_SUM_TOL: f64 = 1e-10;
const PROJECTION_TOL: f64 = 1e-13;
const PROJECTION_MAX_ITERS: usize = 100_000;

/// `|V| x K` field with rows summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexField {
    values: DMatrix<f64>,
}

impl SimplexField {
    /// Accepts rows summing to one within `1e-10`.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_classes(values.ncols())?;
        for (row, r) in values.row_iter().enumerate() {
            let sum = r.sum();
            if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                return Err(Error::RowNotInPi { row, sum });
            }
        }
        Ok(Self { values })
    }

    /// Rescales every row to sum to one; rows must already be within `1e-8`.
    /// Rows off by no more than rounding are left untouched, so written
    /// fields parse back bit for bit.
    pub fn normalized(mut values: DMatrix<f64>) -> Result<Self> {
        check_classes(values.ncols())?;
        for (row, mut r) in values.row_iter_mut().enumerate() {
            let sum = r.sum();
            if !((sum - 1.0).abs() <= 1e-8) {
                return Err(Error::RowNotInPi { row, sum });
            }
            if (sum - 1.0).abs() > 4.0 * f64::EPSILON {
                r /= sum;
            }
        }
        Ok(Self { values })
    }

    /// One-hot rows from class labels.
    pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Self> {
        check_classes(num_classes)?;
        let mut values = DMatrix::zeros(labels.len(), num_classes);
        for (i, &k) in labels.iter().enumerate() {
            if k >= num_classes {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    num_vertices: num_classes,
                });
            }
            values[(i, k)] = 1.0;
        }
        Ok(Self { values })
    }

    pub fn uniform(num_vertices: usize, num_classes: usize) -> Result<Self> {
        check_classes(num_classes)?;
        Ok(Self {
            values: DMatrix::from_element(num_vertices, num_classes, 1.0 / num_classes as f64),
        })
    }

    /// Two-class field with columns `(u, 1 - u)`.
    pub fn from_two_class(u: &[f64]) -> Self {
        Self {
            values: DMatrix::from_fn(u.len(), 2, |i, k| if k == 0 { u[i] } else { 1.0 - u[i] }),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    pub fn num_vertices(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, k: usize) -> Field {
        Field::new(self.values.column(k).iter().copied().collect())
    }

    /// Rows lie in the simplex: entries `>= -tol`, sums within `tol` of one.
    pub fn in_simplex(&self, tol: f64) -> bool {
        self.max_simplex_violation() <= tol
    }

    pub fn max_simplex_violation(&self) -> f64 {
        self.values
            .row_iter()
            .map(|r| {
                let neg = r.iter().fold(0.0_f64, |m, &x| m.max(-x));
                neg.max((r.sum() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn class_masses(&self, s: &Spectrum) -> Vec<f64> {
        (0..self.num_classes())
            .map(|k| s.mass(self.values.column(k).as_slice()))
            .collect()
    }

    pub fn sup_distance(&self, other: &SimplexField) -> f64 {
        (&self.values - &other.values).amax()
    }
}

fn check_classes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidParameters(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    Ok(())
}

fn check_vertices(u: &SimplexField, g: &Graph) -> Result<()> {
    if u.num_vertices() != g.num_vertices() {
        return Err(Error::DimensionMismatch {
            expected: g.num_vertices(),
            found: u.num_vertices(),
        });
    }
    Ok(())
}

/// Multi-obstacle potential and the resulting Ginzburg-Landau energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiObstacleEnergy {
    pub potential: f64,
    pub gl: f64,
}

/// `W(U) = sum_i d_i^r prod_k (1 - U_ik)` and
/// `GL(U) = 1/2 sum_k <U^k, Lap U^k> + W(U) / epsilon`; both `+inf` if any
/// entry is negative.
pub fn multi_obstacle_energy(
    u: &SimplexField,
    g: &Graph,
    epsilon: f64,
) -> Result<MultiObstacleEnergy> {
    check_vertices(u, g)?;
    if u.values.iter().any(|&x| x < 0.0) {
        return Ok(MultiObstacleEnergy {
            potential: f64::INFINITY,
            gl: f64::INFINITY,
        });
    }
    let potential: f64 = u
        .values
        .row_iter()
        .zip(g.vertex_weights())
        .map(|(r, w)| w * r.iter().map(|x| 1.0 - x).product::<f64>())
        .sum();
    let mut dirichlet = 0.0;
    for k in 0..u.num_classes() {
        dirichlet += g.dirichlet_energy(u.values.column(k).as_slice())?;
    }
    Ok(MultiObstacleEnergy {
        potential,
        gl: dirichlet + potential / epsilon,
    })
}

/// Makes each row sum to exactly zero in left-to-right order.
fn recentre_last(m: &mut DMatrix<f64>) {
    let k = m.ncols();
    for i in 0..m.nrows() {
        let mut sum = 0.0;
        for q in 0..k - 1 {
            sum += m[(i, q)];
        }
        m[(i, k - 1)] = -sum;
    }
}

fn well_force(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = u.shape();
    let mut f = DMatrix::zeros(n, k);
    let mut prods = vec![0.0; k];
    for i in 0..n {
        for (c, p) in prods.iter_mut().enumerate() {
            *p = (0..k)
                .filter(|&l| l != c)
                .map(|l| 1.0 - u[(i, l)])
                .product();
        }
        // Differences first, so equal products give an exact zero.
        for c in 0..k {
            f[(i, c)] = prods.iter().map(|q| prods[c] - q).sum::<f64>() / k as f64;
        }
    }
    recentre_last(&mut f);
    f
}

/// `f_ik = prod_{l != k} (1 - U_il)` minus its class average; rows sum to 0.
pub fn well_force_f(u: &SimplexField) -> DMatrix<f64> {
    well_force(&u.values)
}

fn project_row(y: &[f64], out: &mut [f64]) {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    for (o, &x) in out.iter_mut().zip(y) {
        *o = (x - theta).max(0.0);
    }
}

fn project_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = m.shape();
    let mut out = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    let mut res = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            row[c] = m[(i, c)];
        }
        project_row(&row, &mut res);
        for c in 0..k {
            out[(i, c)] = res[c];
        }
    }
    out
}

/// Euclidean projection of every row onto the probability simplex.
pub fn project_rows_to_simplex(m: &DMatrix<f64>) -> Result<SimplexField> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameters("non-finite entry".into()));
    }
    check_classes(m.ncols())?;
    Ok(SimplexField {
        values: project_rows(m),
    })
}

/// Result of one multi-class step.
#[derive(Clone, Debug, PartialEq)]
pub struct McStepResult {
    pub u_next: SimplexField,
    pub beta_tilde: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub class_masses_in: Vec<f64>,
    pub class_masses_out: Vec<f64>,
}

fn diffuse_columns(u: &SimplexField, s: &Spectrum, tau: f64) -> Result<DMatrix<f64>> {
    let mut e = DMatrix::zeros(u.num_vertices(), u.num_classes());
    for k in 0..u.num_classes() {
        let d = s.diffuse(u.values.column(k).as_slice(), tau)?;
        e.column_mut(k).copy_from_slice(&d);
    }
    Ok(e)
}

/// Projection onto the admissible set, returning the projected point and
/// per-class constants removed by the projection.
trait Projector {
    fn project(&self, y: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>);

    fn conserves_mass(&self) -> bool;
}

struct RowSimplex;

impl Projector for RowSimplex {
    fn project(&self, y: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        (project_rows(y), vec![0.0; y.ncols()])
    }

    fn conserves_mass(&self) -> bool {
        false
    }
}

/// Rows in the simplex and prescribed class masses, by Dykstra's scheme:
/// the row projection carries a correction, the mass step is the
/// `<.,.>_V`-orthogonal uniform shift of each column.
struct Transportation<'a> {
    spectrum: &'a Spectrum,
    masses: Vec<f64>,
}

impl Projector for Transportation<'_> {
    fn project(&self, y: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let (n, k) = y.shape();
        let total = self.spectrum.total_mass();
        let mut x = y.clone();
        let mut correction = DMatrix::zeros(n, k);
        let mut z = project_rows(y);
        let mut shifts = vec![0.0; k];
        for _ in 0..PROJECTION_MAX_ITERS {
            let target = &x + &correction;
            let next = project_rows(&target);
            correction = target - &next;
            let change = (&next - &z).amax();
            z = next;
            let mut largest: f64 = 0.0;
            for c in 0..k {
                let shift = (self.masses[c] - self.spectrum.mass(z.column(c).as_slice())) / total;
                shifts[c] += shift;
                largest = largest.max(shift.abs());
                for i in 0..n {
                    x[(i, c)] = z[(i, c)] + shift;
                }
            }
            if change <= PROJECTION_TOL && largest <= PROJECTION_TOL {
                break;
            }
        }
        let mean = shifts.iter().sum::<f64>() / k as f64;
        (z, shifts.iter().map(|s| -(s - mean)).collect())
    }

    fn conserves_mass(&self) -> bool {
        true
    }
}

struct FixedPoint {
    u: DMatrix<f64>,
    iterations: usize,
    converged: bool,
}

/// Iterates `U <- (1 - w) U + w P(E + lambda f(U))`, halving `w` once the
/// change has grown twice in a row.
fn fixed_point(
    start: &DMatrix<f64>,
    diffused: &DMatrix<f64>,
    lambda: f64,
    projector: &impl Projector,
    max_iter: usize,
    fp_tol: f64,
) -> FixedPoint {
    let mut u = start.clone();
    let mut omega = 1.0;
    let mut last_change = f64::INFINITY;
    let mut increases = 0;
    for m in 1..=max_iter {
        let y = diffused + well_force(&u) * lambda;
        let (projected, _) = projector.project(&y);
        let next = &u * (1.0 - omega) + projected * omega;
        let change = (&next - &u).amax();
        u = next;
        if change <= fp_tol {
            return FixedPoint {
                u,
                iterations: m,
                converged: true,
            };
        }
        if change > last_change {
            increases += 1;
            if increases >= 2 {
                omega = 0.5;
            }
        } else {
            increases = 0;
        }
        last_change = change;
    }
    FixedPoint {
        u,
        iterations: max_iter,
        converged: false,
    }
}

fn mc_step(
    u_n: &SimplexField,
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    max_iter: usize,
    fp_tol: f64,
    projector: &impl Projector,
) -> Result<McStepResult> {
    check_vertices(u_n, g)?;
    let lambda = p.lambda();
    let diffused = diffuse_columns(u_n, s, p.tau())?;
    let fp = if lambda == 0.0 {
        FixedPoint {
            u: projector.project(&diffused).0,
            iterations: 0,
            converged: true,
        }
    } else {
        fixed_point(&u_n.values, &diffused, lambda, projector, max_iter, fp_tol)
    };

    // Read the subgradient and class constants off the final projection.
    let force = well_force(&fp.u);
    let y = &diffused + &force * lambda;
    let (projected, constants) = projector.project(&y);
    let (n, k) = y.shape();
    let mut beta_tilde = if lambda == 0.0 {
        DMatrix::zeros(n, k)
    } else {
        DMatrix::from_fn(n, k, |i, c| {
            (projected[(i, c)] - y[(i, c)] + constants[c]) / lambda
        })
    };
    recentre_last(&mut beta_tilde);

    // Residual of U = E + lambda (f + beta) - lambda avg(f + beta) 1 per class.
    let mut residual: f64 = 0.0;
    for c in 0..k {
        let column: Vec<f64> = (0..n).map(|i| force[(i, c)] + beta_tilde[(i, c)]).collect();
        let centre = if projector.conserves_mass() {
            s.average(&column)
        } else {
            0.0
        };
        for (i, x) in column.iter().enumerate() {
            let r = fp.u[(i, c)] - diffused[(i, c)] - lambda * (x - centre);
            residual = residual.max(r.abs());
        }
    }

    let u_next = SimplexField { values: fp.u };
    Ok(McStepResult {
        class_masses_in: u_n.class_masses(s),
        class_masses_out: u_next.class_masses(s),
        u_next,
        beta_tilde,
        residual,
        iterations: fp.iterations,
        converged: fp.converged,
    })
}

/// Largest violation of `beta_tilde in B~(U)`: per row, entries where
/// `U_ik > 0` share a common value and entries where `U_ik = 0` are not below it.
pub fn subgradient_violation(u: &SimplexField, beta_tilde: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..u.num_vertices() {
        let support: Vec<f64> = (0..u.num_classes())
            .filter(|&k| u.values[(i, k)] > 0.0)
            .map(|k| beta_tilde[(i, k)])
            .collect();
        let hi = support.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = support.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max(hi - lo);
        for k in (0..u.num_classes()).filter(|&k| u.values[(i, k)] <= 0.0) {
            worst = worst.max(hi - beta_tilde[(i, k)]);
        }
    }
    worst
}

/// One step of the multi-class scheme without mass constraints.
pub fn mc_sd_step(
    u_n: &SimplexField,
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    max_iter: usize,
    fp_tol: f64,
) -> Result<McStepResult> {
    mc_step(u_n, g, s, p, max_iter, fp_tol, &RowSimplex)
}

/// One step of the multi-class scheme conserving every class mass.
pub fn mc_msd_step(
    u_n: &SimplexField,
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    max_iter: usize,
    fp_tol: f64,
) -> Result<McStepResult> {
    check_vertices(u_n, g)?;
    let masses = u_n.class_masses(s);
    let total = s.total_mass();
    let slack = 1e-9 * (1.0 + total);
    if let Some((k, m)) = masses.iter().enumerate().find(|(_, &m)| m < -slack) {
        return Err(Error::InfeasibleMasses(format!(
            "class {k} has negative mass {m}"
        )));
    }
    let sum: f64 = masses.iter().sum();
    if (sum - total).abs() > slack {
        return Err(Error::InfeasibleMasses(format!(
            "class masses sum to {sum}, expected {total}"
        )));
    }
    let projector = Transportation {
        spectrum: s,
        masses,
    };
    mc_step(u_n, g, s, p, max_iter, fp_tol, &projector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use approx::assert_abs_diff_eq;

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

    fn rows(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, k| rows[i][k])
    }

    #[test]
    fn construction_checks_rows() {
        assert!(SimplexField::new(rows(&[&[0.5, 0.5], &[1.0, 0.0]])).is_ok());
        assert!(matches!(
            SimplexField::new(rows(&[&[0.5, 0.4]])),
            Err(Error::RowNotInPi { row: 0, .. })
        ));
        assert!(SimplexField::new(rows(&[&[1.0]])).is_err());
        let f = SimplexField::normalized(rows(&[&[0.5, 0.5 + 1e-9]])).unwrap();
        assert!((f.values().row(0).sum() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn energy_examples() {
        let (g, _) = triangle();
        let one_hot = SimplexField::one_hot(&[0, 1, 2], 3).unwrap();
        assert_eq!(
            multi_obstacle_energy(&one_hot, &g, 1.0).unwrap().potential,
            0.0
        );

        let single = Graph::new(2, &[Edge::new(0, 1, 1.0)], 0.0).unwrap();
        let u = SimplexField::uniform(2, 3).unwrap();
        let e = multi_obstacle_energy(&u, &single, 1.0).unwrap();
        assert_abs_diff_eq!(e.potential, 2.0 * 8.0 / 27.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.gl, e.potential, epsilon = 1e-15);

        let u = SimplexField::uniform(2, 2).unwrap();
        let e = multi_obstacle_energy(&u, &single, 1.0).unwrap();
        assert_abs_diff_eq!(e.potential, 0.5, epsilon = 1e-15);

        let bad = SimplexField::new(rows(&[&[1.2, -0.2], &[0.5, 0.5]])).unwrap();
        assert_eq!(
            multi_obstacle_energy(&bad, &single, 1.0).unwrap().gl,
            f64::INFINITY
        );
    }

    #[test]
    fn well_force_examples() {
        let u = SimplexField::uniform(2, 3).unwrap();
        assert!(well_force_f(&u).iter().all(|&x| x.abs() <= 1e-16));

        let u = SimplexField::one_hot(&[0], 3).unwrap();
        let f = well_force_f(&u);
        assert_abs_diff_eq!(f[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[(0, 1)], -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[(0, 2)], -1.0 / 3.0, epsilon = 1e-15);

        let u = SimplexField::from_two_class(&[0.8]);
        let f = well_force_f(&u);
        assert_abs_diff_eq!(f[(0, 0)], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(f[(0, 1)], -0.3, epsilon = 1e-15);
    }

    #[test]
    fn simplex_projection_examples() {
        let p = project_rows_to_simplex(&rows(&[&[1.2, 0.3], &[2.0, -1.0], &[0.2, 0.8]])).unwrap();
        assert_abs_diff_eq!(p.values()[(0, 0)], 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(p.values()[(0, 1)], 0.05, epsilon = 1e-15);
        assert_eq!(p.values()[(1, 0)], 1.0);
        assert_eq!(p.values()[(1, 1)], 0.0);
        assert_abs_diff_eq!(p.values()[(2, 0)], 0.2, epsilon = 1e-16);
        assert_abs_diff_eq!(p.values()[(2, 1)], 0.8, epsilon = 1e-16);
    }

    #[test]
    fn uniform_is_fixed() {
        let (g, s) = triangle();
        let p = SchemeParams::with_lambda(0.1, 0.5).unwrap();
        let u = SimplexField::uniform(3, 3).unwrap();
        for step in [
            mc_sd_step(&u, &g, &s, &p, 500, 1e-10).unwrap(),
            mc_msd_step(&u, &g, &s, &p, 500, 1e-10).unwrap(),
        ] {
            assert!(step.converged);
            assert!(step.u_next.sup_distance(&u) <= 1e-15);
            assert!(step.residual <= 1e-12);
        }
    }

    #[test]
    fn pure_diffusion_reduces_to_heat_flow() {
        let (g, s) = triangle();
        let p = SchemeParams::with_lambda(0.2, 0.0).unwrap();
        let u = SimplexField::one_hot(&[0, 1, 1], 2).unwrap();
        let step = mc_sd_step(&u, &g, &s, &p, 500, 1e-10).unwrap();
        let d = s.diffuse(&u.column(0), 0.2).unwrap();
        assert!(step.u_next.column(0).sup_distance(&d) <= 1e-14);
        assert!(step.beta_tilde.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn mass_conserving_step_keeps_class_masses() {
        let (g, s) = triangle();
        let p = SchemeParams::with_lambda(1e-3, 0.5).unwrap();
        let u = SimplexField::one_hot(&[0, 1, 2], 3).unwrap();
        let step = mc_msd_step(&u, &g, &s, &p, 500, 1e-10).unwrap();
        for (a, b) in step.class_masses_in.iter().zip(&step.class_masses_out) {
            assert!((a - b).abs() <= 1e-8);
        }
        assert!(step.u_next.in_simplex(1e-9));
    }
}
