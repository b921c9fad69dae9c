//! Multi-step runs with per-step diagnostics, lambda sweeps towards the MBO
//! limit, and step-size refinement studies.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Field, Graph, Spectrum};
use crate::multiclass::{mc_msd_step, mc_sd_step, multi_obstacle_energy, SimplexField};
use crate::oracles::steps_to_reach;
use crate::par::parallel_map;
use crate::scheme::{ginzburg_landau, lyapunov_h, mbo_step, sd_step, SchemeParams, StepResult};

/// Above this many stored entries, states are decimated.
const MAX_STORED_ENTRIES: usize = 10_000_000;

/// Sweep distances at or below this count as identical outputs.
pub const SWEEP_MATCH_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxSteps,
    FixedPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogEntry {
    pub step: usize,
    pub mass: f64,
    pub h: f64,
    pub h_tau: f64,
    pub gl: f64,
    /// Sup-norm change from the previous state (0 at step 0).
    pub max_change: f64,
    /// `nu` or the threshold level; absent at step 0.
    pub multiplier: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub params: SchemeParams,
    pub log: Vec<LogEntry>,
    /// Stored states, with their step indices in `state_steps`.
    pub states: Vec<Field>,
    pub state_steps: Vec<usize>,
    pub terminated: Termination,
}

impl Trajectory {
    pub fn final_state(&self) -> &Field {
        self.states.last().expect("trajectory keeps its last state")
    }

    pub fn num_steps(&self) -> usize {
        self.log.len() - 1
    }
}

/// Stopping tolerance used when none is given: exact repeats for MBO,
/// `1e-12` otherwise.
pub fn default_fixed_point_tol(p: &SchemeParams) -> f64 {
    if p.is_mbo() {
        0.0
    } else {
        1e-12
    }
}

fn log_entry(
    step: usize,
    u: &[f64],
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    max_change: f64,
    multiplier: Option<f64>,
) -> Result<LogEntry> {
    let h = lyapunov_h(u, p, s)?;
    Ok(LogEntry {
        step,
        mass: s.mass(u),
        h: h.h,
        h_tau: h.h_tau,
        gl: ginzburg_landau(u, g, p.epsilon())?,
        max_change,
        multiplier,
    })
}

/// One step of the scheme selected by `lambda`.
pub fn scheme_step(u: &[f64], g: &Graph, s: &Spectrum, p: &SchemeParams) -> Result<StepResult> {
    if p.is_mbo() {
        mbo_step(u, g, s, p.tau())
    } else {
        sd_step(u, g, s, p)
    }
}

/// Iterates the scheme until the sup-norm change is at most
/// `fixed_point_tol` (never, if `None`) or `max_steps` is reached.
pub fn run_trajectory(
    u0: &[f64],
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    max_steps: usize,
    fixed_point_tol: Option<f64>,
) -> Result<Trajectory> {
    g.check_dim(u0)?;
    let u0 = Field::new(u0.to_vec());
    if let Some(index) = u0.first_outside(0.0, 1.0, 0.0) {
        return Err(Error::DomainViolation {
            index,
            value: u0[index],
        });
    }
    let n = u0.len();
    let stride = (n * (max_steps + 1)).div_ceil(MAX_STORED_ENTRIES).max(1);

    let mut log = vec![log_entry(0, &u0, g, s, p, 0.0, None)?];
    let mut states = vec![u0.clone()];
    let mut state_steps = vec![0];
    let mut u = u0;
    let mut terminated = Termination::MaxSteps;
    for step in 1..=max_steps {
        let result = scheme_step(&u, g, s, p)?;
        let change = result.u_next.sup_distance(&u);
        u = result.u_next;
        log.push(log_entry(
            step,
            &u,
            g,
            s,
            p,
            change,
            Some(result.multiplier.value()),
        )?);
        let done = fixed_point_tol.is_some_and(|tol| change <= tol);
        if step % stride == 0 || done || step == max_steps {
            states.push(u.clone());
            state_steps.push(step);
        }
        if done {
            terminated = Termination::FixedPoint;
            break;
        }
    }
    Ok(Trajectory {
        params: *p,
        log,
        states,
        state_steps,
        terminated,
    })
}

/// `1 - 2^-j` for `j = 1..=j_max`.
pub fn default_sweep_lambdas(j_max: u32) -> Vec<f64> {
    (1..=j_max).map(|j| 1.0 - 0.5_f64.powi(j as i32)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub sup_distance_to_mbo: f64,
    pub nu: f64,
}

/// One semi-discrete step per `lambda` from `u0`, compared with the MBO step.
pub fn sweep_lambda(
    u0: &[f64],
    g: &Graph,
    s: &Spectrum,
    tau: f64,
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    if let Some(&bad) = lambdas.iter().find(|&&l| !(0.0..1.0).contains(&l)) {
        return Err(Error::InvalidParameters(format!(
            "sweep values must lie in [0, 1), got {bad}"
        )));
    }
    let mbo = mbo_step(u0, g, s, tau)?;
    parallel_map(lambdas, |&lambda| {
        let p = SchemeParams::with_lambda(tau, lambda)?;
        let step = sd_step(u0, g, s, &p)?;
        Ok(SweepRow {
            lambda,
            sup_distance_to_mbo: step.u_next.sup_distance(&mbo.u_next),
            nu: step.multiplier.value(),
        })
    })
    .into_iter()
    .collect()
}

/// Smallest swept `lambda` from which every larger swept value reproduces
/// the MBO output within `tol`.
pub fn stabilization_threshold(rows: &[SweepRow], tol: f64) -> Option<f64> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let mut threshold = None;
    for row in sorted.iter().rev() {
        if row.sup_distance_to_mbo <= tol {
            threshold = Some(row.lambda);
        } else {
            break;
        }
    }
    threshold
}

/// Self-convergence, energy and regularity diagnostics of a refinement run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub epsilon: f64,
    pub t_final: f64,
    pub taus: Vec<f64>,
    /// Matched times: multiples of the coarsest step.
    pub times: Vec<f64>,
    /// Sup-norm distance between consecutive refinements, per matched time.
    pub distances: Vec<Vec<f64>>,
    pub max_distances: Vec<f64>,
    /// `max_distances[i] / max_distances[i + 1]`.
    pub ratios: Vec<f64>,
    /// Minimum over matched pairs `s < t` on the finest run of
    /// `GL(s) - GL(t) - ||u(s) - u(t)||^2 / (2 (t - s))`.
    pub gl_step_min_slack: f64,
    /// Largest step-to-step increase of GL on the finest run.
    pub gl_max_increase: f64,
    pub lipschitz_max_quotient: f64,
    pub lipschitz_bound: f64,
    /// Largest `||u(s) - u(t)|| - sqrt(2 GL(u0)) sqrt(t - s)` on the finest run.
    pub holder_max_excess: f64,
}

fn iterate_all(
    u0: &[f64],
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    steps: usize,
) -> Result<Vec<Field>> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(Field::new(u0.to_vec()));
    for _ in 0..steps {
        let next = scheme_step(states.last().unwrap(), g, s, p)?.u_next;
        states.push(next);
    }
    Ok(states)
}

/// Runs every `tau` to the final matched time and compares the runs.
pub fn converge_tau(
    u0: &[f64],
    g: &Graph,
    s: &Spectrum,
    epsilon: f64,
    t_final: f64,
    taus: &[f64],
) -> Result<ConvergenceReport> {
    g.check_dim(u0)?;
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "final time must be positive, got {t_final}"
        )));
    }
    if taus.is_empty() {
        return Err(Error::InvalidParameters("no step sizes given".into()));
    }
    if taus.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameters(
            "step sizes must be strictly decreasing".into(),
        ));
    }
    let params = taus
        .iter()
        .map(|&tau| SchemeParams::new(epsilon, tau))
        .collect::<Result<Vec<_>>>()?;

    let coarse = taus[0];
    let grid_len = steps_to_reach(t_final, coarse);
    let times: Vec<f64> = (0..=grid_len).map(|m| m as f64 * coarse).collect();
    let t_end = times[grid_len];

    let runs: Vec<Vec<Field>> = parallel_map(&params, |p| {
        iterate_all(u0, g, s, p, steps_to_reach(t_end, p.tau()))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let at = |run: usize, t: f64| &runs[run][steps_to_reach(t, taus[run])];

    let distances: Vec<Vec<f64>> = (0..taus.len() - 1)
        .map(|i| {
            times
                .iter()
                .map(|&t| at(i, t).sup_distance(at(i + 1, t)))
                .collect()
        })
        .collect();
    let max_distances: Vec<f64> = distances
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .collect();
    let ratios = max_distances.windows(2).map(|w| w[0] / w[1]).collect();

    let finest = taus.len() - 1;
    let gl_of = |u: &[f64]| ginzburg_landau(u, g, epsilon);
    let grid_states: Vec<&Field> = times.iter().map(|&t| at(finest, t)).collect();
    let grid_gl = grid_states
        .iter()
        .map(|u| gl_of(u))
        .collect::<Result<Vec<_>>>()?;
    let dist_v = |a: &Field, b: &Field| {
        let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        s.inner_product(&d, &d).sqrt()
    };

    let gl0 = gl_of(u0)?;
    let holder = (2.0 * gl0).sqrt();
    let mut gl_step_min_slack = f64::INFINITY;
    let mut holder_max_excess = f64::NEG_INFINITY;
    for a in 0..times.len() {
        for b in a + 1..times.len() {
            let dt = times[b] - times[a];
            let d = dist_v(grid_states[a], grid_states[b]);
            gl_step_min_slack = gl_step_min_slack.min(grid_gl[a] - grid_gl[b] - d * d / (2.0 * dt));
            holder_max_excess = holder_max_excess.max(d - holder * dt.sqrt());
        }
    }

    let mut gl_max_increase: f64 = 0.0;
    let mut previous = gl_of(&runs[finest][0])?;
    for u in &runs[finest][1..] {
        let current = gl_of(u)?;
        gl_max_increase = gl_max_increase.max(current - previous);
        previous = current;
    }

    let lipschitz_max_quotient = grid_states
        .windows(2)
        .map(|w| dist_v(w[0], w[1]) / coarse)
        .fold(0.0, f64::max);
    let mean = s.average(u0);
    let rho = mean.max(1.0 - mean);
    let e = (1.0 / epsilon).exp();
    let lipschitz_bound = rho * s.total_mass().sqrt() * (e - 1.0 + e / epsilon);

    Ok(ConvergenceReport {
        epsilon,
        t_final,
        taus: taus.to_vec(),
        times,
        distances,
        max_distances,
        ratios,
        gl_step_min_slack,
        gl_max_increase,
        lipschitz_max_quotient,
        lipschitz_bound,
        holder_max_excess,
    })
}

/// `(tau / 2) |<u, Q u>|` with `tau^2 Q = exp(-tau Lap) - I + tau Lap`,
/// which bounds `|H_tau(u) - GL(u)|`.
pub fn h_tau_gl_bound(u: &[f64], s: &Spectrum, tau: f64) -> Result<f64> {
    let q = s.apply_function(u, |mu| {
        let x = tau * mu;
        // Series near zero avoids cancellation in e^{-x} - 1 + x.
        if x < 1e-4 {
            mu * mu * (0.5 - x / 6.0 + x * x / 24.0)
        } else {
            ((-x).exp() - 1.0 + x) / (tau * tau)
        }
    })?;
    Ok(0.5 * tau * s.inner_product(u, &q).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McLogEntry {
    pub step: usize,
    pub class_masses: Vec<f64>,
    pub potential: f64,
    pub gl: f64,
    pub max_change: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct McTrajectory {
    pub params: SchemeParams,
    pub conserve_mass: bool,
    pub log: Vec<McLogEntry>,
    pub states: Vec<SimplexField>,
}

impl McTrajectory {
    pub fn final_state(&self) -> &SimplexField {
        self.states.last().expect("trajectory keeps its last state")
    }

    pub fn all_converged(&self) -> bool {
        self.log.iter().all(|e| e.converged)
    }
}

/// Runs `steps` multi-class steps, with or without class-mass conservation.
#[allow(clippy::too_many_arguments)]
pub fn run_multiclass(
    u0: &SimplexField,
    g: &Graph,
    s: &Spectrum,
    p: &SchemeParams,
    steps: usize,
    conserve_mass: bool,
    max_iter: usize,
    fp_tol: f64,
) -> Result<McTrajectory> {
    let energy = multi_obstacle_energy(u0, g, p.epsilon())?;
    let mut log = vec![McLogEntry {
        step: 0,
        class_masses: u0.class_masses(s),
        potential: energy.potential,
        gl: energy.gl,
        max_change: 0.0,
        residual: 0.0,
        iterations: 0,
        converged: true,
    }];
    let mut states = vec![u0.clone()];
    for step in 1..=steps {
        let u = states.last().unwrap();
        let result = if conserve_mass {
            mc_msd_step(u, g, s, p, max_iter, fp_tol)?
        } else {
            mc_sd_step(u, g, s, p, max_iter, fp_tol)?
        };
        let energy = multi_obstacle_energy(&result.u_next, g, p.epsilon())?;
        log.push(McLogEntry {
            step,
            class_masses: result.class_masses_out.clone(),
            potential: energy.potential,
            gl: energy.gl,
            max_change: result.u_next.sup_distance(u),
            residual: result.residual,
            iterations: result.iterations,
            converged: result.converged,
        });
        states.push(result.u_next);
    }
    Ok(McTrajectory {
        params: *p,
        conserve_mass,
        log,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn p2() -> (Graph, Spectrum) {
        let g = Graph::new(2, &[Edge::new(0, 1, 1.0)], 0.0).unwrap();
        let s = Spectrum::new(&g).unwrap();
        (g, s)
    }

    #[test]
    fn constant_start_is_a_fixed_point() {
        let (g, s) = p2();
        let p = SchemeParams::new(1.0, 0.1).unwrap();
        let t = run_trajectory(
            &[0.4, 0.4],
            &g,
            &s,
            &p,
            10,
            Some(default_fixed_point_tol(&p)),
        )
        .unwrap();
        assert_eq!(t.terminated, Termination::FixedPoint);
        assert_eq!(t.num_steps(), 1);
        assert_eq!(t.log.len(), 2);
        assert_eq!(t.log[0].mass, t.log[1].mass);
    }

    #[test]
    fn mbo_fixed_point() {
        let (g, s) = p2();
        let p = SchemeParams::mbo(std::f64::consts::LN_2 / 2.0).unwrap();
        let t = run_trajectory(&[1.0, 0.0], &g, &s, &p, 10, Some(0.0)).unwrap();
        assert_eq!(t.terminated, Termination::FixedPoint);
        assert_eq!(t.num_steps(), 1);
        assert_eq!(t.final_state().values(), &[1.0, 0.0]);
    }

    #[test]
    fn sweep_examples() {
        let (g, s) = p2();
        let rows = sweep_lambda(&[1.0, 0.0], &g, &s, 0.3, &[0.9, 0.99, 0.999]).unwrap();
        assert!(rows.iter().all(|r| r.sup_distance_to_mbo == 0.0));
        assert_eq!(stabilization_threshold(&rows, SWEEP_MATCH_TOL), Some(0.9));

        let rows = sweep_lambda(&[0.5, 0.5], &g, &s, 0.3, &default_sweep_lambdas(20)).unwrap();
        assert!(rows.iter().all(|r| r.sup_distance_to_mbo == 0.0));

        assert!(sweep_lambda(&[1.0, 0.0], &g, &s, 0.3, &[1.0]).is_err());
    }

    #[test]
    fn refinement_of_constant_has_zero_distances() {
        let (g, s) = p2();
        let r = converge_tau(&[0.3, 0.3], &g, &s, 1.0, 0.5, &[0.1, 0.05]).unwrap();
        assert!(r.max_distances.iter().all(|&d| d == 0.0));
        assert!(matches!(
            converge_tau(&[0.3, 0.3], &g, &s, 0.01, 0.5, &[0.1]),
            Err(Error::TauExceedsEpsilon { .. })
        ));
    }

    #[test]
    fn h_tau_matches_gl_up_to_bound() {
        let (g, s) = p2();
        let u = [0.8, 0.1];
        for tau in [0.1, 0.01, 0.001] {
            let p = SchemeParams::new(1.0, tau).unwrap();
            let h = lyapunov_h(&u, &p, &s).unwrap();
            let gl = ginzburg_landau(&u, &g, 1.0).unwrap();
            let bound = h_tau_gl_bound(&u, &s, tau).unwrap();
            assert!((h.h_tau - gl).abs() <= bound * (1.0 + 1e-9) + 1e-15);
        }
    }
}
