//! Mass-conserving semi-discrete steps for two-phase fields.
//!
//! One step maps `u_n` in `[0,1]^V` to the minimiser of
//! `(1 - lambda) ||u||^2 - 2 <u, exp(-tau Lap) u_n>` over
//! `{u in [0,1]^V : mass(u) = mass(u_n)}`, with `lambda = tau / epsilon`.
//! For `lambda < 1` the minimiser is unique and is obtained from a scalar
//! multiplier `nu`; for `lambda = 1` (the MBO case) the threshold level is
//! adjusted so that mass is conserved and ties on the threshold level are
//! split uniformly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Field, Graph, Spectrum};

/// Default absolute tolerance for grouping tied diffused values.
pub const DEFAULT_GROUP_TOL: f64 = 1e-12;

/// Entries this close to 0 or 1 are snapped onto the obstacle.
pub(crate) const SNAP_TOL: f64 = 1e-12;

/// Largest sign violation of `lambda * beta` that [`recover_beta`] repairs
/// before reporting inconsistent inputs.
const BETA_SIGN_TOL: f64 = 1e-9;

/// Time step, interface scale and the derived ratio `lambda = tau / epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    epsilon: f64,
    tau: f64,
    lambda: f64,
    group_tol: f64,
}

impl SchemeParams {
    /// Requires `0 < tau <= epsilon`.
    pub fn new(epsilon: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if tau > epsilon {
            return Err(Error::TauExceedsEpsilon { tau, epsilon });
        }
        let lambda = if tau == epsilon { 1.0 } else { tau / epsilon };
        Ok(Self {
            epsilon,
            tau,
            lambda,
            group_tol: DEFAULT_GROUP_TOL,
        })
    }

    /// Fixes `lambda` exactly and derives `epsilon = tau / lambda`
    /// (infinite for the pure-diffusion case `lambda = 0`).
    pub fn with_lambda(tau: f64, lambda: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameters(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        let epsilon = if lambda == 0.0 {
            f64::INFINITY
        } else {
            tau / lambda
        };
        Ok(Self {
            epsilon,
            tau,
            lambda,
            group_tol: DEFAULT_GROUP_TOL,
        })
    }

    /// The MBO case `tau = epsilon`.
    pub fn mbo(tau: f64) -> Result<Self> {
        Self::with_lambda(tau, 1.0)
    }

    pub fn with_group_tol(mut self, group_tol: f64) -> Self {
        self.group_tol = group_tol;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn group_tol(&self) -> f64 {
        self.group_tol
    }

    pub fn is_mbo(&self) -> bool {
        self.lambda == 1.0
    }
}

/// Distinct diffused values `alpha_1 < ... < alpha_K` with the total
/// vertex weight `a_l = sum d_i^r` of each level set.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdLevels {
    levels: Vec<f64>,
    weights: Vec<f64>,
    membership: Vec<usize>,
}

impl ThresholdLevels {
    /// Groups values whose distance to the smallest member of their group
    /// is at most `group_tol`. The level value is the weighted group mean.
    pub fn from_weights(diffused: &[f64], vertex_weights: &[f64], group_tol: f64) -> Self {
        let mut order: Vec<usize> = (0..diffused.len()).collect();
        order.sort_by(|&a, &b| diffused[a].total_cmp(&diffused[b]));

        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut start = f64::NAN;
        for &i in &order {
            if groups.is_empty() || diffused[i] - start > group_tol {
                start = diffused[i];
                groups.push(Vec::new());
            }
            groups.last_mut().unwrap().push(i);
        }

        let mut levels = Vec::with_capacity(groups.len());
        let mut weights = Vec::with_capacity(groups.len());
        let mut membership = vec![0; diffused.len()];
        for (l, group) in groups.iter().enumerate() {
            let first = diffused[group[0]];
            let w: f64 = group.iter().map(|&i| vertex_weights[i]).sum();
            // Exact ties keep their value bit-for-bit.
            let level = if group.iter().all(|&i| diffused[i] == first) {
                first
            } else {
                group
                    .iter()
                    .map(|&i| vertex_weights[i] * diffused[i])
                    .sum::<f64>()
                    / w
            };
            for &i in group {
                membership[i] = l;
            }
            levels.push(level);
            weights.push(w);
        }
        Self {
            levels,
            weights,
            membership,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Level index of each vertex.
    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn level_size(&self, l: usize) -> usize {
        self.membership.iter().filter(|&&m| m == l).count()
    }
}

pub fn threshold_levels(diffused: &[f64], g: &Graph, group_tol: f64) -> Result<ThresholdLevels> {
    g.check_dim(diffused)?;
    Ok(ThresholdLevels::from_weights(
        diffused,
        g.vertex_weights(),
        group_tol,
    ))
}

/// Solution of the piecewise-linear mass equation for `nu`.
#[derive(Clone, Debug, PartialEq)]
pub struct NuSolution {
    /// Midpoint of the solution interval intersected with `[0, lambda]`.
    pub nu: f64,
    /// Maximal solution interval (ends may be infinite).
    pub interval: (f64, f64),
    /// `clamp((alpha_l - nu) / (1 - lambda), 0, 1)` per level.
    pub level_values: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LevelState {
    Full,
    Interior,
    Empty,
}

/// Per-level share `clamp((alpha - x) / gap, 0, 1)` at a breakpoint position.
fn share(alpha: f64, enter: f64, gap: f64, x: f64) -> f64 {
    if x <= enter {
        1.0
    } else if x >= alpha {
        0.0
    } else {
        ((alpha - x) / gap).clamp(0.0, 1.0)
    }
}

struct Segment {
    full_mass: f64,
    interior_weight: f64,
    /// `sum_I a_j alpha_j / s`, exact when a single level is interior.
    interior_mean: f64,
    states: Vec<LevelState>,
}

impl Segment {
    fn new(levels: &ThresholdLevels, gap: f64, left: f64, right: f64) -> Self {
        let states: Vec<LevelState> = levels
            .levels
            .iter()
            .map(|&alpha| {
                if alpha - gap >= right {
                    LevelState::Full
                } else if alpha <= left {
                    LevelState::Empty
                } else {
                    LevelState::Interior
                }
            })
            .collect();
        // Summed from the top level down, matching the MBO threshold search.
        let full_mass = (0..levels.len())
            .rev()
            .filter(|&l| states[l] == LevelState::Full)
            .map(|l| levels.weights[l])
            .sum();
        let interior: Vec<usize> = (0..levels.len())
            .filter(|&l| states[l] == LevelState::Interior)
            .collect();
        let interior_weight: f64 = interior.iter().map(|&l| levels.weights[l]).sum();
        let interior_mean = match interior.first() {
            Some(&l0) => {
                let a0 = levels.levels[l0];
                a0 + interior
                    .iter()
                    .map(|&j| levels.weights[j] * (levels.levels[j] - a0))
                    .sum::<f64>()
                    / interior_weight
            }
            None => f64::NAN,
        };
        Self {
            full_mass,
            interior_weight,
            interior_mean,
            states,
        }
    }

    fn nu(&self, mass: f64, gap: f64) -> Option<f64> {
        (self.interior_weight > 0.0)
            .then(|| self.interior_mean - gap * (mass - self.full_mass) / self.interior_weight)
    }

    fn level_values(&self, levels: &ThresholdLevels, mass: f64, gap: f64) -> Vec<f64> {
        let interior: Vec<usize> = (0..levels.len())
            .filter(|&l| self.states[l] == LevelState::Interior)
            .collect();
        let base = if self.interior_weight > 0.0 {
            (mass - self.full_mass) / self.interior_weight
        } else {
            0.0
        };
        (0..levels.len())
            .map(|l| match self.states[l] {
                LevelState::Full => 1.0,
                LevelState::Empty => 0.0,
                LevelState::Interior => {
                    let alpha = levels.levels[l];
                    let dev = interior
                        .iter()
                        .map(|&j| levels.weights[j] * (alpha - levels.levels[j]))
                        .sum::<f64>()
                        / self.interior_weight;
                    snap_unit(base + dev / gap)
                }
            })
            .collect()
    }
}

pub(crate) fn snap_unit(x: f64) -> f64 {
    if x <= SNAP_TOL {
        0.0
    } else if x >= 1.0 - SNAP_TOL {
        1.0
    } else {
        x
    }
}

/// Solves `M = sum_l a_l clamp((alpha_l - nu) / (1 - lambda), 0, 1)`.
///
/// The right-hand side is continuous, piecewise linear and non-increasing
/// in `nu` with breakpoints `alpha_l - (1 - lambda)` and `alpha_l`; the
/// bracketing segment is located by evaluating it at the breakpoints and the
/// affine piece is inverted in closed form. Level values are computed from
/// the active set directly, so a single partially filled level gets exactly
/// `(M - mass of full levels) / a_l` however small `1 - lambda` is.
pub fn solve_nu(levels: &ThresholdLevels, mass: f64, lambda: f64) -> Result<NuSolution> {
    if lambda >= 1.0 {
        return Err(Error::LambdaIsOne);
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameters(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let total = levels.total_weight();
    let slack = 1e-12 * (1.0 + total);
    if !(mass >= -slack && mass <= total + slack) {
        return Err(Error::MassOutOfRange { mass, max: total });
    }
    let gap = 1.0 - lambda;
    let clip = |lo: f64, hi: f64| {
        let a = lo.max(0.0);
        let b = hi.min(lambda);
        if a <= b {
            0.5 * (a + b)
        } else {
            (0.5 * (lo + hi)).clamp(0.0, lambda)
        }
    };
    let k = levels.len();
    let alpha_min = levels.levels[0];
    let alpha_max = levels.levels[k - 1];
    if mass <= 0.0 {
        let interval = (alpha_max, f64::INFINITY);
        return Ok(NuSolution {
            nu: clip(interval.0, interval.1),
            interval,
            level_values: vec![0.0; k],
        });
    }
    if mass >= total {
        let interval = (f64::NEG_INFINITY, alpha_min - gap);
        return Ok(NuSolution {
            nu: clip(interval.0, interval.1),
            interval,
            level_values: vec![1.0; k],
        });
    }

    let enters: Vec<f64> = levels.levels.iter().map(|a| a - gap).collect();
    let mut positions: Vec<f64> = enters.iter().chain(levels.levels.iter()).copied().collect();
    positions.sort_by(f64::total_cmp);
    positions.dedup();
    let rhs: Vec<f64> = positions
        .iter()
        .map(|&x| {
            (0..k)
                .rev()
                .map(|l| levels.weights[l] * share(levels.levels[l], enters[l], gap, x))
                .sum()
        })
        .collect();

    let last = positions.len() - 1;
    // First breakpoint where the right-hand side has dropped to M.
    let p = rhs.iter().position(|&f| f <= mass).unwrap_or(last).max(1);
    let lower = Segment::new(levels, gap, positions[p - 1], positions[p]);
    let nu_lo = lower.nu(mass, gap).unwrap_or(positions[p - 1]);
    let level_values = lower.level_values(levels, mass, gap);

    // Last breakpoint where it is still at least M.
    let q = rhs
        .iter()
        .rposition(|&f| f >= mass)
        .unwrap_or(0)
        .min(last - 1);
    let upper = Segment::new(levels, gap, positions[q], positions[q + 1]);
    let nu_hi = upper.nu(mass, gap).unwrap_or(positions[q + 1]).max(nu_lo);

    Ok(NuSolution {
        nu: clip(nu_lo, nu_hi),
        interval: (nu_lo, nu_hi),
        level_values,
    })
}

/// Scalar multiplier attached to a step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Multiplier {
    /// `lambda < 1`: mass multiplier `nu` and its maximal solution interval.
    Nu { nu: f64, lo: f64, hi: f64 },
    /// `lambda = 1`: threshold level index (0-based, ascending), its value
    /// `alpha_k` and the uniform fill `theta` of that level set.
    Threshold {
        level: usize,
        alpha: f64,
        theta: f64,
    },
}

impl Multiplier {
    /// `nu` or `alpha_k`, as logged per step.
    pub fn value(&self) -> f64 {
        match *self {
            Multiplier::Nu { nu, .. } => nu,
            Multiplier::Threshold { alpha, .. } => alpha,
        }
    }
}

/// Result of one scheme update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub u_next: Field,
    pub multiplier: Multiplier,
    /// Recovered subgradient `beta_{n+1}` in `B(u_next)`.
    pub beta: Field,
    /// Sup-norm residual of the scheme equation with `(u_next, beta)`.
    pub residual: f64,
    pub mass_in: f64,
    pub mass_out: f64,
    /// `exp(-tau Lap) u_n`.
    pub diffused: Field,
}

fn check_unit_domain(u: &[f64]) -> Result<Field> {
    let f = Field::new(u.to_vec());
    if let Some(index) = f.first_outside(0.0, 1.0, SNAP_TOL) {
        return Err(Error::DomainViolation {
            index,
            value: u[index],
        });
    }
    Ok(Field::new(u.iter().map(|x| x.clamp(0.0, 1.0)).collect()))
}

fn diffuse_unit(u: &[f64], s: &Spectrum, tau: f64) -> Result<Field> {
    let mut d = s.diffuse(u, tau)?;
    for x in d.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }
    Ok(d)
}

/// Mass used by the closed forms: exact for the trivial states `0` and `1`.
fn effective_mass(u: &[f64], s: &Spectrum, levels: &ThresholdLevels) -> f64 {
    if u.iter().all(|&x| x == 0.0) {
        0.0
    } else if u.iter().all(|&x| x == 1.0) {
        levels.total_weight()
    } else {
        s.mass(u)
    }
}

/// One mass-conserving semi-discrete step for `0 <= lambda < 1`.
pub fn sd_step(u_n: &[f64], g: &Graph, s: &Spectrum, p: &SchemeParams) -> Result<StepResult> {
    g.check_dim(u_n)?;
    if p.lambda() >= 1.0 {
        return Err(Error::LambdaIsOne);
    }
    let u_n = check_unit_domain(u_n)?;
    let diffused = diffuse_unit(&u_n, s, p.tau())?;
    let levels = ThresholdLevels::from_weights(&diffused, s.vertex_weights(), p.group_tol());
    let mass_in = s.mass(&u_n);
    let sol = solve_nu(&levels, effective_mass(&u_n, s, &levels), p.lambda())?;
    let u_next = Field::new(
        levels
            .membership()
            .iter()
            .map(|&l| sol.level_values[l])
            .collect(),
    );
    let multiplier = Multiplier::Nu {
        nu: sol.nu,
        lo: sol.interval.0,
        hi: sol.interval.1,
    };
    finish_step(u_n, u_next, multiplier, diffused, mass_in, p, s)
}

fn finish_step(
    u_n: Field,
    u_next: Field,
    multiplier: Multiplier,
    diffused: Field,
    mass_in: f64,
    p: &SchemeParams,
    s: &Spectrum,
) -> Result<StepResult> {
    let beta = beta_from_diffused(&diffused, &u_next, &multiplier, p)?;
    let residual = residual_from_diffused(&diffused, &u_next, &beta, p.lambda(), s);
    let mass_out = s.mass(&u_next);
    let _ = u_n;
    Ok(StepResult {
        u_next,
        multiplier,
        beta,
        residual,
        mass_in,
        mass_out,
        diffused,
    })
}

struct ThresholdChoice {
    level: usize,
    theta: f64,
    /// Whether `M` equals the cumulative weight from level `k` upward.
    saturated: bool,
}

fn choose_threshold(levels: &ThresholdLevels, mass: f64) -> ThresholdChoice {
    let tol = 64.0 * f64::EPSILON * levels.total_weight();
    let mut above = 0.0;
    for l in (0..levels.len()).rev() {
        let a = levels.weights()[l];
        if above + a >= mass - tol || l == 0 {
            let theta = ((mass - above) / a).clamp(0.0, 1.0);
            let saturated = (above + a - mass).abs() <= tol;
            let theta = if saturated { 1.0 } else { snap_unit(theta) };
            return ThresholdChoice {
                level: l,
                theta,
                saturated,
            };
        }
        above += a;
    }
    unreachable!("levels are never empty")
}

/// One mass-conserving MBO step (`lambda = 1`), returning the uniform split
/// on the threshold level set.
pub fn mbo_step(u_n: &[f64], g: &Graph, s: &Spectrum, tau: f64) -> Result<StepResult> {
    g.check_dim(u_n)?;
    let p = SchemeParams::mbo(tau)?;
    let u_n = check_unit_domain(u_n)?;
    let diffused = diffuse_unit(&u_n, s, tau)?;
    let levels = ThresholdLevels::from_weights(&diffused, s.vertex_weights(), p.group_tol());
    let mass_in = s.mass(&u_n);
    let mass = effective_mass(&u_n, s, &levels);

    let (level, theta) = if mass <= 0.0 {
        (0, 0.0)
    } else {
        let c = choose_threshold(&levels, mass);
        (c.level, c.theta)
    };
    let u_next = Field::new(
        levels
            .membership()
            .iter()
            .map(|&l| match l.cmp(&level) {
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => theta,
                std::cmp::Ordering::Greater => 1.0,
            })
            .collect(),
    );
    let multiplier = Multiplier::Threshold {
        level,
        alpha: levels.levels()[level],
        theta,
    };
    finish_step(u_n, u_next, multiplier, diffused, mass_in, &p, s)
}

/// Whether the MBO update of `u_n` is unique: the threshold level is
/// filled completely or consists of a single vertex.
pub fn mbo_is_unique(u_n: &[f64], g: &Graph, s: &Spectrum, tau: f64) -> Result<bool> {
    g.check_dim(u_n)?;
    let p = SchemeParams::mbo(tau)?;
    let u_n = check_unit_domain(u_n)?;
    let diffused = diffuse_unit(&u_n, s, tau)?;
    let levels = ThresholdLevels::from_weights(&diffused, s.vertex_weights(), p.group_tol());
    let mass = effective_mass(&u_n, s, &levels);
    if mass <= 0.0 {
        return Ok(true);
    }
    let c = choose_threshold(&levels, mass);
    Ok(c.saturated || levels.level_size(c.level) == 1)
}

/// Recovers `beta_{n+1}` from a step's fields and multiplier.
pub fn recover_beta(
    u_n: &[f64],
    u_next: &[f64],
    multiplier: &Multiplier,
    p: &SchemeParams,
    s: &Spectrum,
) -> Result<Field> {
    s.check_dim(u_n)?;
    s.check_dim(u_next)?;
    let diffused = diffuse_unit(&check_unit_domain(u_n)?, s, p.tau())?;
    beta_from_diffused(&diffused, u_next, multiplier, p)
}

fn beta_from_diffused(
    diffused: &[f64],
    u_next: &[f64],
    multiplier: &Multiplier,
    p: &SchemeParams,
) -> Result<Field> {
    let lambda = p.lambda();
    // Candidate values of lambda * beta; sign checked against B(u_next).
    let scaled: Vec<f64> = match (*multiplier, p.is_mbo()) {
        (Multiplier::Threshold { alpha, .. }, true) => diffused.iter().map(|d| alpha - d).collect(),
        (Multiplier::Nu { nu, .. }, false) => {
            if lambda == 0.0 {
                return Ok(Field::zeros(u_next.len()));
            }
            u_next
                .iter()
                .zip(diffused)
                .map(|(&u, &d)| {
                    if u == 0.0 {
                        nu - d
                    } else if u == 1.0 {
                        nu - d + 1.0 - lambda
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        _ => {
            return Err(Error::InconsistentInputs(
                "multiplier kind does not match lambda".into(),
            ))
        }
    };
    let mut beta = Vec::with_capacity(u_next.len());
    for (i, (&u, &lb)) in u_next.iter().zip(&scaled).enumerate() {
        let repaired = if u == 0.0 {
            lb.max(0.0)
        } else if u == 1.0 {
            lb.min(0.0)
        } else {
            0.0
        };
        if (repaired - lb).abs() > BETA_SIGN_TOL {
            return Err(Error::InconsistentInputs(format!(
                "beta at vertex {i} has the wrong sign for u = {u}"
            )));
        }
        beta.push(repaired / lambda);
    }
    Ok(Field::new(beta))
}

/// Sup-norm residual of
/// `u' - e u - lambda u' + lambda avg(u') 1 - lambda beta + lambda avg(beta) 1`.
pub fn sd_residual(
    u_n: &[f64],
    u_next: &[f64],
    beta: &[f64],
    p: &SchemeParams,
    s: &Spectrum,
) -> Result<f64> {
    s.check_dim(u_n)?;
    s.check_dim(u_next)?;
    s.check_dim(beta)?;
    let diffused = s.diffuse(u_n, p.tau())?;
    Ok(residual_from_diffused(
        &diffused,
        u_next,
        beta,
        p.lambda(),
        s,
    ))
}

fn residual_from_diffused(
    diffused: &[f64],
    u_next: &[f64],
    beta: &[f64],
    lambda: f64,
    s: &Spectrum,
) -> f64 {
    let u_bar = s.average(u_next);
    let beta_bar = s.average(beta);
    u_next
        .iter()
        .zip(diffused)
        .zip(beta)
        .map(|((&u, &d), &b)| {
            ((1.0 - lambda) * u - d + lambda * u_bar - lambda * b + lambda * beta_bar).abs()
        })
        .fold(0.0, f64::max)
}

/// `H(u)` and its scaling `H_tau(u) = H(u) / (2 tau)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovValue {
    pub h: f64,
    pub h_tau: f64,
}

/// `H(u) = lambda <u, 1 - u> + <u, (I - exp(-tau Lap)) u>`.
pub fn lyapunov_h(u: &[f64], p: &SchemeParams, s: &Spectrum) -> Result<LyapunovValue> {
    s.check_dim(u)?;
    let u = check_unit_domain(u)?;
    let diffused = s.diffuse(&u, p.tau())?;
    let potential: f64 = s
        .vertex_weights()
        .iter()
        .zip(u.iter())
        .map(|(w, x)| w * x * (1.0 - x))
        .sum();
    let smoothing: f64 = s
        .vertex_weights()
        .iter()
        .zip(u.iter().zip(diffused.iter()))
        .map(|(w, (x, d))| w * x * (x - d))
        .sum();
    let h = p.lambda() * potential + smoothing;
    Ok(LyapunovValue {
        h,
        h_tau: h / (2.0 * p.tau()),
    })
}

/// Graph Ginzburg-Landau energy with the double-obstacle potential;
/// `+inf` outside `[0,1]^V`.
pub fn ginzburg_landau(u: &[f64], g: &Graph, epsilon: f64) -> Result<f64> {
    g.check_dim(u)?;
    if u.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Ok(f64::INFINITY);
    }
    let potential: f64 = g
        .vertex_weights()
        .iter()
        .zip(u)
        .map(|(w, x)| 0.5 * w * x * (1.0 - x))
        .sum();
    Ok(g.dirichlet_energy(u)? + potential / epsilon)
}

/// Gradient of `H` restricted to the mass hyperplane, for strictly interior
/// states: `2 (u - e u) - 2 lambda u + 2 lambda avg(u) 1`.
pub fn lyapunov_gradient(u: &[f64], p: &SchemeParams, s: &Spectrum) -> Result<Field> {
    s.check_dim(u)?;
    if let Some(i) = u.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::BoundaryState(i));
    }
    let lambda = p.lambda();
    let diffused = s.diffuse(u, p.tau())?;
    let u_bar = s.average(u);
    Ok(Field::new(
        u.iter()
            .zip(diffused.iter())
            .map(|(&x, &d)| 2.0 * (x - d) - 2.0 * lambda * x + 2.0 * lambda * u_bar)
            .collect(),
    ))
}

/// Dual variables and objective values certifying a `lambda < 1` step.
#[derive(Clone, Debug, PartialEq)]
pub struct DualCertificate {
    pub xi: Field,
    pub mu: Field,
    pub nu: f64,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// `u*(xi, mu, nu)`, the Lagrangian minimiser.
    pub u_star: Field,
}

impl DualCertificate {
    /// `max_i max(|xi_i u_i|, |mu_i (1 - u_i)|)`.
    pub fn slackness_violation(&self, u: &[f64]) -> f64 {
        self.xi
            .iter()
            .zip(self.mu.iter())
            .zip(u)
            .map(|((x, m), u)| (x * u).abs().max((m * (1.0 - u)).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn dual_certificate(
    u_n: &[f64],
    step: &StepResult,
    p: &SchemeParams,
    g: &Graph,
    s: &Spectrum,
) -> Result<DualCertificate> {
    g.check_dim(u_n)?;
    if p.lambda() >= 1.0 {
        return Err(Error::LambdaIsOne);
    }
    let Multiplier::Nu { nu, .. } = step.multiplier else {
        return Err(Error::InconsistentInputs(
            "dual certificate needs a nu multiplier".into(),
        ));
    };
    let gap_factor = 1.0 - p.lambda();
    let d = &step.diffused;
    let u = &step.u_next;
    let xi: Vec<f64> = u
        .iter()
        .zip(d.iter())
        .map(|(&ui, &di)| {
            if ui == 0.0 {
                (2.0 * nu - 2.0 * di).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let mu: Vec<f64> = u
        .iter()
        .zip(d.iter())
        .map(|(&ui, &di)| {
            if ui == 1.0 {
                (2.0 * di - 2.0 * gap_factor - 2.0 * nu).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let u_star: Vec<f64> = (0..u.len())
        .map(|i| (2.0 * d[i] + xi[i] - mu[i] - 2.0 * nu) / (2.0 * gap_factor))
        .collect();
    let mass = s.mass(u_n);
    let primal = gap_factor * s.inner_product(u, u) - 2.0 * s.inner_product(u, d);
    let dual = -(gap_factor * s.inner_product(&u_star, &u_star) + s.mass(&mu) + 2.0 * nu * mass);
    Ok(DualCertificate {
        xi: Field::new(xi),
        mu: Field::new(mu),
        nu,
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        u_star: Field::new(u_star),
    })
}
