//! Command-line driver. Exit codes: 0 success, 1 invalid input, 2 numerical
//! failure; failures also print one JSON object on standard error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::{Field, Graph, Spectrum};
use crate::io;
use crate::multiclass::{SimplexField, DEFAULT_FP_TOL, DEFAULT_MAX_ITER};
use crate::oracles::{default_step_size, mbo_oracle, variational_oracle, DEFAULT_ORACLE_ITERS};
use crate::par::parallel_map;
use crate::random;
use crate::scheme::{dual_certificate, mbo_is_unique, mbo_step, sd_step, SchemeParams};
use crate::trajectory::{
    converge_tau, default_fixed_point_tol, default_sweep_lambdas, run_multiclass, run_trajectory,
    stabilization_threshold, sweep_lambda, SWEEP_MATCH_TOL,
};

#[derive(Parser, Debug)]
#[command(
    name = "graph-phase",
    version,
    about = "Mass-conserving phase dynamics on weighted graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Iterate a scheme and write log.csv, final_state.txt and report.json.
    Run(RunArgs),
    /// One semi-discrete step per lambda, compared with the MBO step.
    SweepLambda(SweepArgs),
    /// Self-convergence and energy diagnostics under step refinement.
    ConvergeTau(ConvergeArgs),
    /// Check the closed-form steps against the oracles on random instances.
    OracleCheck(OracleArgs),
    /// Iterate a multi-class scheme.
    Multiclass(MulticlassArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Sd,
    Mbo,
    MulticlassSd,
    MulticlassMsd,
}

#[derive(Args, Debug)]
struct Input {
    /// Graph file (`vertices N r R` header, then `i j w` lines).
    #[arg(long)]
    graph: PathBuf,
    /// Initial field; a seeded random field is used when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct McOptions {
    /// Number of classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_FP_TOL)]
    fp_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    input: Input,
    /// Interface scale; defaults to tau in MBO mode.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Defaults to mbo when eps equals tau and sd otherwise.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Stop once a step changes no entry by more than this.
    #[arg(long)]
    fixed_point_tol: Option<f64>,
    /// Run all steps regardless of fixed points.
    #[arg(long)]
    no_stop: bool,
    #[arg(long, default_value_t = crate::scheme::DEFAULT_GROUP_TOL)]
    group_tol: f64,
    #[command(flatten)]
    mc: McOptions,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    tau: f64,
    /// Comma-separated lambda values; defaults to 1 - 2^-j for j = 1..=j-max.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 52)]
    j_max: u32,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    t_final: f64,
    /// Comma-separated, strictly decreasing step sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 5e-3, 2.5e-3, 1.25e-3])]
    taus: Vec<f64>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Optional directory for report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MulticlassArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Conserve every class mass.
    #[arg(long)]
    conserve_mass: bool,
    #[command(flatten)]
    mc: McOptions,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let line = json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{line}");
            code
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run(args),
        Command::SweepLambda(args) => sweep(args),
        Command::ConvergeTau(args) => converge(args),
        Command::OracleCheck(args) => oracle_check(args),
        Command::Multiclass(args) => multiclass(
            args.input,
            args.eps,
            args.tau,
            args.steps,
            args.conserve_mass,
            args.mc,
        ),
    }
}

fn load_two_class(input: &Input) -> Result<(Graph, Spectrum, Field)> {
    let g = io::parse_graph_file(&input.graph)?;
    let s = Spectrum::new(&g)?;
    let u0 = match &input.init {
        Some(path) => io::parse_field_file(path, &g)?,
        None => random::random_field(&mut random::seeded(input.seed), g.num_vertices()),
    };
    Ok((g, s, u0))
}

fn run(args: RunArgs) -> Result<()> {
    let mode = args.mode.unwrap_or(match args.eps {
        Some(eps) if eps == args.tau => Mode::Mbo,
        _ => Mode::Sd,
    });
    let p = match mode {
        Mode::Mbo => {
            if let Some(eps) = args.eps.filter(|&e| e != args.tau) {
                return Err(Error::InvalidParameters(format!(
                    "mbo mode needs eps equal to tau, got eps {eps} and tau {}",
                    args.tau
                )));
            }
            SchemeParams::mbo(args.tau)?
        }
        _ => {
            let eps = args
                .eps
                .ok_or_else(|| Error::InvalidParameters("--eps is required".into()))?;
            SchemeParams::new(eps, args.tau)?
        }
    };
    match mode {
        Mode::MulticlassSd | Mode::MulticlassMsd => {
            return multiclass(
                args.input,
                p.epsilon(),
                args.tau,
                args.steps,
                mode == Mode::MulticlassMsd,
                args.mc,
            )
        }
        Mode::Sd if p.is_mbo() => return Err(Error::LambdaIsOne),
        _ => {}
    }
    let p = p.with_group_tol(args.group_tol);
    let (g, s, u0) = load_two_class(&args.input)?;
    let tol = if args.no_stop {
        None
    } else {
        Some(args.fixed_point_tol.unwrap_or(default_fixed_point_tol(&p)))
    };
    let traj = run_trajectory(&u0, &g, &s, &p, args.steps, tol)?;

    let out = &args.input.out;
    io::write_text(out, "log.csv", &io::format_log_csv(&traj.log))?;
    io::write_text(
        out,
        "final_state.txt",
        &io::format_field(traj.final_state()),
    )?;
    let params = json!({
        "epsilon": finite_or_null(p.epsilon()),
        "tau": p.tau(),
        "lambda": p.lambda(),
        "steps": args.steps,
        "seed": args.input.seed,
        "group_tol": p.group_tol(),
        "fixed_point_tol": tol,
        "terminated": traj.terminated,
        "steps_taken": traj.num_steps(),
    });
    let mode_name = if p.is_mbo() { "mbo" } else { "sd" };
    io::write_text(
        out,
        "report.json",
        &io::format_report(mode_name, &params, &traj.log)?,
    )?;
    println!(
        "{mode_name}: {} steps, terminated by {:?}",
        traj.num_steps(),
        traj.terminated
    );
    Ok(())
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let (g, s, u0) = load_two_class(&args.input)?;
    let lambdas = args
        .lambdas
        .unwrap_or_else(|| default_sweep_lambdas(args.j_max));
    let rows = sweep_lambda(&u0, &g, &s, args.tau, &lambdas)?;
    let threshold = stabilization_threshold(&rows, SWEEP_MATCH_TOL);
    let params = json!({
        "tau": args.tau,
        "seed": args.input.seed,
        "match_tol": SWEEP_MATCH_TOL,
        "stabilization_lambda": threshold,
    });
    io::write_text(
        &args.input.out,
        "report.json",
        &io::format_report("sweep-lambda", &params, &rows)?,
    )?;
    match threshold {
        Some(l) => println!("sweep-lambda: MBO output reproduced for all swept lambda >= {l}"),
        None => println!("sweep-lambda: MBO output not reproduced at the largest lambda"),
    }
    Ok(())
}

#[derive(Serialize)]
struct PairRow {
    tau_coarse: f64,
    tau_fine: f64,
    max_distance: f64,
    distances: Vec<f64>,
}

fn converge(args: ConvergeArgs) -> Result<()> {
    let (g, s, u0) = load_two_class(&args.input)?;
    let report = converge_tau(&u0, &g, &s, args.eps, args.t_final, &args.taus)?;
    let rows: Vec<PairRow> = report
        .distances
        .iter()
        .enumerate()
        .map(|(i, d)| PairRow {
            tau_coarse: report.taus[i],
            tau_fine: report.taus[i + 1],
            max_distance: report.max_distances[i],
            distances: d.clone(),
        })
        .collect();
    let params = json!({
        "epsilon": args.eps,
        "t_final": args.t_final,
        "taus": report.taus,
        "times": report.times,
        "seed": args.input.seed,
        "ratios": report.ratios,
        "gl_step_min_slack": report.gl_step_min_slack,
        "gl_max_increase": report.gl_max_increase,
        "lipschitz_max_quotient": report.lipschitz_max_quotient,
        "lipschitz_bound": report.lipschitz_bound,
        "holder_max_excess": report.holder_max_excess,
    });
    io::write_text(
        &args.input.out,
        "report.json",
        &io::format_report("converge-tau", &params, &rows)?,
    )?;
    println!(
        "converge-tau: successive distance ratios {:?}",
        report.ratios
    );
    Ok(())
}

#[derive(Serialize)]
struct OracleRow {
    instance: usize,
    num_vertices: usize,
    lambda: f64,
    sd_oracle_distance: f64,
    duality_gap: f64,
    gap_allowance: f64,
    mbo_objective_error: f64,
    mbo_unique: bool,
    mbo_argmax_matches: bool,
    passed: bool,
}

fn oracle_instance(seed: u64, instance: usize) -> Result<OracleRow> {
    let mut rng = random::seeded(seed);
    let r = [0.0, 0.5, 1.0][rng.random_range(0..3)];
    let tau = rng.random_range(0.05..1.0);

    let n = rng.random_range(2..=6);
    let g = random::random_connected_graph(&mut rng, n, 0.5, r)?;
    let s = Spectrum::new(&g)?;
    let lambda = rng.random_range(1..=9) as f64 / 10.0;
    let p = SchemeParams::with_lambda(tau, lambda)?;
    let u = random::random_field(&mut rng, n);
    let step = sd_step(&u, &g, &s, &p)?;
    let oracle = variational_oracle(
        &u,
        &g,
        &s,
        &p,
        DEFAULT_ORACLE_ITERS,
        default_step_size(lambda),
    )?;
    let sd_oracle_distance = step.u_next.sup_distance(&oracle);
    let cert = dual_certificate(&u, &step, &p, &g, &s)?;
    let gap_allowance = 1e-8 * (1.0 + cert.primal_value.abs());

    let m = rng.random_range(2..=8);
    let h = random::random_connected_graph(&mut rng, m, 0.5, r)?;
    let t = Spectrum::new(&h)?;
    let v = random::random_field(&mut rng, m);
    let mbo = mbo_step(&v, &h, &t, tau)?;
    let best = mbo_oracle(&v, &h, &t, tau)?;
    let objective = t.inner_product(&mbo.u_next, &mbo.diffused);
    let mbo_objective_error = (objective - best.max_value).abs();
    let mbo_unique = mbo_is_unique(&v, &h, &t, tau)?;
    let mbo_argmax_matches = !mbo_unique
        || (best.argmax.len() == 1 && best.argmax[0].values.sup_distance(&mbo.u_next) <= 1e-12);

    let passed = sd_oracle_distance <= 1e-6
        && cert.gap.abs() <= gap_allowance
        && mbo_objective_error <= 1e-10
        && mbo_argmax_matches;
    Ok(OracleRow {
        instance,
        num_vertices: n,
        lambda,
        sd_oracle_distance,
        duality_gap: cert.gap,
        gap_allowance,
        mbo_objective_error,
        mbo_unique,
        mbo_argmax_matches,
        passed,
    })
}

fn oracle_check(args: OracleArgs) -> Result<()> {
    let mut rng = random::seeded(args.seed);
    let seeds: Vec<(usize, u64)> = (0..args.instances).map(|i| (i, rng.random())).collect();
    let rows = parallel_map(&seeds, |&(i, seed)| oracle_instance(seed, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let passed = rows.iter().filter(|r| r.passed).count();
    if let Some(out) = &args.out {
        let params = json!({ "seed": args.seed, "instances": args.instances });
        io::write_text(
            out,
            "report.json",
            &io::format_report("oracle-check", &params, &rows)?,
        )?;
    }
    println!("oracle-check: {passed}/{} instances passed", rows.len());
    if passed == rows.len() {
        Ok(())
    } else {
        Err(Error::NoConvergence {
            iterations: rows.len(),
            last_value: (rows.len() - passed) as f64,
        })
    }
}

fn multiclass(
    input: Input,
    eps: f64,
    tau: f64,
    steps: usize,
    conserve_mass: bool,
    mc: McOptions,
) -> Result<()> {
    let k = mc
        .classes
        .ok_or_else(|| Error::InvalidParameters("--classes is required".into()))?;
    let p = SchemeParams::new(eps, tau)?;
    let g = io::parse_graph_file(&input.graph)?;
    let s = Spectrum::new(&g)?;
    let u0 = match &input.init {
        Some(path) => io::parse_simplex_file(path, &g, k)?,
        None => random::random_simplex_field(&mut random::seeded(input.seed), g.num_vertices(), k)?,
    };
    let traj = run_multiclass(
        &u0,
        &g,
        &s,
        &p,
        steps,
        conserve_mass,
        mc.max_iter,
        mc.fp_tol,
    )?;
    write_multiclass(&input.out, &traj.log, traj.final_state())?;
    let mode = if conserve_mass {
        "multiclass-msd"
    } else {
        "multiclass-sd"
    };
    let params = json!({
        "epsilon": eps,
        "tau": tau,
        "lambda": p.lambda(),
        "classes": k,
        "steps": steps,
        "seed": input.seed,
        "fp_tol": mc.fp_tol,
        "max_iter": mc.max_iter,
    });
    io::write_text(
        &input.out,
        "report.json",
        &io::format_report(mode, &params, &traj.log)?,
    )?;
    if let Some(bad) = traj.log.iter().find(|e| !e.converged) {
        return Err(Error::NoConvergence {
            iterations: bad.iterations,
            last_value: bad.residual,
        });
    }
    println!("{mode}: {steps} steps");
    Ok(())
}

fn write_multiclass(
    out: &Path,
    log: &[crate::trajectory::McLogEntry],
    last: &SimplexField,
) -> Result<()> {
    io::write_text(out, "log.csv", &io::format_multiclass_log_csv(log))?;
    io::write_text(out, "final_state.txt", &io::format_simplex(last))
}
