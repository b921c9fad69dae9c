use graph_phase::multiclass::{self, SimplexField, DEFAULT_FP_TOL, DEFAULT_MAX_ITER};
use graph_phase::oracles;
use graph_phase::trajectory::{self, Termination};
use graph_phase::{Edge, Error, Graph, Multiplier, SchemeParams, Spectrum, StepResult};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    if e.exit_code() == 2 {
        PyRuntimeError::new_err(msg)
    } else {
        PyValueError::new_err(msg)
    }
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn simplex(values: Vec<Vec<f64>>) -> PyResult<SimplexField> {
    let n = values.len();
    let k = values.first().map_or(0, Vec::len);
    if values.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let m = nalgebra::DMatrix::from_row_iterator(n, k, values.into_iter().flatten());
    SimplexField::new(m).map_err(to_py)
}

/// Weighted undirected graph together with its diffusion spectrum.
#[pyclass(name = "Graph", module = "graph_phase", frozen)]
struct PyGraph {
    graph: Graph,
    spectrum: Spectrum,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (num_vertices, edges, r = 0.0))]
    fn new(num_vertices: usize, edges: Vec<(usize, usize, f64)>, r: f64) -> PyResult<Self> {
        let edges: Vec<Edge> = edges
            .into_iter()
            .map(|(i, j, w)| Edge::new(i, j, w))
            .collect();
        let graph = Graph::new(num_vertices, &edges, r).map_err(to_py)?;
        let spectrum = Spectrum::new(&graph).map_err(to_py)?;
        Ok(Self { graph, spectrum })
    }

    /// Reads the text graph format.
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let graph = graph_phase::io::parse_graph_file(path).map_err(to_py)?;
        let spectrum = Spectrum::new(&graph).map_err(to_py)?;
        Ok(Self { graph, spectrum })
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.graph.num_vertices()
    }

    #[getter]
    fn r(&self) -> f64 {
        self.graph.r()
    }

    #[getter]
    fn degrees(&self) -> Vec<f64> {
        self.graph.degrees().to_vec()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.spectrum.eigenvalues().to_vec()
    }

    fn mass(&self, u: Vec<f64>) -> PyResult<f64> {
        self.graph.mass(&u).map_err(to_py)
    }

    fn inner_product(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        self.graph.inner_product(&u, &v).map_err(to_py)
    }

    fn laplacian(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.graph.laplacian_apply(&u).map_err(to_py)?.into_vec())
    }

    fn diffuse(&self, u: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        self.graph.check_dim(&u).map_err(to_py)?;
        Ok(self.spectrum.diffuse(&u, t).map_err(to_py)?.into_vec())
    }

    fn ginzburg_landau(&self, u: Vec<f64>, epsilon: f64) -> PyResult<f64> {
        graph_phase::ginzburg_landau(&u, &self.graph, epsilon).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(num_vertices={}, edges={}, r={})",
            self.graph.num_vertices(),
            self.graph.edges().len(),
            self.graph.r()
        )
    }
}

fn params(epsilon: Option<f64>, tau: f64, lambda: Option<f64>) -> PyResult<SchemeParams> {
    match (epsilon, lambda) {
        (Some(eps), None) => SchemeParams::new(eps, tau),
        (None, Some(l)) => SchemeParams::with_lambda(tau, l),
        _ => {
            return Err(PyValueError::new_err(
                "pass exactly one of epsilon and lambda_",
            ))
        }
    }
    .map_err(to_py)
}

fn step_dict<'py>(py: Python<'py>, step: StepResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("u_next", step.u_next.into_vec())?;
    d.set_item("beta", step.beta.into_vec())?;
    d.set_item("residual", step.residual)?;
    d.set_item("mass_in", step.mass_in)?;
    d.set_item("mass_out", step.mass_out)?;
    d.set_item("diffused", step.diffused.into_vec())?;
    match step.multiplier {
        Multiplier::Nu { nu, lo, hi } => {
            d.set_item("nu", nu)?;
            d.set_item("nu_interval", (lo, hi))?;
        }
        Multiplier::Threshold {
            level,
            alpha,
            theta,
        } => {
            d.set_item("level", level)?;
            d.set_item("alpha", alpha)?;
            d.set_item("theta", theta)?;
        }
    }
    Ok(d)
}

/// One mass-conserving semi-discrete step.
#[pyfunction]
#[pyo3(signature = (g, u, tau, epsilon = None, lambda_ = None))]
fn sd_step<'py>(
    py: Python<'py>,
    g: &PyGraph,
    u: Vec<f64>,
    tau: f64,
    epsilon: Option<f64>,
    lambda_: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = params(epsilon, tau, lambda_)?;
    let step = graph_phase::sd_step(&u, &g.graph, &g.spectrum, &p).map_err(to_py)?;
    step_dict(py, step)
}

/// One mass-conserving MBO step.
#[pyfunction]
fn mbo_step<'py>(
    py: Python<'py>,
    g: &PyGraph,
    u: Vec<f64>,
    tau: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let step = graph_phase::mbo_step(&u, &g.graph, &g.spectrum, tau).map_err(to_py)?;
    step_dict(py, step)
}

#[pyfunction]
fn mbo_is_unique(g: &PyGraph, u: Vec<f64>, tau: f64) -> PyResult<bool> {
    graph_phase::mbo_is_unique(&u, &g.graph, &g.spectrum, tau).map_err(to_py)
}

/// Iterates a scheme; `lambda_ = 1` selects MBO.
#[pyfunction]
#[pyo3(signature = (g, u0, tau, steps, epsilon = None, lambda_ = None, fixed_point_tol = None, no_stop = false))]
#[allow(clippy::too_many_arguments)]
fn run_trajectory<'py>(
    py: Python<'py>,
    g: &PyGraph,
    u0: Vec<f64>,
    tau: f64,
    steps: usize,
    epsilon: Option<f64>,
    lambda_: Option<f64>,
    fixed_point_tol: Option<f64>,
    no_stop: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let p = if lambda_ == Some(1.0) && epsilon.is_none() {
        SchemeParams::mbo(tau).map_err(to_py)?
    } else {
        params(epsilon, tau, lambda_)?
    };
    let tol = if no_stop {
        None
    } else {
        Some(fixed_point_tol.unwrap_or_else(|| trajectory::default_fixed_point_tol(&p)))
    };
    let t =
        trajectory::run_trajectory(&u0, &g.graph, &g.spectrum, &p, steps, tol).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mass", t.log.iter().map(|e| e.mass).collect::<Vec<_>>())?;
    d.set_item("h", t.log.iter().map(|e| e.h).collect::<Vec<_>>())?;
    d.set_item("h_tau", t.log.iter().map(|e| e.h_tau).collect::<Vec<_>>())?;
    d.set_item("gl", t.log.iter().map(|e| e.gl).collect::<Vec<_>>())?;
    d.set_item(
        "max_change",
        t.log.iter().map(|e| e.max_change).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "multiplier",
        t.log.iter().map(|e| e.multiplier).collect::<Vec<_>>(),
    )?;
    d.set_item("final_state", t.final_state().to_vec())?;
    d.set_item("steps", t.num_steps())?;
    d.set_item(
        "terminated",
        match t.terminated {
            Termination::MaxSteps => "max_steps",
            Termination::FixedPoint => "fixed_point",
        },
    )?;
    Ok(d)
}

/// Extreme points of the feasible set with the given mass (small graphs only).
#[pyfunction]
fn extreme_points(g: &PyGraph, mass: f64) -> PyResult<Vec<Vec<f64>>> {
    let pts = oracles::enumerate_extreme_points(&g.graph, mass).map_err(to_py)?;
    Ok(pts.into_iter().map(|p| p.values.into_vec()).collect())
}

/// Best objective over extreme points and every maximiser.
#[pyfunction]
fn mbo_oracle(g: &PyGraph, u: Vec<f64>, tau: f64) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let o = oracles::mbo_oracle(&u, &g.graph, &g.spectrum, tau).map_err(to_py)?;
    Ok((
        o.max_value,
        o.argmax.into_iter().map(|p| p.values.into_vec()).collect(),
    ))
}

/// Projected-gradient solution of the step's variational problem.
#[pyfunction]
#[pyo3(signature = (g, u, tau, lambda_, iters = oracles::DEFAULT_ORACLE_ITERS))]
fn variational_oracle(
    g: &PyGraph,
    u: Vec<f64>,
    tau: f64,
    lambda_: f64,
    iters: usize,
) -> PyResult<Vec<f64>> {
    let p = SchemeParams::with_lambda(tau, lambda_).map_err(to_py)?;
    let step = oracles::default_step_size(lambda_);
    let out =
        oracles::variational_oracle(&u, &g.graph, &g.spectrum, &p, iters, step).map_err(to_py)?;
    Ok(out.into_vec())
}

/// One multi-class step; rows of `u` must lie on the simplex.
#[pyfunction]
#[pyo3(signature = (g, u, epsilon, tau, conserve_mass = false, max_iter = DEFAULT_MAX_ITER, fp_tol = DEFAULT_FP_TOL))]
#[allow(clippy::too_many_arguments)]
fn multiclass_step<'py>(
    py: Python<'py>,
    g: &PyGraph,
    u: Vec<Vec<f64>>,
    epsilon: f64,
    tau: f64,
    conserve_mass: bool,
    max_iter: usize,
    fp_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let u = simplex(u)?;
    let p = SchemeParams::new(epsilon, tau).map_err(to_py)?;
    let step = if conserve_mass {
        multiclass::mc_msd_step(&u, &g.graph, &g.spectrum, &p, max_iter, fp_tol)
    } else {
        multiclass::mc_sd_step(&u, &g.graph, &g.spectrum, &p, max_iter, fp_tol)
    }
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("u_next", rows(step.u_next.values()))?;
    d.set_item("beta_tilde", rows(&step.beta_tilde))?;
    d.set_item("residual", step.residual)?;
    d.set_item("iterations", step.iterations)?;
    d.set_item("converged", step.converged)?;
    d.set_item("class_masses_in", step.class_masses_in)?;
    d.set_item("class_masses_out", step.class_masses_out)?;
    Ok(d)
}

#[pyfunction]
fn project_rows_to_simplex(rows_in: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let n = rows_in.len();
    let k = rows_in.first().map_or(0, Vec::len);
    let m = nalgebra::DMatrix::from_row_iterator(n, k, rows_in.into_iter().flatten());
    Ok(rows(
        multiclass::project_rows_to_simplex(&m)
            .map_err(to_py)?
            .values(),
    ))
}

#[pymodule]
#[pyo3(name = "graph_phase")]
fn graph_phase_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(sd_step, m)?)?;
    m.add_function(wrap_pyfunction!(mbo_step, m)?)?;
    m.add_function(wrap_pyfunction!(mbo_is_unique, m)?)?;
    m.add_function(wrap_pyfunction!(run_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(extreme_points, m)?)?;
    m.add_function(wrap_pyfunction!(mbo_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(variational_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(multiclass_step, m)?)?;
    m.add_function(wrap_pyfunction!(project_rows_to_simplex, m)?)?;
    Ok(())
}
