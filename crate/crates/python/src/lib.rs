//! Python module `floodsim`.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use floodsim::forcing::SourceSpec;
use floodsim::grid::{FlowState, Manning, PhysicalParams, Terrain as CoreTerrain};
use floodsim::nesting::{NestedSolver as CoreNested, NestingConfig, WindowSpec};
use floodsim::scenario::{load_scenario, load_terrain, run_scenario};
use floodsim::series::Series;
use floodsim::stepper::{Solver as CoreSolver, SolverConfig};
use floodsim::validation::{run_case, CaseOptions, CASE_NAMES};
use floodsim::FloodError;

fn py_err(e: FloodError) -> PyErr {
    match e {
        FloodError::Numerical { .. } => PyArithmeticError::new_err(e.to_string()),
        FloodError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Bed elevation on a square-cell grid; row 0 is the southern edge.
#[pyclass(module = "floodsim", from_py_object)]
#[derive(Clone)]
pub struct Terrain {
    inner: CoreTerrain,
}

#[pymethods]
impl Terrain {
    #[new]
    #[pyo3(signature = (nx, ny, h, bed, origin = (0.0, 0.0)))]
    fn new(nx: usize, ny: usize, h: f64, bed: Vec<f64>, origin: (f64, f64)) -> PyResult<Self> {
        let inner = CoreTerrain::new(nx, ny, h, origin, bed).map_err(py_err)?;
        Ok(Terrain { inner })
    }

    /// Read an ESRI ASCII elevation raster.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Terrain {
            inner: load_terrain(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx()
    }

    #[getter]
    fn ny(&self) -> usize {
        self.inner.ny()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn bed(&self) -> Vec<f64> {
        self.inner.bed().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Terrain({} x {}, h={})", self.inner.nx(), self.inner.ny(), self.inner.h())
    }
}

fn params(manning: f64, inviscid: bool) -> PhysicalParams {
    if inviscid {
        PhysicalParams::inviscid(9.81)
    } else {
        PhysicalParams {
            manning: Manning::Uniform(manning),
            ..PhysicalParams::default()
        }
    }
}

fn config(workers: usize, skip: bool, block_size: usize, courant: f64) -> SolverConfig {
    let mut c = SolverConfig {
        workers,
        skip,
        block_size,
        ..SolverConfig::default()
    };
    c.control.courant = courant;
    c
}

/// Single-grid solver.
#[pyclass(module = "floodsim")]
pub struct Solver {
    inner: CoreSolver,
}

#[pymethods]
impl Solver {
    /// `depth` defaults to dry; `level` fills still water up to that
    /// free-surface elevation instead.
    #[new]
    #[pyo3(signature = (terrain, depth = None, level = None, manning = 0.03, inviscid = false,
                        workers = 0, skip = true, block_size = 16, courant = 0.5))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        terrain: &Terrain,
        depth: Option<Vec<f64>>,
        level: Option<f64>,
        manning: f64,
        inviscid: bool,
        workers: usize,
        skip: bool,
        block_size: usize,
        courant: f64,
    ) -> PyResult<Self> {
        let t = terrain.inner.clone();
        let state = match (depth, level) {
            (Some(_), Some(_)) => return Err(PyValueError::new_err("give either depth or level, not both")),
            (Some(d), None) => FlowState::from_depth(&t, d).map_err(py_err)?,
            (None, Some(l)) => FlowState::still_water(&t, l),
            (None, None) => FlowState::dry(&t),
        };
        let inner = CoreSolver::new(t, state, params(manning, inviscid), config(workers, skip, block_size, courant))
            .map_err(py_err)?;
        Ok(Solver { inner })
    }

    /// Add a constant discharge [m^3/s] spread over `cells`.
    fn add_discharge(&mut self, cells: Vec<(usize, usize)>, discharge: f64) -> PyResult<()> {
        let mut sources = self.inner.sources().to_vec();
        sources.push(SourceSpec::discharge(cells, Series::constant(discharge)));
        self.replace_sources(sources)
    }

    /// Add a hydrograph given as `(t, Q)` samples.
    fn add_hydrograph(&mut self, cells: Vec<(usize, usize)>, samples: Vec<(f64, f64)>) -> PyResult<()> {
        let mut sources = self.inner.sources().to_vec();
        sources.push(SourceSpec::discharge(cells, Series::new(samples).map_err(py_err)?));
        self.replace_sources(sources)
    }

    /// Advance one step; returns its length.
    fn step(&mut self) -> PyResult<f64> {
        Ok(self.inner.step().map_err(py_err)?.dt)
    }

    /// Advance to time `t`; returns the number of steps taken.
    fn advance_to(&mut self, t: f64) -> PyResult<usize> {
        Ok(self.inner.advance_to(t).map_err(py_err)?.len())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.steps()
    }

    #[getter]
    fn depth(&self) -> Vec<f64> {
        self.inner.state().depth.clone()
    }

    #[getter]
    fn momentum(&self) -> (Vec<f64>, Vec<f64>) {
        let s = self.inner.state();
        (s.mom_x.clone(), s.mom_y.clone())
    }

    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    /// Volume bookkeeping as a dict.
    fn ledger<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let l = self.inner.ledger();
        let d = PyDict::new(py);
        d.set_item("initial", l.initial)?;
        d.set_item("sources", l.sources)?;
        d.set_item("boundary", l.boundary)?;
        d.set_item("clamped", l.clamped)?;
        d.set_item("external", l.external)?;
        d.set_item("expected", l.expected())?;
        d.set_item("imbalance", l.relative_imbalance(self.inner.volume()))?;
        Ok(d)
    }
}

impl Solver {
    fn replace_sources(&mut self, sources: Vec<SourceSpec>) -> PyResult<()> {
        let s = &self.inner;
        if s.steps() > 0 {
            return Err(PyValueError::new_err("sources must be added before the first step"));
        }
        let fresh = CoreSolver::new(s.terrain().clone(), s.state().clone(), s.params().clone(), s.config().clone())
            .map_err(py_err)?;
        self.inner = fresh.with_sources(sources).map_err(py_err)?;
        Ok(())
    }
}

/// Coarse solver with refined windows.
#[pyclass(module = "floodsim")]
pub struct NestedSolver {
    inner: CoreNested,
}

#[pymethods]
impl NestedSolver {
    /// `windows` holds `(i0, j0, nx, ny, ratio)` tuples in coarse cells.
    /// The coarse solver is consumed.
    #[new]
    #[pyo3(signature = (coarse, windows, two_way = true))]
    fn new(coarse: &mut Solver, windows: Vec<(usize, usize, usize, usize, usize)>, two_way: bool) -> PyResult<Self> {
        let specs = windows
            .into_iter()
            .map(|(i0, j0, nx, ny, ratio)| WindowSpec {
                i0,
                j0,
                nx,
                ny,
                ratio,
                fine_bed: None,
            })
            .collect();
        let s = &coarse.inner;
        let solver = CoreSolver::new(s.terrain().clone(), s.state().clone(), s.params().clone(), s.config().clone())
            .map_err(py_err)?
            .with_sources(s.sources().to_vec())
            .map_err(py_err)?
            .with_wind(s.wind().clone());
        let inner = CoreNested::new(solver, specs, NestingConfig { two_way }).map_err(py_err)?;
        Ok(NestedSolver { inner })
    }

    /// One coarse step with the windows subcycled; returns the fine
    /// substep count of each window.
    fn step(&mut self) -> PyResult<Vec<usize>> {
        Ok(self.inner.coupled_step().map_err(py_err)?.substeps)
    }

    fn advance_to(&mut self, t: f64) -> PyResult<usize> {
        self.inner.advance_to(t).map_err(py_err)
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn coarse_depth(&self) -> Vec<f64> {
        self.inner.coarse().state().depth.clone()
    }

    /// Depth of window `index` including its ghost band.
    fn fine_depth(&self, index: usize) -> PyResult<Vec<f64>> {
        let g = self
            .inner
            .grids()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("no window {index}")))?;
        Ok(g.fine().state().depth.clone())
    }

    fn total_volume(&self) -> f64 {
        self.inner.total_volume()
    }
}

/// Run a TOML scenario; returns the summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (path, out = None))]
fn run(path: PathBuf, out: Option<PathBuf>) -> PyResult<String> {
    let cfg = load_scenario(&path).map_err(py_err)?;
    let summary = run_scenario(&cfg, out.as_deref()).map_err(py_err)?;
    serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Run a named validation case; returns `(passed, report text)`.
#[pyfunction]
#[pyo3(signature = (case, resolution = None, seed = 1, workers = 0))]
fn validate(case: &str, resolution: Option<usize>, seed: u64, workers: usize) -> PyResult<(bool, String)> {
    let opts = CaseOptions {
        resolution,
        seed,
        workers,
        steps: None,
    };
    let r = run_case(case, &opts).map_err(py_err)?;
    Ok((r.passed, r.to_text()))
}

#[pymodule]
#[pyo3(name = "floodsim")]
fn floodsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Terrain>()?;
    m.add_class::<Solver>()?;
    m.add_class::<NestedSolver>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add("CASES", CASE_NAMES.to_vec())?;
    Ok(())
}
