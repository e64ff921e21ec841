use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fsep::dataset_io::{generate_scenario, write_dataset, ScenarioKind, SyntheticScenario};
use fsep::extract::read_obj;
use fsep::plic::{attachment_corner, solve_offset, truncated_volume};
use fsep::runtime::{analyze, run_pipeline, PipelineConfig, RunReport, REPORT_FILE};
use fsep::{Error, Vec3};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        2 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &RunReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mode", &r.mode)?;
    d.set_item("particles", r.particles)?;
    d.set_item("alive", r.alive)?;
    d.set_item("initial_features", r.initial_features)?;
    d.set_item("final_features", r.final_features)?;
    d.set_item("max_eps", r.max_eps)?;
    d.set_item("mean_eps", r.mean_eps)?;
    d.set_item("corrected_fraction", r.corrected_fraction)?;
    d.set_item("boundary_meshes", r.boundary_meshes)?;
    d.set_item("separation_meshes", r.separation_meshes)?;
    let features: Vec<usize> = r.intervals.iter().map(|i| i.features).collect();
    d.set_item("features_per_interval", features)?;
    Ok(d)
}

/// Write a synthetic dataset into `out` and return the manifest path.
#[pyfunction]
fn generate(scenario: &str, cells: usize, steps: usize, out: PathBuf) -> PyResult<String> {
    let kind: ScenarioKind = scenario.parse().map_err(to_py)?;
    let ds = generate_scenario(&SyntheticScenario::preset(kind, cells, steps)).map_err(to_py)?;
    let manifest = write_dataset(&ds, &out).map_err(to_py)?;
    Ok(manifest.display().to_string())
}

/// Run the pipeline described by a config file; returns the report summary.
#[pyfunction]
fn run(py: Python<'_>, config: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let cfg = PipelineConfig::read(&config).map_err(to_py)?;
    let report = py.detach(|| run_pipeline(&cfg)).map_err(to_py)?;
    report_dict(py, &report)
}

/// Report summary of a finished run directory.
#[pyfunction]
fn load_report(py: Python<'_>, run_dir: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let report = RunReport::read(&run_dir.join(REPORT_FILE)).map_err(to_py)?;
    report_dict(py, &report)
}

/// Analyse a synthetic scenario in memory. Returns the contribution table
/// as `(initial, final, seed count, volume)` tuples.
#[pyfunction]
#[pyo3(signature = (scenario, cells, steps, refinement = 0))]
fn contribution_table(
    py: Python<'_>,
    scenario: &str,
    cells: usize,
    steps: usize,
    refinement: u32,
) -> PyResult<Vec<(i32, i32, usize, f64)>> {
    let kind: ScenarioKind = scenario.parse().map_err(to_py)?;
    let out = py
        .detach(|| {
            let ds = generate_scenario(&SyntheticScenario::preset(kind, cells, steps))?;
            let mut cfg = PipelineConfig::new("-", "-", 0, ds.len() - 1);
            cfg.advection.refinement = refinement;
            analyze(&ds, &cfg)
        })
        .map_err(to_py)?;
    Ok(out
        .table
        .rows
        .iter()
        .map(|r| (r.initial, r.target, r.count, r.volume))
        .collect())
}

/// Offset of the plane with unit `normal` that cuts `fraction` off the unit
/// cube, and the volume it actually cuts.
#[pyfunction]
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn plic_offset(normal: (f64, f64, f64), fraction: f64) -> PyResult<(f64, f64)> {
    let n = Vec3::new(normal.0, normal.1, normal.2);
    let norm = n.norm();
    if !(norm > 0.0) || !(0.0..=1.0).contains(&fraction) {
        return Err(PyValueError::new_err("need a non-zero normal and a fraction in [0, 1]"));
    }
    let n = n / norm;
    let (cmin, size) = (Vec3::zeros(), Vec3::repeat(1.0));
    let a = attachment_corner(&cmin, &size, &n);
    let l = solve_offset(&cmin, &size, &n, &a, fraction);
    Ok((l, truncated_volume(&cmin, &size, &n, &a, l)))
}

/// Vertices and 0-based triangles of an exported OBJ file.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn load_obj(path: PathBuf) -> PyResult<(Vec<(f64, f64, f64)>, Vec<(u32, u32, u32)>)> {
    let (v, t) = read_obj(&path).map_err(to_py)?;
    Ok((
        v.iter().map(|p| (p[0], p[1], p[2])).collect(),
        t.iter().map(|t| (t[0], t[1], t[2])).collect(),
    ))
}

#[pymodule]
fn fsep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(load_report, m)?)?;
    m.add_function(wrap_pyfunction!(contribution_table, m)?)?;
    m.add_function(wrap_pyfunction!(plic_offset, m)?)?;
    m.add_function(wrap_pyfunction!(load_obj, m)?)?;
    Ok(())
}
