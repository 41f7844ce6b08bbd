//! Python bindings: configs in, CSV/JSON strings out.

use mrm_core::dynamics::{flow, FlowConfig};
use mrm_core::games::game_from_id;
use mrm_core::io::{metadata_json, record_csv};
use mrm_core::{run, verify, ExperimentConfig, MirrorKind, MirrorMap};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Run a TOML experiment config. Returns `(csv, metadata_json)`.
#[pyfunction]
#[pyo3(signature = (toml, seed=None))]
fn run_config(toml: &str, seed: Option<u64>) -> PyResult<(String, String)> {
    let mut cfg = ExperimentConfig::from_toml(toml).map_err(value_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let spec = cfg.build().map_err(value_err)?;
    let rec = run(&spec).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((record_csv(&rec), metadata_json(&cfg, &rec)))
}

/// Mirror a dual point onto the action sets of `game`.
#[pyfunction]
fn mirror(kind: &str, game: &str, y: Vec<f64>) -> PyResult<Vec<f64>> {
    let g = game_from_id(game).map_err(value_err)?;
    let map = MirrorMap::for_game(MirrorKind::parse(kind).map_err(value_err)?, &g).map_err(value_err)?;
    map.mirror(&y).map_err(value_err)
}

/// Fenchel coupling F(p, y) for the map of `kind` on `game`.
#[pyfunction]
fn fenchel_coupling(kind: &str, game: &str, p: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    let g = game_from_id(game).map_err(value_err)?;
    let map = MirrorMap::for_game(MirrorKind::parse(kind).map_err(value_err)?, &g).map_err(value_err)?;
    map.fenchel_coupling(&p, &y).map_err(value_err)
}

/// Game field v(x).
#[pyfunction]
fn field(game: &str, x: Vec<f64>) -> PyResult<Vec<f64>> {
    let g = game_from_id(game).map_err(value_err)?;
    if x.len() != g.dim() {
        return Err(PyValueError::new_err(format!("x has {} entries, game needs {}", x.len(), g.dim())));
    }
    Ok(g.field(&x))
}

/// Integrate the mean dynamics. Returns `(t, x, y)` lists.
#[pyfunction]
#[pyo3(signature = (game, kind, y0, horizon, dt=1e-3, every=10))]
#[allow(clippy::type_complexity)]
fn dynamics(game: &str, kind: &str, y0: Vec<f64>, horizon: f64, dt: f64, every: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let g = game_from_id(game).map_err(value_err)?;
    let map = MirrorMap::for_game(MirrorKind::parse(kind).map_err(value_err)?, &g).map_err(value_err)?;
    if y0.len() != g.dim() {
        return Err(PyValueError::new_err(format!("y0 has {} entries, game needs {}", y0.len(), g.dim())));
    }
    let cfg = FlowConfig::new(horizon).with_dt(dt).storing_every(every.max(1));
    let f = flow(&map, &g, &y0, &cfg).map_err(value_err)?;
    Ok((f.t, f.x, f.y))
}

/// Run an acceptance suite ("all" or "c1".."c13"). Returns a JSON array.
#[pyfunction]
fn run_verify(py: Python<'_>, suite: &str) -> PyResult<String> {
    let suite = suite.to_string();
    let res = py.detach(move || verify::run_suite(&suite));
    let res = res.ok_or_else(|| PyValueError::new_err(format!("unknown suite; expected one of {:?}", verify::suite_names())))?;
    serde_json::to_string(&res).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn mrmpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(mirror, m)?)?;
    m.add_function(wrap_pyfunction!(fenchel_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(field, m)?)?;
    m.add_function(wrap_pyfunction!(dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}
