//! Gym-style Python wrapper around the running environment.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use musclerun_core::dynamics::CompiledModel;
use musclerun_core::environment::{
    Environment, EpisodeConfig, ACTION_SIZE, DEFAULT_LAMBDA, DEFAULT_MAX_OBSTACLES, OBSERVATION_LABELS,
    OBSERVATION_SIZE,
};
use musclerun_core::model::load_model_file;
use musclerun_core::Error;

fn to_py(e: Error) -> PyErr {
    let text = format!("{}: {e}", e.code());
    match e {
        Error::InvalidArgument(_) | Error::Schema { .. } | Error::Parse(_) => PyValueError::new_err(text),
        _ => PyRuntimeError::new_err(text),
    }
}

/// One environment session: `reset(difficulty, seed)` then `step(action)`.
#[pyclass(module = "musclerun", name = "RunEnv")]
struct RunEnv {
    env: Environment,
}

#[pymethods]
impl RunEnv {
    #[new]
    #[pyo3(signature = (model_path=None, penalty=DEFAULT_LAMBDA))]
    fn new(model_path: Option<String>, penalty: f64) -> PyResult<Self> {
        let model = match model_path {
            Some(p) => Arc::new(CompiledModel::new(load_model_file(p.as_ref()).map_err(to_py)?).map_err(to_py)?),
            None => CompiledModel::default_runner(),
        };
        Ok(Self { env: Environment::new(model).map_err(to_py)?.with_lambda(penalty) })
    }

    #[getter]
    fn observation_size(&self) -> usize {
        OBSERVATION_SIZE
    }

    #[getter]
    fn action_size(&self) -> usize {
        ACTION_SIZE
    }

    #[getter]
    fn observation_labels(&self) -> Vec<&'static str> {
        OBSERVATION_LABELS.to_vec()
    }

    /// Action bounds as `(low, high)`.
    #[getter]
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; ACTION_SIZE], vec![1.0; ACTION_SIZE])
    }

    /// Current episode config as a dict, or None before the first reset.
    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(c) = self.env.config() else { return Ok(None) };
        let d = PyDict::new(py);
        d.set_item("seed", c.seed)?;
        d.set_item("difficulty", c.difficulty)?;
        d.set_item("max_obstacles", c.max_obstacles)?;
        Ok(Some(d))
    }

    #[pyo3(signature = (difficulty=0, seed=None, max_obstacles=DEFAULT_MAX_OBSTACLES))]
    fn reset(&mut self, difficulty: u8, seed: Option<u64>, max_obstacles: usize) -> PyResult<Vec<f64>> {
        let cfg = match seed {
            Some(s) => EpisodeConfig::new(s, difficulty, max_obstacles),
            None => EpisodeConfig::with_random_seed(difficulty, max_obstacles),
        }
        .map_err(to_py)?;
        Ok(self.env.reset(cfg).map_err(to_py)?.to_vec())
    }

    /// Returns `(observation, reward, done, info)`.
    fn step<'py>(&mut self, py: Python<'py>, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, Bound<'py, PyDict>)> {
        let out = self.env.step(&action).map_err(to_py)?;
        let info = PyDict::new(py);
        info.set_item("step", out.info.step)?;
        info.set_item("time", out.info.time)?;
        info.set_item("pelvis_x", out.info.pelvis_x)?;
        info.set_item("ligament_integral", out.info.ligament_integral)?;
        info.set_item("grf", out.info.grf.to_vec())?;
        info.set_item("termination", out.info.termination.map(|t| t.as_str()))?;
        Ok((out.observation.to_vec(), out.reward, out.done, info))
    }

    /// Final totals once the episode is over, else None.
    fn result<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(r) = self.env.result() else { return Ok(None) };
        let d = PyDict::new(py);
        d.set_item("final_x", r.final_x)?;
        d.set_item("ligament_integral", r.ligament_integral)?;
        d.set_item("reward", r.reward)?;
        d.set_item("steps_taken", r.steps_taken)?;
        d.set_item("termination", r.termination.as_str())?;
        Ok(Some(d))
    }

    /// Joint coordinates of the current state.
    fn state(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.env.state().map(|s| (s.q.clone(), s.qdot.clone()))
    }

    fn close(&mut self) {}
}

#[pymodule]
fn musclerun(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RunEnv>()?;
    m.add("OBSERVATION_SIZE", OBSERVATION_SIZE)?;
    m.add("ACTION_SIZE", ACTION_SIZE)?;
    Ok(())
}
