//! Python bindings: the simulator, controllers, reward arithmetic and a few
//! numerical kernels.

use std::cell::RefCell;
use std::path::Path;
use std::sync::Arc;

use greenhouse_core::config::RunConfig;
use greenhouse_core::env::{Backend, Dynamics, EnvModel, SimEnv, StartSource};
use greenhouse_core::eval::{pid_step, run_controller, shap_values_at, ControllerKind, PidConfig, PidMemory, ReportRow};
use greenhouse_core::mpc::{MpcConfig, MpcController};
use greenhouse_core::ppo::{compute_gae, ActorCritic, Checkpoint};
use greenhouse_core::reference::{ClimateProfile, ReferenceModel};
use greenhouse_core::reward::{RewardBreakdown, RewardConfig, RewardWeights};
use greenhouse_core::state::{Action, GreenhouseState, FEATURE_NAMES};
use greenhouse_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    if e.is_user_error() {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn profile(name: &str) -> PyResult<ClimateProfile> {
    ClimateProfile::preset(name).ok_or_else(|| PyValueError::new_err(format!("unknown climate profile `{name}`")))
}

fn load_model(path: &str) -> PyResult<Arc<dyn Dynamics>> {
    Ok(Arc::new(EnvModel::load(Path::new(path)).map_err(py_err)?))
}

fn action(level: u8) -> PyResult<Action> {
    Action::new(level).map_err(py_err)
}

fn breakdown_dict<'py>(py: Python<'py>, b: &RewardBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("temp", b.temp)?;
    d.set_item("vent", b.vent)?;
    d.set_item("action", b.action)?;
    d.set_item("change", b.change)?;
    d.set_item("total", b.total)?;
    Ok(d)
}

/// Snapshot of the greenhouse at one control step.
#[pyclass(frozen, skip_from_py_object, name = "State")]
#[derive(Clone)]
struct PyState(GreenhouseState);

#[pymethods]
impl PyState {
    #[getter]
    fn t_air(&self) -> f64 {
        self.0.t_air
    }
    #[getter]
    fn t_soil(&self) -> f64 {
        self.0.t_soil
    }
    #[getter]
    fn t_water(&self) -> f64 {
        self.0.t_water
    }
    #[getter]
    fn t_wall(&self) -> f64 {
        self.0.t_wall
    }
    #[getter]
    fn alpha_vent(&self) -> f64 {
        self.0.alpha_vent
    }
    #[getter]
    fn hour(&self) -> u32 {
        self.0.hour()
    }
    #[getter]
    fn step_of_day(&self) -> u16 {
        self.0.step_of_day
    }
    #[getter]
    fn date(&self) -> String {
        self.0.date.to_string()
    }

    /// The ten policy features in state order.
    fn features(&self) -> Vec<f64> {
        self.0.features().to_vec()
    }

    fn normalized_features(&self) -> Vec<f64> {
        self.0.normalized_features().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "State(date={}, step={}, t_air={:.2}, alpha_vent={})",
            self.0.date, self.0.step_of_day, self.0.t_air, self.0.alpha_vent
        )
    }
}

/// One-day simulator. With `model` set, a fitted model file drives the
/// dynamics; otherwise the reference thermal model does.
#[pyclass(name = "Environment")]
struct PyEnvironment {
    env: SimEnv,
}

#[pymethods]
impl PyEnvironment {
    #[new]
    #[pyo3(signature = (profile_name = "base", model = None))]
    fn new(profile_name: &str, model: Option<&str>) -> PyResult<Self> {
        let reference = ReferenceModel::new(profile(profile_name)?);
        let env = match model {
            None => SimEnv::reference(reference, RewardConfig::default()),
            Some(path) => SimEnv::new(
                Backend::Learned(load_model(path)?),
                StartSource::warmup(reference),
                RewardConfig::default(),
            ),
        };
        Ok(PyEnvironment { env })
    }

    fn reset(&mut self, seed: u64) -> PyState {
        PyState(self.env.reset(seed))
    }

    /// Applies opening level 0..=10; returns (state, reward, done).
    fn step(&mut self, level: u8) -> PyResult<(PyState, f64, bool)> {
        let out = self.env.step(action(level)?).map_err(py_err)?;
        Ok((PyState(out.state), out.reward.total, out.done))
    }

    #[getter]
    fn state(&self) -> PyState {
        PyState(self.env.state().clone())
    }

    /// Daily reward components of the finished day.
    fn score<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        breakdown_dict(py, &self.env.score().map_err(py_err)?)
    }
}

/// A PPO policy loaded from a training checkpoint.
#[pyclass(name = "Policy")]
struct PyPolicy(ActorCritic);

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPolicy(Checkpoint::load(Path::new(path)).map_err(py_err)?.policy))
    }

    /// Untrained policy with the given hidden sizes.
    #[staticmethod]
    #[pyo3(signature = (hidden = vec![64, 32], seed = 0))]
    fn random(hidden: Vec<usize>, seed: u64) -> Self {
        PyPolicy(ActorCritic::new(&hidden, seed))
    }

    fn act(&self, state: &PyState) -> PyResult<u8> {
        Ok(self.0.greedy(&state.0).map_err(py_err)?.level())
    }

    fn probs(&self, state: &PyState) -> PyResult<Vec<f64>> {
        Ok(self.0.probs(&self.0.observe(&state.0)).map_err(py_err)?.to_vec())
    }
}

/// Receding-horizon controller over a fitted model file.
#[pyclass(name = "Mpc")]
struct PyMpc(MpcController);

#[pymethods]
impl PyMpc {
    #[new]
    #[pyo3(signature = (model, horizon = 24, seed = 0))]
    fn new(model: &str, horizon: usize, seed: u64) -> PyResult<Self> {
        let config = MpcConfig {
            horizon,
            ..MpcConfig::default()
        };
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(py_err(Error::Config(errs)));
        }
        Ok(PyMpc(MpcController::new(load_model(model)?, config, seed)))
    }

    fn act(&mut self, state: &PyState) -> PyResult<u8> {
        Ok(self.0.act(&state.0).map_err(py_err)?.level())
    }

    fn reset(&mut self) {
        self.0.reset();
    }
}

/// Discrete PID on air temperature with default gains.
#[pyclass(name = "Pid")]
struct PyPid {
    config: PidConfig,
    memory: PidMemory,
}

#[pymethods]
impl PyPid {
    #[new]
    fn new() -> Self {
        PyPid {
            config: PidConfig::default(),
            memory: PidMemory::default(),
        }
    }

    fn act(&mut self, state: &PyState) -> u8 {
        let (a, m) = pid_step(&self.config, &state.0, self.memory);
        self.memory = m;
        a.level()
    }
}

/// Scores a named controller (pid, random, hold-N, mpc, or a checkpoint
/// path) on the reference environment; returns the report row.
#[pyfunction]
#[pyo3(signature = (controller, days = 5, seeds = vec![1, 2, 3], model = None, profile_name = "base"))]
fn evaluate<'py>(
    py: Python<'py>,
    controller: &str,
    days: usize,
    seeds: Vec<u64>,
    model: Option<&str>,
    profile_name: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match controller {
        "pid" => ControllerKind::Pid(PidConfig::default()),
        "random" => ControllerKind::Random,
        "mpc" => ControllerKind::Mpc {
            model: load_model(model.ok_or_else(|| PyValueError::new_err("mpc needs a model file"))?)?,
            config: MpcConfig::default(),
        },
        c if c.starts_with("hold-") => {
            let level = c[5..].parse().map_err(|_| PyValueError::new_err(format!("bad controller `{c}`")))?;
            ControllerKind::Hold(action(level)?)
        }
        path => ControllerKind::Policy(Checkpoint::load(Path::new(path)).map_err(py_err)?.policy),
    };
    let env = SimEnv::reference(ReferenceModel::new(profile(profile_name)?), RewardConfig::default());
    let run = py.detach(|| run_controller(&kind, &env, days, &seeds)).map_err(py_err)?;
    let row: &ReportRow = &run.row;
    let d = PyDict::new(py);
    d.set_item("method", &row.method)?;
    d.set_item("final", row.final_reward_mean)?;
    d.set_item("final_sd", row.final_reward_sd)?;
    d.set_item("temp", row.temp_reward_mean)?;
    d.set_item("vent", row.vent_reward_mean)?;
    d.set_item("action", row.action_reward_mean)?;
    d.set_item("change", row.change_reward_mean)?;
    Ok(d)
}

/// Daily total from the four component scores.
#[pyfunction]
fn weighted_total(temp: f64, action: f64, change: f64, vent: f64) -> f64 {
    RewardBreakdown::from_components(temp, action, change, vent, &RewardWeights::default()).total
}

/// Advantages and returns for a flat buffer; `dones[-1]` must be true.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, gamma = 0.99, lam = 0.95))]
fn gae(rewards: Vec<f64>, values: Vec<f64>, dones: Vec<bool>, gamma: f64, lam: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    compute_gae(&rewards, &values, &dones, gamma, lam).map_err(py_err)
}

/// Exact Shapley values of `f` at `x` against the baseline `base`.
#[pyfunction]
fn shap_values(f: Bound<'_, PyAny>, x: Vec<f64>, base: Vec<f64>) -> PyResult<Vec<f64>> {
    let failure: RefCell<Option<PyErr>> = RefCell::new(None);
    let call = |z: &[f64]| -> f64 {
        match f.call1((z.to_vec(),)).and_then(|v| v.extract::<f64>()) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let phi = shap_values_at(&call, &x, &base);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    phi.map_err(py_err)
}

/// Default run configuration as TOML text.
#[pyfunction]
fn default_config() -> PyResult<String> {
    RunConfig::default().to_toml().map_err(py_err)
}

#[pymodule]
fn greenhouse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyState>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyMpc>()?;
    m.add_class::<PyPid>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_total, m)?)?;
    m.add_function(wrap_pyfunction!(gae, m)?)?;
    m.add_function(wrap_pyfunction!(shap_values, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add("FEATURE_NAMES", FEATURE_NAMES.to_vec())?;
    m.add("STEPS_PER_DAY", greenhouse_core::state::STEPS_PER_DAY)?;
    Ok(())
}
