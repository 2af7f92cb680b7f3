//! Python bindings. Structured results come back as plain dicts and lists
//! (serialized through JSON); configs are accepted as dicts using the same
//! field names as the experiment config files.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use alignlab_core::advantage;
use alignlab_core::cpgd::{self, CpgdConfig};
use alignlab_core::deliberative::{self, ConstrainedConfig, LagrangianState, SearchWorld};
use alignlab_core::edit::{self, Granularity, OpWeights, SimplifyConfig, SimplifyHooks, Solution};
use alignlab_core::harness::{self, ExperimentConfig};
use alignlab_core::policy::{self, PolicyParams, Prompt, Response, SamplerConfig, Token};
use alignlab_core::pvm::{AdversarialConfig, AdversarialScenario};
use alignlab_core::seed;
use alignlab_core::tasks::{self, TaskSpec};
use alignlab_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Parses an optional dict into `T`, falling back to `T::default()`.
fn from_py<T: DeserializeOwned + Default>(
    py: Python<'_>,
    obj: Option<&Bound<'_, PyAny>>,
) -> PyResult<T> {
    match obj {
        None => Ok(T::default()),
        Some(o) => from_py_required(py, o),
    }
}

fn from_py_required<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn default_task() -> TaskSpec {
    TaskSpec::DualLength {
        gamma: 0.1,
        max_length: 16,
        continue_logit: 1.0,
    }
}

fn task_from_py(py: Python<'_>, task: Option<&Bound<'_, PyAny>>) -> PyResult<TaskSpec> {
    task.map_or(Ok(default_task()), |t| from_py_required(py, t))
}

fn prompt(context: Vec<Token>) -> PyResult<Prompt> {
    Prompt::new("py", context).map_err(err)
}

/// Tabular Markov softmax policy over the last `order` tokens.
#[pyclass(name = "Policy", module = "alignlab", skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: PolicyParams,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (order, vocab_size, logits=None))]
    fn new(order: usize, vocab_size: usize, logits: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match logits {
            Some(l) => PolicyParams::new(order, vocab_size, l),
            None => PolicyParams::zeros(order, vocab_size),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn logits(&self) -> Vec<f64> {
        self.inner.logits().to_vec()
    }

    /// Next-token probabilities after `context`.
    fn probs(&self, context: Vec<Token>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .probs(self.inner.initial_state(&context).map_err(err)?))
    }

    #[pyo3(signature = (context, tokens, terminated=false))]
    fn log_prob(&self, context: Vec<Token>, tokens: Vec<Token>, terminated: bool) -> PyResult<f64> {
        policy::log_prob(
            &self.inner,
            &prompt(context)?,
            &Response::new(tokens, terminated),
        )
        .map_err(err)
    }

    #[pyo3(signature = (context, tokens, terminated=false))]
    fn grad_log_prob(
        &self,
        context: Vec<Token>,
        tokens: Vec<Token>,
        terminated: bool,
    ) -> PyResult<Vec<f64>> {
        policy::grad_log_prob(
            &self.inner,
            &prompt(context)?,
            &Response::new(tokens, terminated),
        )
        .map_err(err)
    }

    /// Samples a response with untempered sampling; returns
    /// `(tokens, terminated)`.
    #[pyo3(signature = (context, max_length, eos=None, seed=0, index=0))]
    fn sample(
        &self,
        context: Vec<Token>,
        max_length: usize,
        eos: Option<Token>,
        seed: u64,
        index: u64,
    ) -> PyResult<(Vec<Token>, bool)> {
        let mut rng = seed::stream(seed, "python-sample", index);
        let r = policy::sample(
            &self.inner,
            &prompt(context)?,
            &SamplerConfig::exact(max_length, eos),
            &mut rng,
        )
        .map_err(err)?;
        Ok((r.tokens, r.terminated))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PolicyParams::from_json(text).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Policy(order={}, vocab_size={})",
            self.inner.order(),
            self.inner.vocab_size()
        )
    }
}

#[pyfunction]
fn baseline_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    advantage::baseline_advantages(&rewards).map_err(err)
}

/// Length-conditioned correction for each group member.
#[pyfunction]
fn length_correction(lengths: Vec<usize>, rewards: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    advantage::length_correction(&lengths, &rewards, alpha).map_err(err)
}

#[pyfunction]
fn k3(log_ratio: f64) -> f64 {
    cpgd::k3(log_ratio)
}

#[pyfunction]
fn kl_k3_estimate(
    policy: &PyPolicy,
    old: &PyPolicy,
    context: Vec<Token>,
    responses: Vec<Vec<Token>>,
) -> PyResult<f64> {
    let responses: Vec<Response> = responses
        .into_iter()
        .map(|t| Response::new(t, false))
        .collect();
    cpgd::kl_k3_estimate(&policy.inner, &old.inner, &prompt(context)?, &responses).map_err(err)
}

/// Trains with the clipped drift-penalized objective; returns the final
/// policy and the per-step metrics.
#[pyfunction]
#[pyo3(signature = (task=None, config=None, seed=0))]
fn cpgd_train(
    py: Python<'_>,
    task: Option<&Bound<'_, PyAny>>,
    config: Option<&Bound<'_, PyAny>>,
    seed: u64,
) -> PyResult<(PyPolicy, Py<PyAny>)> {
    let env = task_from_py(py, task)?.build().map_err(err)?;
    let cfg: CpgdConfig = from_py(py, config)?;
    let state = py
        .detach(|| cpgd::cpgd_train(env.as_ref(), &cfg, seed))
        .map_err(err)?;
    Ok((
        PyPolicy {
            inner: state.params,
        },
        to_py(py, &state.metrics)?,
    ))
}

/// Monte Carlo mean length and accuracy of `policy` on a task.
#[pyfunction]
#[pyo3(signature = (policy, task=None, samples_per_prompt=1000, seed=0))]
fn evaluate(
    py: Python<'_>,
    policy: &PyPolicy,
    task: Option<&Bound<'_, PyAny>>,
    samples_per_prompt: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let env = task_from_py(py, task)?.build().map_err(err)?;
    let mut rng = seed::stream(seed, "eval", 0);
    let summary =
        tasks::evaluate(env.as_ref(), &policy.inner, samples_per_prompt, &mut rng).map_err(err)?;
    to_py(py, &summary)
}

/// Primal/dual training on the built-in read-then-answer world.
#[pyfunction]
#[pyo3(signature = (config=None, questions=4, seed=0))]
fn constrained_train(
    py: Python<'_>,
    config: Option<&Bound<'_, PyAny>>,
    questions: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg: ConstrainedConfig = from_py(py, config)?;
    let world = SearchWorld::read_then_answer(questions).map_err(err)?;
    let run = py
        .detach(|| deliberative::constrained_train(&world, &cfg, seed))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("metrics", to_py(py, &run.metrics)?)?;
    out.set_item("lambdas", run.lagrangian.lambdas)?;
    out.set_item(
        "action_logits",
        run.policy
            .action_logits
            .iter()
            .map(|r| r.to_vec())
            .collect::<Vec<_>>(),
    )?;
    out.set_item("confidence_logits", run.policy.confidence_logits)?;
    Ok(out.into_any().unbind())
}

/// One multiplicative dual update of the multipliers.
#[pyfunction]
fn dual_step(
    lambdas: Vec<f64>,
    etas: Vec<f64>,
    dual_rate: f64,
    utilities: Vec<f64>,
) -> PyResult<Vec<f64>> {
    if lambdas.len() != etas.len() || lambdas.len() != utilities.len() {
        return Err(PyValueError::new_err(
            "lambdas, etas and utilities must have equal length",
        ));
    }
    if lambdas.iter().any(|&l| l.is_nan() || l <= 0.0) {
        return Err(PyValueError::new_err("multipliers must be positive"));
    }
    let state = LagrangianState {
        lambdas,
        etas,
        primal_step: 0.0,
        dual_step: dual_rate,
    };
    Ok(deliberative::dual_step(&state, &utilities).lambdas)
}

/// Accuracy, reliability and false-certain rate of `(confidence, reward)`
/// pairs.
#[pyfunction]
#[pyo3(signature = (pairs, threshold=0.5))]
fn calibration(py: Python<'_>, pairs: Vec<(f64, f64)>, threshold: f64) -> PyResult<Py<PyAny>> {
    to_py(
        py,
        &deliberative::calibration_from_pairs(&pairs, threshold).map_err(err)?,
    )
}

/// Guided vs unguided decoding on the adversarial toy prompts; returns one
/// outcome dict per prompt.
#[pyfunction]
#[pyo3(signature = (config=None, seed=0))]
fn adversarial_decode(
    py: Python<'_>,
    config: Option<&Bound<'_, PyAny>>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg: AdversarialConfig = from_py(py, config)?;
    let outcomes = py
        .detach(|| AdversarialScenario::build(&cfg, seed).and_then(|s| s.run(&cfg, seed)))
        .map_err(err)?;
    let outcomes: Vec<_> = outcomes.into_iter().map(|(o, _)| o).collect();
    to_py(py, &outcomes)
}

fn granularity(mode: &str) -> PyResult<Granularity> {
    match mode {
        "word" => Ok(Granularity::Word),
        "sentence" => Ok(Granularity::Sentence),
        _ => Err(PyValueError::new_err(format!(
            "mode must be 'word' or 'sentence', got {mode:?}"
        ))),
    }
}

#[pyfunction]
#[pyo3(signature = (text, mode="word"))]
fn tokenize(text: &str, mode: &str) -> PyResult<Vec<String>> {
    Ok(edit::tokenize(text, granularity(mode)?))
}

/// Edit script between two token lists as a list of segment dicts.
#[pyfunction]
fn diff(py: Python<'_>, source: Vec<String>, target: Vec<String>) -> PyResult<Py<PyAny>> {
    to_py(py, &edit::diff(&source, &target).segments)
}

/// Normalized weighted edit distance between two texts.
#[pyfunction]
#[pyo3(signature = (source, target, mode="word"))]
fn edit_distance(source: &str, target: &str, mode: &str) -> PyResult<f64> {
    let g = granularity(mode)?;
    let script = edit::diff(&edit::tokenize(source, g), &edit::tokenize(target, g));
    edit::edit_distance(&script, &OpWeights::default()).map_err(err)
}

struct PyHooks<'py> {
    respond: Bound<'py, PyAny>,
    solve: Bound<'py, PyAny>,
    validate: Bound<'py, PyAny>,
    /// First exception raised by a validator, re-raised after the loop.
    failure: Option<PyErr>,
}

fn solution_from(obj: Bound<'_, PyAny>) -> Result<Solution<String>, String> {
    let (reasoning, answer): (Vec<String>, Vec<String>) =
        obj.extract().map_err(|e: PyErr| e.to_string())?;
    Ok(Solution { reasoning, answer })
}

impl SimplifyHooks<String> for PyHooks<'_> {
    fn respond(&mut self, hint: &[String]) -> Result<Vec<String>, String> {
        self.respond
            .call1((hint.to_vec(),))
            .and_then(|r| r.extract())
            .map_err(|e| e.to_string())
    }

    fn solve(&mut self, hint: &[String]) -> Result<Solution<String>, String> {
        solution_from(
            self.solve
                .call1((hint.to_vec(),))
                .map_err(|e| e.to_string())?,
        )
    }

    fn validate(
        &mut self,
        hint: &[String],
        solved: &Solution<String>,
        reference: &Solution<String>,
    ) -> bool {
        let args = (
            hint.to_vec(),
            (solved.reasoning.clone(), solved.answer.clone()),
            (reference.reasoning.clone(), reference.answer.clone()),
        );
        match self.validate.call1(args).and_then(|r| r.is_truthy()) {
            Ok(ok) => ok,
            Err(e) => {
                self.failure.get_or_insert(e);
                false
            }
        }
    }
}

/// Shortens `hint` with a responder while the solver's answer keeps
/// passing `validate(hint, (reasoning, answer), reference)`.
#[pyfunction]
#[pyo3(signature = (hint, reference, respond, solve, validate, max_consecutive_failures=4, max_iterations=64))]
#[allow(clippy::too_many_arguments)]
fn iterative_simplify<'py>(
    py: Python<'py>,
    hint: Vec<String>,
    reference: (Vec<String>, Vec<String>),
    respond: Bound<'py, PyAny>,
    solve: Bound<'py, PyAny>,
    validate: Bound<'py, PyAny>,
    max_consecutive_failures: usize,
    max_iterations: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = SimplifyConfig {
        max_consecutive_failures,
        max_iterations,
    };
    let reference = Solution {
        reasoning: reference.0,
        answer: reference.1,
    };
    let mut hooks = PyHooks {
        respond,
        solve,
        validate,
        failure: None,
    };
    let outcome = edit::iterative_simplify(&hint, &reference, &cfg, &mut hooks).map_err(err)?;
    if let Some(e) = hooks.failure {
        return Err(e);
    }
    to_py(py, &outcome)
}

/// Runs an experiment config (a dict in the config-file format) and
/// returns the output directory.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<String> {
    let cfg: ExperimentConfig = from_py_required(py, config)?;
    cfg.validate().map_err(err)?;
    let (out, _) = py.detach(|| harness::run(&cfg)).map_err(err)?;
    Ok(out.to_string_lossy().into_owned())
}

#[pyfunction]
#[pyo3(signature = (run_a, run_b, columns=None))]
fn compare(
    py: Python<'_>,
    run_a: PathBuf,
    run_b: PathBuf,
    columns: Option<Vec<String>>,
) -> PyResult<Py<PyAny>> {
    to_py(
        py,
        &harness::compare(&run_a, &run_b, &columns.unwrap_or_default()).map_err(err)?,
    )
}

#[pymodule]
pub fn alignlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(baseline_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(length_correction, m)?)?;
    m.add_function(wrap_pyfunction!(k3, m)?)?;
    m.add_function(wrap_pyfunction!(kl_k3_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(cpgd_train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(constrained_train, m)?)?;
    m.add_function(wrap_pyfunction!(dual_step, m)?)?;
    m.add_function(wrap_pyfunction!(calibration, m)?)?;
    m.add_function(wrap_pyfunction!(adversarial_decode, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(iterative_simplify, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
