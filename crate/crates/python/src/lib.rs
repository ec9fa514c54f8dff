//! Python bindings: load trained models, predict, evaluate, and drive the
//! `onenet` command line from Python.

use std::path::PathBuf;

use onenet::checkpoint::load_set;
use onenet::data::{parse_corpus, repair_bio};
use onenet::eval::{evaluate_variant, extract_chunks, predict_variant, slot_f1, ModelSet};
use onenet::gradcheck::{check_mini_onenet, MiniSpec};
use onenet::{CrfScoreMode, Variant};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

create_exception!(pyonenet, OneNetError, PyException);

fn err(e: onenet::Error) -> PyErr {
    OneNetError::new_err(e.to_string())
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(err)
}

fn from_json<'py>(py: Python<'py>, json: String) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

/// A directory of trained networks as written by `onenet train`.
#[pyclass(frozen)]
struct Models {
    set: ModelSet,
}

#[pymethods]
impl Models {
    #[new]
    fn new(dir: PathBuf) -> PyResult<Self> {
        Ok(Models {
            set: load_set(&dir).map_err(err)?,
        })
    }

    #[getter]
    fn roles(&self) -> Vec<String> {
        self.set.roles().into_iter().map(|(r, _)| r).collect()
    }

    #[getter]
    fn domains(&self) -> Vec<String> {
        self.set.domains()
    }

    /// Predict one tokenized utterance. `domain` is needed by `oracle-domain`.
    #[pyo3(signature = (tokens, variant = "joint", domain = None))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        tokens: Vec<String>,
        variant: &str,
        domain: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let v = self::variant(variant)?;
        self.set.check(v).map_err(err)?;
        if tokens.is_empty() {
            return Err(OneNetError::new_err("empty utterance"));
        }
        let p = predict_variant(v, &self.set, &tokens, domain).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("domain", p.domain)?;
        out.set_item("intent", p.intent)?;
        let slots = p.slots.map(|s| repair_bio(&s));
        let spans = PyList::empty(py);
        for (t, b, e) in slots.as_deref().map(extract_chunks).unwrap_or_default() {
            let span = PyDict::new(py);
            span.set_item("type", t)?;
            span.set_item("start", b)?;
            span.set_item("end", e)?;
            span.set_item("text", tokens[b..e].join(" "))?;
            spans.append(span)?;
        }
        out.set_item("slots", slots)?;
        out.set_item("spans", spans)?;
        Ok(out)
    }

    /// Score a JSONL corpus; returns the report as `onenet eval` writes it.
    #[pyo3(signature = (corpus, variant = "joint"))]
    fn evaluate<'py>(&self, py: Python<'py>, corpus: PathBuf, variant: &str) -> PyResult<Bound<'py, PyAny>> {
        let v = self::variant(variant)?;
        let json = py
            .detach(|| -> onenet::Result<String> {
                self.set.check(v)?;
                let (test, _) = parse_corpus(&corpus)?;
                Ok(serde_json::to_string(&evaluate_variant(v, &self.set, &test)?)?)
            })
            .map_err(err)?;
        from_json(py, json)
    }
}

/// Typed spans `(type, start, end)` of a BIO labeling.
#[pyfunction]
fn chunks(labels: Vec<String>) -> Vec<(String, usize, usize)> {
    extract_chunks(&labels)
}

/// Micro chunk precision/recall/F1 in percent.
#[pyfunction]
fn score_slots<'py>(py: Python<'py>, gold: Vec<Vec<String>>, predicted: Vec<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    let s = slot_f1(&gold, &predicted).map_err(err)?;
    from_json(py, serde_json::to_string(&s).map_err(|e| err(e.into()))?)
}

/// Largest relative gradient error on a miniature joint network.
#[pyfunction]
#[pyo3(signature = (seed = 0, step = 1e-5, tolerance = 1e-4, multiplicative = false))]
fn gradcheck(py: Python<'_>, seed: u64, step: f64, tolerance: f64, multiplicative: bool) -> PyResult<f64> {
    let mode = if multiplicative {
        CrfScoreMode::Multiplicative
    } else {
        CrfScoreMode::Additive
    };
    let report = py
        .detach(|| check_mini_onenet(MiniSpec::default(), mode, seed, step, tolerance, None))
        .map_err(err)?;
    Ok(report.max_relative_error())
}

/// Run the command line with `args` (without the program name). Returns the exit code.
#[pyfunction]
fn run(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("onenet".to_string()).chain(args).collect();
    py.detach(|| onenet::cli::run(argv))
}

#[pymodule]
fn pyonenet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OneNetError", m.py().get_type::<OneNetError>())?;
    m.add_class::<Models>()?;
    m.add_function(wrap_pyfunction!(chunks, m)?)?;
    m.add_function(wrap_pyfunction!(score_slots, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
