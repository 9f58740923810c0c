//! Python bindings. Structured values cross the boundary as plain
//! dicts and lists, using the same JSON shapes as the journal and the
//! HTTP interface.

use std::path::PathBuf;

use bridget_core::session::read_jsonl_file;
use bridget_core::stream::gen_blobs as core_gen_blobs;
use bridget_core::{ChallengeResponse, ClientEvent, Error, ExperimentConfig, Record, SessionConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(bridget, BridgetError, PyException);
create_exception!(bridget, ConfigError, BridgetError);
create_exception!(bridget, ProtocolError, BridgetError);
create_exception!(bridget, InvalidInputError, BridgetError);
create_exception!(bridget, CorruptLogError, BridgetError);

fn to_py_err(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::Config { .. } => ConfigError::new_err(msg),
        Error::Protocol { .. } => ProtocolError::new_err(msg),
        Error::InvalidInput(_) | Error::Csv { .. } | Error::Json(_) => InvalidInputError::new_err(msg),
        Error::CorruptLog { .. } => CorruptLogError::new_err(msg),
        Error::Capability(_) | Error::Io(_) => BridgetError::new_err(msg),
    }
}

/// Python object -> Rust value, through `json.dumps`.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| to_py_err(e.into()))
}

/// Rust value -> Python object, through `json.loads`.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py_err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A labeling session with its journal.
#[pyclass(module = "bridget")]
struct Session {
    inner: bridget_core::Session,
}

#[pymethods]
impl Session {
    /// `config` is a dict with `schema`, optional `engine` and optional `seed`.
    /// With `path`, the journal is also written to that (new) file.
    #[new]
    #[pyo3(signature = (config, session_id = "session", path = None))]
    fn new(config: &Bound<'_, PyAny>, session_id: &str, path: Option<PathBuf>) -> PyResult<Self> {
        let config: SessionConfig = from_py(config)?;
        let inner = match path {
            Some(p) => bridget_core::Session::create_with_file(session_id, config, &p),
            None => bridget_core::Session::create(session_id, config),
        }
        .map_err(to_py_err)?;
        Ok(Session { inner })
    }

    /// Rebuilds a session from its journal file and keeps appending to it.
    #[staticmethod]
    fn resume(path: PathBuf) -> PyResult<Self> {
        let inner = bridget_core::Session::resume_file(&path).map_err(to_py_err)?;
        Ok(Session { inner })
    }

    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    /// Sends one client event dict (`{"type": "offer_record", ...}`) and returns the outcome.
    fn handle(&mut self, py: Python<'_>, event: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let event: ClientEvent = from_py(event)?;
        self.send(py, event)
    }

    fn offer(&mut self, py: Python<'_>, record_id: &str, features: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let record = Record::new(record_id, from_py(features)?);
        self.send(py, ClientEvent::OfferRecord { record })
    }

    fn label(&mut self, py: Python<'_>, label: String) -> PyResult<Py<PyAny>> {
        self.send(py, ClientEvent::UserLabel { label })
    }

    fn respond_challenge(&mut self, py: Python<'_>, accept: bool) -> PyResult<Py<PyAny>> {
        let response = if accept { ChallengeResponse::Accept } else { ChallengeResponse::Refuse };
        self.send(py, ClientEvent::ChallengeResponse { response })
    }

    fn respond_consent(&mut self, py: Python<'_>, grant: bool) -> PyResult<Py<PyAny>> {
        self.send(py, ClientEvent::ConsentResponse { grant })
    }

    fn respond_notice(&mut self, py: Python<'_>, revert: bool) -> PyResult<Py<PyAny>> {
        self.send(py, ClientEvent::NoticeResponse { revert })
    }

    fn request_explanation(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        self.send(py, ClientEvent::RequestExplanation)
    }

    /// Explanations for the outstanding prompt, without journaling them.
    fn preview_explanation(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let ex = self.inner.engine().preview_explanation().map_err(to_py_err)?;
        to_py(py, &ex)
    }

    fn prompt(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.prompt())
    }

    fn metrics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.metrics())
    }

    fn state_hash(&self) -> String {
        self.inner.state_hash()
    }

    /// Appends a checkpoint line and returns the state hash it records.
    fn checkpoint(&mut self) -> PyResult<String> {
        self.inner.checkpoint().map_err(to_py_err)
    }

    /// The journal as JSONL text.
    fn journal(&self) -> String {
        self.inner.journal_jsonl()
    }

    fn __repr__(&self) -> String {
        let m = self.inner.metrics();
        format!("Session(id={:?}, phase={:?}, records={})", self.inner.id(), m.phase, m.records_offered)
    }
}

impl Session {
    fn send(&mut self, py: Python<'_>, event: ClientEvent) -> PyResult<Py<PyAny>> {
        let outcome = self.inner.handle(event).map_err(to_py_err)?;
        to_py(py, &outcome)
    }
}

/// Gaussian blobs as a list of `{"record": ..., "label": ...}` dicts.
#[pyfunction]
#[pyo3(signature = (n, classes = 2, dims = 2, separation = 4.0, seed = 0))]
fn gen_blobs(py: Python<'_>, n: usize, classes: usize, dims: usize, separation: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let spec = bridget_core::BlobSpec { n, classes, dims, separation, seed: Some(seed) };
    spec.validate().map_err(to_py_err)?;
    to_py(py, &core_gen_blobs(n, classes, dims, separation, seed))
}

/// Runs a simulation config dict, writes journals and `summary.json` to `out_dir`
/// and returns the summary.
#[pyfunction]
fn simulate(py: Python<'_>, config: &Bound<'_, PyAny>, out_dir: PathBuf) -> PyResult<Py<PyAny>> {
    let cfg: ExperimentConfig = from_py(config)?;
    let summary = py.detach(|| bridget_core::simulate(&cfg, &out_dir)).map_err(to_py_err)?;
    to_py(py, &summary)
}

/// Re-drives a journal file. Returns the final and recorded hashes.
#[pyfunction]
fn replay(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let r = py
        .detach(|| read_jsonl_file(&path).and_then(|entries| bridget_core::replay(&entries)))
        .map_err(to_py_err)?;
    let out = serde_json::json!({
        "state_hash": r.final_hash(),
        "recorded_hash": r.recorded_hash,
        "verified": r.verified(),
        "entries": r.session.journal().len(),
    });
    to_py(py, &out)
}

#[pymodule]
fn bridget(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(gen_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add("BridgetError", py.get_type::<BridgetError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("ProtocolError", py.get_type::<ProtocolError>())?;
    m.add("InvalidInputError", py.get_type::<InvalidInputError>())?;
    m.add("CorruptLogError", py.get_type::<CorruptLogError>())?;
    Ok(())
}
