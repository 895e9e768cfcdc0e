//! Python bindings, importable as `admelabel`.
//!
//! Topics cross the boundary as their canonical names ("Absorption", ...,
//! "Other").

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use admelabel::annotator::Annotator;
use admelabel::config::PipelineConfig;
use admelabel::eval::Example;
use admelabel::models::{BasicTrainer, EncoderTrainer, ModelArtifact, ModelKind};
use admelabel::rules::{default_keyword_table, RuleClassifier};
use admelabel::spl::{extract_pk_section, parse_spl, segment_paragraphs};
use admelabel::{Error, Topic};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Fit(_) | Error::Ingest { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn topics(names: &[String]) -> Result<Vec<Topic>, Error> {
    names
        .iter()
        .map(|n| n.parse::<Topic>().map_err(|_| Error::Config(format!("unknown topic {n:?}"))))
        .collect()
}

fn names(ts: &[Topic]) -> Vec<String> {
    ts.iter().map(|t| t.to_string()).collect()
}

/// Segmented pharmacokinetics paragraphs of one SPL document:
/// `(set_id, application_number, version, [(kind, text), ...])`.
#[pyfunction]
fn parse_label(xml: &[u8]) -> PyResult<(String, Option<String>, u32, Vec<(String, String)>)> {
    let doc = parse_spl(xml).map_err(py_err)?;
    let segs = segment_paragraphs(&extract_pk_section(&doc))
        .into_iter()
        .map(|s| {
            let kind = serde_json::to_value(s.kind).ok().and_then(|v| v.as_str().map(String::from));
            (kind.unwrap_or_default(), s.text)
        })
        .collect();
    Ok((doc.set_id, doc.application_number, doc.version, segs))
}

/// Title-based labels for one SPL document: `[(text, topic, source), ...]`.
#[pyfunction]
fn annotate_label(xml: &[u8]) -> PyResult<Vec<(String, String, String)>> {
    let doc = parse_spl(xml).map_err(py_err)?;
    let segs = segment_paragraphs(&extract_pk_section(&doc));
    let annotator = Annotator::default();
    Ok(annotator
        .annotate_document(&segs, &doc.set_id, doc.application_number.as_deref())
        .into_iter()
        .map(|p| {
            let source = serde_json::to_value(p.source).ok().and_then(|v| v.as_str().map(String::from));
            (p.text, p.topic.to_string(), source.unwrap_or_default())
        })
        .collect())
}

/// Keyword-rule topic of each text.
#[pyfunction]
#[pyo3(signature = (texts, seed = 0))]
fn rule_classify(texts: Vec<String>, seed: u64) -> PyResult<Vec<String>> {
    let rc = RuleClassifier::new(default_keyword_table(), seed).map_err(py_err)?;
    Ok(texts.iter().map(|t| rc.classify(t).to_string()).collect())
}

#[pyfunction]
fn macro_f1(predictions: Vec<String>, golds: Vec<String>) -> PyResult<f64> {
    let p = topics(&predictions).map_err(py_err)?;
    let g = topics(&golds).map_err(py_err)?;
    admelabel::eval::macro_f1(&p, &g).map_err(py_err)
}

/// Fold index of every example.
#[pyfunction]
#[pyo3(signature = (labels, k = 5, seed = 0))]
fn stratified_kfold(labels: Vec<String>, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    let t = topics(&labels).map_err(py_err)?;
    Ok(admelabel::eval::stratified_kfold(&t, k, seed).map_err(py_err)?.assignments)
}

/// Synthetic corpus: `([(text, topic), ...], [unlabeled text, ...])`.
#[pyfunction]
#[pyo3(signature = (paragraphs = 2000, unlabeled = 0, seed = 0))]
fn synthetic_corpus(paragraphs: usize, unlabeled: usize, seed: u64) -> PyResult<(Vec<(String, String)>, Vec<String>)> {
    let cfg = admelabel::synth::SynthConfig {
        paragraphs,
        unlabeled,
        ..Default::default()
    };
    let c = admelabel::synth::generate(&cfg, seed).map_err(py_err)?;
    Ok((
        c.labeled.into_iter().map(|e| (e.text, e.label.to_string())).collect(),
        c.unlabeled,
    ))
}

/// A trained classifier of any kind.
#[pyclass(name = "Model", module = "admelabel")]
struct PyModel {
    inner: ModelArtifact,
}

fn train_artifact(
    kind: &str,
    texts: &[String],
    labels: &[String],
    seed: u64,
    config: Option<&str>,
) -> Result<ModelArtifact, Error> {
    let kind: ModelKind = kind.parse()?;
    if texts.len() != labels.len() {
        return Err(Error::Dimension {
            expected: texts.len(),
            actual: labels.len(),
        });
    }
    let cfg = match config {
        Some(text) => PipelineConfig::from_toml(text)?,
        None => PipelineConfig::default(),
    };
    let data: Vec<Example> = texts
        .iter()
        .zip(topics(labels)?)
        .map(|(t, l)| Example::new(t.clone(), l))
        .collect();
    if kind == ModelKind::Encoder {
        let ck = EncoderTrainer::new(cfg.encoder).fit_checkpoint(&data, &[], seed)?;
        Ok(ModelArtifact::Encoder { checkpoint: Box::new(ck) })
    } else {
        BasicTrainer::new(kind, &cfg).fit_artifact(&data, seed)
    }
}

#[pymethods]
impl PyModel {
    /// Train `kind` ("rule", "logreg", "svm", "forest", "encoder", ...).
    /// `config` is optional pipeline TOML.
    #[staticmethod]
    #[pyo3(signature = (kind, texts, labels, seed = 0, config = None))]
    fn train(
        py: Python<'_>,
        kind: &str,
        texts: Vec<String>,
        labels: Vec<String>,
        seed: u64,
        config: Option<&str>,
    ) -> PyResult<Self> {
        let inner = py
            .detach(|| train_artifact(kind, &texts, &labels, seed, config))
            .map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: ModelArtifact::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn predict(&self, py: Python<'_>, texts: Vec<String>) -> PyResult<Vec<String>> {
        let preds = py.detach(|| self.inner.predict_texts(&texts)).map_err(py_err)?;
        Ok(names(&preds))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind_name()
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?})", self.inner.kind_name())
    }
}

#[pymodule(name = "admelabel")]
fn admelabel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TOPICS", Topic::ALL.iter().map(|t| t.to_string()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(annotate_label, m)?)?;
    m.add_function(wrap_pyfunction!(rule_classify, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_kfold, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
