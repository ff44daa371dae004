//! Python bindings: corpus loading, folds, BLEU, the naive-Bayes baseline,
//! a trainable translator and the crossvalidation harness.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use ::tamarian as core;
use core::corpus::{make_folds_with, ClassSizePolicy};
use core::harness::{self, ClassificationMode, ExperimentConfig, FoldData, System};
use core::model::{Model, SizePreset};
use core::numerics::Checkpoint;
use core::tokenizer::Vocabulary;
use core::train::{self, Selection, TrainConfig};

fn err(e: core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Converts anything serializable into plain Python objects via `json`.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn size(name: &str) -> PyResult<SizePreset> {
    name.parse().map_err(err)
}

#[pyfunction]
fn normalize(text: &str) -> String {
    core::tokenizer::normalize(text)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    core::tokenizer::tokenize(text)
}

/// Corpus BLEU of tokenized hypotheses against one reference each.
#[pyfunction]
fn corpus_bleu<'py>(
    py: Python<'py>,
    hypotheses: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = core::metrics::corpus_bleu(&hypotheses, &references).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn edit_distance(a: Vec<String>, b: Vec<String>) -> usize {
    core::metrics::edit_distance(&a, &b)
}

#[pyclass(frozen)]
struct Corpus {
    inner: core::corpus::Corpus,
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    fn load(dictionary: &str, corpus: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::corpus::Corpus::load(dictionary, corpus).map_err(err)?,
        })
    }

    /// The ten-utterance mini-corpus bundled with the library.
    #[staticmethod]
    fn sample() -> Self {
        Self {
            inner: core::corpus::Corpus::sample(),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (n_classes, examples_per_class, seed=0))]
    fn synthetic(n_classes: usize, examples_per_class: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: harness::make_synthetic_corpus(n_classes, examples_per_class, seed)
                .map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.pairs.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus({} pairs, {} classes)",
            self.inner.pairs.len(),
            self.inner.classes().count()
        )
    }

    #[getter]
    fn dictionary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.dictionary)
    }

    #[getter]
    fn pairs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.pairs)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Five-fold plan as a dict of `n_folds`, `seed` and `folds`.
    #[pyo3(signature = (seed=0, lenient=false))]
    fn folds<'py>(&self, py: Python<'py>, seed: u64, lenient: bool) -> PyResult<Bound<'py, PyAny>> {
        let policy = if lenient {
            ClassSizePolicy::Lenient
        } else {
            ClassSizePolicy::Strict
        };
        to_py(
            py,
            &make_folds_with(&self.inner.pairs, seed, policy).map_err(err)?,
        )
    }

    /// Nearest in-corpus utterance id for a generated string.
    fn classify(&self, generated: &str) -> PyResult<String> {
        core::metrics::classify_output(generated, &self.inner.dictionary).map_err(err)
    }
}

#[pyclass(frozen)]
struct NaiveBayes {
    inner: core::baseline::NaiveBayesModel,
}

#[pymethods]
impl NaiveBayes {
    /// Fits on every pair of `corpus`, or on `pair_ids` only.
    #[new]
    #[pyo3(signature = (corpus, alpha=1.0, pair_ids=None))]
    fn new(corpus: &Corpus, alpha: f64, pair_ids: Option<Vec<String>>) -> PyResult<Self> {
        let pairs: Vec<_> = match pair_ids {
            None => corpus.inner.pairs.clone(),
            Some(ids) => {
                let keep: BTreeSet<String> = ids.into_iter().collect();
                corpus
                    .inner
                    .pairs
                    .iter()
                    .filter(|p| keep.contains(&p.pair_id))
                    .cloned()
                    .collect()
            }
        };
        Ok(Self {
            inner: core::baseline::NaiveBayesModel::fit(&pairs, alpha).map_err(err)?,
        })
    }

    fn predict(&self, english: &str) -> String {
        self.inner.predict(english)
    }

    fn class_scores(&self, english: &str) -> Vec<(String, f64)> {
        self.inner
            .class_scores(english)
            .into_iter()
            .map(|(c, s)| (c.to_string(), s))
            .collect()
    }
}

/// A trained transformer together with its vocabulary and dictionary.
#[pyclass(frozen)]
struct Translator {
    model: Model,
    vocab: Vocabulary,
    dictionary: Vec<core::corpus::Utterance>,
}

#[pymethods]
impl Translator {
    /// Trains on the whole corpus, or on the train split of `fold` with
    /// best-dev selection.
    #[staticmethod]
    #[pyo3(signature = (corpus, size="small", epochs=30, seed=0, fold=None, learning_rate=1e-3))]
    fn train(
        py: Python<'_>,
        corpus: &Corpus,
        size: &str,
        epochs: usize,
        seed: u64,
        fold: Option<usize>,
        learning_rate: f64,
    ) -> PyResult<Self> {
        let preset = self::size(size)?;
        let c = &corpus.inner;
        py.detach(|| {
            let cfg = ExperimentConfig {
                seed,
                ..ExperimentConfig::default()
            };
            let tc = TrainConfig {
                epochs,
                seed,
                learning_rate,
                ..TrainConfig::default()
            };
            let trained = match fold {
                Some(f) => {
                    let plan = make_folds_with(&c.pairs, seed, ClassSizePolicy::Strict)?;
                    let data = FoldData::new(c, &plan.fold(f)?.train, 1)?;
                    let model = Model::init(
                        harness::harness_model_config(&cfg, c, preset, seed),
                        data.vocab.len(),
                    )?;
                    (
                        train::train(model, &data.examples, &plan, f, &tc)?,
                        data.vocab,
                    )
                }
                None => {
                    let ids: Vec<String> = c.pairs.iter().map(|p| p.pair_id.clone()).collect();
                    let data = FoldData::new(c, &ids, 1)?;
                    let model = Model::init(
                        harness::harness_model_config(&cfg, c, preset, seed),
                        data.vocab.len(),
                    )?;
                    let examples: Vec<_> = data.examples.values().cloned().collect();
                    let tc = TrainConfig {
                        selection: Selection::Last,
                        ..tc
                    };
                    (train::fit(model, &examples, &[], &tc)?, data.vocab)
                }
            };
            Ok::<_, core::Error>(Self {
                model: trained.0.model,
                vocab: trained.1,
                dictionary: c.dictionary.clone(),
            })
        })
        .map_err(err)
    }

    /// Loads a checkpoint and vocabulary written by `save` or the CLI.
    #[staticmethod]
    fn load(checkpoint: &str, vocab: &str, dictionary: &str) -> PyResult<Self> {
        let read = |p: &str| {
            std::fs::read_to_string(p).map_err(|e| PyValueError::new_err(format!("{p}: {e}")))
        };
        let vocab = Vocabulary::from_json(&read(vocab)?).map_err(err)?;
        let ckpt = Checkpoint::from_json(&read(checkpoint)?).map_err(err)?;
        Ok(Self {
            model: Model::from_checkpoint(&ckpt, &vocab).map_err(err)?,
            vocab,
            dictionary: core::corpus::load_dictionary(dictionary).map_err(err)?,
        })
    }

    fn save(&self, checkpoint: &str, vocab: &str) -> PyResult<()> {
        let json = self
            .model
            .to_checkpoint(&self.vocab)
            .to_json()
            .map_err(err)?;
        let write = |p: &str, s: &str| {
            std::fs::write(p, s).map_err(|e| PyValueError::new_err(format!("{p}: {e}")))
        };
        write(checkpoint, &json)?;
        write(vocab, &self.vocab.to_json())
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model.num_parameters()
    }

    /// Greedy decode plus the matched dictionary entry.
    fn translate<'py>(&self, py: Python<'py>, english: &str) -> PyResult<Bound<'py, PyAny>> {
        let t =
            harness::translate(&self.model, &self.vocab, &self.dictionary, english).map_err(err)?;
        to_py(py, &t)
    }

    /// Mean per-token log-likelihood of each candidate surface.
    fn score(&self, english: &str, candidates: Vec<String>) -> PyResult<Vec<f64>> {
        use core::tokenizer::Side;
        let src = self.vocab.encode(english, Side::Source).ids;
        let seqs: Vec<Vec<usize>> = candidates
            .iter()
            .map(|c| self.vocab.encode(c, Side::Target).ids)
            .collect();
        self.model.score_candidates(&src, &seqs).map_err(err)
    }
}

#[pyclass(frozen)]
struct Report {
    inner: harness::EvalReport,
}

#[pymethods]
impl Report {
    fn json(&self) -> String {
        self.inner.canonical_json()
    }

    fn table(&self) -> String {
        self.inner.table()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?
            .call_method1("loads", (self.inner.canonical_json(),))
    }
}

/// Runs five-fold crossvalidation of the selected systems on `corpus`.
#[pyfunction]
#[pyo3(signature = (corpus, sizes=vec!["small".to_string()], epochs=30, seed=0, mode="generate", systems=vec!["transformer".to_string(), "baseline".to_string()]))]
fn crossval(
    py: Python<'_>,
    corpus: &Corpus,
    sizes: Vec<String>,
    epochs: usize,
    seed: u64,
    mode: &str,
    systems: Vec<String>,
) -> PyResult<Report> {
    let mode = match mode {
        "generate" => ClassificationMode::GenerateThenMatch,
        "likelihood" => ClassificationMode::LikelihoodRanking,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let systems = systems
        .iter()
        .map(|s| match s.as_str() {
            "transformer" => Ok(System::Transformer),
            "baseline" => Ok(System::Baseline),
            other => Err(PyValueError::new_err(format!("unknown system {other:?}"))),
        })
        .collect::<PyResult<BTreeSet<_>>>()?;
    let config = ExperimentConfig {
        sizes: sizes.iter().map(|s| size(s)).collect::<PyResult<_>>()?,
        train: TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
        seed,
        mode,
        systems,
        ..ExperimentConfig::default()
    };
    let c = &corpus.inner;
    let inner = py
        .detach(|| harness::run_crossval_on(&config, c))
        .map_err(err)?;
    Ok(Report { inner })
}

#[pymodule]
fn tamarian(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PROMPT", core::tokenizer::PROMPT)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(crossval, m)?)?;
    m.add_class::<Corpus>()?;
    m.add_class::<NaiveBayes>()?;
    m.add_class::<Translator>()?;
    m.add_class::<Report>()?;
    Ok(())
}
