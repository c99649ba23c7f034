//! Python bindings: datasets, splits, model training, and evaluation
//! driven from Python. Build with `cargo build -p revbench-py`, copy
//! `librevbench_py.so` next to your script as `revbench.so`, and
//! `import revbench`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use revbench::corpus::{
    load_interactions, split, Dataset, FieldMap, LoadOptions, Part, RatingScale,
};
use revbench::eval::{hit_rate_at_1, Hr1Result};
use revbench::models::{
    build_model, evaluate_part, score_one, train, Model, ModelKind, TrainConfig, TrainInputs,
    TrainOutcome,
};
use revbench::synth::{
    planted_factor, planted_topic, write_ndjson, PlantedConfig, TopicTextConfig,
};
use revbench::text::{
    build_documents, length_caps, train_embeddings, DocCaps, EmbeddingTable, SgnsConfig, Vocab,
};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// An indexed interaction collection.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Arc<Dataset>,
}

#[pymethods]
impl PyDataset {
    /// Load a newline-delimited JSON review file.
    #[staticmethod]
    #[pyo3(signature = (path, field_user="reviewerID", field_item="asin", field_rating="overall", field_review="reviewText", rating_min=1.0, rating_max=5.0))]
    fn load(
        path: PathBuf,
        field_user: &str,
        field_item: &str,
        field_rating: &str,
        field_review: &str,
        rating_min: f64,
        rating_max: f64,
    ) -> PyResult<(Self, Py<PyAny>)> {
        let opts = LoadOptions {
            field_map: FieldMap {
                user: field_user.into(),
                item: field_item.into(),
                rating: field_rating.into(),
                review: field_review.into(),
            },
            rating_scale: RatingScale::new(rating_min, rating_max),
        };
        let (data, report) = load_interactions(&path, &opts).map_err(value_err)?;
        let summary = Python::attach(|py| -> PyResult<Py<PyAny>> {
            let d = PyDict::new(py);
            d.set_item("loaded", report.loaded)?;
            d.set_item("skipped_missing_field", report.skipped_missing_field)?;
            d.set_item("rejected_rating", report.rejected_rating)?;
            d.set_item("malformed", report.malformed)?;
            Ok(d.into_any().unbind())
        })?;
        Ok((
            Self {
                inner: Arc::new(data),
            },
            summary,
        ))
    }

    /// Synthetic ratings from a planted low-rank model.
    #[staticmethod]
    #[pyo3(signature = (n_users=2000, n_items=300, n_interactions=40000, true_dim=4, noise_sd=0.25, cold_items=150, seed=1))]
    fn planted_factor(
        n_users: usize,
        n_items: usize,
        n_interactions: usize,
        true_dim: usize,
        noise_sd: f64,
        cold_items: usize,
        seed: u64,
    ) -> Self {
        let cfg = PlantedConfig {
            n_users,
            n_items,
            n_interactions,
            true_dim,
            noise_sd,
            cold_items,
            seed,
            ..Default::default()
        };
        Self {
            inner: Arc::new(planted_factor(&cfg)),
        }
    }

    /// Planted ratings plus reviews drawn from item-aligned topics.
    #[staticmethod]
    #[pyo3(signature = (n_users=2000, n_items=300, n_interactions=40000, true_dim=4, noise_sd=0.25, cold_items=150, user_factor_shift=0.4, seed=1))]
    #[allow(clippy::too_many_arguments)]
    fn planted_topic(
        n_users: usize,
        n_items: usize,
        n_interactions: usize,
        true_dim: usize,
        noise_sd: f64,
        cold_items: usize,
        user_factor_shift: f64,
        seed: u64,
    ) -> Self {
        let cfg = PlantedConfig {
            n_users,
            n_items,
            n_interactions,
            true_dim,
            noise_sd,
            cold_items,
            user_factor_shift,
            seed,
            ..Default::default()
        };
        Self {
            inner: Arc::new(planted_topic(&cfg, &TopicTextConfig::default())),
        }
    }

    /// (reviews, users, items) counts.
    fn stats(&self) -> (usize, usize, usize) {
        let s = self.inner.stats();
        (s.reviews, s.users, s.items)
    }

    /// Maximal subset where every user and item has degree ≥ k.
    fn k_core(&self, k: u32) -> Self {
        Self {
            inner: Arc::new(self.inner.k_core(k)),
        }
    }

    /// Seeded 80:10:10 train/validation/test split.
    fn split(&self, seed: u64) -> PyResult<PySplit> {
        let s = split(Arc::clone(&self.inner), seed).map_err(value_err)?;
        Ok(PySplit { inner: Arc::new(s) })
    }

    /// Write the dataset back out as newline-delimited JSON.
    fn write_ndjson(&self, path: PathBuf) -> PyResult<()> {
        write_ndjson(&self.inner, &path).map_err(runtime_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let s = self.inner.stats();
        format!(
            "Dataset(reviews={}, users={}, items={})",
            s.reviews, s.users, s.items
        )
    }
}

/// One seeded 80:10:10 partition.
#[pyclass(name = "Split", skip_from_py_object)]
#[derive(Clone)]
struct PySplit {
    inner: Arc<revbench::corpus::SplitDataset>,
}

#[pymethods]
impl PySplit {
    /// (train, validation, test) sizes.
    fn sizes(&self) -> (usize, usize, usize) {
        (
            self.inner.train().len(),
            self.inner.validation().len(),
            self.inner.test().len(),
        )
    }

    /// Copy with `pct`% of training reviews emptied (seeded).
    fn mask_reviews(&self, pct: f64, seed: u64) -> PySplit {
        PySplit {
            inner: Arc::new(self.inner.mask_reviews(pct, seed)),
        }
    }

    /// Train one model on this split. Text models build their
    /// vocabulary, embeddings, and documents from the training
    /// partition on the fly.
    #[pyo3(signature = (kind, latent_dim=8, l2=1e-6, dropout=0.0, learning_rate=1e-3, batch_size=256, max_epochs=30, patience=3, seed=42, hft_mu=0.1, conv_filters=24, concat_cap=256, vocab_cap=50000, embed_dim=16, embed_epochs=2, fine_tune_embeddings=false))]
    #[allow(clippy::too_many_arguments)]
    fn train_model(
        &self,
        py: Python<'_>,
        kind: &str,
        latent_dim: usize,
        l2: f64,
        dropout: f64,
        learning_rate: f64,
        batch_size: usize,
        max_epochs: usize,
        patience: usize,
        seed: u64,
        hft_mu: f64,
        conv_filters: usize,
        concat_cap: usize,
        vocab_cap: usize,
        embed_dim: usize,
        embed_epochs: usize,
        fine_tune_embeddings: bool,
    ) -> PyResult<PyTrainedModel> {
        let kind: ModelKind = kind.parse().map_err(value_err)?;
        let cfg = TrainConfig {
            latent_dim,
            l2,
            dropout,
            learning_rate,
            batch_size,
            max_epochs,
            patience,
            seed,
            hft_mu,
            conv_filters,
            fine_tune_embeddings,
            ..Default::default()
        };
        let split = Arc::clone(&self.inner);
        let (model, outcome) = py.detach(move || -> Result<_, PyErr> {
            let inputs = if kind.uses_text() {
                let vocab = Arc::new(Vocab::build(&split.train(), vocab_cap));
                let caps = DocCaps::new(concat_cap, length_caps(&split.train()));
                let sgns = SgnsConfig {
                    dim: embed_dim,
                    epochs: embed_epochs,
                    ..Default::default()
                };
                let embeddings =
                    match train_embeddings(&split.train(), &vocab, &sgns, seed) {
                        Ok(t) => Arc::new(t),
                        Err(revbench::text::TextError::EmptyCorpus) => Arc::new(
                            EmbeddingTable::zeros(vocab.len(), embed_dim, vocab.tokens().to_vec()),
                        ),
                        Err(e) => return Err(runtime_err(e)),
                    };
                let docs = kind
                    .doc_layout()
                    .map(|layout| Arc::new(build_documents(&split, &vocab, &caps, layout)));
                TrainInputs {
                    docs,
                    embeddings: Some(embeddings),
                    vocab: Some(vocab),
                }
            } else {
                TrainInputs::default()
            };
            let mut model = build_model(kind, &split, &inputs, cfg).map_err(value_err)?;
            let outcome = train(model.as_mut(), &split).map_err(runtime_err)?;
            Ok((model, outcome))
        })?;
        Ok(PyTrainedModel {
            model,
            outcome,
            split: Arc::clone(&self.inner),
        })
    }

    fn __repr__(&self) -> String {
        let (tr, va, te) = self.sizes();
        format!("Split(train={tr}, validation={va}, test={te})")
    }
}

/// A trained model bound to the split it was trained on.
#[pyclass(name = "TrainedModel")]
struct PyTrainedModel {
    model: Box<dyn Model>,
    outcome: TrainOutcome,
    split: Arc<revbench::corpus::SplitDataset>,
}

#[pymethods]
impl PyTrainedModel {
    #[getter]
    fn kind(&self) -> String {
        self.model.kind().to_string()
    }

    /// Per-epoch validation MSE.
    #[getter]
    fn val_trace(&self) -> Vec<f64> {
        self.outcome.val_trace.clone()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.outcome.best_epoch
    }

    /// Prediction clipped to the rating scale.
    fn predict(&self, user: u32, item: u32) -> PyResult<f64> {
        let raw = score_one(self.model.as_ref(), user, item).map_err(runtime_err)?;
        Ok(self.model.common().scale.clamp(raw))
    }

    /// Raw (unclipped) score.
    fn score(&self, user: u32, item: u32) -> PyResult<f64> {
        score_one(self.model.as_ref(), user, item).map_err(runtime_err)
    }

    fn val_mse(&self) -> f64 {
        self.outcome.best_val_mse
    }

    fn test_mse(&self, py: Python<'_>) -> PyResult<f64> {
        let model = self.model.as_ref();
        let split = Arc::clone(&self.split);
        py.detach(move || evaluate_part(model, &split, Part::Test).map_err(runtime_err))
    }

    /// HR@1 over eligible test users: (rate, eligible_users), or None
    /// when no user qualifies.
    fn hit_rate_at_1(&self, py: Python<'_>, seed: u64) -> PyResult<Option<(f64, usize)>> {
        let model = self.model.as_ref();
        let split = Arc::clone(&self.split);
        let result = py.detach(move || {
            hit_rate_at_1(
                |u, i| score_one(model, u, i).unwrap_or(f64::MIN),
                &split,
                seed,
            )
        });
        Ok(match result {
            Hr1Result::Applicable { rate, eligible, .. } => Some((rate, eligible)),
            Hr1Result::NotApplicable { .. } => None,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainedModel(kind={}, best_epoch={}, val_mse={:.6})",
            self.model.kind(),
            self.outcome.best_epoch,
            self.outcome.best_val_mse
        )
    }
}

/// Run a full experiment from a flat config file; returns the paths of
/// the written report CSVs.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_path: PathBuf) -> PyResult<Vec<String>> {
    let body = std::fs::read_to_string(&config_path).map_err(runtime_err)?;
    let cfg = revbench::harness::parse_config(&body).map_err(value_err)?;
    let out = py
        .detach(move || revbench::harness::run_experiment(&cfg))
        .map_err(runtime_err)?;
    Ok(out
        .paths
        .map(|p| {
            vec![
                p.results.display().to_string(),
                p.buckets.display().to_string(),
                p.trials.display().to_string(),
                p.manifest.display().to_string(),
            ]
        })
        .unwrap_or_default())
}

#[pymodule(name = "revbench")]
fn bindings(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyTrainedModel>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
