//! Python module `cnsl`: simulators, datasets, model training/inference,
//! the LPSI baseline and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cnsl_core::baselines::{self, LpsiConfig, LpsiRule};
use cnsl_core::dataset::{default_test_samples, Dataset, DatasetMeta};
use cnsl_core::diffusion::{self, parse_pattern, DiffusionConfig, DiffusionModel};
use cnsl_core::eval::{self, PredictionRecord};
use cnsl_core::graph::{InfectionVector, Network, SeedVector};
use cnsl_core::model::{self, CnslModel, InferConfig, ModelConfig, SeedRule, TrainConfig};
use cnsl_core::synth::{generate_cross_network, SynthConfig};

fn err(e: cnsl_core::Error) -> PyErr {
    use cnsl_core::Error as E;
    match e {
        E::Io { .. } => PyIOError::new_err(e.to_string()),
        E::NonFinite { .. } | E::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn lpsi_config(alpha: f64, tol: f64, max_iter: usize, top_m: Option<usize>) -> LpsiConfig {
    LpsiConfig {
        alpha,
        tol,
        max_iter,
        rule: top_m.map_or(LpsiRule::LocalMaxima, LpsiRule::TopM),
    }
}

/// Per-node infection probabilities from `samples` Monte-Carlo runs.
#[pyfunction]
#[pyo3(signature = (n, edges, seeds, directed=false, model="ic", edge_prob=0.1, samples=100, max_steps=20, seed=0))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo_probs(
    n: usize,
    edges: Vec<(usize, usize)>,
    seeds: Vec<usize>,
    directed: bool,
    model: &str,
    edge_prob: f64,
    samples: usize,
    max_steps: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let net = Network::new("g", n, edges, directed).map_err(err)?;
    if let Some(&bad) = seeds.iter().find(|&&s| s >= n) {
        return Err(PyIndexError::new_err(format!("seed {bad} out of range for {n} nodes")));
    }
    let model: DiffusionModel = model.parse().map_err(err)?;
    let cfg = DiffusionConfig {
        ic_edge_prob: edge_prob,
        mc_samples: samples,
        max_steps,
        rng_seed: seed,
        ..DiffusionConfig::new(model)
    };
    cfg.validate().map_err(err)?;
    diffusion::monte_carlo_probs(&net, &SeedVector::from_support(n, &seeds), &cfg)
        .map(|v| v.0)
        .map_err(err)
}

/// Converged LPSI scores for ±1 `labels` on an undirected graph.
#[pyfunction]
#[pyo3(signature = (n, edges, labels, alpha=0.5, tol=1e-6, max_iter=1000))]
fn lpsi_scores(n: usize, edges: Vec<(usize, usize)>, labels: Vec<f64>, alpha: f64, tol: f64, max_iter: usize) -> PyResult<Vec<f64>> {
    let net = Network::new("g", n, edges, false).map_err(err)?;
    let cfg = lpsi_config(alpha, tol, max_iter, None);
    cfg.validate().map_err(err)?;
    baselines::lpsi_scores(&net, &labels, &cfg).map(|s| s.scores).map_err(err)
}

/// Rank-based AUC; `None` when `truth` has a single class.
#[pyfunction]
fn auc(scores: Vec<f64>, truth: Vec<bool>) -> PyResult<Option<f64>> {
    if scores.len() != truth.len() {
        return Err(PyValueError::new_err("scores and truth differ in length"));
    }
    Ok(eval::auc(&scores, &truth))
}

/// PR, RE, F1, AUC and PR@100 of one prediction.
#[pyfunction]
fn compute_metrics<'py>(py: Python<'py>, scores: Vec<f64>, predicted: Vec<bool>, truth: Vec<bool>) -> PyResult<Bound<'py, PyDict>> {
    let rec = PredictionRecord {
        scores,
        predicted: SeedVector(predicted),
        truth: SeedVector(truth),
        wall_time_train: 0.0,
        wall_time_infer: 0.0,
    };
    let row = eval::compute_metrics(&rec, "", "").map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pr", row.pr)?;
    d.set_item("re", row.re)?;
    d.set_item("f1", row.f1)?;
    d.set_item("auc", row.auc)?;
    d.set_item("pr_at_100", row.pr_at_100)?;
    Ok(d)
}

/// A cross-network with diffusion samples; the trailing `test_size`
/// samples are held out.
#[pyclass(name = "Dataset", module = "cnsl")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic dataset. `kind` is `toy` or `cross-platform`; `diffusion`
    /// a pattern such as `lt2ic`.
    #[staticmethod]
    #[pyo3(signature = (kind="toy", diffusion="ic2ic", samples=40, test_samples=None, seed_fraction=0.1, edge_prob=0.3, mc_samples=100, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        kind: &str,
        diffusion: &str,
        samples: usize,
        test_samples: Option<usize>,
        seed_fraction: f64,
        edge_prob: f64,
        mc_samples: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let synth = match kind {
            "toy" => SynthConfig::toy(),
            "cross-platform" => SynthConfig::cross_platform(),
            _ => return Err(PyValueError::new_err(format!("unknown kind '{kind}' (toy or cross-platform)"))),
        };
        if samples == 0 {
            return Err(PyValueError::new_err("samples must be >= 1"));
        }
        let test = test_samples.unwrap_or_else(|| default_test_samples(samples));
        if test >= samples {
            return Err(PyValueError::new_err("test_samples leaves no training samples"));
        }
        let (ms, mt) = parse_pattern(diffusion).map_err(err)?;
        let cfg = |m| DiffusionConfig {
            ic_edge_prob: edge_prob,
            mc_samples,
            ..DiffusionConfig::new(m)
        };
        let (cs, ct) = (cfg(ms), cfg(mt));
        let cross = generate_cross_network(&synth, seed).map_err(err)?;
        let data = diffusion::generate_dataset(&cross, samples, seed_fraction, &cs, &ct, seed).map_err(err)?;
        let meta = DatasetMeta {
            kind: kind.into(),
            diffusion: format!("{ms}2{mt}"),
            source_config: Some(cs),
            target_config: Some(ct),
            n_samples: samples,
            test_samples: test,
            seed_fraction: Some(seed_fraction),
            rng_seed: seed,
            n_source: cross.n_source(),
            n_target: cross.n_target(),
            n_bridges: cross.bridges.len(),
            source_role: "source".into(),
            target_role: "target".into(),
            warnings: vec![],
            generator: serde_json::Value::Null,
        };
        Ok(Self {
            inner: Dataset { meta, cross, samples: data },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Dataset::load(&path).map(|inner| Self { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn n_source(&self) -> usize {
        self.inner.cross.n_source()
    }

    #[getter]
    fn n_target(&self) -> usize {
        self.inner.cross.n_target()
    }

    #[getter]
    fn test_indices(&self) -> Vec<usize> {
        let n = self.inner.samples.len();
        (n - self.inner.test().len()..n).collect()
    }

    #[getter]
    fn diffusion(&self) -> String {
        self.inner.meta.diffusion.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    /// Sample `i` as a dict of `x_s`, `y_s`, `x_t`, `y_t` lists.
    fn sample<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyDict>> {
        let s = self
            .inner
            .samples
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("sample {i} out of range")))?;
        let d = PyDict::new(py);
        d.set_item("x_s", s.x_s.to_f64())?;
        d.set_item("y_s", s.y_s.0.clone())?;
        d.set_item("x_t", s.x_t.0.clone())?;
        d.set_item("y_t", s.y_t.0.clone())?;
        Ok(d)
    }

    /// LPSI across the bridges for a target observation.
    #[pyo3(signature = (y_t, alpha=0.5, top_m=None))]
    fn lpsi(&self, y_t: Vec<f64>, alpha: f64, top_m: Option<usize>) -> PyResult<(Vec<f64>, Vec<bool>)> {
        let cfg = lpsi_config(alpha, 1e-6, 1000, top_m);
        cfg.validate().map_err(err)?;
        let y = InfectionVector::new(y_t).map_err(err)?;
        let r = baselines::lpsi_cross(&self.inner.cross, &y, &cfg).map_err(err)?;
        Ok((r.scores, r.seeds.0))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(kind={:?}, diffusion={:?}, n_source={}, n_target={}, samples={})",
            self.inner.meta.kind,
            self.inner.meta.diffusion,
            self.n_source(),
            self.n_target(),
            self.inner.samples.len()
        )
    }
}

/// Trained localization model bound to one cross-network.
#[pyclass(name = "Model", module = "cnsl")]
struct PyModel {
    inner: CnslModel,
    loss_history: Vec<f64>,
}

#[pymethods]
impl PyModel {
    /// Trains on the dataset's training split.
    #[staticmethod]
    #[pyo3(signature = (dataset, epochs=15, batch_size=2, lr_vae=1e-4, k1=16, hidden=128, seed=0))]
    fn train(dataset: &PyDataset, epochs: usize, batch_size: usize, lr_vae: f64, k1: usize, hidden: usize, seed: u64) -> PyResult<Self> {
        let mc = ModelConfig {
            k1,
            hidden,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs,
            batch_size,
            lr_vae,
            rng_seed: seed,
            ..TrainConfig::default()
        };
        tc.validate().map_err(err)?;
        let mut m = CnslModel::new(&dataset.inner.cross, mc, seed).map_err(err)?;
        let report = model::train(&mut m, dataset.inner.train(), &tc).map_err(err)?;
        Ok(Self {
            inner: m,
            loss_history: report.loss_history,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, dataset: &PyDataset) -> PyResult<Self> {
        let (inner, _) = CnslModel::load(&path, &dataset.inner.cross).map_err(err)?;
        Ok(Self {
            inner,
            loss_history: vec![],
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path, serde_json::Value::Null).map_err(err)
    }

    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.loss_history.clone()
    }

    /// Seed probabilities and binary seeds for a target observation. The
    /// dataset's training seed sets provide the starting latents.
    #[pyo3(signature = (dataset, y_t, iterations=2, alpha=0.1, k=10, restarts=1, ensemble=1, seed_weight=1.0, rule="expected", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn infer(
        &self,
        dataset: &PyDataset,
        y_t: Vec<f64>,
        iterations: usize,
        alpha: f64,
        k: usize,
        restarts: usize,
        ensemble: usize,
        seed_weight: f64,
        rule: &str,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<bool>)> {
        let cfg = InferConfig {
            iterations,
            alpha,
            k,
            restarts,
            ensemble,
            seed_weight,
            rule: rule.parse::<SeedRule>().map_err(err)?,
            rng_seed: seed,
            ..InferConfig::default()
        };
        let y = InfectionVector::new(y_t).map_err(err)?;
        let seeds = dataset.inner.train_seeds();
        let res = model::infer_seeds(&self.inner, &y, &seeds, &cfg).map_err(err)?;
        Ok((res.probs, res.seeds.0))
    }
}

#[pymodule]
fn cnsl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(monte_carlo_probs, m)?)?;
    m.add_function(wrap_pyfunction!(lpsi_scores, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
