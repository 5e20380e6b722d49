//! Python bindings over spela-core. Exposes embedding generation, the
//! locally trained dense network and the file loaders that are useful from
//! a notebook. Arrays cross the boundary as plain lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use spela_core::config::parse_loss;
use spela_core::data::{LabeledDataset, Normalization};
use spela_core::embeddings::{energy, generate_symmetric, EmbeddingSet, Provenance, SimulationConfig};
use spela_core::error::SpelaError;
use spela_core::linalg::Matrix;
use spela_core::mlp::{self, Activation, DecaySchedule, SpelaNetwork, TrainConfig};
use spela_core::rng::Rng;

fn py_err(e: SpelaError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dataset_from_lists(
    samples: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
) -> PyResult<LabeledDataset> {
    if samples.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if samples.is_empty() {
        return Err(PyValueError::new_err("empty dataset"));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(PyValueError::new_err("ragged sample rows"));
    }
    Ok(LabeledDataset {
        samples: Matrix::from_rows(samples),
        labels,
        n_classes,
        normalization: Normalization::None,
        image_shape: None,
    })
}

fn decay_from_args(decay: &str, amount: f64, factor: f64, every: usize) -> PyResult<DecaySchedule> {
    match decay {
        "none" => Ok(DecaySchedule::None),
        "subtractive" => Ok(DecaySchedule::Subtractive { amount, every }),
        "multiplicative" => Ok(DecaySchedule::Multiplicative { factor, every }),
        other => Err(PyValueError::new_err(format!("unknown decay {other:?}"))),
    }
}

/// Fixed unit-norm class vectors from the repulsion simulation, as a list
/// of n_classes rows.
#[pyfunction]
#[pyo3(signature = (n_classes, dim, seed = 0))]
fn symmetric_embeddings(n_classes: usize, dim: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = SimulationConfig {
        rng_seed: seed,
        ..SimulationConfig::default()
    };
    let (set, _stats) = generate_symmetric(n_classes, dim, &cfg).map_err(py_err)?;
    Ok((0..n_classes).map(|i| set.row(i).to_vec()).collect())
}

/// Sum of pairwise 1/distance repulsion terms for a set of vectors. Lower
/// means more evenly spread.
#[pyfunction]
fn embedding_energy(vectors: Vec<Vec<f64>>) -> PyResult<f64> {
    if vectors.is_empty() {
        return Err(PyValueError::new_err("empty vector set"));
    }
    let n = vectors.len();
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(PyValueError::new_err("ragged vector set"));
    }
    let set = EmbeddingSet {
        vectors: Matrix::from_rows(vectors),
        n_vectors: n,
        dim,
        provenance: Provenance::RandNormal,
    };
    energy(&set).map_err(py_err)
}

/// Load an image/label file pair in the big-endian idx format. Pixels are
/// scaled to [0, 1]. Returns (samples, labels).
#[pyfunction]
fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = spela_core::data::load_idx(&images, &labels).map_err(py_err)?;
    let rows = (0..ds.len()).map(|i| ds.samples.row(i).to_vec()).collect();
    Ok((rows, ds.labels))
}

/// A stack of dense layers where each layer trains against its own frozen
/// class vectors and never sees a gradient from the layers above it.
#[pyclass]
struct LocalNetwork {
    net: SpelaNetwork,
}

#[pymethods]
impl LocalNetwork {
    #[new]
    #[pyo3(signature = (input_dim, hidden, n_classes, loss = "cosine_log",
                        slope = 0.001, bias = true, dropout = 0.0,
                        binarize = false, seed = 0, embedding_seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        n_classes: usize,
        loss: &str,
        slope: f64,
        bias: bool,
        dropout: f64,
        binarize: bool,
        seed: u64,
        embedding_seed: u64,
    ) -> PyResult<Self> {
        let loss_kind = parse_loss(loss).map_err(py_err)?;
        let mut embeddings = Vec::with_capacity(hidden.len());
        for &width in &hidden {
            let cfg = SimulationConfig {
                rng_seed: embedding_seed,
                ..SimulationConfig::default()
            };
            let (set, _stats) = generate_symmetric(n_classes, width, &cfg).map_err(py_err)?;
            embeddings.push(set);
        }
        let mut rng = Rng::new(seed);
        let net = SpelaNetwork::new(
            input_dim,
            &hidden,
            embeddings,
            Activation::LeakyRelu(slope),
            bias,
            dropout,
            binarize,
            loss_kind,
            &mut rng,
        )
        .map_err(py_err)?;
        Ok(LocalNetwork { net })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.net.depth()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.net.n_classes()
    }

    /// Train in place. Returns the mean per-layer loss for each epoch as a
    /// list of rows.
    #[pyo3(signature = (samples, labels, epochs = 30, lr0 = 0.1,
                        decay = "none", decay_amount = 0.1, decay_factor = 0.1,
                        decay_every = 10, batch_size = 50, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        samples: Vec<Vec<f64>>,
        labels: Vec<usize>,
        epochs: usize,
        lr0: f64,
        decay: &str,
        decay_amount: f64,
        decay_factor: f64,
        decay_every: usize,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let data = dataset_from_lists(samples, labels, self.net.n_classes())?;
        let cfg = TrainConfig {
            lr0,
            decay: decay_from_args(decay, decay_amount, decay_factor, decay_every)?,
            batch_size,
            epochs,
            seed,
            loss_kind: self.net.loss_kind,
            eval_every: 0,
            ..Default::default()
        };
        let metrics = mlp::train(&mut self.net, &data, None, &cfg).map_err(py_err)?;
        Ok(metrics.epochs.into_iter().map(|e| e.train_loss).collect())
    }

    /// Class index for one sample, reading the given layer (1-based, default
    /// the last one).
    #[pyo3(signature = (x, exit_layer = None))]
    fn predict(&self, x: Vec<f64>, exit_layer: Option<usize>) -> PyResult<usize> {
        let layer = exit_layer.unwrap_or(self.net.depth());
        let (label, _scores) = mlp::predict(&self.net, &x, layer).map_err(py_err)?;
        Ok(label)
    }

    /// Per-class cosine scores at the given layer.
    #[pyo3(signature = (x, exit_layer = None))]
    fn scores(&self, x: Vec<f64>, exit_layer: Option<usize>) -> PyResult<Vec<f64>> {
        let layer = exit_layer.unwrap_or(self.net.depth());
        let (_label, scores) = mlp::predict(&self.net, &x, layer).map_err(py_err)?;
        Ok(scores)
    }

    /// Accuracy of every exit layer over a labeled set, shallow to deep.
    fn evaluate(&self, samples: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<f64>> {
        let data = dataset_from_lists(samples, labels, self.net.n_classes())?;
        mlp::evaluate(&self.net, &data).map_err(py_err)
    }

    /// The frozen class vectors of one layer (1-based).
    fn embeddings(&self, layer: usize) -> PyResult<Vec<Vec<f64>>> {
        if layer == 0 || layer > self.net.depth() {
            return Err(PyValueError::new_err(format!(
                "layer {layer} out of range 1..={}",
                self.net.depth()
            )));
        }
        let e = &self.net.layers[layer - 1].embeddings;
        Ok((0..e.n_vectors).map(|i| e.row(i).to_vec()).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mlp::save_checkpoint(&self.net, "origin = python\n", &path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (net, _echo) = mlp::load_checkpoint(&path).map_err(py_err)?;
        Ok(LocalNetwork { net })
    }
}

#[pymodule]
fn spela_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LocalNetwork>()?;
    m.add_function(wrap_pyfunction!(symmetric_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(embedding_energy, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    Ok(())
}
