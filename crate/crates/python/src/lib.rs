//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use hypersolid::config::RunConfig;
use hypersolid::geometry::{self, GeometryReport};
use hypersolid::hseb::{self, Dtype};
use hypersolid::inversion::{self, InputShape, InversionConfig};
use hypersolid::model::{load_checkpoint, save_checkpoint};
use hypersolid::probes;
use hypersolid::topology;
use hypersolid::trainer::{self, EpochLog};
use hypersolid::views::Dataset;
use hypersolid::{loss, Array, EmbeddingSet, Error, LossBreakdown, LossConfig, Parameters, RepulsionMode};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array::from_vec(&[n, d], rows.concat()).map_err(py_err)
}

fn to_rows(a: &Array) -> Rows {
    let d = a.shape().last().copied().unwrap_or(0).max(1);
    a.data().chunks(d).map(<[f64]>::to_vec).collect()
}

fn embedding_set(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> PyResult<EmbeddingSet> {
    EmbeddingSet::new(matrix(rows)?, labels).map_err(py_err)
}

fn breakdown<'py>(py: Python<'py>, l: &LossBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("alignment", l.alignment)?;
    d.set_item("repulsion", l.repulsion)?;
    d.set_item("normalization", l.normalization)?;
    d.set_item("total", l.total)?;
    Ok(d)
}

fn loss_config(alpha: f64, norm_lambda: f64, repulsion: &str) -> PyResult<LossConfig> {
    let repulsion: RepulsionMode = repulsion.parse().map_err(py_err)?;
    Ok(LossConfig { alpha, norm_lambda, repulsion })
}

fn view_batch(feats: Vec<Vec<Vec<f64>>>) -> PyResult<Array> {
    let b = feats.len();
    let v = feats.first().map_or(0, Vec::len);
    let d = feats.first().and_then(|x| x.first()).map_or(0, Vec::len);
    if feats.iter().any(|img| img.len() != v || img.iter().any(|r| r.len() != d)) {
        return Err(PyValueError::new_err("feats must be a regular B x V x D nested list"));
    }
    let flat: Vec<f64> = feats.into_iter().flatten().flatten().collect();
    Array::from_vec(&[b, v, d], flat).map_err(py_err)
}

/// Loss terms of a `B x V x D` batch of projector outputs.
#[pyfunction]
#[pyo3(signature = (feats, alpha=0.9, norm_lambda=0.0, repulsion="all"))]
fn hypersolid_loss<'py>(
    py: Python<'py>,
    feats: Vec<Vec<Vec<f64>>>,
    alpha: f64,
    norm_lambda: f64,
    repulsion: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = loss_config(alpha, norm_lambda, repulsion)?;
    let l = loss::evaluate(&view_batch(feats)?, &cfg).map_err(py_err)?;
    breakdown(py, &l)
}

/// Loss terms plus the gradient of the total with respect to `feats`.
#[pyfunction]
#[pyo3(signature = (feats, alpha=0.9, norm_lambda=0.0, repulsion="all"))]
fn loss_and_grad<'py>(
    py: Python<'py>,
    feats: Vec<Vec<Vec<f64>>>,
    alpha: f64,
    norm_lambda: f64,
    repulsion: &str,
) -> PyResult<(Bound<'py, PyDict>, Vec<Rows>)> {
    let cfg = loss_config(alpha, norm_lambda, repulsion)?;
    let x = view_batch(feats)?;
    let (b, v) = (x.shape()[0], x.shape()[1]);
    let (l, g) = loss::value_and_grad(&x, &cfg).map_err(py_err)?;
    let rows = to_rows(&g);
    let grad = (0..b).map(|i| rows[i * v..(i + 1) * v].to_vec()).collect();
    Ok((breakdown(py, &l)?, grad))
}

#[pyfunction]
fn effective_rank(rows: Rows) -> PyResult<f64> {
    geometry::effective_rank(&matrix(&rows)?).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &GeometryReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("anisotropy", r.anisotropy)?;
    d.set_item("correlation", r.correlation)?;
    d.set_item("cvn", r.cvn)?;
    d.set_item("centroid_rank", r.centroid_rank)?;
    d.set_item("embedding_rank", r.embedding_rank)?;
    d.set_item("structure_ratio", r.structure_ratio)?;
    d.set_item("d_prime", r.d_prime.map(|x| x.value))?;
    d.set_item("mpa_degrees", r.mpa_degrees)?;
    d.set_item("degenerate", r.degenerate)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (rows, labels=None, pair_samples=20000, seed=0))]
fn geometry_report<'py>(
    py: Python<'py>,
    rows: Rows,
    labels: Option<Vec<usize>>,
    pair_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let set = embedding_set(&rows, labels)?;
    let r = geometry::geometry_report(&set, pair_samples, seed).map_err(py_err)?;
    report_dict(py, &r)
}

/// Returns `(top1, top5)`.
#[pyfunction]
#[pyo3(signature = (train, train_labels, test, test_labels, k=5))]
fn knn_probe(
    train: Rows,
    train_labels: Vec<usize>,
    test: Rows,
    test_labels: Vec<usize>,
    k: usize,
) -> PyResult<(f64, f64)> {
    let train = embedding_set(&train, Some(train_labels))?;
    let test = embedding_set(&test, Some(test_labels))?;
    let r = probes::knn_probe(&train, &test, k).map_err(py_err)?;
    Ok((r.top1, r.top5))
}

/// Mean energy per step for positive and negative pairs, plus each walk.
#[pyfunction]
#[pyo3(signature = (rows, labels, pairs, steps=20, exclude_endpoints=false))]
fn energy_walk<'py>(
    py: Python<'py>,
    rows: Rows,
    labels: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    steps: usize,
    exclude_endpoints: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let set = embedding_set(&rows, Some(labels))?;
    let p = topology::energy_walk(&set, &pairs, steps, exclude_endpoints).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("t", p.t)?;
    d.set_item("positive_mean", p.positive.mean)?;
    d.set_item("positive_std", p.positive.std)?;
    d.set_item("negative_mean", p.negative.mean)?;
    d.set_item("negative_std", p.negative.std)?;
    let traces: Vec<Vec<f64>> = p.traces.into_iter().map(|t| t.energy).collect();
    d.set_item("traces", traces)?;
    Ok(d)
}

#[pyfunction]
fn sample_walk_pairs(labels: Vec<usize>, count: usize, seed: u64) -> Vec<(usize, usize)> {
    topology::sample_walk_pairs(&labels, count, seed)
}

#[pyfunction]
fn read_hseb(path: PathBuf) -> PyResult<Rows> {
    Ok(to_rows(&hseb::read(&path).map_err(py_err)?))
}

#[pyfunction]
#[pyo3(signature = (path, rows, dtype="f64"))]
fn write_hseb(path: PathBuf, rows: Rows, dtype: &str) -> PyResult<()> {
    let dtype = match dtype {
        "f32" => Dtype::F32,
        "f64" => Dtype::F64,
        other => return Err(PyValueError::new_err(format!("dtype must be f32 or f64, got {other}"))),
    };
    hseb::write(&path, &matrix(&rows)?, dtype).map_err(py_err)
}

/// A trained or loaded encoder.
#[pyclass(module = "hypersolid_py")]
struct Model {
    params: Parameters,
    data: Option<Dataset>,
    logs: Vec<EpochLog>,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let params = load_checkpoint(&path).map_err(py_err)?;
        Ok(Self { params, data: None, logs: Vec::new() })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.params).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.params.config.input_dim
    }

    #[getter]
    fn projector_dim(&self) -> usize {
        self.params.config.projector_dim
    }

    fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    /// Projector outputs for each input row.
    fn encode(&self, rows: Rows) -> PyResult<Rows> {
        Ok(to_rows(&self.params.encode(&matrix(&rows)?).map_err(py_err)?))
    }

    /// `(rows, labels)` of the training data's `train` or `test` split.
    fn embed_split(&self, split: &str) -> PyResult<(Rows, Option<Vec<usize>>)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model was loaded without its data"))?;
        let source = match split {
            "train" => &data.train,
            "test" => &data.test,
            other => return Err(PyValueError::new_err(format!("split must be train or test, got {other}"))),
        };
        let set = trainer::embed(&self.params, source).map_err(py_err)?;
        Ok((to_rows(set.vectors()), set.labels().map(<[usize]>::to_vec)))
    }

    /// Per-epoch loss terms and probe accuracies.
    fn epochs<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.logs
            .iter()
            .map(|l| {
                let d = breakdown(py, &l.loss)?;
                d.set_item("epoch", l.epoch)?;
                d.set_item("knn_top1", l.knn_top1)?;
                d.set_item("linear_top1", l.linear_top1)?;
                Ok(d)
            })
            .collect()
    }

    /// Vector-mode inversion; returns `(input, cosine_distance)`.
    #[pyo3(signature = (target, steps=4000, lr=0.05, seed=0))]
    fn invert(&self, target: Vec<f64>, steps: usize, lr: f64, seed: u64) -> PyResult<(Vec<f64>, f64)> {
        let cfg = InversionConfig {
            scales: vec![1.0],
            steps_per_scale: steps,
            lr,
            ..InversionConfig::default()
        };
        let shape = InputShape::Vector(self.params.config.input_dim);
        let inv = inversion::invert(&self.params, &target, shape, &cfg, seed).map_err(py_err)?;
        Ok((inv.input.into_data(), inv.distance))
    }
}

/// Trains an encoder. `config` maps dotted keys (as in `config.resolved`)
/// to values; `seed` overrides the `seed` key.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn train(py: Python<'_>, config: Option<Vec<(String, String)>>, seed: Option<u64>) -> PyResult<Model> {
    let mut cfg = RunConfig::default();
    for (k, v) in config.unwrap_or_default() {
        cfg.set(&k, &v).map_err(py_err)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(py_err)?;
    py.detach(move || {
        let data = cfg.data.dataset(cfg.seed)?;
        cfg.train.encoder.input_dim = data.train.input_dim();
        cfg.train.seed = cfg.seed;
        let out = trainer::train(&data, &cfg.train)?;
        Ok(Model { params: out.params, data: Some(data), logs: out.logs })
    })
    .map_err(py_err)
}

#[pymodule]
fn hypersolid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(hypersolid_loss, m)?)?;
    m.add_function(wrap_pyfunction!(loss_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(effective_rank, m)?)?;
    m.add_function(wrap_pyfunction!(geometry_report, m)?)?;
    m.add_function(wrap_pyfunction!(knn_probe, m)?)?;
    m.add_function(wrap_pyfunction!(energy_walk, m)?)?;
    m.add_function(wrap_pyfunction!(sample_walk_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(read_hseb, m)?)?;
    m.add_function(wrap_pyfunction!(write_hseb, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
