//! Python bindings: feature stores, composers, training, retrieval and
//! evaluation.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqplace::eval::{evaluate_pair, run_experiment_suite, SuiteConfig};
use seqplace::retrieval::bench_search;
use seqplace::seqslam::{run_seqslam, SeqSlamParams};
use seqplace::synth::{self, WorldConfig};
use seqplace::train::TrainConfig;

create_exception!(seqplace, SeqPlaceError, PyException, "Raised for any library error; `kind` names the category.");

fn err(e: seqplace::Error) -> PyErr {
    let py_err = SeqPlaceError::new_err(format!("{}: {e}", e.kind()));
    Python::attach(|py| {
        let _ = py_err.value(py).setattr("kind", e.kind());
    });
    py_err
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for seqplace::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(module = "seqplace", name = "FeatureStore", from_py_object)]
#[derive(Clone)]
struct PyFeatureStore(seqplace::FeatureStore);

#[pymethods]
impl PyFeatureStore {
    /// Loads a manifest (or a bare feature file).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let path = if path.is_dir() { path.join("manifest.json") } else { path };
        seqplace::load_feature_store(&path).py().map(Self)
    }

    /// Writes feature files, ground truth and manifest into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<String> {
        std::fs::create_dir_all(&dir).map_err(|e| err(seqplace::Error::io(&dir, e)))?;
        Ok(self.0.save(&dir).py()?.display().to_string())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim
    }

    #[getter]
    fn tolerance(&self) -> u32 {
        self.0.convention.tolerance
    }

    fn condition_ids(&self) -> Vec<u32> {
        self.0.condition_ids()
    }

    fn features(&self, condition: u32) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.0.traversal(condition).py()?.frames.iter().map(|f| f.features.clone()).collect())
    }

    fn frame_ids(&self, condition: u32) -> PyResult<Vec<u32>> {
        Ok(self.0.traversal(condition).py()?.frames.iter().map(|f| f.frame_id).collect())
    }

    fn place_ids(&self, condition: u32) -> PyResult<Vec<u32>> {
        Ok(self.0.traversal(condition).py()?.place_ids())
    }

    fn reversed(&self, condition: u32) -> PyResult<Self> {
        synth::perturb_reverse(&self.0, condition).py().map(Self)
    }

    #[pyo3(signature = (condition, multipliers = vec![1, 2, 3], seed = 0))]
    fn speed_perturbed(&self, condition: u32, multipliers: Vec<usize>, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synth::perturb_speed(&self.0, condition, &multipliers, &mut rng).py().map(Self)
    }

    fn __len__(&self) -> usize {
        self.0.traversals.len()
    }

    fn __repr__(&self) -> String {
        format!("FeatureStore(dim={}, conditions={:?})", self.0.dim, self.0.condition_ids())
    }
}

#[pyfunction]
#[pyo3(signature = (num_places = 200, dim = 64, conditions = 2, sigma_a = 0.5, sigma_eps = 0.1, seed = 0, train_places = None))]
fn generate_world(
    num_places: usize,
    dim: usize,
    conditions: usize,
    sigma_a: f64,
    sigma_eps: f64,
    seed: u64,
    train_places: Option<usize>,
) -> PyResult<PyFeatureStore> {
    let cfg = WorldConfig {
        num_places,
        dim,
        conditions,
        sigma_a,
        sigma_eps,
        rng_seed: seed,
    };
    let store = match train_places {
        Some(p) => synth::generate_training_world(&cfg, p),
        None => synth::generate_world(&cfg),
    };
    store.py().map(PyFeatureStore)
}

#[pyclass(module = "seqplace", name = "Composer", from_py_object)]
#[derive(Clone)]
struct PyComposer(seqplace::Composer);

#[pymethods]
impl PyComposer {
    /// Freshly initialized composer; `kind` is grouping, fusion or recurrent.
    #[staticmethod]
    #[pyo3(signature = (kind, n, d_in, d_out = 128, seed = 0))]
    fn init(kind: &str, n: usize, d_in: usize, d_out: usize, seed: u64) -> PyResult<Self> {
        let kind = kind.parse().py()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seqplace::Composer::init(kind, n, d_in, d_out, &mut rng).py().map(Self)
    }

    /// Concatenation of `n` raw frames.
    #[staticmethod]
    fn raw(n: usize) -> PyResult<Self> {
        if n == 0 {
            return Err(err(seqplace::Error::Config("window length must be positive".into())));
        }
        Ok(Self(seqplace::Composer::raw_grouping(n)))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        seqplace::checkpoint::load_composer(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        seqplace::checkpoint::save_composer(&self.0, &path).py()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().as_str()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn trained_steps(&self) -> u64 {
        self.0.trained_steps
    }

    fn output_dim(&self, frame_dim: usize) -> usize {
        self.0.output_dim(frame_dim)
    }

    fn single_view(&self) -> PyResult<Self> {
        self.0.single_view().py().map(Self)
    }

    /// Descriptor of `n` frames.
    fn describe(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
        Ok(self.0.describe(&refs).py()?.values)
    }

    fn __repr__(&self) -> String {
        format!("Composer(kind={}, n={}, trained_steps={})", self.0.kind(), self.0.n, self.0.trained_steps)
    }
}

/// Trains a fresh composer; returns it with the per-step losses.
#[pyfunction]
#[pyo3(signature = (kind, store, *, n = 3, learning_rate = 1e-3, epochs = 5, triplets_per_epoch = 2000,
                    margin = 0.1, dropout = 0.5, substitution = 0.5, descriptor_dim = 128, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    kind: &str,
    store: &PyFeatureStore,
    n: usize,
    learning_rate: f64,
    epochs: usize,
    triplets_per_epoch: usize,
    margin: f64,
    dropout: f64,
    substitution: f64,
    descriptor_dim: usize,
    seed: u64,
) -> PyResult<(PyComposer, Vec<f64>)> {
    let cfg = TrainConfig {
        n,
        learning_rate,
        epochs,
        triplets_per_epoch,
        margin,
        dropout_rate: dropout,
        frame_substitution_prob: substitution,
        descriptor_dim,
        rng_seed: seed,
        ..TrainConfig::default()
    };
    let out = seqplace::train_composer(kind.parse().py()?, &store.0, &cfg).py()?;
    Ok((PyComposer(out.composer), out.losses))
}

#[pyclass(module = "seqplace", name = "PlaceIndex")]
struct PyPlaceIndex(seqplace::PlaceIndex);

#[pymethods]
impl PyPlaceIndex {
    #[staticmethod]
    #[pyo3(signature = (store, condition, composer, stride = 1))]
    fn build(store: &PyFeatureStore, condition: u32, composer: &PyComposer, stride: usize) -> PyResult<Self> {
        let t = store.0.traversal(condition).py()?;
        seqplace::build_index(t, &composer.0, stride).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        seqplace::PlaceIndex::load(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    /// Nearest entry as `(start_frame_id, squared_distance)`.
    fn query(&self, descriptor: Vec<f64>) -> PyResult<(u32, f32)> {
        let nb = seqplace::query_nn(&self.0, &descriptor).py()?;
        Ok((nb.start_frame_id, nb.sq_distance))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
#[pyo3(signature = (anchor, positive, negative, margin = 0.1))]
fn wl_loss(anchor: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>, margin: f64) -> PyResult<f64> {
    seqplace::train::wl_loss(&anchor, &positive, &negative, margin).py()
}

type LossAndGrads = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

/// Loss and gradients `(loss, d_anchor, d_positive, d_negative)`.
#[pyfunction]
#[pyo3(signature = (anchor, positive, negative, margin = 0.1))]
fn wl_loss_grad(
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negative: Vec<f64>,
    margin: f64,
) -> PyResult<LossAndGrads> {
    let g = seqplace::train::wl_loss_grad(&anchor, &positive, &negative, margin).py()?;
    Ok((g.loss, g.anchor, g.positive, g.negative))
}

/// Precision at recall 1 of `query_cond` against a stride-1 index of `ref_cond`.
#[pyfunction]
fn evaluate(store: &PyFeatureStore, query_cond: u32, ref_cond: u32, composer: &PyComposer) -> PyResult<f64> {
    let s = &store.0;
    evaluate_pair(
        s.traversal(query_cond).py()?,
        s.traversal(ref_cond).py()?,
        &composer.0,
        s.convention,
    )
    .py()
}

/// NT/RG/RS suite over labelled composers; returns one dict per composer.
#[pyfunction]
#[pyo3(signature = (store, composers, seed = 0, query_cond = 0, ref_cond = 1))]
fn run_suite<'py>(
    py: Python<'py>,
    store: &PyFeatureStore,
    composers: Vec<(String, PyComposer)>,
    seed: u64,
    query_cond: u32,
    ref_cond: u32,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let labelled: Vec<(&str, &seqplace::Composer)> = composers.iter().map(|(l, c)| (l.as_str(), &c.0)).collect();
    let cfg = SuiteConfig {
        query_condition: query_cond,
        reference_condition: ref_cond,
        rng_seed: seed,
        ..SuiteConfig::default()
    };
    let report = py.detach(|| run_experiment_suite(&store.0, &labelled, &cfg)).py()?;
    report
        .summary
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("composer", &s.composer)?;
            d.set_item("NT", s.nt)?;
            d.set_item("RG", s.rg)?;
            d.set_item("RS", s.rs)?;
            d.set_item("mean", s.mean)?;
            d.set_item("stddev", s.stddev)?;
            Ok(d)
        })
        .collect()
}

/// SeqSLAM precision of `query_cond` against `ref_cond`.
#[pyfunction]
#[pyo3(signature = (store, query_cond = 0, ref_cond = 1, seq_len = 10, reverse = false))]
fn seqslam(store: &PyFeatureStore, query_cond: u32, ref_cond: u32, seq_len: usize, reverse: bool) -> PyResult<f64> {
    let s = if reverse {
        synth::perturb_reverse(&store.0, query_cond).py()?
    } else {
        store.0.clone()
    };
    let params = SeqSlamParams {
        seq_len,
        ..SeqSlamParams::default()
    };
    let report = run_seqslam(s.traversal(query_cond).py()?, s.traversal(ref_cond).py()?, &params, s.convention).py()?;
    Ok(report.precision)
}

/// Mean and stddev in milliseconds of one exhaustive query over `n x k`.
#[pyfunction]
#[pyo3(signature = (k, n, trials = 10, seed = 0))]
fn bench_search_ms(py: Python<'_>, k: usize, n: usize, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
    let s = py.detach(|| bench_search(k, n, trials, seed)).py()?;
    Ok((s.mean_ms, s.stddev_ms))
}

#[pymodule]
#[pyo3(name = "seqplace")]
fn seqplace_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SeqPlaceError", m.py().get_type::<SeqPlaceError>())?;
    m.add_class::<PyFeatureStore>()?;
    m.add_class::<PyComposer>()?;
    m.add_class::<PyPlaceIndex>()?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(wl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(wl_loss_grad, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add_function(wrap_pyfunction!(seqslam, m)?)?;
    m.add_function(wrap_pyfunction!(bench_search_ms, m)?)?;
    Ok(())
}
