//! Python bindings: model snapshots, training, compression and a few of the
//! numeric building blocks.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use banzip_core::pipeline::{self, CompressOptions, LatentMode};
use banzip_core::{attention, coder, oracle, seqmodel, trainer, verify};
use banzip_core::{Architecture, BanError, ModelSnapshot, TrainConfig};

fn to_py(e: BanError) -> PyErr {
    match e {
        BanError::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn arch(context_len: usize, latent_dim: usize, embed_dim: usize, hidden: usize) -> PyResult<Architecture> {
    let a = Architecture { context_len, latent_dim, embed_dim, hidden };
    a.validate().map_err(to_py)?;
    Ok(a)
}

/// A trained (or uniform) model snapshot.
#[pyclass(name = "Model", module = "banzip")]
struct PyModel {
    inner: ModelSnapshot,
}

#[pymethods]
impl PyModel {
    /// Model whose every prediction is uniform.
    #[staticmethod]
    #[pyo3(signature = (context_len=8, latent_dim=8, embed_dim=16, hidden=64))]
    fn uniform(context_len: usize, latent_dim: usize, embed_dim: usize, hidden: usize) -> PyResult<Self> {
        Ok(PyModel { inner: ModelSnapshot::uniform(arch(context_len, latent_dim, embed_dim, hidden)?) })
    }

    #[staticmethod]
    #[pyo3(signature = (data, epochs=10, batch=16, seed=0, context_len=8, latent_dim=8, embed_dim=16, hidden=64, sign="descent"))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        data: &[u8],
        epochs: u32,
        batch: usize,
        seed: u64,
        context_len: usize,
        latent_dim: usize,
        embed_dim: usize,
        hidden: usize,
        sign: &str,
    ) -> PyResult<Self> {
        let config = TrainConfig {
            epochs,
            batch,
            seed,
            arch: arch(context_len, latent_dim, embed_dim, hidden)?,
            attention_sign: sign.parse().map_err(to_py)?,
        };
        let data = data.to_vec();
        let inner = py.detach(|| trainer::train(&data, &config)).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel { inner: ModelSnapshot::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyModel { inner: ModelSnapshot::from_bytes(data).map_err(to_py)? })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    /// FNV-1a hash of the serialized snapshot, as stored in containers.
    #[getter]
    fn hash(&self) -> u64 {
        self.inner.hash()
    }

    #[getter]
    fn context_len(&self) -> usize {
        self.inner.arch.context_len
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.arch.latent_dim
    }

    /// Next-byte probabilities for a context of exactly `context_len` bytes.
    fn pmf(&self, context: &[u8]) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict(context).map_err(to_py)?.probs().to_vec())
    }

    fn __repr__(&self) -> String {
        let a = self.inner.arch;
        format!(
            "Model(context_len={}, latent_dim={}, embed_dim={}, hidden={}, hash={:016x})",
            a.context_len,
            a.latent_dim,
            a.embed_dim,
            a.hidden,
            self.inner.hash()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (data, model, embed_model=false, sample_z=false))]
fn compress<'py>(
    py: Python<'py>,
    data: &[u8],
    model: &PyModel,
    embed_model: bool,
    sample_z: bool,
) -> PyResult<Bound<'py, PyBytes>> {
    let opts = CompressOptions {
        embed_model,
        latent_mode: if sample_z { LatentMode::Sampled } else { LatentMode::Mean },
    };
    let (bytes, _) = pipeline::compress_with(data, &model.inner, &opts).map_err(to_py)?;
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
#[pyo3(signature = (data, model=None))]
fn decompress<'py>(py: Python<'py>, data: &[u8], model: Option<&PyModel>) -> PyResult<Bound<'py, PyBytes>> {
    let out = pipeline::decompress(data, model.map(|m| &m.inner)).map_err(to_py)?;
    Ok(PyBytes::new(py, &out))
}

/// Integer counts summing to 65536, each at least 1.
#[pyfunction]
fn quantize(probs: Vec<f64>) -> PyResult<Vec<u32>> {
    if probs.len() != 256 {
        return Err(PyValueError::new_err(format!("expected 256 probabilities, got {}", probs.len())));
    }
    Ok(coder::quantize_probs(&probs).counts().to_vec())
}

/// `B * score / sum(score)`.
#[pyfunction]
fn importance(scores: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(attention::importance(&scores).map_err(to_py)?.values().to_vec())
}

/// `(lhs, rhs, rhs_full_variance)` for a Gaussian mixture.
#[pyfunction]
fn jensen_gap(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let g = oracle::GaussianMixture::new(weights, means, variances).map_err(to_py)?;
    let j = oracle::jensen_gap(&g);
    Ok((j.lhs, j.rhs, j.rhs_full_variance))
}

/// `(context, target)` pairs, one per position, zero-padded at the start.
#[pyfunction]
fn make_samples<'py>(py: Python<'py>, data: &[u8], context_len: usize) -> PyResult<Vec<(Bound<'py, PyBytes>, u8)>> {
    let samples = seqmodel::make_samples(data, context_len).map_err(to_py)?;
    Ok(samples.iter().map(|s| (PyBytes::new(py, s.context.bytes()), s.target)).collect())
}

/// Code length in bits of a sequence given its per-symbol probabilities.
#[pyfunction]
fn sequence_log2_prob(probs: Vec<f64>) -> PyResult<f64> {
    seqmodel::sequence_log2_prob(&probs).map_err(to_py)
}

/// Runs the self-check suite; returns `(all_passed, report)`.
#[pyfunction]
#[pyo3(signature = (quick=true))]
fn run_checks(py: Python<'_>, quick: bool) -> (bool, String) {
    let report = py.detach(|| verify::run(quick));
    (report.all_pass(), report.to_string())
}

#[pymodule]
fn banzip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(decompress, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(importance, m)?)?;
    m.add_function(wrap_pyfunction!(jensen_gap, m)?)?;
    m.add_function(wrap_pyfunction!(make_samples, m)?)?;
    m.add_function(wrap_pyfunction!(sequence_log2_prob, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    Ok(())
}
