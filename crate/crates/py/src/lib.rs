//! Python bindings: images, costs, the simulator, the builtin detector,
//! metrics and the full embedding pipeline.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use mctsteg_core::corpus::CorpusSpec;
use mctsteg_core::environment::{self, EnvError, EnvScore, Environment, LinearModel, TrainHyper};
use mctsteg_core::media::{self, Domain, ModificationMap, PixelMatrix};
use mctsteg_core::metrics;
use mctsteg_core::pipeline::{self, CostSource, EmbedPlan};
use mctsteg_core::{simulator, CostPair, SchemeKind};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_domain(domain: &str) -> PyResult<Domain> {
    match domain {
        "spatial" => Ok(Domain::Spatial),
        "jpeg" => Ok(Domain::Jpeg),
        other => Err(PyValueError::new_err(format!("unknown domain {other:?}"))),
    }
}

/// A grayscale image or a matrix of JPEG coefficients.
#[pyclass(name = "Image", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: PixelMatrix,
}

#[pymethods]
impl PyImage {
    #[new]
    #[pyo3(signature = (width, height, values, domain = "spatial"))]
    fn new(width: usize, height: usize, values: Vec<f32>, domain: &str) -> PyResult<Self> {
        let inner = PixelMatrix::new(width, height, parse_domain(domain)?, values).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_bytes(width: usize, height: usize, data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: PixelMatrix::from_u8(width, height, data).map_err(value_err)? })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: media::read_image(path).map_err(|e| PyIOError::new_err(e.to_string()))? })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        media::write_image(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn domain(&self) -> String {
        self.inner.domain().to_string()
    }

    fn values(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_u8())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}, {})", self.inner.width(), self.inner.height(), self.inner.domain())
    }
}

/// Per-element costs of +1 and -1 changes.
#[pyclass(name = "CostPair", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyCostPair {
    inner: CostPair,
}

#[pymethods]
impl PyCostPair {
    #[new]
    fn new(width: usize, height: usize, rho_plus: Vec<f64>, rho_minus: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: CostPair::new(width, height, rho_plus, rho_minus).map_err(value_err)? })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: media::read_cost_map(path).map_err(|e| PyIOError::new_err(e.to_string()))? })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        media::write_cost_map(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn rho_plus(&self) -> Vec<f64> {
        self.inner.rho_plus().to_vec()
    }

    #[getter]
    fn rho_minus(&self) -> Vec<f64> {
        self.inner.rho_minus().to_vec()
    }
}

#[pyfunction]
fn hill_cost(img: &PyImage) -> PyResult<PyCostPair> {
    Ok(PyCostPair { inner: mctsteg_core::hill_cost(&img.inner).map_err(value_err)? })
}

fn mods_from(width: usize, height: usize, entries: Vec<i8>) -> PyResult<ModificationMap> {
    ModificationMap::new(width, height, entries).map_err(value_err)
}

#[pyfunction]
fn distortion(cost: &PyCostPair, width: usize, height: usize, mods: Vec<i8>) -> PyResult<f64> {
    mctsteg_core::distortion(&cost.inner, &mods_from(width, height, mods)?).map_err(value_err)
}

/// Fits change probabilities for `payload_bits`; returns (p_plus, p_minus, lambda).
#[pyfunction]
#[pyo3(signature = (cost, payload_bits, mask = None))]
fn fit_probabilities(
    cost: &PyCostPair,
    payload_bits: f64,
    mask: Option<Vec<usize>>,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let p = simulator::fit_probabilities(&cost.inner, payload_bits, mask.as_deref()).map_err(value_err)?;
    Ok((p.p_plus, p.p_minus, p.lambda))
}

/// Simulates additive embedding of `payload_bits`; returns (stego, modifications).
#[pyfunction]
fn simulate(img: &PyImage, cost: &PyCostPair, payload_bits: f64, seed: u64) -> PyResult<(PyImage, Vec<i8>)> {
    let source = CostSource::External(cost.inner.clone());
    let s = pipeline::embed_plain(&img.inner, payload_bits, &source, seed).map_err(value_err)?;
    Ok((PyImage { inner: s.stego }, s.mods.entries().to_vec()))
}

#[pyfunction]
fn change_rate(width: usize, height: usize, mods: Vec<i8>) -> PyResult<f64> {
    Ok(simulator::change_rate(&mods_from(width, height, mods)?))
}

#[pyfunction]
fn fcc(width: usize, height: usize, mods: Vec<i8>, n: usize) -> PyResult<f64> {
    metrics::fcc(&mods_from(width, height, mods)?, n).map_err(value_err)
}

#[pyfunction]
fn p_e(scores_cover: Vec<f64>, scores_stego: Vec<f64>) -> PyResult<f64> {
    metrics::p_e(&scores_cover, &scores_stego).map_err(value_err)
}

#[pyfunction]
fn spam_features(img: &PyImage) -> PyResult<Vec<f64>> {
    Ok(environment::extract_features(&img.inner).map_err(value_err)?.0)
}

#[pyfunction]
#[pyo3(signature = (width, height, count, seed = 0, start = 0))]
fn synthetic_corpus(width: usize, height: usize, count: u64, seed: u64, start: u64) -> Vec<PyImage> {
    CorpusSpec::new(width, height, seed)
        .images(start..start + count)
        .into_iter()
        .map(|inner| PyImage { inner })
        .collect()
}

/// Builtin SPAM + logistic-regression detector.
#[pyclass(name = "LinearModel", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyLinearModel {
    inner: LinearModel,
}

#[pymethods]
impl PyLinearModel {
    /// Trains on paired covers and stegos; returns (model, train accuracy, validation accuracy).
    #[staticmethod]
    #[pyo3(signature = (covers, stegos, epochs = 60, seed = 0))]
    fn train(covers: Vec<PyImage>, stegos: Vec<PyImage>, epochs: usize, seed: u64) -> PyResult<(Self, f64, f64)> {
        let c: Vec<PixelMatrix> = covers.into_iter().map(|i| i.inner).collect();
        let s: Vec<PixelMatrix> = stegos.into_iter().map(|i| i.inner).collect();
        let hyper = TrainHyper { epochs, seed, ..TrainHyper::default() };
        let out = environment::train(&c, &s, &hyper).map_err(value_err)?;
        Ok((Self { inner: out.model }, out.train_accuracy, out.validation_accuracy))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: LinearModel::load(path).map_err(value_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(value_err)
    }

    /// Cover confidence in [0, 1].
    fn score(&self, img: &PyImage) -> PyResult<f64> {
        Ok(self.inner.score(&img.inner).map_err(value_err)?.value())
    }
}

/// Wraps a Python callable `f(Image) -> float` as an environment.
struct CallableEnv<'py> {
    func: Bound<'py, PyAny>,
}

impl Environment for CallableEnv<'_> {
    fn cover_confidence(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        let value = self
            .func
            .call1((PyImage { inner: img.clone() },))
            .and_then(|v| v.extract::<f64>())
            .map_err(|e| EnvError::Remote(format!("python environment: {e}")))?;
        EnvScore::new(value)
    }
}

/// Embeds with search-adjusted costs. `env` is a LinearModel or a callable
/// returning cover confidence. Returns (stego, modifications, trace JSON).
#[pyfunction]
#[pyo3(signature = (
    cover, payload_bits, env, seed = 0, max_searches = 128, threshold = 0.98,
    alpha = 1.5, uct_c = std::f64::consts::SQRT_2, scheme = "spatial2x2", cost = None,
    adjust_first = false,
))]
#[allow(clippy::too_many_arguments)]
fn embed<'py>(
    cover: &PyImage,
    payload_bits: f64,
    env: &Bound<'py, PyAny>,
    seed: u64,
    max_searches: usize,
    threshold: f64,
    alpha: f64,
    uct_c: f64,
    scheme: &str,
    cost: Option<PyCostPair>,
    adjust_first: bool,
) -> PyResult<(PyImage, Vec<i8>, String)> {
    let mut plan = EmbedPlan::new(payload_bits, seed);
    plan.scheme = scheme.parse::<SchemeKind>().map_err(value_err)?;
    plan.budget.max_searches = max_searches;
    plan.budget.confidence_threshold = threshold;
    plan.budget.alpha = alpha;
    plan.budget.exploration_c = uct_c;
    plan.adjust_first_sublattice = adjust_first;
    if let Some(c) = cost {
        plan.cost_source = CostSource::External(c.inner);
    }
    let result = if let Ok(model) = env.cast::<PyLinearModel>() {
        let mut m = model.get().inner.clone();
        pipeline::embed(&cover.inner, &plan, &mut m)
    } else {
        pipeline::embed(&cover.inner, &plan, &mut CallableEnv { func: env.clone() })
    }
    .map_err(value_err)?;
    let trace = serde_json::to_string(&result.trace).map_err(value_err)?;
    Ok((PyImage { inner: result.stego }, result.mods.entries().to_vec(), trace))
}

/// CMD baseline embedding; returns (stego, modifications).
#[pyfunction]
#[pyo3(signature = (cover, payload_bits, alpha = 9.0, seed = 0))]
fn embed_cmd(cover: &PyImage, payload_bits: f64, alpha: f64, seed: u64) -> PyResult<(PyImage, Vec<i8>)> {
    let s = pipeline::embed_cmd(&cover.inner, payload_bits, alpha, SchemeKind::Spatial2x2, &CostSource::BuiltinHill, seed)
        .map_err(value_err)?;
    Ok((PyImage { inner: s.stego }, s.mods.entries().to_vec()))
}

/// Plain HILL embedding; returns (stego, modifications).
#[pyfunction]
#[pyo3(signature = (cover, payload_bits, seed = 0))]
fn embed_plain(cover: &PyImage, payload_bits: f64, seed: u64) -> PyResult<(PyImage, Vec<i8>)> {
    let s = pipeline::embed_plain(&cover.inner, payload_bits, &CostSource::BuiltinHill, seed).map_err(value_err)?;
    Ok((PyImage { inner: s.stego }, s.mods.entries().to_vec()))
}

#[pymodule]
fn mctsteg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyCostPair>()?;
    m.add_class::<PyLinearModel>()?;
    m.add_function(wrap_pyfunction!(hill_cost, m)?)?;
    m.add_function(wrap_pyfunction!(distortion, m)?)?;
    m.add_function(wrap_pyfunction!(fit_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(change_rate, m)?)?;
    m.add_function(wrap_pyfunction!(fcc, m)?)?;
    m.add_function(wrap_pyfunction!(p_e, m)?)?;
    m.add_function(wrap_pyfunction!(spam_features, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(embed_plain, m)?)?;
    m.add_function(wrap_pyfunction!(embed_cmd, m)?)?;
    m.add("WET_COST", mctsteg_core::WET_COST)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domains_parse() {
        assert_eq!(parse_domain("spatial").unwrap(), Domain::Spatial);
        assert_eq!(parse_domain("jpeg").unwrap(), Domain::Jpeg);
        assert!(parse_domain("png").is_err());
    }

    #[test]
    fn mods_check_shape() {
        assert!(mods_from(2, 2, vec![0, 1, -1, 0]).is_ok());
        assert!(mods_from(2, 2, vec![0, 1]).is_err());
    }
}
