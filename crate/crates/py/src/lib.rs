//! Python bindings for the alignment library: vector fields, samplers,
//! invertible networks, training and the similarity metrics.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use vfalign::dynsys;
use vfalign::error::Error;
use vfalign::iresnet;
use vfalign::loss;
use vfalign::sampling;
use vfalign::svcca;
use vfalign::tensor::Tensor;
use vfalign::train;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::UnsupportedVersion { .. } => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows_to_tensor(rows: Vec<Vec<f64>>, context: &str) -> PyResult<Tensor> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(PyValueError::new_err(format!("{context}: empty batch")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{context}: ragged rows")));
    }
    Ok(Tensor::from_rows(&rows))
}

/// An autonomous vector field `x ↦ f(x)`.
#[pyclass(name = "VectorField")]
#[derive(Clone)]
struct PyVectorField {
    inner: dynsys::VectorField,
}

#[pymethods]
impl PyVectorField {
    #[staticmethod]
    fn van_der_pol(mu: f64) -> PyVectorField {
        PyVectorField { inner: dynsys::VectorField::VanDerPol { mu } }
    }

    #[staticmethod]
    fn pitchfork(mu: f64) -> PyVectorField {
        PyVectorField { inner: dynsys::VectorField::Pitchfork { mu } }
    }

    #[staticmethod]
    #[pyo3(signature = (a, bias=None))]
    fn linear(a: Vec<Vec<f64>>, bias: Option<Vec<f64>>) -> PyResult<PyVectorField> {
        let a = rows_to_tensor(a, "linear system matrix")?;
        if a.rows() != a.cols() {
            return Err(PyValueError::new_err("linear system matrix must be square"));
        }
        if let Some(b) = &bias {
            if b.len() != a.rows() {
                return Err(PyValueError::new_err("bias length must match dimension"));
            }
        }
        Ok(PyVectorField { inner: dynsys::VectorField::Linear { a, bias } })
    }

    /// Random-plus-low-rank RNN connectivity, `ẋ = -x + W tanh(x)`.
    #[staticmethod]
    #[pyo3(signature = (n, k, seed, scale_j_by_dim=true))]
    fn low_rank_rnn(n: usize, k: usize, seed: u64, scale_j_by_dim: bool) -> PyVectorField {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PyVectorField { inner: dynsys::random_lowrank_rnn(n, k, &mut rng, scale_j_by_dim).field() }
    }

    /// Context RNN from a weights file.
    #[staticmethod]
    fn from_weights_file(path: &str) -> PyResult<PyVectorField> {
        let spec = dynsys::load_rnn_weights(std::path::Path::new(path)).map_err(to_py_err)?;
        Ok(PyVectorField { inner: spec.field() })
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.eval(&x).map_err(to_py_err)
    }

    fn jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err("point dimension mismatch"));
        }
        Ok(self.inner.jacobian(&x).to_rows())
    }

    /// The conjugate field `y ↦ Q f(Q⁻¹ y)`.
    fn conjugate(&self, q: Vec<Vec<f64>>) -> PyResult<PyVectorField> {
        let q = rows_to_tensor(q, "conjugation matrix")?;
        Ok(PyVectorField { inner: dynsys::make_conjugate(&self.inner, &q).map_err(to_py_err)? })
    }

    fn scaled(&self, alpha: f64) -> PyVectorField {
        PyVectorField { inner: self.inner.scaled(alpha) }
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// A seeded phase-space sampler.
#[pyclass(name = "Sampler")]
#[derive(Clone)]
struct PySampler {
    inner: sampling::Sampler,
}

#[pymethods]
impl PySampler {
    #[staticmethod]
    fn uniform_box(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> PyResult<PySampler> {
        Ok(PySampler { inner: sampling::Sampler::uniform_box(lo, hi, seed).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn gaussian(mean: Vec<f64>, std: f64, seed: u64) -> PyResult<PySampler> {
        Ok(PySampler { inner: sampling::Sampler::gaussian(mean, std, seed).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn standard_normal(dim: usize, seed: u64) -> PySampler {
        PySampler { inner: sampling::Sampler::standard_normal(dim, seed) }
    }

    #[staticmethod]
    fn vdp_box(seed: u64) -> PySampler {
        PySampler { inner: sampling::Sampler::vdp_box(seed) }
    }

    #[staticmethod]
    fn pitchfork_box(mu: f64, seed: u64) -> PySampler {
        PySampler { inner: sampling::Sampler::pitchfork_box(mu, seed) }
    }

    /// Pool of post-burn-in states of the noisy system.
    #[staticmethod]
    #[pyo3(signature = (field, sigma, seed, dt=0.01, t_burn=50.0, t_end=100.0, trials=1000, save_every=10))]
    #[allow(clippy::too_many_arguments)]
    fn asymptotic(
        field: &PyVectorField,
        sigma: f64,
        seed: u64,
        dt: f64,
        t_burn: f64,
        t_end: f64,
        trials: usize,
        save_every: usize,
    ) -> PyResult<PySampler> {
        let params = sampling::AsymptoticParams { sigma, dt, t_burn, t_end, trials, save_every };
        Ok(PySampler {
            inner: sampling::Sampler::asymptotic(&field.inner, &params, seed).map_err(to_py_err)?,
        })
    }

    /// Draws mapped through `x ↦ Ax + b`.
    #[pyo3(signature = (a, bias=None))]
    fn linear_image(&self, a: Vec<Vec<f64>>, bias: Option<Vec<f64>>) -> PyResult<PySampler> {
        let a = rows_to_tensor(a, "sampler image matrix")?;
        Ok(PySampler {
            inner: self.inner.clone().linear_image(a, bias).map_err(to_py_err)?,
        })
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn draw(&mut self, count: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.draw(count).map_err(to_py_err)?.to_rows())
    }

    fn reseed(&mut self, seed: u64) {
        self.inner.reseed(seed);
    }
}

/// Invertible residual network.
#[pyclass(name = "IResNet")]
#[derive(Clone)]
struct PyIResNet {
    inner: iresnet::IResNet,
}

#[pymethods]
impl PyIResNet {
    #[staticmethod]
    #[pyo3(signature = (dim, layers=10, cap=0.99, seed=0))]
    fn init(dim: usize, layers: usize, cap: f64, seed: u64) -> PyResult<PyIResNet> {
        Ok(PyIResNet { inner: iresnet::IResNet::init(dim, layers, cap, seed).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<PyIResNet> {
        Ok(PyIResNet { inner: iresnet::IResNet::load(std::path::Path::new(path)).map_err(to_py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(to_py_err)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn layers(&self) -> usize {
        self.inner.layers()
    }

    fn forward(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = rows_to_tensor(points, "forward batch")?;
        Ok(self.inner.forward(&x).map_err(to_py_err)?.to_rows())
    }

    /// `(H(x), ∂H/∂x·v)` rows for matched point/direction batches.
    fn forward_with_tangent(
        &self,
        points: Vec<Vec<f64>>,
        directions: Vec<Vec<f64>>,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let x = rows_to_tensor(points, "tangent batch")?;
        let v = rows_to_tensor(directions, "tangent directions")?;
        let (y, t) = self.inner.forward_with_tangent(&x, &v).map_err(to_py_err)?;
        Ok((y.to_rows(), t.to_rows()))
    }

    #[pyo3(signature = (points, tol=1e-10, max_iter=100))]
    fn inverse(&self, points: Vec<Vec<f64>>, tol: f64, max_iter: usize) -> PyResult<Vec<Vec<f64>>> {
        let y = rows_to_tensor(points, "inverse batch")?;
        Ok(self.inner.inverse(&y, tol, max_iter).map_err(to_py_err)?.to_rows())
    }
}

/// Training hyperparameters.
#[pyclass(name = "TrainConfig")]
#[derive(Clone)]
struct PyTrainConfig {
    inner: train::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (batches, seed=0, batch_size=128, lr=0.001, cap=0.99, layers=10,
                        restarts=3, eval_every=200, eval_samples=10000, trace_samples=1000,
                        w_forward=1.0, w_backward=1.0, w_inverse=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        batches: usize,
        seed: u64,
        batch_size: usize,
        lr: f64,
        cap: f64,
        layers: usize,
        restarts: usize,
        eval_every: usize,
        eval_samples: usize,
        trace_samples: usize,
        w_forward: f64,
        w_backward: f64,
        w_inverse: f64,
    ) -> PyResult<PyTrainConfig> {
        let mut cfg = train::TrainConfig::new(batches, seed);
        cfg.batch_size = batch_size;
        cfg.lr = lr;
        cfg.cap = cap;
        cfg.layers = layers;
        cfg.restarts = restarts;
        cfg.eval_every = eval_every;
        cfg.eval_samples = eval_samples;
        cfg.trace_samples = trace_samples;
        cfg.weights = loss::LossWeights { forward: w_forward, backward: w_backward, inverse: w_inverse };
        cfg.validate().map_err(to_py_err)?;
        Ok(PyTrainConfig { inner: cfg })
    }

    fn __repr__(&self) -> String {
        serde_json::to_string(&self.inner).unwrap_or_default()
    }
}

fn report_to_dict(py: Python<'_>, rep: &loss::SimilarityReport) -> PyResult<Py<pyo3::types::PyAny>> {
    let json = serde_json::to_string(rep).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let module = py.import("json")?;
    let obj = module.call_method1("loads", (json,))?;
    Ok(obj.unbind())
}

/// Trains the bidirectional alignment and returns
/// `(phi, psi, final_report, run_record_json)`.
#[pyfunction]
fn train_alignment(
    py: Python<'_>,
    f: &PyVectorField,
    g: &PyVectorField,
    p: &PySampler,
    q: &PySampler,
    config: &PyTrainConfig,
) -> PyResult<(PyIResNet, PyIResNet, Py<pyo3::types::PyAny>, String)> {
    let out = train::train(&f.inner, &g.inner, &p.inner, &q.inner, &config.inner)
        .map_err(to_py_err)?;
    let report = report_to_dict(py, &out.record.final_report)?;
    let record = serde_json::to_string(&out.record).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyIResNet { inner: out.phi }, PyIResNet { inner: out.psi }, report, record))
}

/// Bidirectional orbital similarity through a trained pair of maps.
#[pyfunction]
#[pyo3(signature = (f, g, phi, psi, p, q, samples=10000))]
fn similarity(
    py: Python<'_>,
    f: &PyVectorField,
    g: &PyVectorField,
    phi: &PyIResNet,
    psi: &PyIResNet,
    p: &mut PySampler,
    q: &mut PySampler,
    samples: usize,
) -> PyResult<Py<pyo3::types::PyAny>> {
    let rep = loss::similarity(
        &f.inner,
        &g.inner,
        &phi.inner,
        &psi.inner,
        &mut p.inner,
        &mut q.inner,
        samples,
    )
    .map_err(to_py_err)?;
    report_to_dict(py, &rep)
}

/// One-directional orbital loss of a transform on a fixed batch;
/// returns `(loss, excluded_count)`.
#[pyfunction]
fn orbital_loss(
    f: &PyVectorField,
    g: &PyVectorField,
    h: &PyIResNet,
    batch: Vec<Vec<f64>>,
) -> PyResult<(f64, usize)> {
    let x = rows_to_tensor(batch, "loss batch")?;
    loss::orbital_loss(&f.inner, &g.inner, &h.inner, &x).map_err(to_py_err)
}

/// Trajectory-CCA baseline similarity between two systems.
#[pyfunction]
#[pyo3(signature = (f, g, init_a, init_b, trials=1000, dt=0.02, horizon=10.0, sigma=0.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn svcca_similarity(
    f: &PyVectorField,
    g: &PyVectorField,
    init_a: &PySampler,
    init_b: &PySampler,
    trials: usize,
    dt: f64,
    horizon: f64,
    sigma: f64,
    seed: u64,
) -> PyResult<f64> {
    svcca::svcca_similarity(
        &f.inner,
        &g.inner,
        &init_a.inner,
        &init_b.inner,
        trials,
        dt,
        horizon,
        sigma,
        seed,
    )
    .map_err(to_py_err)
}

#[pymodule]
fn vfalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVectorField>()?;
    m.add_class::<PySampler>()?;
    m.add_class::<PyIResNet>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_function(wrap_pyfunction!(train_alignment, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(orbital_loss, m)?)?;
    m.add_function(wrap_pyfunction!(svcca_similarity, m)?)?;
    Ok(())
}
