//! Python bindings: parameter presets, keys, encrypt/decrypt, the
//! homomorphic operations, column packing, models, and the one-process
//! simulated session. Build with `cargo build -p vertinfer-py` and load the
//! produced `libvertinfer.so` as the module `vertinfer` (see
//! python/smoke_test.py).

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use vertinfer_core::ckks;
use vertinfer_core::einfer::compile::WeightForm;
use vertinfer_core::einfer::{self, fixtures, ModelSpec};
use vertinfer_core::protocol::session::{run_simulated_session, SessionConfig};
use vertinfer_core::ring::{Context, CryptoParams};
use vertinfer_core::vpack::{self, ColumnPartition};

fn err(e: vertinfer_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Encryption parameters plus the precomputed context they imply.
#[pyclass(frozen)]
struct Params {
    ctx: Arc<Context>,
}

#[pymethods]
impl Params {
    /// Presets: "paper8192" (production), "tiny256", "tiny" (tests).
    #[new]
    fn new(preset: &str) -> PyResult<Self> {
        let params = CryptoParams::preset(preset).map_err(err)?;
        Ok(Params { ctx: Arc::new(Context::new(params).map_err(err)?) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let params = CryptoParams::from_json(text).map_err(err)?;
        Ok(Params { ctx: Arc::new(Context::new(params).map_err(err)?) })
    }

    fn to_json(&self) -> String {
        self.ctx.params().to_json()
    }

    #[getter]
    fn ring_degree(&self) -> usize {
        self.ctx.degree()
    }

    #[getter]
    fn slots(&self) -> usize {
        self.ctx.slots()
    }

    #[getter]
    fn max_level(&self) -> usize {
        self.ctx.max_level()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.ctx.scale()
    }

    #[getter]
    fn params_hash(&self) -> String {
        hex::encode(self.ctx.params_hash())
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(ring_degree={}, slots={}, max_level={})",
            self.ctx.degree(),
            self.ctx.slots(),
            self.ctx.max_level()
        )
    }
}

#[pyclass(frozen)]
struct SecretKey(ckks::SecretKey);

#[pyclass(frozen)]
struct PublicKey(ckks::PublicKey);

#[pyclass(frozen)]
struct EvalKey(ckks::EvalKey);

#[pyclass(frozen)]
struct Ciphertext(ckks::Ciphertext);

#[pymethods]
impl Ciphertext {
    #[getter]
    fn level(&self) -> usize {
        self.0.level
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.0.scale
    }
}

#[pyfunction]
fn keygen(params: &Params, seed: u64) -> (SecretKey, PublicKey) {
    let mut rng = StdRng::seed_from_u64(seed);
    let (sk, pk) = ckks::keygen(&params.ctx, &mut rng);
    (SecretKey(sk), PublicKey(pk))
}

#[pyfunction]
fn relin_keygen(params: &Params, sk: &SecretKey, seed: u64) -> EvalKey {
    let mut rng = StdRng::seed_from_u64(seed);
    EvalKey(ckks::relin_keygen(&params.ctx, &sk.0, &mut rng))
}

/// Key for a left rotation by `offset` slots.
#[pyfunction]
fn rot_keygen(params: &Params, sk: &SecretKey, offset: usize, seed: u64) -> EvalKey {
    let mut rng = StdRng::seed_from_u64(seed);
    EvalKey(ckks::rot_keygen(&params.ctx, &sk.0, offset, &mut rng))
}

/// Encrypts up to `slots` values at the top level and default scale.
#[pyfunction]
fn encrypt(params: &Params, pk: &PublicKey, values: Vec<f64>, seed: u64) -> PyResult<Ciphertext> {
    let ctx = &params.ctx;
    let pt = ckks::encode(ctx, &values, ctx.max_level(), ctx.scale()).map_err(err)?;
    let mut rng = StdRng::seed_from_u64(seed);
    Ok(Ciphertext(ckks::encrypt(ctx, &pk.0, &pt, &mut rng).map_err(err)?))
}

#[pyfunction]
fn decrypt(params: &Params, sk: &SecretKey, ct: &Ciphertext) -> PyResult<Vec<f64>> {
    ckks::decrypt_decode(&params.ctx, &sk.0, &ct.0).map_err(err)
}

#[pyfunction]
fn add(params: &Params, a: &Ciphertext, b: &Ciphertext) -> PyResult<Ciphertext> {
    Ok(Ciphertext(ckks::hadd(&params.ctx, &a.0, &b.0).map_err(err)?))
}

/// Multiplies, relinearizes, and rescales back to the default scale.
#[pyfunction]
fn multiply(params: &Params, a: &Ciphertext, b: &Ciphertext, rlk: &EvalKey) -> PyResult<Ciphertext> {
    Ok(Ciphertext(ckks::hmul(&params.ctx, &a.0, &b.0, &rlk.0).map_err(err)?))
}

/// Left-rotates by `offset` using its rotation key.
#[pyfunction]
fn rotate(params: &Params, a: &Ciphertext, offset: usize, key: &EvalKey) -> PyResult<Ciphertext> {
    Ok(Ciphertext(ckks::hrot_with_key(&params.ctx, &a.0, offset, &key.0).map_err(err)?))
}

/// Column ownership: party i holds columns [cuts[i], cuts[i+1]).
#[pyclass(frozen)]
struct Partition(ColumnPartition);

#[pymethods]
impl Partition {
    #[new]
    fn new(width: usize, cuts: Vec<usize>) -> PyResult<Self> {
        Ok(Partition(ColumnPartition::new(width, cuts).map_err(err)?))
    }

    #[getter]
    fn n_parties(&self) -> usize {
        self.0.n_parties()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    fn range(&self, party: usize) -> PyResult<(usize, usize)> {
        let r = self.0.range(party).map_err(err)?;
        Ok((r.start, r.end))
    }
}

/// Scatters one party's rows x own-columns data into a full slot vector that
/// is zero everywhere the party does not own. Slot-wise addition of all
/// parties' vectors (or ciphertexts) reassembles the whole matrix.
#[pyfunction]
fn pack(
    params: &Params,
    partition: &Partition,
    party: usize,
    rows: usize,
    data: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let layout =
        vpack::layout_for_model(params.ctx.slots(), rows, partition.0.width).map_err(err)?;
    Ok(vpack::vpack(&layout, &partition.0, party, &data).map_err(err)?.values)
}

/// Reads a rows x cols row-major matrix back out of a slot vector.
#[pyfunction]
fn unpack(params: &Params, rows: usize, cols: usize, slots: Vec<f64>) -> PyResult<Vec<f64>> {
    let layout = vpack::layout_for_model(params.ctx.slots(), rows, cols).map_err(err)?;
    vpack::unpack(&layout, &slots).map_err(err)
}

/// A feed-forward model: dense and convolution layers with polynomial
/// activations, plus optional per-feature input normalization.
#[pyclass(frozen)]
struct Model(ModelSpec);

#[pymethods]
impl Model {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Model(ModelSpec::from_json(text).map_err(err)?))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model(ModelSpec::load(std::path::Path::new(path), None).map_err(err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(std::path::Path::new(path)).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize) {
        (self.0.input_shape.rows, self.0.input_shape.cols)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.0.structure().depth()
    }

    fn normalize(&self, raw: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.normalize(&raw).map_err(err)
    }

    /// Reference evaluation on an already-normalized input.
    fn infer_clear(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        einfer::infer_clear(&self.0, &x).map_err(err)
    }

    /// normalize() then infer_clear().
    fn predict(&self, raw: Vec<f64>) -> PyResult<Vec<f64>> {
        self.infer_clear(self.normalize(raw)?)
    }
}

/// Fixed-weight 4->3->2 MLP with a squaring activation.
#[pyfunction]
fn toy_mlp() -> Model {
    Model(fixtures::toy_mlp())
}

/// 1198-parameter CNN classifier over 28x28 grayscale images.
#[pyfunction]
fn digit_cnn(seed: u64) -> Model {
    Model(fixtures::digit_cnn(seed))
}

/// (flat 28x28 pixels in [0, 255], class label) test images.
#[pyfunction]
fn synthetic_digits(count: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    fixtures::synthetic_digits(count, seed)
}

/// Runs the whole protocol in-process — N input parties, server, and
/// coordinator on threads — and returns the coordinator's score vectors.
/// `cuts[i]` is party i's first column; `table[r]` is one full record,
/// rows x cols row-major, unnormalized.
#[pyfunction]
#[pyo3(signature = (params, model, cuts, table, records, encrypted_weights=false, seed=0))]
fn run_session(
    params: &Params,
    model: &Model,
    cuts: Vec<usize>,
    table: Vec<Vec<f64>>,
    records: Vec<u64>,
    encrypted_weights: bool,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let partition = ColumnPartition::new(model.0.input_shape.cols, cuts).map_err(err)?;
    let mut session_id = [0u8; 16];
    session_id[..8].copy_from_slice(&seed.to_le_bytes());
    session_id[8..].copy_from_slice(&seed.to_be_bytes());
    let cfg = SessionConfig::new(
        params.ctx.params().clone(),
        partition.n_parties(),
        session_id,
    );
    let form = if encrypted_weights { WeightForm::Encrypted } else { WeightForm::Plain };
    let outcome = run_simulated_session(&cfg, &model.0, &partition, &table, &records, form, seed)
        .map_err(err)?;
    Ok(outcome.scores)
}

#[pymodule]
fn vertinfer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Params>()?;
    m.add_class::<SecretKey>()?;
    m.add_class::<PublicKey>()?;
    m.add_class::<EvalKey>()?;
    m.add_class::<Ciphertext>()?;
    m.add_class::<Partition>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(keygen, m)?)?;
    m.add_function(wrap_pyfunction!(relin_keygen, m)?)?;
    m.add_function(wrap_pyfunction!(rot_keygen, m)?)?;
    m.add_function(wrap_pyfunction!(encrypt, m)?)?;
    m.add_function(wrap_pyfunction!(decrypt, m)?)?;
    m.add_function(wrap_pyfunction!(add, m)?)?;
    m.add_function(wrap_pyfunction!(multiply, m)?)?;
    m.add_function(wrap_pyfunction!(rotate, m)?)?;
    m.add_function(wrap_pyfunction!(pack, m)?)?;
    m.add_function(wrap_pyfunction!(unpack, m)?)?;
    m.add_function(wrap_pyfunction!(toy_mlp, m)?)?;
    m.add_function(wrap_pyfunction!(digit_cnn, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_digits, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    Ok(())
}
