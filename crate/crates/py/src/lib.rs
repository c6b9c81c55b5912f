//! Python bindings. Errors surface as `qeaes.QeaesError(kind, message)`.

use std::sync::Mutex;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use qeaes_core::aes_core::{self, BlockKey256, Block, WHITENING_LEN};
use qeaes_core::conditioning;
use qeaes_core::container;
use qeaes_core::entropy_source::{open_source, BitSupply, SourceDescriptor, SourceHandle};
use qeaes_core::health::{self, EventLog, HealthAction, HealthPolicy};
use qeaes_core::lifecycle::{self, RekeyPolicy};
use qeaes_core::qe_schedule::{self, Mode};
use qeaes_core::stats_suite::{self, nist, NistTest};
use qeaes_core::BitBuf;

create_exception!(qeaes, QeaesError, PyException);

fn err(e: qeaes_core::Error) -> PyErr {
    QeaesError::new_err((e.kind(), e.to_string()))
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "p" | "QE-P" => Ok(Mode::Qep),
        "h" | "QE-H" => Ok(Mode::Qeh),
        _ => Err(PyValueError::new_err(format!("unknown mode `{mode}`, expected p or h"))),
    }
}

fn parse_source(s: &str) -> PyResult<SourceDescriptor> {
    s.parse().map_err(err)
}

fn key_from(key: &[u8]) -> PyResult<BlockKey256> {
    BlockKey256::from_slice(key).ok_or_else(|| PyValueError::new_err("key must be 32 bytes"))
}

fn block_from(b: &[u8]) -> PyResult<Block> {
    b.try_into().map_err(|_| PyValueError::new_err("block must be 16 bytes"))
}

fn round_keys(key: &[u8], whitening: Option<&[u8]>) -> PyResult<aes_core::RoundKeySet> {
    let keys = aes_core::expand_key(&key_from(key)?);
    match whitening {
        None => Ok(keys),
        Some(w) => {
            let w: &[u8; WHITENING_LEN] = w
                .try_into()
                .map_err(|_| PyValueError::new_err("whitening must be 240 bytes"))?;
            Ok(keys.with_whitening(w))
        }
    }
}

/// Encrypts one 16-byte block. `whitening` (240 bytes) defaults to zeros.
#[pyfunction]
#[pyo3(signature = (key, block, whitening=None))]
fn encrypt_block<'py>(py: Python<'py>, key: &[u8], block: &[u8], whitening: Option<&[u8]>) -> PyResult<Bound<'py, PyBytes>> {
    let ct = aes_core::encrypt_block(&block_from(block)?, &round_keys(key, whitening)?);
    Ok(PyBytes::new(py, &ct))
}

#[pyfunction]
#[pyo3(signature = (key, block, whitening=None))]
fn decrypt_block<'py>(py: Python<'py>, key: &[u8], block: &[u8], whitening: Option<&[u8]>) -> PyResult<Bound<'py, PyBytes>> {
    let pt = aes_core::decrypt_block(&block_from(block)?, &round_keys(key, whitening)?);
    Ok(PyBytes::new(py, &pt))
}

/// Von Neumann extraction. Returns `(packed_bytes, bit_count)`.
#[pyfunction]
#[pyo3(signature = (data, nbits=None))]
fn von_neumann<'py>(py: Python<'py>, data: &[u8], nbits: Option<usize>) -> PyResult<(Bound<'py, PyBytes>, usize)> {
    let n = nbits.unwrap_or(data.len() * 8);
    if n > data.len() * 8 {
        return Err(PyValueError::new_err("nbits exceeds data length"));
    }
    let out = conditioning::von_neumann_bits(&BitBuf::from_bytes_with_len(data.to_vec(), n)).map_err(err)?;
    Ok((PyBytes::new(py, out.bits.as_bytes()), out.bits.len()))
}

#[pyfunction]
fn condense<'py>(py: Python<'py>, data: &[u8], domain_tag: &str) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &conditioning::condense_bytes(data, domain_tag).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (e_q, e_c, context, out_len=conditioning::HYBRID_SEED_LEN))]
fn mix_hybrid<'py>(py: Python<'py>, e_q: &[u8], e_c: &[u8], context: &str, out_len: usize) -> PyResult<Bound<'py, PyBytes>> {
    let seed = conditioning::mix_hybrid(e_q, e_c, context, out_len).map_err(err)?;
    Ok(PyBytes::new(py, &seed.mixed))
}

#[pyfunction]
fn chi_square_p(chi2: f64, dof: u32) -> f64 {
    stats_suite::chi_square_p(chi2, dof)
}

#[pyfunction]
fn ent_metrics<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let r = stats_suite::ent_metrics(data).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("bytes", r.bytes)?;
    d.set_item("bits_per_byte", r.bits_per_byte)?;
    d.set_item("chi_square", r.chi_square)?;
    d.set_item("chi_square_p", r.chi_square_p)?;
    d.set_item("monte_carlo_pi", r.monte_carlo_pi)?;
    d.set_item("pi_error_pct", r.pi_error_pct)?;
    d.set_item("serial_correlation", r.serial_correlation)?;
    Ok(d)
}

/// Runs the NIST subset over byte samples; returns `{test: {"pass_rate", "ks", "p_values"}}`.
#[pyfunction]
fn nist_subset<'py>(py: Python<'py>, samples: Vec<Vec<u8>>) -> PyResult<Bound<'py, PyDict>> {
    let bufs: Vec<BitBuf> = samples.into_iter().map(BitBuf::from_bytes).collect();
    let r = py.detach(|| stats_suite::nist_subset(&bufs)).map_err(err)?;
    let d = PyDict::new(py);
    for test in NistTest::ALL {
        let o = r.outcome(test);
        let ps: Vec<f64> = o.p_values.iter().map(|(_, p)| *p).collect();
        let t = PyDict::new(py);
        t.set_item("pass_rate", o.pass_rate)?;
        t.set_item("ks", nist::ks_uniform_statistic(&ps))?;
        t.set_item("p_values", PyList::new(py, ps)?)?;
        d.set_item(test.name(), t)?;
    }
    Ok(d)
}

/// Online health check of one batch. Returns a dict with the p-values, the
/// longest repeat, the verdict and the failed check names.
#[pyfunction]
#[pyo3(signature = (data, alpha=1e-6, max_run=64, batch_id=0))]
fn check_batch<'py>(py: Python<'py>, data: &[u8], alpha: f64, max_run: usize, batch_id: u64) -> PyResult<Bound<'py, PyDict>> {
    let bits = BitBuf::from_bytes(data.to_vec());
    let policy = HealthPolicy {
        batch_bits: bits.len().min(HealthPolicy::default().batch_bits).max(1024),
        alpha,
        max_run,
        action: HealthAction::ReseedFromBackup,
    };
    let r = health::check_batch(&bits, &policy, batch_id).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("batch_id", r.batch_id)?;
    d.set_item("bits", r.bits)?;
    d.set_item("monobit_p", r.monobit_p)?;
    d.set_item("runs_p", r.runs_p)?;
    d.set_item("longest_repeat", r.longest_repeat)?;
    d.set_item("verdict", r.verdict.to_string())?;
    let failed: Vec<&str> = r.failed_checks.iter().map(|c| c.name()).collect();
    d.set_item("failed_checks", failed)?;
    Ok(d)
}

/// A raw entropy source: `sim:<seed>[:bias]`, `file:<path>` or `os`.
#[pyclass(module = "qeaes")]
struct EntropySource {
    inner: Mutex<SourceHandle>,
    label: String,
}

#[pymethods]
impl EntropySource {
    #[new]
    fn new(descriptor: &str) -> PyResult<Self> {
        let h = open_source(&parse_source(descriptor)?).map_err(err)?;
        Ok(Self {
            label: h.label().to_owned(),
            inner: Mutex::new(h),
        })
    }

    fn read<'py>(&self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = vec![0u8; n];
        self.inner.lock().expect("source lock").fill_bytes(&mut buf).map_err(err)?;
        Ok(PyBytes::new(py, &buf))
    }

    #[getter]
    fn label(&self) -> &str {
        &self.label
    }

    fn __repr__(&self) -> String {
        format!("EntropySource('{}')", self.label)
    }
}

/// Health-guarded quantum source plus a classical source for hybrid mode.
#[pyclass(module = "qeaes")]
struct KeySource {
    inner: Mutex<qe_schedule::KeySource>,
    log: EventLog,
}

#[pymethods]
impl KeySource {
    #[new]
    #[pyo3(signature = (source, classical="os", backup=None))]
    fn new(source: &str, classical: &str, backup: Option<&str>) -> PyResult<Self> {
        let primary = open_source(&parse_source(source)?).map_err(err)?;
        let backup = backup
            .map(|b| parse_source(b).and_then(|d| open_source(&d).map_err(err)))
            .transpose()?;
        let classical = open_source(&parse_source(classical)?).map_err(err)?;
        let log = EventLog::in_memory();
        let guarded = health::guard_stream(primary, HealthPolicy::default(), backup, log.clone()).map_err(err)?;
        Ok(Self {
            inner: Mutex::new(qe_schedule::KeySource::new(guarded).with_classical(classical)),
            log,
        })
    }

    /// Debiased bytes from the guarded quantum source.
    fn conditioned_bytes<'py>(&self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = vec![0u8; n];
        self.inner.lock().expect("source lock").conditioned_bytes(&mut buf).map_err(err)?;
        Ok(PyBytes::new(py, &buf))
    }

    /// Health event log lines (tab-separated).
    fn health_log(&self) -> Vec<String> {
        self.log.records().iter().map(|r| r.to_line()).collect()
    }
}

/// Epoch keystore, either file-backed (locked while open) or in memory.
#[pyclass(module = "qeaes")]
struct Keystore {
    inner: Mutex<lifecycle::Keystore>,
}

impl Keystore {
    fn wrap(ks: lifecycle::Keystore) -> Self {
        Self { inner: Mutex::new(ks) }
    }
}

#[pymethods]
impl Keystore {
    /// Creates a new keystore file with a freshly derived first epoch.
    #[staticmethod]
    #[pyo3(signature = (path, key_source, mode="p", context="default"))]
    fn create(path: std::path::PathBuf, key_source: &KeySource, mode: &str, context: &str) -> PyResult<Self> {
        let mut src = key_source.inner.lock().expect("source lock");
        let first = src.derive(parse_mode(mode)?, context).map_err(err)?;
        Ok(Self::wrap(lifecycle::Keystore::create(&path, first, lifecycle::now_unix()).map_err(err)?))
    }

    #[staticmethod]
    fn open(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self::wrap(lifecycle::Keystore::open(&path).map_err(err)?))
    }

    #[staticmethod]
    #[pyo3(signature = (key_source, mode="p", context="default"))]
    fn in_memory(key_source: &KeySource, mode: &str, context: &str) -> PyResult<Self> {
        let mut src = key_source.inner.lock().expect("source lock");
        let first = src.derive(parse_mode(mode)?, context).map_err(err)?;
        Ok(Self::wrap(lifecycle::Keystore::in_memory(first, lifecycle::now_unix())))
    }

    #[getter]
    fn active_id(&self) -> PyResult<u64> {
        self.inner.lock().expect("keystore lock").active_id().map_err(err)
    }

    /// `[{"epoch_id", "status", "mode", "context", "created_at"}, ...]`; no key bytes.
    fn epochs<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let ks = self.inner.lock().expect("keystore lock");
        ks.epochs()
            .into_iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("epoch_id", e.epoch_id)?;
                d.set_item("status", format!("{:?}", e.status))?;
                d.set_item("mode", e.mode.to_string())?;
                d.set_item("context", e.context)?;
                d.set_item("created_at", e.created_at)?;
                Ok(d)
            })
            .collect()
    }

    fn rekey(&self, key_source: &KeySource) -> PyResult<u64> {
        let mut src = key_source.inner.lock().expect("source lock");
        let mut ks = self.inner.lock().expect("keystore lock");
        ks.rekey(lifecycle::now_unix(), |m, c| src.derive(m, c)).map_err(err)
    }

    /// Overwrites a retired epoch with random bytes, then zeros.
    fn erase(&self, epoch_id: u64, key_source: &KeySource) -> PyResult<()> {
        let mut src = key_source.inner.lock().expect("source lock");
        let mut ks = self.inner.lock().expect("keystore lock");
        ks.secure_erase(epoch_id, |b| src.conditioned_bytes(b)).map_err(err)
    }

    /// Seals `plaintext` into container bytes, rekeying first if the policy is due.
    #[pyo3(signature = (plaintext, key_source, t_block=1u64 << 32, t_time=0))]
    fn encrypt<'py>(
        &self,
        py: Python<'py>,
        plaintext: &[u8],
        key_source: &KeySource,
        t_block: u64,
        t_time: u64,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let policy = RekeyPolicy::new(t_block, t_time).map_err(err)?;
        let mut src = key_source.inner.lock().expect("source lock");
        let mut ks = self.inner.lock().expect("keystore lock");
        let c = container::encrypt_message(plaintext, &mut ks, &policy, &mut src).map_err(err)?;
        Ok(PyBytes::new(py, &c.to_bytes()))
    }

    fn decrypt<'py>(&self, py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let ks = self.inner.lock().expect("keystore lock");
        let pt = container::decrypt_message(data, &ks).map_err(err)?;
        Ok(PyBytes::new(py, &pt))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner.lock().expect("keystore lock"))
    }
}

#[pymodule]
fn qeaes(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QeaesError", m.py().get_type::<QeaesError>())?;
    m.add_class::<EntropySource>()?;
    m.add_class::<KeySource>()?;
    m.add_class::<Keystore>()?;
    m.add_function(wrap_pyfunction!(encrypt_block, m)?)?;
    m.add_function(wrap_pyfunction!(decrypt_block, m)?)?;
    m.add_function(wrap_pyfunction!(von_neumann, m)?)?;
    m.add_function(wrap_pyfunction!(condense, m)?)?;
    m.add_function(wrap_pyfunction!(mix_hybrid, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_p, m)?)?;
    m.add_function(wrap_pyfunction!(ent_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(nist_subset, m)?)?;
    m.add_function(wrap_pyfunction!(check_batch, m)?)?;
    Ok(())
}
