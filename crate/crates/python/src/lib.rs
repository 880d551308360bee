//! Python bindings. Bit strings cross the boundary as `str` of `'0'`/`'1'`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pufrla_core::bitstring::{self, BitString};
use pufrla_core::ecc::BchCode as CoreBch;
use pufrla_core::harness::{self, Direction, SystemConfig, Testbed as CoreTestbed};
use pufrla_core::puf::{PufConfig, PufInstance};
use pufrla_core::shuffler;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_bits(s: &str) -> PyResult<BitString> {
    BitString::from_bin_str(s).map_err(err)
}

fn bits_str(b: &BitString) -> String {
    b.bits().map(|x| if x { '1' } else { '0' }).collect()
}

#[pyfunction]
fn shuffle(bits: &str, key: u64) -> PyResult<String> {
    Ok(bits_str(&shuffler::shuffle(&parse_bits(bits)?, key)))
}

#[pyfunction]
fn deshuffle(bits: &str, key: u64) -> PyResult<String> {
    Ok(bits_str(&shuffler::deshuffle(&parse_bits(bits)?, key)))
}

#[pyfunction]
fn balance_check(bits: &str) -> PyResult<bool> {
    Ok(bitstring::balance_check(&parse_bits(bits)?))
}

/// The shipped default configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    SystemConfig::default().to_toml()
}

#[pyclass(name = "BchCode", module = "pufrla")]
struct PyBchCode {
    inner: CoreBch,
}

#[pymethods]
impl PyBchCode {
    #[new]
    #[pyo3(signature = (t = 27))]
    fn new(t: usize) -> PyResult<Self> {
        Ok(Self { inner: CoreBch::with_capability(t).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.t()
    }

    fn encode(&self, msg: &str) -> PyResult<String> {
        Ok(bits_str(&self.inner.encode(&parse_bits(msg)?).map_err(err)?))
    }

    /// Nearest codeword; raises `ValueError` when decoding fails.
    fn decode(&self, word: &str) -> PyResult<String> {
        Ok(bits_str(&self.inner.decode(&parse_bits(word)?).map_err(err)?))
    }
}

#[pyclass(name = "Puf", module = "pufrla")]
struct PyPuf {
    inner: PufInstance,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyPuf {
    #[new]
    #[pyo3(signature = (device_seed = None, sigma = 0.0, rng_seed = 0))]
    fn new(device_seed: Option<u64>, sigma: f64, rng_seed: u64) -> PyResult<Self> {
        let mut cfg = PufConfig::default();
        if let Some(s) = device_seed {
            cfg.device_seed = s;
        }
        cfg.sigma_noise = sigma;
        Ok(Self { inner: PufInstance::new(cfg).map_err(err)?, rng: ChaCha8Rng::seed_from_u64(rng_seed) })
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    /// Noiseless response to a 128-bit challenge.
    fn response(&self, challenge: &str) -> PyResult<String> {
        Ok(bits_str(&self.inner.eval_response(&parse_bits(challenge)?).map_err(err)?))
    }

    fn noisy_response(&mut self, challenge: &str) -> PyResult<String> {
        let c = parse_bits(challenge)?;
        Ok(bits_str(&self.inner.eval_response_noisy(&c, &mut self.rng).map_err(err)?))
    }

    fn calibrate_sigma(&self, ber: f64) -> PyResult<f64> {
        self.inner.calibrate_sigma(ber).map_err(err)
    }

    fn set_sigma(&mut self, sigma: f64) -> PyResult<()> {
        self.inner = self.inner.clone().with_sigma(sigma).map_err(err)?;
        Ok(())
    }
}

#[pyclass(name = "Testbed", module = "pufrla")]
struct PyTestbed {
    inner: CoreTestbed,
}

#[pymethods]
impl PyTestbed {
    /// Enrolls one device. `config` is TOML; `m` overrides its stream length.
    #[new]
    #[pyo3(signature = (m = None, config = None))]
    fn new(m: Option<u64>, config: Option<&str>) -> PyResult<Self> {
        let mut cfg = match config {
            Some(text) => SystemConfig::from_toml(text).map_err(err)?,
            None => SystemConfig::default(),
        };
        if let Some(m) = m {
            cfg.protocol.m = m;
        }
        Ok(Self { inner: CoreTestbed::new(cfg).map_err(err)? })
    }

    fn set_ber(&mut self, ber: f64) -> PyResult<f64> {
        self.inner.set_ber(ber).map_err(err)
    }

    fn run_rounds(&mut self, rounds: usize) -> f64 {
        self.inner.run_rounds(rounds)
    }

    /// One honest round as a dict with `accepted`, `reason`, `puf_invocations`
    /// and `frames` (list of `(direction, bytes)`).
    fn run_round<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let out = self.inner.run_round();
        let d = PyDict::new(py);
        d.set_item("accepted", out.accepted)?;
        d.set_item("reason", out.reason.map(|r| r.as_str()))?;
        d.set_item("puf_invocations", out.puf_invocations)?;
        let frames: Vec<(&str, Bound<'py, PyBytes>)> = out
            .transcript
            .frames
            .iter()
            .map(|(dir, f)| {
                let tag = match dir {
                    Direction::ToDevice => "to_device",
                    Direction::ToServer => "to_server",
                };
                (tag, PyBytes::new(py, f))
            })
            .collect();
        d.set_item("frames", frames)?;
        Ok(d)
    }

    fn unlock(&mut self) -> bool {
        self.inner.unlock()
    }

    #[getter]
    fn pair_index(&self) -> u64 {
        self.inner.device().state().pair_index
    }

    #[getter]
    fn puf_invocations(&self) -> u64 {
        self.inner.device().puf_invocations()
    }

    #[getter]
    fn locked(&self) -> bool {
        self.inner.device().is_locked()
    }
}

/// Runs `mitm`, `bruteforce` or `replay` and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (mode, trials = 100, m = None))]
fn attack<'py>(py: Python<'py>, mode: &str, trials: u64, m: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mode: harness::AttackMode = mode.parse().map_err(PyValueError::new_err)?;
    let mut cfg = SystemConfig::default();
    if let Some(m) = m {
        cfg.protocol.m = m;
    }
    let omega = cfg.protocol.omega;
    let report = py.detach(|| harness::run_attack(&cfg, mode, trials)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mode", mode.as_str())?;
    d.set_item("trials", report.trials)?;
    d.set_item("accepts_by_server", report.accepts_by_server)?;
    d.set_item("puf_invocations_on_device", report.puf_invocations_on_device)?;
    d.set_item("lockout_triggered", report.lockout_triggered)?;
    d.set_item("lockout_after", report.lockout_after)?;
    d.set_item("control_accepted", report.control_accepted)?;
    d.set_item("elapsed_s", report.elapsed.as_secs_f64())?;
    d.set_item("passed", report.passed(omega))?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (instances = 10, crps = 500, samples = 10, ber = 0.125, seed = 0))]
fn metrics<'py>(
    py: Python<'py>,
    instances: usize,
    crps: usize,
    samples: usize,
    ber: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SystemConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = py
        .detach(|| harness::run_metrics(&cfg.protocol, &cfg.puf, instances, crps, samples, ber, &mut rng))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("uniqueness_pct", m.uniqueness_pct)?;
    d.set_item("reliability_pct", m.reliability_pct)?;
    d.set_item("randomness_pct", m.randomness_pct)?;
    d.set_item("instances", m.r)?;
    d.set_item("crps", m.v)?;
    d.set_item("samples", m.l)?;
    Ok(d)
}

#[pymodule]
fn pufrla(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(shuffle, m)?)?;
    m.add_function(wrap_pyfunction!(deshuffle, m)?)?;
    m.add_function(wrap_pyfunction!(balance_check, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_class::<PyBchCode>()?;
    m.add_class::<PyPuf>()?;
    m.add_class::<PyTestbed>()?;
    Ok(())
}
