//! Python bindings: distributions, prefix codes, coding-length models,
//! covariate-shift selection and the `.fcc` codec.

use std::collections::BTreeMap;

use fcc_core::bitcode::{self, BitString};
use fcc_core::codec::{self, CompCbnContext, Dataset};
use fcc_core::coding::{self, huffman_build};
use fcc_core::dist::DistributionFile;
use fcc_core::select::{self, CovariateShiftConfig};
use fcc_core::ufcc::{self, InvVariant, Strategy};
use fcc_core::{Codebook as CoreCodebook, DiscreteDistribution};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(fcc, FccError, PyException);
create_exception!(fcc, DecodeError, FccError);

fn err(e: fcc_core::Error) -> PyErr {
    match e {
        fcc_core::Error::Decode(msg) => DecodeError::new_err(msg),
        other => FccError::new_err(other.to_string()),
    }
}

fn bits(s: &str) -> PyResult<BitString> {
    s.parse().map_err(err)
}

fn json_value<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| FccError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Dyadic semi-measure on `d` coordinates of `m` bits, numerators over `2^n`.
#[pyclass(module = "fcc", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Distribution {
    inner: DiscreteDistribution,
}

#[pymethods]
impl Distribution {
    #[new]
    fn new(d: usize, m: usize, n: u32, numerators: Vec<BigUint>) -> PyResult<Self> {
        let inner = DiscreteDistribution::from_parts(d, m, n, numerators).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn uniform(d: usize, m: usize) -> PyResult<Self> {
        Ok(Self {
            inner: DiscreteDistribution::uniform(d, m).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: DiscreteDistribution::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n(&self) -> u32 {
        self.inner.n()
    }

    fn numerators(&self) -> Vec<BigUint> {
        self.inner.numerators().to_vec()
    }

    fn prob(&self, point: u64) -> PyResult<f64> {
        if point as usize >= self.inner.domain_size() {
            return Err(PyValueError::new_err(format!("point {point} is outside the domain")));
        }
        Ok(self.inner.prob(point))
    }

    fn mass(&self) -> f64 {
        self.inner.mass().to_f64()
    }

    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    fn support(&self) -> Vec<u64> {
        self.inner.support().collect()
    }

    fn marginal(&self, coords: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.marginal(&coords).map_err(err)?,
        })
    }

    fn huffman(&self) -> PyResult<Codebook> {
        Ok(Codebook {
            inner: huffman_build(&self.inner).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Distribution(d={}, m={}, n={})", self.inner.d(), self.inner.m(), self.inner.n())
    }
}

/// Prefix-free codebook over points; codewords are `'0'/'1'` strings.
#[pyclass(module = "fcc", frozen)]
pub struct Codebook {
    inner: CoreCodebook,
}

#[pymethods]
impl Codebook {
    #[new]
    fn new(d: usize, m: usize, words: BTreeMap<u64, String>) -> PyResult<Self> {
        let words = words
            .into_iter()
            .map(|(x, w)| Ok((x, bits(&w)?)))
            .collect::<PyResult<BTreeMap<_, _>>>()?;
        Ok(Self {
            inner: CoreCodebook::new(d, m, words).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreCodebook::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn words(&self) -> BTreeMap<u64, String> {
        self.inner.words().iter().map(|(x, w)| (*x, w.to_string())).collect()
    }

    fn lengths(&self) -> Vec<u64> {
        self.inner.lengths()
    }

    fn is_prefix_free(&self) -> bool {
        self.inner.is_prefix_free()
    }

    fn kraft_sum(&self) -> f64 {
        self.inner.kraft_sum().to_f64().unwrap_or(f64::INFINITY)
    }

    fn encode(&self, points: Vec<u64>) -> PyResult<String> {
        Ok(self.inner.encode_sequence(&points).map_err(err)?.to_string())
    }

    fn decode(&self, word: &str) -> PyResult<Vec<u64>> {
        self.inner.decode_sequence(&bits(word)?).map_err(err)
    }

    fn expected_length(&self, p: &Distribution) -> PyResult<f64> {
        coding::expected_length(&self.inner, &p.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Self-delimiting code of `n`.
#[pyfunction]
fn self_delimit(n: BigUint) -> String {
    bitcode::self_delimit(&n).to_string()
}

/// Inverse of `self_delimit`; returns the number and the unread suffix.
#[pyfunction]
fn parse_self_delimited(word: &str) -> PyResult<(BigUint, String)> {
    let (n, rest) = bitcode::parse_self_delimited(&bits(word)?).map_err(err)?;
    Ok((n, rest.to_string()))
}

fn strategy(name: &str) -> PyResult<Strategy> {
    match name {
        "direct" => Ok(Strategy::Direct),
        "sparse" => Ok(Strategy::Sparse),
        _ => Err(PyValueError::new_err(format!("unknown strategy {name:?}"))),
    }
}

/// Mechanism-selection bits; `strategy` is `"direct"` or `"sparse"`.
#[pyfunction]
fn strategy_bits(slots: u64, pool: u64, k: u64, strategy: &str) -> PyResult<f64> {
    ufcc::strategy_bits(slots, pool, k, self::strategy(strategy)?).map_err(err)
}

/// Sparse minus direct selection bits.
#[pyfunction]
fn strategy_gap(slots: u64, pool: u64, k: u64) -> PyResult<f64> {
    ufcc::strategy_gap(slots, pool, k).map_err(err)
}

/// Tabular CBN model bits as `(total, ledger)`.
#[pyfunction]
fn model_bits_tabcbn(m: u32, d: u32, n: u32, envs: u32) -> PyResult<(f64, BTreeMap<String, f64>)> {
    let b = ufcc::model_bits_tabcbn(m, d, n, envs).map_err(err)?;
    Ok((b.model_bits, b.ledger()))
}

#[pyfunction]
fn model_bits_density(m: u32, d: u32, n: u32, envs: u32) -> f64 {
    ufcc::model_bits_density(m, d, n, envs)
}

/// `variant` is `"invariant"` or `"markov"`.
#[pyfunction]
fn model_bits_tabinv(m: u32, n: u32, orbits: u64, variant: &str) -> PyResult<f64> {
    let v = match variant {
        "invariant" => InvVariant::Invariant,
        "markov" => InvVariant::Markov,
        _ => return Err(PyValueError::new_err(format!("unknown variant {variant:?}"))),
    };
    ufcc::model_bits_tabinv(m, n, orbits, v).map_err(err)
}

/// Generates covariate-shift data and scores every `k`.
#[pyfunction]
#[pyo3(signature = (candidate_lambdas, ground_truth_lambdas, samples_per_env=100, support_size=18, seed=0, precision=32))]
fn run_covariate_shift<'py>(
    py: Python<'py>,
    candidate_lambdas: Vec<f64>,
    ground_truth_lambdas: Vec<f64>,
    samples_per_env: usize,
    support_size: usize,
    seed: u64,
    precision: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = CovariateShiftConfig {
        env_count: ground_truth_lambdas.len(),
        samples_per_env,
        support_size,
        candidate_lambdas,
        ground_truth_lambdas,
        seed,
        precision,
    };
    let (_, result) = py.detach(|| select::run_covariate_shift(&cfg)).map_err(err)?;
    json_value(py, &result)
}

fn pool_context(pool_json: Option<&str>) -> PyResult<Option<CompCbnContext>> {
    let Some(text) = pool_json else { return Ok(None) };
    let files: Vec<DistributionFile> =
        serde_json::from_str(text).map_err(|e| FccError::new_err(e.to_string()))?;
    let pool = files
        .into_iter()
        .map(DistributionFile::into_distribution)
        .collect::<fcc_core::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(Some(CompCbnContext { pool }))
}

/// Dataset JSON to `.fcc` bytes.
#[pyfunction]
#[pyo3(signature = (dataset_json, pool_json=None))]
fn encode<'py>(py: Python<'py>, dataset_json: &str, pool_json: Option<&str>) -> PyResult<Bound<'py, PyBytes>> {
    let ds: Dataset = serde_json::from_str(dataset_json).map_err(|e| FccError::new_err(e.to_string()))?;
    let ctx = pool_context(pool_json)?;
    let artifact = ds.encode(ctx.as_ref()).map_err(err)?;
    Ok(PyBytes::new(py, &artifact.bytes))
}

/// `.fcc` bytes to dataset JSON.
#[pyfunction]
#[pyo3(signature = (data, pool_json=None))]
fn decode(data: &[u8], pool_json: Option<&str>) -> PyResult<String> {
    let ctx = pool_context(pool_json)?;
    let artifact = codec::decode_dataset(data, ctx.as_ref()).map_err(err)?;
    serde_json::to_string(&Dataset::from(&artifact)).map_err(|e| FccError::new_err(e.to_string()))
}

#[pymodule]
fn fcc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FccError", m.py().get_type::<FccError>())?;
    m.add("DecodeError", m.py().get_type::<DecodeError>())?;
    m.add_class::<Distribution>()?;
    m.add_class::<Codebook>()?;
    m.add_function(wrap_pyfunction!(self_delimit, m)?)?;
    m.add_function(wrap_pyfunction!(parse_self_delimited, m)?)?;
    m.add_function(wrap_pyfunction!(strategy_bits, m)?)?;
    m.add_function(wrap_pyfunction!(strategy_gap, m)?)?;
    m.add_function(wrap_pyfunction!(model_bits_tabcbn, m)?)?;
    m.add_function(wrap_pyfunction!(model_bits_density, m)?)?;
    m.add_function(wrap_pyfunction!(model_bits_tabinv, m)?)?;
    m.add_function(wrap_pyfunction!(run_covariate_shift, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    Ok(())
}
