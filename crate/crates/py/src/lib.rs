//! Python bindings: workload generation, the skew detector, balanced
//! routing, and full simulation runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use balajoin_core::bppr::{self, BalanceScope, BpprState};
use balajoin_core::datagen::{self, Arrival, Placement, WorkloadConfig};
use balajoin_core::detector::{DetectorParams, SkewSketch};
use balajoin_core::hash;
use balajoin_core::metrics::{self, verify_report, SummaryRow};
use balajoin_core::simulator::{self, oracle_join, ClusterSpec, CostModel, DetectorMode, SimOptions};
use balajoin_core::strategies::Strategy;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: balajoin_core::Error) -> PyErr {
    match e {
        balajoin_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_scope(s: &str) -> PyResult<BalanceScope> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "all" | "all_nodes" => Ok(BalanceScope::AllNodes),
        "active" | "active_nodes" => Ok(BalanceScope::ActiveNodes),
        other => Err(PyValueError::new_err(format!("unknown balance scope `{other}`"))),
    }
}

/// Space Saving sketch over probe keys.
#[pyclass(name = "SkewSketch", module = "balajoin", skip_from_py_object)]
#[derive(Clone)]
struct PySketch {
    inner: SkewSketch,
}

#[pymethods]
impl PySketch {
    #[new]
    fn new(capacity: usize) -> PyResult<Self> {
        if capacity == 0 {
            return Err(PyValueError::new_err("capacity must be positive"));
        }
        Ok(Self {
            inner: SkewSketch::new(capacity),
        })
    }

    fn observe(&mut self, key: u64) {
        self.inner.observe(key);
    }

    fn observe_many(&mut self, keys: Vec<u64>) {
        keys.into_iter().for_each(|k| self.inner.observe(k));
    }

    /// `(count, overestimate)` for a tracked key, else `None`.
    fn estimate(&self, key: u64) -> Option<(u64, u64)> {
        self.inner.get(key).map(|c| (c.count, c.overestimate))
    }

    #[pyo3(signature = (key, theta, warmup = 0))]
    fn is_skewed(&self, key: u64, theta: f64, warmup: u64) -> bool {
        self.inner.is_skewed(key, theta, warmup)
    }

    fn merge(&self, other: &PySketch) -> PyResult<PySketch> {
        Ok(PySketch {
            inner: self.inner.merge(&other.inner).map_err(err)?,
        })
    }

    /// `(key, count, overestimate)` in descending count order.
    fn counters(&self) -> Vec<(u64, u64, u64)> {
        self.inner.counters().iter().map(|c| (c.key, c.count, c.overestimate)).collect()
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    #[getter]
    fn n_seen(&self) -> u64 {
        self.inner.n_seen()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// One data node's balanced router for skewed probe tuples.
#[pyclass(name = "BpprRouter", module = "balajoin")]
struct PyRouter {
    inner: BpprState,
}

#[pymethods]
impl PyRouter {
    #[new]
    #[pyo3(signature = (n, epsilon, scope = "all_nodes"))]
    fn new(n: usize, epsilon: f64, scope: &str) -> PyResult<Self> {
        if n == 0 {
            return Err(PyValueError::new_err("n must be positive"));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(PyValueError::new_err("epsilon must be non-negative"));
        }
        Ok(Self {
            inner: BpprState::with_scope(n, epsilon, parse_scope(scope)?),
        })
    }

    /// Routes one skewed tuple; returns `(node, candidate set size, expanded)`.
    fn route(&mut self, key: u64) -> (usize, usize, bool) {
        let r = self.inner.route_skewed(key);
        (r.node, r.u_len, r.expanded)
    }

    fn route_many(&mut self, keys: Vec<u64>) -> Vec<usize> {
        keys.into_iter().map(|k| self.inner.route_skewed(k).node).collect()
    }

    fn candidate_set(&self, key: u64) -> Option<Vec<usize>> {
        self.inner.candidate_set(key).map(|u| u.members.clone())
    }

    #[getter]
    fn loads(&self) -> Vec<u64> {
        self.inner.partition_loads().to_vec()
    }

    #[getter]
    fn local_balance(&self) -> f64 {
        self.inner.local_balance()
    }

    #[getter]
    fn op_count(&self) -> u64 {
        self.inner.op_count()
    }

    #[getter]
    fn routed(&self) -> u64 {
        self.inner.routed()
    }
}

/// Build and probe shards of an `n`-node cluster.
#[pyclass(name = "Workload", module = "balajoin", skip_from_py_object)]
#[derive(Clone)]
struct PyWorkload {
    inner: datagen::Workload,
}

#[pymethods]
impl PyWorkload {
    #[staticmethod]
    #[pyo3(signature = (
        n_nodes = 3, s_count = 100_000, rs_ratio = 2.0 / 3.0, universe = 10_000, zipf_z = 1.25,
        placement = "uniform", arrival = "interleaved", seed = 1, skew_threshold = 0.001
    ))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        n_nodes: usize,
        s_count: usize,
        rs_ratio: f64,
        universe: u64,
        zipf_z: f64,
        placement: &str,
        arrival: &str,
        seed: u64,
        skew_threshold: f64,
    ) -> PyResult<Self> {
        let placement: Placement = placement.parse().map_err(PyValueError::new_err)?;
        let arrival: Arrival = arrival.parse().map_err(PyValueError::new_err)?;
        let cfg = WorkloadConfig {
            n_nodes,
            s_count,
            rs_ratio,
            universe,
            zipf_z,
            placement,
            arrival,
            seed,
            skew_threshold,
        };
        Ok(Self {
            inner: datagen::build_workload(&cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, n_nodes = None))]
    fn from_csv(path: &str, n_nodes: Option<usize>) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            inner: datagen::Workload::read_csv(BufReader::new(f), n_nodes).map_err(err)?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let mut w = BufWriter::new(f);
        self.inner.write_csv(&mut w).map_err(err)?;
        w.flush().map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes
    }

    #[getter]
    fn s_count(&self) -> usize {
        self.inner.s_count()
    }

    #[getter]
    fn r_count(&self) -> usize {
        self.inner.r_count()
    }

    /// Probe-side frequency of every key.
    fn probe_counts(&self) -> BTreeMap<u64, u64> {
        self.inner.true_counts.clone()
    }

    /// `(key, origin node, sequence number)` rows of one shard.
    fn shard(&self, node: usize, side: &str) -> PyResult<Vec<(u64, u32, u64)>> {
        let shards = match side {
            "build" | "R" => &self.inner.build_shards,
            "probe" | "S" => &self.inner.probe_shards,
            other => return Err(PyValueError::new_err(format!("side must be build or probe, got `{other}`"))),
        };
        let shard = shards
            .get(node)
            .ok_or_else(|| PyValueError::new_err(format!("node {node} out of range")))?;
        Ok(shard.iter().map(|t| (t.key, t.rowid.node, t.rowid.seq)).collect())
    }

    /// Number of pairs in the single-node join.
    fn oracle_size(&self) -> u64 {
        oracle_join(&self.inner).size
    }

    fn __len__(&self) -> usize {
        self.inner.s_count() + self.inner.r_count()
    }
}

/// Ledgers and timings of one simulated run.
#[pyclass(name = "Report", module = "balajoin")]
struct PyReport {
    inner: simulator::SimReport,
    /// `None` until checked, then the first mismatch or an empty string.
    oracle_mismatch: Option<String>,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.strategy.name()
    }

    #[getter]
    fn detector_mode(&self) -> &'static str {
        self.inner.detector_mode.name()
    }

    #[getter]
    fn result_count(&self) -> u64 {
        self.inner.total_result_count
    }

    #[getter]
    fn network_bytes(&self) -> u64 {
        self.inner.total_network_bytes
    }

    #[getter]
    fn elapsed_seconds(&self) -> f64 {
        self.inner.elapsed_seconds
    }

    #[getter]
    fn throughput(&self) -> PyResult<f64> {
        metrics::throughput(&self.inner).map_err(err)
    }

    #[getter]
    fn global_balance(&self) -> f64 {
        self.inner.global_balance_b
    }

    #[getter]
    fn skewed_per_node(&self) -> Vec<u64> {
        self.inner.nodes.iter().map(|l| l.skewed_received).collect()
    }

    #[getter]
    fn detector_observes(&self) -> u64 {
        self.inner.nodes.iter().map(|l| l.detector_observes).sum()
    }

    #[getter]
    fn u_size_histogram(&self) -> BTreeMap<usize, u64> {
        self.inner.diagnostics.u_size_histogram.clone()
    }

    /// `True` when the run was checked against the oracle and matched.
    #[getter]
    fn matches_oracle(&self) -> Option<bool> {
        self.oracle_mismatch.as_ref().map(String::is_empty)
    }

    #[getter]
    fn oracle_mismatch(&self) -> Option<String> {
        self.oracle_mismatch.clone().filter(|m| !m.is_empty())
    }

    fn summary_csv(&self) -> PyResult<String> {
        Ok(SummaryRow::from_report(&self.inner).map_err(err)?.to_csv())
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Re-checks a traced report; returns `(check, passed, detail)` rows.
    fn verify(&self, workload: &PyWorkload) -> PyResult<Vec<(String, bool, String)>> {
        Ok(verify_report(&self.inner, &workload.inner)
            .map_err(err)?
            .into_iter()
            .map(|c| (c.name.to_string(), c.passed, c.detail))
            .collect())
    }
}

/// Simulates one strategy on `workload`.
#[pyfunction]
#[pyo3(signature = (
    workload, strategy, mode = "online", epsilon = 0.2, theta = 0.001, capacity = 1024, warmup = 1000,
    scope = "all_nodes", bandwidth_mbps = 100.0, trace = false, check = false
))]
#[allow(clippy::too_many_arguments)]
fn run(
    workload: &PyWorkload,
    strategy: &str,
    mode: &str,
    epsilon: f64,
    theta: f64,
    capacity: usize,
    warmup: u64,
    scope: &str,
    bandwidth_mbps: f64,
    trace: bool,
    check: bool,
) -> PyResult<PyReport> {
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let mode: DetectorMode = mode.parse().map_err(err)?;
    let opts = SimOptions {
        detector: DetectorParams {
            theta,
            capacity,
            warmup,
        },
        epsilon,
        scope: parse_scope(scope)?,
        record_trace: trace,
        ..SimOptions::default()
    };
    let cost = CostModel {
        bandwidth_mbps,
        ..CostModel::default()
    };
    let cluster = ClusterSpec::new(workload.inner.n_nodes);
    let w = &workload.inner;
    let outcome = simulator::run_detailed(w, strategy, &cluster, &cost, mode, &opts).map_err(err)?;
    let oracle_mismatch = check.then(|| oracle_join(w).check(&outcome.result()).err().unwrap_or_default());
    Ok(PyReport {
        inner: outcome.report,
        oracle_mismatch,
    })
}

/// Node a key hashes to among `n` nodes.
#[pyfunction]
fn hash_node(key: u64, n: usize) -> PyResult<usize> {
    if n == 0 {
        return Err(PyValueError::new_err("n must be positive"));
    }
    Ok(hash::hash_node(key, n))
}

/// First `length` entries (default all `n`) of a key's node sequence.
#[pyfunction]
#[pyo3(signature = (key, n, length = None))]
fn gen_seq(key: u64, n: usize, length: Option<usize>) -> PyResult<Vec<usize>> {
    if n == 0 {
        return Err(PyValueError::new_err("n must be positive"));
    }
    let mut seq = bppr::NodeSeq::new(key);
    for _ in 0..length.unwrap_or(n).min(n) {
        seq = bppr::gen_seq(seq, n);
    }
    Ok(seq.seq)
}

#[pyfunction]
fn balance_factor(loads: Vec<u64>) -> PyResult<f64> {
    bppr::balance_factor(&loads).map_err(err)
}

#[pyfunction]
fn zipf_keys(count: usize, universe: u64, z: f64, seed: u64) -> PyResult<Vec<u64>> {
    datagen::gen_zipf_keys(count, universe, z, seed).map_err(err)
}

#[pymodule]
pub fn balajoin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySketch>()?;
    m.add_class::<PyRouter>()?;
    m.add_class::<PyWorkload>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(hash_node, m)?)?;
    m.add_function(wrap_pyfunction!(gen_seq, m)?)?;
    m.add_function(wrap_pyfunction!(balance_factor, m)?)?;
    m.add_function(wrap_pyfunction!(zipf_keys, m)?)?;
    m.add("STRATEGIES", Strategy::ALL.map(Strategy::name).to_vec())?;
    Ok(())
}
