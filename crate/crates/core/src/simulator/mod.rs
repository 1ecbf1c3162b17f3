//! Deterministic replay of a distributed hash join on a simulated
//! shared-nothing cluster.
//!
//! Every node is both a data node (it owns a build and a probe shard) and a
//! compute node. A run interleaves the shards in a fixed order, classifies and
//! routes each tuple, delivers it with byte accounting, and joins locally.
//! Elapsed time comes from a serialized communication plus compute model.
//!
//! Each compute node keeps two indexes per key: the hash index holds build
//! tuples delivered to their hash node, the skew index holds replicas used by
//! skewed probes. A node's first skewed probe of a key subscribes it to that
//! key's hash node, which ships the current bucket and forwards later arrivals.

mod join;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bppr::{balance_factor, full_sequence, BalanceScope};
use crate::datagen::{RowId, Side, Tuple, Workload};
use crate::detector::{DetectorParams, SkewDetector, SkewSketch};
use crate::error::{Error, Result};
use crate::hash::hash_node;
use crate::strategies::{Grid, RoutingContext, RoutingParams, Strategy};

pub use join::{local_hash_join, oracle_join, JoinBlock, OracleJoin, Pair, PairMultiset};

/// Bytes of the per-node result count sent to the response node.
pub const COUNT_BYTES: u64 = 8;
/// Bytes of one sketch counter record shipped during a two-pass merge.
pub const SKETCH_RECORD_BYTES: u64 = 20;
/// Bytes per key of the skew list broadcast after a two-pass merge.
pub const SKEW_LIST_KEY_BYTES: u64 = 8;

pub const MODEL_NOTE: &str = "model time: per-node communication and compute are serialized, \
no overlap; absolute numbers are not comparable to real clusters";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n: usize,
    /// Node that collects the per-node result counts.
    pub response_node: usize,
}

impl ClusterSpec {
    pub fn new(n: usize) -> Self {
        Self { n, response_node: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidCluster(format!("n must be at least 2, got {}", self.n)));
        }
        if self.response_node >= self.n {
            return Err(Error::InvalidCluster(format!(
                "response node {} out of range for {} nodes",
                self.response_node, self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Symmetric per-node link speed.
    pub bandwidth_mbps: f64,
    pub tuple_wire_bytes: u64,
    pub pull_request_bytes: u64,
    /// Seconds per build insert.
    pub c_build: f64,
    /// Seconds per probe lookup.
    pub c_probe: f64,
    /// Seconds per detector observation.
    pub detect_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            bandwidth_mbps: 100.0,
            tuple_wire_bytes: 16,
            pull_request_bytes: 24,
            c_build: 1e-7,
            c_probe: 1e-7,
            detect_cost: 2e-8,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("bandwidth_mbps", self.bandwidth_mbps),
            ("c_build", self.c_build),
            ("c_probe", self.c_probe),
            ("detect_cost", self.detect_cost),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidCostModel(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tuple_wire_bytes == 0 || self.pull_request_bytes == 0 {
            return Err(Error::InvalidCostModel("byte sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn transfer_seconds(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / (self.bandwidth_mbps * 1e6)
    }
}

/// Source of skew decisions for probe tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMode {
    /// True global frequencies thresholded by theta.
    Oracle,
    /// Per-node streaming sketches, consulted as tuples arrive.
    Online,
    /// A detection pass and a sketch merge before any tuple is routed.
    TwoPass,
}

impl DetectorMode {
    pub fn name(self) -> &'static str {
        match self {
            DetectorMode::Oracle => "oracle",
            DetectorMode::Online => "online",
            DetectorMode::TwoPass => "twopass",
        }
    }
}

impl fmt::Display for DetectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "oracle" => Ok(DetectorMode::Oracle),
            "online" => Ok(DetectorMode::Online),
            "twopass" => Ok(DetectorMode::TwoPass),
            other => Err(Error::UnknownDetectorMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub detector: DetectorParams,
    pub epsilon: f64,
    pub scope: BalanceScope,
    /// Keep every routing decision and transfer for later verification.
    pub record_trace: bool,
    /// Re-check routing invariants after every skewed decision.
    pub debug_checks: bool,
    /// The probe input can be read only once, so modes that need a prior
    /// pass over it are refused.
    pub streaming_only: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            detector: DetectorParams::default(),
            epsilon: 0.2,
            scope: BalanceScope::AllNodes,
            record_trace: false,
            debug_checks: false,
            streaming_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLedger {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub build_inserted: u64,
    pub probe_processed: u64,
    pub detector_observes: u64,
    /// Skew-classified probe tuples delivered here.
    pub skewed_received: u64,
    pub result_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Tuple,
    PullRequest,
    Pulled,
    Forwarded,
    Sketch,
    SkewList,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub bytes: u64,
    pub kind: TransferKind,
}

/// One routing decision at a data node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub origin: usize,
    pub rowid: RowId,
    pub side: Side,
    pub key: u64,
    /// Took the skew path of the strategy.
    pub skewed: bool,
    pub dest: Vec<usize>,
    /// Local candidate-set size after a balanced decision, else 0.
    pub u_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub routes: Vec<RouteRecord>,
    pub transfers: Vec<Transfer>,
}

impl Trace {
    /// `origin,seq,side,key,skewed,dest,u_len` rows, destinations joined by `;`.
    pub fn write_routes_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "origin,seq,side,key,skewed,dest,u_len")?;
        for r in &self.routes {
            let dest: Vec<String> = r.dest.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.origin,
                r.rowid.seq,
                r.side.as_str(),
                r.key,
                r.skewed,
                dest.join(";"),
                r.u_len
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Global candidate-set size to number of keys, balanced routing only.
    pub u_size_histogram: BTreeMap<usize, u64>,
    pub pull_requests: u64,
    pub pulled_tuples: u64,
    pub forwarded_tuples: u64,
    /// Probe tuples that took the skew path, counted once per tuple.
    pub skew_path_probes: u64,
    /// Distinct keys that took the skew path anywhere.
    pub skew_path_keys: u64,
    /// Basic operations of all balanced-routing decisions.
    pub route_ops: u64,
    /// Failed invariant checks, only counted with debug checks on.
    pub invariant_violations: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub detection_s: f64,
    pub merge_s: f64,
    pub join_s: f64,
}

/// Parameters echoed into reports and summary rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub epsilon: f64,
    pub theta: f64,
    pub capacity: usize,
    pub warmup: u64,
    pub bandwidth_mbps: f64,
    pub zipf_z: Option<f64>,
    pub rs_ratio: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub strategy: Strategy,
    pub detector_mode: DetectorMode,
    pub n: usize,
    pub params: RunParams,
    pub nodes: Vec<NodeLedger>,
    pub total_result_count: u64,
    pub total_network_bytes: u64,
    pub elapsed_seconds: f64,
    pub global_balance_b: f64,
    pub phases: PhaseTimes,
    pub diagnostics: Diagnostics,
    pub model_note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Default)]
struct ProbeLog {
    rowids: Vec<RowId>,
    /// Sum of bucket sizes seen at arrival.
    matched_at_arrival: u64,
}

#[derive(Debug, Default)]
struct SkewBucket {
    builds: Vec<RowId>,
    held: HashSet<RowId>,
}

impl SkewBucket {
    fn insert(&mut self, rowid: RowId) -> bool {
        let fresh = self.held.insert(rowid);
        if fresh {
            self.builds.push(rowid);
        }
        fresh
    }
}

/// Final state of one compute node.
#[derive(Debug, Default)]
pub struct NodeState {
    hash_index: HashMap<u64, Vec<RowId>>,
    skew_index: HashMap<u64, SkewBucket>,
    hash_probes: HashMap<u64, ProbeLog>,
    skew_probes: HashMap<u64, ProbeLog>,
    /// Keys for which this node has joined the replica set.
    subscribed: HashSet<u64>,
    /// At a hash node: key to nodes receiving forwarded builds.
    subscribers: HashMap<u64, Vec<usize>>,
}

impl NodeState {
    pub fn hash_bucket(&self, key: u64) -> &[RowId] {
        self.hash_index.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn skew_bucket(&self, key: u64) -> &[RowId] {
        self.skew_index.get(&key).map(|b| b.builds.as_slice()).unwrap_or(&[])
    }

    pub fn subscribers(&self, key: u64) -> &[usize] {
        self.subscribers.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    fn blocks(&self, out: &mut Vec<JoinBlock>) {
        for (&key, log) in &self.hash_probes {
            out.push(JoinBlock {
                key,
                builds: self.hash_bucket(key).to_vec(),
                probes: log.rowids.clone(),
            });
        }
        for (&key, log) in &self.skew_probes {
            out.push(JoinBlock {
                key,
                builds: self.skew_bucket(key).to_vec(),
                probes: log.rowids.clone(),
            });
        }
    }
}

/// Everything a run leaves behind, for inspection beyond the report.
pub struct SimOutcome {
    pub report: SimReport,
    pub nodes: Vec<NodeState>,
    pub routers: Vec<RoutingContext>,
}

impl SimOutcome {
    /// The distributed result as a union of per-node local joins.
    pub fn result(&self) -> PairMultiset {
        let mut blocks = Vec::new();
        for node in &self.nodes {
            node.blocks(&mut blocks);
        }
        blocks.sort_by_key(|b| b.key);
        PairMultiset { blocks }
    }
}

enum Classifier {
    Never,
    Fixed(HashSet<u64>),
    Online(Vec<SkewDetector>),
}

struct Sim<'a> {
    strategy: Strategy,
    n: usize,
    cost: &'a CostModel,
    opts: &'a SimOptions,
    grid: Grid,
    /// Skewed probes at a non-hash node fetch builds from the hash node.
    pulls: bool,
    nodes: Vec<NodeState>,
    ledgers: Vec<NodeLedger>,
    diag: Diagnostics,
    trace: Option<Trace>,
    skew_keys: HashSet<u64>,
}

impl<'a> Sim<'a> {
    fn charge(&mut self, from: usize, to: usize, bytes: u64, kind: TransferKind) {
        if from == to {
            return;
        }
        self.ledgers[from].bytes_sent += bytes;
        self.ledgers[to].bytes_received += bytes;
        if let Some(t) = &mut self.trace {
            t.transfers.push(Transfer { from, to, bytes, kind });
        }
    }

    /// Whether a replica of build `rowid` belongs at node `j`.
    fn accepts(&self, j: usize, key: u64, rowid: RowId) -> bool {
        if self.strategy != Strategy::Sfr {
            return true;
        }
        let t = Tuple {
            key,
            rowid,
            side: Side::Build,
        };
        self.grid.build_row(&t) == self.grid.row_of(j)
    }

    fn deliver_build(&mut self, origin: usize, t: &Tuple, dest: &[usize]) {
        let q = hash_node(t.key, self.n);
        for &j in dest {
            self.charge(origin, j, self.cost.tuple_wire_bytes, TransferKind::Tuple);
            if j == q {
                self.nodes[q].hash_index.entry(t.key).or_default().push(t.rowid);
                self.ledgers[q].build_inserted += 1;
            } else if self.nodes[j].skew_index.entry(t.key).or_default().insert(t.rowid) {
                self.ledgers[j].build_inserted += 1;
            }
        }
        if !dest.contains(&q) {
            return;
        }
        let subs = self.nodes[q].subscribers(t.key).to_vec();
        for s in subs {
            if !self.accepts(s, t.key, t.rowid) {
                continue;
            }
            if s == q {
                self.nodes[q].skew_index.entry(t.key).or_default().insert(t.rowid);
                continue;
            }
            let held = self.nodes[s]
                .skew_index
                .get(&t.key)
                .is_some_and(|b| b.held.contains(&t.rowid));
            if held {
                continue;
            }
            self.charge(q, s, self.cost.tuple_wire_bytes, TransferKind::Forwarded);
            self.nodes[s].skew_index.entry(t.key).or_default().insert(t.rowid);
            self.ledgers[s].build_inserted += 1;
            self.diag.forwarded_tuples += 1;
        }
    }

    /// First skewed probe of `key` at `j`: join the key's replica set.
    fn subscribe(&mut self, j: usize, key: u64) {
        if !self.nodes[j].subscribed.insert(key) {
            return;
        }
        self.nodes[j].skew_index.entry(key).or_default();
        let q = hash_node(key, self.n);
        if j != q && !self.pulls {
            return;
        }
        let bucket = self.nodes[q].hash_bucket(key).to_vec();
        if j == q {
            for rowid in bucket {
                if self.accepts(q, key, rowid) {
                    self.nodes[q].skew_index.entry(key).or_default().insert(rowid);
                }
            }
        } else {
            self.charge(j, q, self.cost.pull_request_bytes, TransferKind::PullRequest);
            self.diag.pull_requests += 1;
            for rowid in bucket {
                if !self.accepts(j, key, rowid) {
                    continue;
                }
                let target = self.nodes[j].skew_index.entry(key).or_default();
                if target.held.contains(&rowid) {
                    continue;
                }
                target.insert(rowid);
                self.charge(q, j, self.cost.tuple_wire_bytes, TransferKind::Pulled);
                self.ledgers[j].build_inserted += 1;
                self.diag.pulled_tuples += 1;
            }
        }
        self.nodes[q].subscribers.entry(key).or_default().push(j);
    }

    fn deliver_probe(&mut self, origin: usize, t: &Tuple, dest: &[usize], skewed: bool) {
        for &j in dest {
            self.charge(origin, j, self.cost.tuple_wire_bytes, TransferKind::Tuple);
            self.ledgers[j].probe_processed += 1;
            if skewed {
                self.ledgers[j].skewed_received += 1;
                self.subscribe(j, t.key);
            }
            let node = &mut self.nodes[j];
            let (bucket_len, log) = if skewed {
                let len = node.skew_index.get(&t.key).map_or(0, |b| b.builds.len());
                (len, node.skew_probes.entry(t.key).or_default())
            } else {
                let len = node.hash_index.get(&t.key).map_or(0, Vec::len);
                (len, node.hash_probes.entry(t.key).or_default())
            };
            log.rowids.push(t.rowid);
            log.matched_at_arrival += bucket_len as u64;
            self.ledgers[j].result_count += bucket_len as u64;
        }
    }

    /// Pairs for probes that arrived before some of their builds.
    fn redrain(&mut self) {
        for (node, ledger) in self.nodes.iter().zip(self.ledgers.iter_mut()) {
            for (&key, log) in &node.hash_probes {
                let len = node.hash_index.get(&key).map_or(0, Vec::len) as u64;
                ledger.result_count += len * log.rowids.len() as u64 - log.matched_at_arrival;
            }
            for (&key, log) in &node.skew_probes {
                let len = node.skew_index.get(&key).map_or(0, |b| b.builds.len()) as u64;
                ledger.result_count += len * log.rowids.len() as u64 - log.matched_at_arrival;
            }
        }
    }
}

/// Runs a strategy given by name.
pub fn run_named(
    workload: &Workload,
    strategy: &str,
    cluster: &ClusterSpec,
    cost: &CostModel,
    mode: DetectorMode,
    opts: &SimOptions,
) -> Result<SimReport> {
    run(workload, strategy.parse()?, cluster, cost, mode, opts)
}

pub fn run(
    workload: &Workload,
    strategy: Strategy,
    cluster: &ClusterSpec,
    cost: &CostModel,
    mode: DetectorMode,
    opts: &SimOptions,
) -> Result<SimReport> {
    Ok(run_detailed(workload, strategy, cluster, cost, mode, opts)?.report)
}

pub fn run_detailed(
    workload: &Workload,
    strategy: Strategy,
    cluster: &ClusterSpec,
    cost: &CostModel,
    mode: DetectorMode,
    opts: &SimOptions,
) -> Result<SimOutcome> {
    cluster.validate()?;
    cost.validate()?;
    let n = cluster.n;
    if workload.n_nodes != n {
        return Err(Error::InvalidCluster(format!(
            "workload has {} shards but the cluster has {n} nodes",
            workload.n_nodes
        )));
    }
    if !(opts.epsilon.is_finite() && opts.epsilon >= 0.0) {
        return Err(Error::InvalidCluster(format!("epsilon must be non-negative, got {}", opts.epsilon)));
    }
    if opts.streaming_only && strategy.uses_skew() && mode != DetectorMode::Online {
        return Err(Error::NeedsStatistics { mode: mode.name() });
    }

    let mut sim = Sim {
        strategy,
        n,
        cost,
        opts,
        grid: Grid::for_nodes(n),
        pulls: strategy == Strategy::Bppr || mode == DetectorMode::Online,
        nodes: (0..n).map(|_| NodeState::default()).collect(),
        ledgers: vec![NodeLedger::default(); n],
        diag: Diagnostics::default(),
        trace: opts.record_trace.then(Trace::default),
        skew_keys: HashSet::new(),
    };

    let theta = opts.detector.theta;
    let mut phases = PhaseTimes::default();
    let mut merge_bytes = vec![0u64; n];
    let mut classifier = if !strategy.uses_skew() {
        Classifier::Never
    } else {
        match mode {
            DetectorMode::Oracle => Classifier::Fixed(workload.frequent_keys(theta)),
            DetectorMode::Online => Classifier::Online(
                (0..n).map(|_| SkewDetector::new(opts.detector)).collect(),
            ),
            DetectorMode::TwoPass => {
                let (keys, det_s) = two_pass_detection(&mut sim, workload, cluster, &mut merge_bytes)?;
                phases.detection_s = det_s;
                phases.merge_s = merge_bytes
                    .iter()
                    .map(|&b| cost.transfer_seconds(b))
                    .fold(0.0, f64::max);
                Classifier::Fixed(keys)
            }
        }
    };

    let params = RoutingParams {
        epsilon: opts.epsilon,
        scope: opts.scope,
        build_copy_to_hash_node: mode == DetectorMode::Online,
    };
    let mut routers: Vec<RoutingContext> =
        (0..n).map(|i| RoutingContext::new(strategy, n, i, params)).collect();

    let longest = workload
        .build_shards
        .iter()
        .chain(&workload.probe_shards)
        .map(Vec::len)
        .max()
        .unwrap_or(0);
    for step in 0..longest {
        for origin in 0..n {
            if let Some(t) = workload.build_shards[origin].get(step) {
                let skewed = match &mut classifier {
                    Classifier::Never => false,
                    Classifier::Fixed(keys) => keys.contains(&t.key),
                    Classifier::Online(dets) => {
                        strategy != Strategy::Bppr && dets[origin].classify(t.key)
                    }
                };
                let route = routers[origin].route(t, skewed);
                sim.record_route(origin, t, skewed, &route.dest.nodes, 0);
                sim.deliver_build(origin, t, &route.dest.nodes);
            }
            if let Some(t) = workload.probe_shards[origin].get(step) {
                let skewed = match &mut classifier {
                    Classifier::Never => false,
                    Classifier::Fixed(keys) => keys.contains(&t.key),
                    Classifier::Online(dets) => {
                        sim.ledgers[origin].detector_observes += 1;
                        dets[origin].observe_and_classify(t.key)
                    }
                };
                let route = routers[origin].route(t, skewed);
                if skewed {
                    sim.diag.skew_path_probes += 1;
                    sim.skew_keys.insert(t.key);
                    if sim.opts.debug_checks && strategy == Strategy::Bppr {
                        sim.check_router(&routers[origin], t.key);
                    }
                }
                sim.record_route(origin, t, skewed, &route.dest.nodes, route.u_len);
                sim.deliver_probe(origin, t, &route.dest.nodes, skewed);
            }
        }
    }
    sim.redrain();

    for j in 0..n {
        sim.charge(j, cluster.response_node, COUNT_BYTES, TransferKind::Count);
    }

    let join_s = (0..n)
        .map(|j| {
            let l = &sim.ledgers[j];
            let bytes = l.bytes_sent + l.bytes_received - merge_bytes[j];
            let observes = if mode == DetectorMode::TwoPass { 0 } else { l.detector_observes };
            cost.transfer_seconds(bytes)
                + cost.c_build * l.build_inserted as f64
                + cost.c_probe * l.probe_processed as f64
                + cost.detect_cost * observes as f64
        })
        .fold(0.0, f64::max);
    phases.join_s = join_s;
    let elapsed_seconds = phases.detection_s + phases.merge_s + phases.join_s;

    if strategy == Strategy::Bppr {
        let mut global_u: HashMap<u64, usize> = HashMap::new();
        for r in &routers {
            let state = r.bppr_state().expect("balanced router without state");
            sim.diag.route_ops += state.op_count();
            for u in state.candidate_sets() {
                let e = global_u.entry(u.key).or_insert(0);
                *e = (*e).max(u.len());
            }
        }
        for size in global_u.into_values() {
            *sim.diag.u_size_histogram.entry(size).or_insert(0) += 1;
        }
    }
    sim.diag.skew_path_keys = sim.skew_keys.len() as u64;

    let skewed: Vec<u64> = sim.ledgers.iter().map(|l| l.skewed_received).collect();
    let global_balance_b = balance_factor(&skewed)?;
    let total_network_bytes = sim.ledgers.iter().map(|l| l.bytes_sent).sum();
    let total_result_count = sim.ledgers.iter().map(|l| l.result_count).sum();
    let cfg = workload.config.as_ref();
    let report = SimReport {
        strategy,
        detector_mode: mode,
        n,
        params: RunParams {
            epsilon: opts.epsilon,
            theta,
            capacity: opts.detector.capacity,
            warmup: opts.detector.warmup,
            bandwidth_mbps: cost.bandwidth_mbps,
            zipf_z: cfg.map(|c| c.zipf_z),
            rs_ratio: cfg.map(|c| c.rs_ratio),
            seed: cfg.map(|c| c.seed),
        },
        nodes: sim.ledgers,
        total_result_count,
        total_network_bytes,
        elapsed_seconds,
        global_balance_b,
        phases,
        diagnostics: sim.diag,
        model_note: MODEL_NOTE.to_string(),
        trace: sim.trace,
    };
    Ok(SimOutcome {
        report,
        nodes: sim.nodes,
        routers,
    })
}

impl Sim<'_> {
    fn record_route(&mut self, origin: usize, t: &Tuple, skewed: bool, dest: &[usize], u_len: usize) {
        if let Some(trace) = &mut self.trace {
            trace.routes.push(RouteRecord {
                origin,
                rowid: t.rowid,
                side: t.side,
                key: t.key,
                skewed,
                dest: dest.to_vec(),
                u_len,
            });
        }
    }

    fn check_router(&mut self, router: &RoutingContext, key: u64) {
        let Some(state) = router.bppr_state() else {
            return;
        };
        let mut ok = state.extrema_consistent();
        if let Some(u) = state.candidate_set(key) {
            let full = full_sequence(key, self.n);
            ok &= u.members.len() <= full.len() && u.members[..] == full[..u.members.len()];
        }
        if !ok {
            self.diag.invariant_violations += 1;
        }
    }
}

/// Builds per-node sketches over the whole probe shards, merges them at the
/// response node and broadcasts the resulting skew list. Returns the list and
/// the detection-phase time.
fn two_pass_detection(
    sim: &mut Sim<'_>,
    workload: &Workload,
    cluster: &ClusterSpec,
    merge_bytes: &mut [u64],
) -> Result<(HashSet<u64>, f64)> {
    let opts = sim.opts;
    let resp = cluster.response_node;
    let mut sketches = Vec::with_capacity(sim.n);
    let mut detection_s: f64 = 0.0;
    for (j, shard) in workload.probe_shards.iter().enumerate() {
        let mut sketch = SkewSketch::new(opts.detector.capacity);
        for t in shard {
            sketch.observe(t.key);
        }
        sim.ledgers[j].detector_observes += shard.len() as u64;
        detection_s = detection_s.max(sim.cost.detect_cost * shard.len() as f64);
        sketches.push(sketch);
    }
    let mut merged = sketches[resp].clone();
    for (j, sketch) in sketches.iter().enumerate() {
        if j == resp {
            continue;
        }
        let bytes = sketch.len() as u64 * SKETCH_RECORD_BYTES;
        sim.charge(j, resp, bytes, TransferKind::Sketch);
        merge_bytes[j] += bytes;
        merge_bytes[resp] += bytes;
        merged = merged.merge(sketch)?;
    }
    let cutoff = opts.detector.theta * merged.n_seen() as f64;
    let keys: HashSet<u64> = merged
        .counters()
        .iter()
        .filter(|c| c.count as f64 >= cutoff)
        .map(|c| c.key)
        .collect();
    let list_bytes = keys.len() as u64 * SKEW_LIST_KEY_BYTES;
    if list_bytes > 0 {
        for j in 0..sim.n {
            if j != resp {
                sim.charge(resp, j, list_bytes, TransferKind::SkewList);
                merge_bytes[j] += list_bytes;
                merge_bytes[resp] += list_bytes;
            }
        }
    }
    Ok((keys, detection_s))
}
