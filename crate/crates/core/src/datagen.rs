//! Reproducible skewed workloads: Zipf-distributed build and probe tables,
//! shard placement across data nodes and per-shard arrival order.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{mix64, SplitMix64};

/// Which relation a tuple belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Build,
    Probe,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Build => "build",
            Side::Probe => "probe",
        }
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "build" | "b" | "r" => Ok(Side::Build),
            "probe" | "p" | "s" => Ok(Side::Probe),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// Globally unique row identifier: origin data node plus a per-node sequence
/// number shared by both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowId {
    pub node: u32,
    pub seq: u64,
}

impl RowId {
    pub fn new(node: usize, seq: u64) -> Self {
        Self { node: node as u32, seq }
    }

    /// Packs the id into one word for hashing. Sequence numbers above 2^48
    /// are not produced by the generator.
    pub fn as_u64(self) -> u64 {
        ((self.node as u64) << 48) ^ self.seq
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tuple {
    pub key: u64,
    pub rowid: RowId,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Uniform,
    /// Every tuple of a frequent key lands on the given node.
    ConcentratedSkew(usize),
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::Uniform => f.write_str("uniform"),
            Placement::ConcentratedSkew(node) => write!(f, "concentrated:{node}"),
        }
    }
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "uniform" {
            return Ok(Placement::Uniform);
        }
        for prefix in ["concentrated:", "concentrated_skew:", "concentratedskew:"] {
            if let Some(node) = s.strip_prefix(prefix) {
                return node
                    .parse()
                    .map(Placement::ConcentratedSkew)
                    .map_err(|_| format!("bad node index in `{s}`"));
            }
        }
        Err(format!("unknown placement `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrival {
    Interleaved,
    ClusteredByKey,
}

impl fmt::Display for Arrival {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arrival::Interleaved => "interleaved",
            Arrival::ClusteredByKey => "clustered",
        })
    }
}

impl FromStr for Arrival {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interleaved" => Ok(Arrival::Interleaved),
            "clustered" | "clustered_by_key" | "clusteredbykey" => Ok(Arrival::ClusteredByKey),
            other => Err(format!("unknown arrival order `{other}`")),
        }
    }
}

/// Parameters of a synthetic workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub n_nodes: usize,
    /// Number of probe tuples, |S|.
    pub s_count: usize,
    /// |R| / |S|.
    pub rs_ratio: f64,
    /// Number of distinct candidate keys.
    pub universe: u64,
    pub zipf_z: f64,
    pub placement: Placement,
    pub arrival: Arrival,
    pub seed: u64,
    /// Relative probe-side frequency at or above which `ConcentratedSkew`
    /// treats a key as frequent.
    pub skew_threshold: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            n_nodes: 3,
            s_count: 100_000,
            rs_ratio: 2.0 / 3.0,
            universe: 10_000,
            zipf_z: 1.25,
            placement: Placement::Uniform,
            arrival: Arrival::Interleaved,
            seed: 1,
            skew_threshold: 0.001,
        }
    }
}

impl WorkloadConfig {
    pub fn r_count(&self) -> usize {
        (self.rs_ratio * self.s_count as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidWorkload(msg.to_string()));
        if self.n_nodes < 2 {
            return bad("n_nodes must be at least 2");
        }
        if self.s_count == 0 {
            return bad("s_count must be at least 1");
        }
        if self.universe == 0 {
            return bad("universe must be at least 1");
        }
        if !(self.zipf_z >= 0.0 && self.zipf_z.is_finite()) {
            return bad("zipf_z must be a finite value >= 0");
        }
        if !(self.rs_ratio > 0.0 && self.rs_ratio.is_finite()) {
            return bad("rs_ratio must be positive");
        }
        if self.r_count() == 0 {
            return bad("rs_ratio * s_count rounds to zero build tuples");
        }
        if !(self.skew_threshold > 0.0 && self.skew_threshold <= 1.0) {
            return bad("skew_threshold must be in (0, 1]");
        }
        if let Placement::ConcentratedSkew(node) = self.placement {
            if node >= self.n_nodes {
                return Err(Error::PlacementOutOfRange {
                    node,
                    n_nodes: self.n_nodes,
                });
            }
        }
        Ok(())
    }
}

/// Partitioned build and probe tables plus exact probe-side key counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub n_nodes: usize,
    pub build_shards: Vec<Vec<Tuple>>,
    pub probe_shards: Vec<Vec<Tuple>>,
    /// Exact key frequencies over S.
    pub true_counts: BTreeMap<u64, u64>,
    /// The generating config, absent for imported workloads.
    pub config: Option<WorkloadConfig>,
}

impl Workload {
    /// Assembles a workload from explicit shards. Row ids must already be
    /// unique; `true_counts` is recomputed.
    pub fn from_shards(build_shards: Vec<Vec<Tuple>>, probe_shards: Vec<Vec<Tuple>>) -> Result<Self> {
        if build_shards.len() != probe_shards.len() {
            return Err(Error::InvalidWorkload(
                "build and probe shard counts differ".into(),
            ));
        }
        let n_nodes = build_shards.len();
        if n_nodes < 2 {
            return Err(Error::InvalidWorkload("need at least 2 nodes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (side, shards) in [(Side::Build, &build_shards), (Side::Probe, &probe_shards)] {
            for shard in shards.iter() {
                for t in shard {
                    if t.side != side {
                        return Err(Error::InvalidWorkload(format!(
                            "tuple {} is tagged {:?} but sits in a {:?} shard",
                            t.rowid, t.side, side
                        )));
                    }
                    if !seen.insert(t.rowid) {
                        return Err(Error::InvalidWorkload(format!(
                            "duplicate rowid {}",
                            t.rowid
                        )));
                    }
                }
            }
        }
        let true_counts = count_keys(probe_shards.iter().flatten());
        Ok(Self {
            n_nodes,
            build_shards,
            probe_shards,
            true_counts,
            config: None,
        })
    }

    pub fn s_count(&self) -> usize {
        self.probe_shards.iter().map(Vec::len).sum()
    }

    pub fn r_count(&self) -> usize {
        self.build_shards.iter().map(Vec::len).sum()
    }

    pub fn build_counts(&self) -> BTreeMap<u64, u64> {
        count_keys(self.build_shards.iter().flatten())
    }

    /// Keys whose probe-side relative frequency is at least `theta`.
    pub fn frequent_keys(&self, theta: f64) -> std::collections::HashSet<u64> {
        let cutoff = theta * self.s_count() as f64;
        self.true_counts
            .iter()
            .filter(|(_, &c)| c as f64 >= cutoff)
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn all_tuples(&self) -> impl Iterator<Item = &Tuple> {
        self.build_shards
            .iter()
            .flatten()
            .chain(self.probe_shards.iter().flatten())
    }

    /// Writes `side,node,seq,key` rows; builds before probes, each shard in
    /// arrival order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "side,node,seq,key")?;
        for shards in [&self.build_shards, &self.probe_shards] {
            for shard in shards {
                for t in shard {
                    writeln!(
                        out,
                        "{},{},{},{}",
                        t.side.as_str(),
                        t.rowid.node,
                        t.rowid.seq,
                        t.key
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Reads the CSV produced by [`Workload::write_csv`] (or an external
    /// extract with the same columns). Row order within a node and side is
    /// taken as arrival order. `n_nodes` defaults to the largest node index
    /// plus one.
    pub fn read_csv<R: BufRead>(input: R, n_nodes: Option<usize>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut max_node = 0usize;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if idx == 0 && trimmed.starts_with("side") {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Csv {
                    line: lineno,
                    msg: format!("expected 4 columns, found {}", fields.len()),
                });
            }
            let csv_err = |msg: String| Error::Csv { line: lineno, msg };
            let side: Side = fields[0].parse().map_err(csv_err)?;
            let node: usize = fields[1]
                .parse()
                .map_err(|_| csv_err(format!("bad node `{}`", fields[1])))?;
            let seq: u64 = fields[2]
                .parse()
                .map_err(|_| csv_err(format!("bad seq `{}`", fields[2])))?;
            let key: u64 = fields[3]
                .parse()
                .map_err(|_| csv_err(format!("bad key `{}`", fields[3])))?;
            max_node = max_node.max(node);
            rows.push(Tuple {
                key,
                rowid: RowId::new(node, seq),
                side,
            });
        }
        let n = n_nodes.unwrap_or(max_node + 1).max(max_node + 1);
        let mut build_shards = vec![Vec::new(); n];
        let mut probe_shards = vec![Vec::new(); n];
        for t in rows {
            let node = t.rowid.node as usize;
            match t.side {
                Side::Build => build_shards[node].push(t),
                Side::Probe => probe_shards[node].push(t),
            }
        }
        Workload::from_shards(build_shards, probe_shards)
    }
}

fn count_keys<'a>(tuples: impl Iterator<Item = &'a Tuple>) -> BTreeMap<u64, u64> {
    let mut counts = BTreeMap::new();
    for t in tuples {
        *counts.entry(t.key).or_insert(0) += 1;
    }
    counts
}

/// Draws `count` keys i.i.d. from a Zipf law over ranks `1..=universe`,
/// `P(rank r) ∝ r^-z`, by inverse CDF over the cumulative weights. Rank `r`
/// becomes key `r - 1`.
pub fn gen_zipf_keys(count: usize, universe: u64, z: f64, seed: u64) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::InvalidWorkload("count must be at least 1".into()));
    }
    if universe == 0 {
        return Err(Error::InvalidWorkload("universe must be at least 1".into()));
    }
    if !(z >= 0.0 && z.is_finite()) {
        return Err(Error::InvalidWorkload("z must be a finite value >= 0".into()));
    }
    let mut cumulative = Vec::with_capacity(universe as usize);
    let mut total = 0.0f64;
    for rank in 1..=universe {
        total += (rank as f64).powf(-z);
        cumulative.push(total);
    }
    let last = universe - 1;
    let mut rng = SplitMix64::new(seed);
    Ok((0..count)
        .map(|_| {
            let u = rng.next_f64() * total;
            (cumulative.partition_point(|&c| c <= u) as u64).min(last)
        })
        .collect())
}

const PROBE_STREAM: u64 = 0x0050_524F_4245;
const BUILD_STREAM: u64 = 0x0042_5549_4C44;
const PLACE_STREAM: u64 = 0x0050_4C41_4345;

/// Generates the workload described by `cfg`. A pure function of `cfg`.
pub fn build_workload(cfg: &WorkloadConfig) -> Result<Workload> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let probe_keys = gen_zipf_keys(cfg.s_count, cfg.universe, cfg.zipf_z, mix64(cfg.seed ^ PROBE_STREAM))?;
    let build_keys = gen_zipf_keys(cfg.r_count(), cfg.universe, cfg.zipf_z, mix64(cfg.seed ^ BUILD_STREAM))?;

    let mut true_counts = BTreeMap::new();
    for &k in &probe_keys {
        *true_counts.entry(k).or_insert(0u64) += 1;
    }
    let cutoff = cfg.skew_threshold * cfg.s_count as f64;
    let is_frequent = |k: u64| true_counts.get(&k).is_some_and(|&c| c as f64 >= cutoff);

    let mut placer = SplitMix64::new(mix64(cfg.seed ^ PLACE_STREAM));
    let mut next_seq = vec![0u64; n];
    let mut build_shards: Vec<Vec<Tuple>> = vec![Vec::new(); n];
    let mut probe_shards: Vec<Vec<Tuple>> = vec![Vec::new(); n];

    // Draw order: all probes, then all builds. Sequence numbers follow it.
    for (side, keys) in [(Side::Probe, &probe_keys), (Side::Build, &build_keys)] {
        for &key in keys.iter() {
            let node = match cfg.placement {
                Placement::ConcentratedSkew(target) if is_frequent(key) => target,
                _ => placer.next_below(n as u64) as usize,
            };
            let rowid = RowId::new(node, next_seq[node]);
            next_seq[node] += 1;
            let t = Tuple { key, rowid, side };
            match side {
                Side::Build => build_shards[node].push(t),
                Side::Probe => probe_shards[node].push(t),
            }
        }
    }

    if cfg.arrival == Arrival::ClusteredByKey {
        for shard in build_shards.iter_mut().chain(probe_shards.iter_mut()) {
            shard.sort_by_key(|t| (t.key, t.rowid.seq));
        }
    }

    Ok(Workload {
        n_nodes: n,
        build_shards,
        probe_shards,
        true_counts,
        config: Some(cfg.clone()),
    })
}
