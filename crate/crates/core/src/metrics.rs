//! Evaluation quantities derived from reports, the CSV summary schema, and
//! independent re-verification of a report against its workload.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bppr::balance_factor;
use crate::datagen::{RowId, Side, Workload};
use crate::error::{Error, Result};
use crate::simulator::{oracle_join, SimReport};

pub const SUMMARY_HEADER: &str =
    "strategy,n,bandwidth,z,ratio,epsilon,theta,seed,result_count,elapsed_s,throughput,total_bytes,B_global";

/// Result tuples per model second.
pub fn throughput(report: &SimReport) -> Result<f64> {
    if report.elapsed_seconds.is_nan() || report.elapsed_seconds <= 0.0 {
        return Err(Error::ZeroElapsed(report.elapsed_seconds));
    }
    Ok(report.total_result_count as f64 / report.elapsed_seconds)
}

/// Balance factor over the per-node skewed probe counts.
pub fn global_balance(report: &SimReport) -> f64 {
    let loads: Vec<u64> = report.nodes.iter().map(|l| l.skewed_received).collect();
    balance_factor(&loads).unwrap_or(0.0)
}

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub n: usize,
    pub bandwidth: f64,
    pub z: Option<f64>,
    pub ratio: Option<f64>,
    pub epsilon: f64,
    pub theta: f64,
    pub seed: Option<u64>,
    pub result_count: u64,
    pub elapsed_s: f64,
    pub throughput: f64,
    pub total_bytes: u64,
    pub b_global: f64,
}

impl SummaryRow {
    pub fn from_report(r: &SimReport) -> Result<Self> {
        Ok(Self {
            strategy: r.strategy.name().to_string(),
            n: r.n,
            bandwidth: r.params.bandwidth_mbps,
            z: r.params.zipf_z,
            ratio: r.params.rs_ratio,
            epsilon: r.params.epsilon,
            theta: r.params.theta,
            seed: r.params.seed,
            result_count: r.total_result_count,
            elapsed_s: r.elapsed_seconds,
            throughput: throughput(r)?,
            total_bytes: r.total_network_bytes,
            b_global: r.global_balance_b,
        })
    }

    pub fn to_csv(&self) -> String {
        fn opt<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(T::to_string).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.strategy,
            self.n,
            self.bandwidth,
            opt(&self.z),
            opt(&self.ratio),
            self.epsilon,
            self.theta,
            opt(&self.seed),
            self.result_count,
            self.elapsed_s,
            self.throughput,
            self.total_bytes,
            self.b_global
        )
    }
}

pub fn summary_row(report: &SimReport) -> Result<String> {
    Ok(SummaryRow::from_report(report)?.to_csv())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Bandwidth,
    Epsilon,
    Zipf,
    RsRatio,
    Nodes,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Bandwidth => "bandwidth",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Zipf => "zipf",
            SweepAxis::RsRatio => "rs_ratio",
            SweepAxis::Nodes => "nodes",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bandwidth" => Ok(SweepAxis::Bandwidth),
            "epsilon" => Ok(SweepAxis::Epsilon),
            "zipf" | "z" => Ok(SweepAxis::Zipf),
            "rs_ratio" | "ratio" => Ok(SweepAxis::RsRatio),
            "nodes" | "n" => Ok(SweepAxis::Nodes),
            other => Err(Error::Config {
                line: 0,
                msg: format!("unknown sweep axis {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Groups rows by axis value; points and rows within a point come out
    /// sorted by (value, strategy, seed).
    pub fn from_rows(axis: SweepAxis, rows: Vec<(f64, SummaryRow)>) -> Self {
        let mut rows = rows;
        rows.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.strategy.cmp(&b.1.strategy))
                .then_with(|| a.1.seed.cmp(&b.1.seed))
        });
        let mut points: Vec<SweepPoint> = Vec::new();
        for (value, row) in rows {
            match points.last_mut() {
                Some(p) if p.value == value => p.rows.push(row),
                _ => points.push(SweepPoint {
                    value,
                    rows: vec![row],
                }),
            }
        }
        Self { axis, points }
    }

    /// Rows for one strategy, in axis order.
    pub fn series(&self, strategy: &str) -> Vec<(f64, &SummaryRow)> {
        self.points
            .iter()
            .flat_map(|p| p.rows.iter().map(move |r| (p.value, r)))
            .filter(|(_, r)| r.strategy == strategy)
            .collect()
    }

    /// Whether all rows agree on every configuration field except the axis.
    pub fn consistent(&self) -> bool {
        let key = |r: &SummaryRow| {
            let mut k = vec![
                ("n", r.n as f64),
                ("bandwidth", r.bandwidth),
                ("z", r.z.unwrap_or(f64::NAN)),
                ("ratio", r.ratio.unwrap_or(f64::NAN)),
                ("epsilon", r.epsilon),
                ("theta", r.theta),
            ];
            let axis_field = match self.axis {
                SweepAxis::Bandwidth => "bandwidth",
                SweepAxis::Epsilon => "epsilon",
                SweepAxis::Zipf => "z",
                SweepAxis::RsRatio => "ratio",
                SweepAxis::Nodes => "n",
            };
            k.retain(|(name, _)| *name != axis_field);
            k.into_iter().map(|(_, v)| v.to_bits()).collect::<Vec<_>>()
        };
        let mut keys = self.points.iter().flat_map(|p| p.rows.iter()).map(key);
        match keys.next() {
            Some(first) => keys.all(|k| k == first),
            None => true,
        }
    }

    /// `axis,value,` followed by the summary columns.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "axis,value,{SUMMARY_HEADER}")?;
        for p in &self.points {
            for r in &p.rows {
                writeln!(out, "{},{},{}", self.axis, p.value, r.to_csv())?;
            }
        }
        Ok(())
    }
}

/// Outcome of one independent re-check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

/// Recomputes the report's counters from its trace and the workload.
pub fn verify_report(report: &SimReport, workload: &Workload) -> Result<Vec<Check>> {
    let trace = report.trace.as_ref().ok_or(Error::MissingTrace)?;
    let n = report.n;
    let mut checks = Vec::new();

    let expected: HashSet<(Side, RowId, u64)> =
        workload.all_tuples().map(|t| (t.side, t.rowid, t.key)).collect();
    let routed: HashSet<(Side, RowId, u64)> =
        trace.routes.iter().map(|r| (r.side, r.rowid, r.key)).collect();
    let complete = workload.n_nodes == n
        && trace.routes.len() == expected.len()
        && routed == expected
        && trace.routes.iter().all(|r| r.dest.iter().all(|&d| d < n));
    checks.push(Check::new(
        "trace_complete",
        complete,
        format!("{} routing records for {} tuples", trace.routes.len(), expected.len()),
    ));

    let oracle = oracle_join(workload).size;
    let node_sum: u64 = report.nodes.iter().map(|l| l.result_count).sum();
    checks.push(Check::new(
        "result_count",
        report.total_result_count == oracle && node_sum == oracle,
        format!("report {} nodes {} oracle {oracle}", report.total_result_count, node_sum),
    ));

    let sent: u64 = report.nodes.iter().map(|l| l.bytes_sent).sum();
    let received: u64 = report.nodes.iter().map(|l| l.bytes_received).sum();
    checks.push(Check::new(
        "byte_conservation",
        sent == received && sent == report.total_network_bytes,
        format!("sent {sent} received {received} total {}", report.total_network_bytes),
    ));

    let mut t_sent = vec![0u64; n];
    let mut t_recv = vec![0u64; n];
    let mut in_range = true;
    for t in &trace.transfers {
        if t.from >= n || t.to >= n || t.from == t.to {
            in_range = false;
            continue;
        }
        t_sent[t.from] += t.bytes;
        t_recv[t.to] += t.bytes;
    }
    let mismatched: Vec<usize> = (0..n.min(report.nodes.len()))
        .filter(|&j| t_sent[j] != report.nodes[j].bytes_sent || t_recv[j] != report.nodes[j].bytes_received)
        .collect();
    checks.push(Check::new(
        "byte_recount",
        in_range && mismatched.is_empty() && report.nodes.len() == n,
        if mismatched.is_empty() {
            format!("{} transfer events", trace.transfers.len())
        } else {
            format!("nodes {mismatched:?} disagree with the transfer log")
        },
    ));

    let mut probes = vec![0u64; n];
    let mut skewed = vec![0u64; n];
    for r in trace.routes.iter().filter(|r| r.side == Side::Probe) {
        for &d in r.dest.iter().filter(|&&d| d < n) {
            probes[d] += 1;
            if r.skewed {
                skewed[d] += 1;
            }
        }
    }
    let ledger_probes: Vec<u64> = report.nodes.iter().map(|l| l.probe_processed).collect();
    checks.push(Check::new(
        "probe_deliveries",
        probes == ledger_probes,
        format!("trace {probes:?} ledger {ledger_probes:?}"),
    ));
    let ledger_skewed: Vec<u64> = report.nodes.iter().map(|l| l.skewed_received).collect();
    checks.push(Check::new(
        "skewed_deliveries",
        skewed == ledger_skewed,
        format!("trace {skewed:?} ledger {ledger_skewed:?}"),
    ));

    let b = balance_factor(&skewed).unwrap_or(f64::NAN);
    checks.push(Check::new(
        "balance_factor",
        b == report.global_balance_b,
        format!("trace {b} report {}", report.global_balance_b),
    ));

    checks.push(Check::new(
        "elapsed_positive",
        report.elapsed_seconds > 0.0 && report.elapsed_seconds.is_finite(),
        format!("{} s", report.elapsed_seconds),
    ));
    Ok(checks)
}
