//! Experiment configuration: a flat `section.key=value` text format.
//!
//! ```text
//! # defaults shown
//! workload.s_count=100000
//! workload.rs_ratio=2/3
//! workload.z=1.25
//! cluster.n=3
//! cost.bandwidth_mbps=100
//! run.strategies=all
//! run.detector_mode=online
//! run.epsilon=0.2
//! detector.theta=0.001
//! run.seeds=1
//! ```
//!
//! Blank lines and `#` comments are ignored; later assignments win.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bppr::BalanceScope;
use crate::datagen::{build_workload, Arrival, Placement, Workload, WorkloadConfig};
use crate::error::{Error, Result};
use crate::metrics::SweepAxis;
use crate::simulator::{ClusterSpec, CostModel, DetectorMode, SimOptions};
use crate::strategies::Strategy;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `workload.n_nodes` always equals `cluster.n`.
    pub workload: WorkloadConfig,
    pub cluster: ClusterSpec,
    pub cost: CostModel,
    pub strategies: Vec<Strategy>,
    pub detector_mode: DetectorMode,
    pub sim: SimOptions,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let workload = WorkloadConfig::default();
        Self {
            cluster: ClusterSpec::new(workload.n_nodes),
            seeds: vec![workload.seed],
            workload,
            cost: CostModel::default(),
            strategies: Strategy::ALL.to_vec(),
            detector_mode: DetectorMode::Online,
            sim: SimOptions::default(),
            out: None,
        }
    }
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| err(line, format!("{key}: cannot parse {v:?}")))
}

fn bool_value(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(err(line, format!("{key}: expected a boolean, got {v:?}"))),
    }
}

/// A real number or a fraction such as `2/3`.
pub fn parse_ratio(v: &str) -> Option<f64> {
    match v.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0.0).then(|| a / b)
        }
        None => v.trim().parse().ok(),
    }
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let seeds = parse_values(v)?
        .into_iter()
        .map(|x| {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as u64)
            } else {
                Err(err(0, format!("seed {x} is not a non-negative integer")))
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(err(0, "at least one seed is required"));
    }
    Ok(seeds)
}

/// A comma list (`0.1,0.2`) or an inclusive range with step
/// (`10..300:50`). Range points are computed as `start + i * step` so they
/// do not accumulate rounding error.
pub fn parse_values(v: &str) -> Result<Vec<f64>> {
    let v = v.trim();
    if let Some((range, step)) = v.split_once(':') {
        let (a, b) = range
            .split_once("..")
            .ok_or_else(|| err(0, format!("range {v:?} must look like start..end:step")))?;
        let start = parse_ratio(a).ok_or_else(|| err(0, format!("bad range start {a:?}")))?;
        let end = parse_ratio(b).ok_or_else(|| err(0, format!("bad range end {b:?}")))?;
        let step = parse_ratio(step).ok_or_else(|| err(0, format!("bad range step {step:?}")))?;
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(err(0, format!("range {v:?} needs step > 0 and end >= start")));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        // Round away float noise such as 0.30000000000000004.
        let clean = |x: f64| (x * 1e9).round() / 1e9;
        return Ok((0..count).map(|i| clean(start + i as f64 * step)).collect());
    }
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_ratio(s).ok_or_else(|| err(0, format!("bad value {s:?}"))))
        .collect()
}

pub fn parse_strategies(v: &str) -> Result<Vec<Strategy>> {
    if v.trim().eq_ignore_ascii_case("all") {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for s in v.split(',').filter(|s| !s.trim().is_empty()) {
        let s: Strategy = s.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected key=value, got {line:?}")))?;
            cfg.set_at(i + 1, k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_at(0, key, value)
    }

    fn set_at(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let w = &mut self.workload;
        match key {
            "workload.n_nodes" | "cluster.n" => {
                let n = num(line, key, v)?;
                w.n_nodes = n;
                self.cluster.n = n;
            }
            "workload.s_count" => w.s_count = num(line, key, v)?,
            "workload.rs_ratio" => {
                w.rs_ratio = parse_ratio(v).ok_or_else(|| err(line, format!("{key}: bad ratio {v:?}")))?
            }
            "workload.universe" => w.universe = num(line, key, v)?,
            "workload.z" | "workload.zipf_z" => w.zipf_z = num(line, key, v)?,
            "workload.placement" => w.placement = v.parse::<Placement>().map_err(|e| err(line, e.to_string()))?,
            "workload.arrival" => w.arrival = v.parse::<Arrival>().map_err(|e| err(line, e.to_string()))?,
            "workload.seed" => {
                w.seed = num(line, key, v)?;
                self.seeds = vec![w.seed];
            }
            "workload.theta_gen" | "workload.skew_threshold" => w.skew_threshold = num(line, key, v)?,
            "cluster.response_node" => self.cluster.response_node = num(line, key, v)?,
            "cost.bandwidth_mbps" | "cost.bandwidth" => self.cost.bandwidth_mbps = num(line, key, v)?,
            "cost.tuple_wire_bytes" => self.cost.tuple_wire_bytes = num(line, key, v)?,
            "cost.pull_request_bytes" => self.cost.pull_request_bytes = num(line, key, v)?,
            "cost.c_build" => self.cost.c_build = num(line, key, v)?,
            "cost.c_probe" => self.cost.c_probe = num(line, key, v)?,
            "cost.detect_cost" => self.cost.detect_cost = num(line, key, v)?,
            "detector.theta" => self.sim.detector.theta = num(line, key, v)?,
            "detector.k" | "detector.capacity" => self.sim.detector.capacity = num(line, key, v)?,
            "detector.warmup" => self.sim.detector.warmup = num(line, key, v)?,
            "run.strategies" | "run.strategy" => {
                self.strategies = parse_strategies(v).map_err(|e| err(line, e.to_string()))?
            }
            "run.detector_mode" | "detector.mode" => {
                self.detector_mode = v.parse().map_err(|e: Error| err(line, e.to_string()))?
            }
            "run.epsilon" | "bppr.epsilon" => self.sim.epsilon = num(line, key, v)?,
            "run.scope" | "bppr.scope" => {
                self.sim.scope = match v.to_ascii_lowercase().as_str() {
                    "all" | "all_nodes" => BalanceScope::AllNodes,
                    "active" | "active_nodes" => BalanceScope::ActiveNodes,
                    _ => return Err(err(line, format!("{key}: expected all or active, got {v:?}"))),
                }
            }
            "run.seeds" => self.seeds = parse_seeds(v).map_err(|e| err(line, e.to_string()))?,
            "run.out" | "output.path" => self.out = Some(PathBuf::from(v)),
            "run.trace" => self.sim.record_trace = bool_value(line, key, v)?,
            "run.debug_checks" => self.sim.debug_checks = bool_value(line, key, v)?,
            "run.streaming_only" => self.sim.streaming_only = bool_value(line, key, v)?,
            _ => return Err(err(line, format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(err(0, "at least one strategy is required"));
        }
        if self.seeds.is_empty() {
            return Err(err(0, "at least one seed is required"));
        }
        let d = &self.sim.detector;
        if !(d.theta > 0.0 && d.theta < 1.0) {
            return Err(err(0, format!("detector.theta must be in (0, 1), got {}", d.theta)));
        }
        if d.capacity == 0 {
            return Err(err(0, "detector.k must be positive"));
        }
        if !(self.sim.epsilon >= 0.0 && self.sim.epsilon.is_finite()) {
            return Err(err(0, format!("run.epsilon must be non-negative, got {}", self.sim.epsilon)));
        }
        self.workload.validate()?;
        self.cluster.validate()?;
        self.cost.validate()
    }

    pub fn workload_config(&self, seed: u64) -> WorkloadConfig {
        WorkloadConfig {
            seed,
            ..self.workload.clone()
        }
    }

    pub fn workload(&self, seed: u64) -> Result<Workload> {
        build_workload(&self.workload_config(seed))
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let v = value.to_string();
        match axis {
            SweepAxis::Bandwidth => cfg.set("cost.bandwidth_mbps", &v)?,
            SweepAxis::Epsilon => cfg.set("run.epsilon", &v)?,
            SweepAxis::Zipf => cfg.set("workload.z", &v)?,
            SweepAxis::RsRatio => cfg.set("workload.rs_ratio", &v)?,
            SweepAxis::Nodes => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(err(0, format!("node count {value} is not an integer")));
                }
                cfg.set("cluster.n", &v)?
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let w = &self.workload;
        let mut s = String::new();
        let strategies: Vec<&str> = self.strategies.iter().map(|s| s.name()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let scope = match self.sim.scope {
            BalanceScope::AllNodes => "all",
            BalanceScope::ActiveNodes => "active",
        };
        let _ = writeln!(s, "cluster.n={}", self.cluster.n);
        let _ = writeln!(s, "cluster.response_node={}", self.cluster.response_node);
        let _ = writeln!(s, "workload.s_count={}", w.s_count);
        let _ = writeln!(s, "workload.rs_ratio={}", w.rs_ratio);
        let _ = writeln!(s, "workload.universe={}", w.universe);
        let _ = writeln!(s, "workload.z={}", w.zipf_z);
        let _ = writeln!(s, "workload.placement={}", w.placement);
        let _ = writeln!(s, "workload.arrival={}", w.arrival);
        let _ = writeln!(s, "workload.theta_gen={}", w.skew_threshold);
        let _ = writeln!(s, "cost.bandwidth_mbps={}", self.cost.bandwidth_mbps);
        let _ = writeln!(s, "cost.tuple_wire_bytes={}", self.cost.tuple_wire_bytes);
        let _ = writeln!(s, "cost.pull_request_bytes={}", self.cost.pull_request_bytes);
        let _ = writeln!(s, "cost.c_build={}", self.cost.c_build);
        let _ = writeln!(s, "cost.c_probe={}", self.cost.c_probe);
        let _ = writeln!(s, "cost.detect_cost={}", self.cost.detect_cost);
        let _ = writeln!(s, "detector.theta={}", self.sim.detector.theta);
        let _ = writeln!(s, "detector.k={}", self.sim.detector.capacity);
        let _ = writeln!(s, "detector.warmup={}", self.sim.detector.warmup);
        let _ = writeln!(s, "run.strategies={}", strategies.join(","));
        let _ = writeln!(s, "run.detector_mode={}", self.detector_mode);
        let _ = writeln!(s, "run.epsilon={}", self.sim.epsilon);
        let _ = writeln!(s, "run.scope={scope}");
        let _ = writeln!(s, "run.trace={}", self.sim.record_trace);
        let _ = writeln!(s, "run.debug_checks={}", self.sim.debug_checks);
        let _ = writeln!(s, "run.streaming_only={}", self.sim.streaming_only);
        let _ = writeln!(s, "run.seeds={}", seeds.join(","));
        if let Some(out) = &self.out {
            let _ = writeln!(s, "run.out={}", out.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.workload.zipf_z, 1.25);
        assert_eq!(cfg.cost.bandwidth_mbps, 100.0);
        assert_eq!(cfg.sim.epsilon, 0.2);
        assert_eq!(cfg.strategies.len(), 5);
    }

    #[test]
    fn keys_comments_and_fractions() {
        let cfg = ExperimentConfig::parse(
            "# experiment\nworkload.z=0.5 # trailing\n\nworkload.rs_ratio = 1/4\ncluster.n=6\nrun.strategies=bppr,grahj\nrun.detector_mode=two-pass\nrun.seeds=1..3:1\n",
        )
        .unwrap();
        assert_eq!(cfg.workload.zipf_z, 0.5);
        assert_eq!(cfg.workload.rs_ratio, 0.25);
        assert_eq!(cfg.workload.n_nodes, 6);
        assert_eq!(cfg.cluster.n, 6);
        assert_eq!(cfg.strategies, vec![Strategy::Bppr, Strategy::Grahj]);
        assert_eq!(cfg.detector_mode, DetectorMode::TwoPass);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match ExperimentConfig::parse("workload.z=1\nworkload.zz=3\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        assert!(ExperimentConfig::parse("run.strategies=").is_err());
        assert!(ExperimentConfig::parse("run.strategies=hash").is_err());
        assert!(ExperimentConfig::parse("cluster.n=1").is_err());
        assert!(ExperimentConfig::parse("workload.placement=concentrated:7").is_err());
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("workload.rs_ratio", "2/3").unwrap();
        cfg.set("run.scope", "active").unwrap();
        cfg.set("run.seeds", "4,5").unwrap();
        cfg.set("workload.placement", "concentrated:1").unwrap();
        cfg.out = Some(PathBuf::from("out.json"));
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn value_lists_and_ranges() {
        assert_eq!(parse_values("1,2.5, 4").unwrap(), vec![1.0, 2.5, 4.0]);
        assert_eq!(
            parse_values("10..300:50").unwrap(),
            vec![10.0, 60.0, 110.0, 160.0, 210.0, 260.0]
        );
        assert_eq!(
            parse_values("0.1..0.7:0.1").unwrap(),
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
        );
        assert!(parse_values("5..1:1").is_err());
        assert!(parse_values("1..5:0").is_err());
        assert!(parse_seeds("1.5").is_err());
    }

    #[test]
    fn axis_overrides() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.with_axis(SweepAxis::Nodes, 6.0).unwrap().workload.n_nodes, 6);
        assert_eq!(cfg.with_axis(SweepAxis::Zipf, 0.0).unwrap().workload.zipf_z, 0.0);
        assert_eq!(cfg.with_axis(SweepAxis::Bandwidth, 10.0).unwrap().cost.bandwidth_mbps, 10.0);
        assert!(cfg.with_axis(SweepAxis::Nodes, 2.5).is_err());
        assert!(cfg.with_axis(SweepAxis::Bandwidth, 0.0).is_err());
    }
}
