//! Batch experiment runner behind the `balajoin` binary.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 verification failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{parse_seeds, parse_strategies, parse_values, ExperimentConfig};
use crate::datagen::Workload;
use crate::error::{Error, Result};
use crate::metrics::{verify_report, SummaryRow, SweepAxis, SweepResult, SUMMARY_HEADER};
use crate::simulator::{run, SimReport};
use crate::strategies::Strategy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "balajoin", version, about = "Skew-aware distributed hash join simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (key=value lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed list, e.g. `1,2,3` or `1..10:1`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a generated workload as CSV.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Run every configured strategy and seed; print summary rows and write
    /// the full reports as a JSON array.
    Run {
        #[command(flatten)]
        common: Common,
        /// Strategy list overriding the config, e.g. `bppr,grahj`.
        #[arg(long)]
        strategies: Option<String>,
        /// Join an exported workload CSV instead of generating one.
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Record routing and transfer traces (needed by `verify`).
        #[arg(long)]
        trace: bool,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Sweep one axis and write the summary CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// bandwidth | epsilon | zipf | rs_ratio | nodes
        #[arg(long)]
        axis: String,
        /// `v1,v2,...` or `start..end:step`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        strategies: Option<String>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Re-check traced reports against their workload.
    Verify {
        /// Report JSON (one report or an array).
        #[arg(long)]
        report: PathBuf,
        /// Workload CSV the reports were produced from.
        #[arg(long)]
        workload: PathBuf,
    },
    /// Print summary rows for saved reports.
    Report {
        /// Report JSON (one report or an array).
        #[arg(long)]
        input: PathBuf,
        /// Also write the routing trace of the first traced report as CSV.
        #[arg(long)]
        routes: Option<PathBuf>,
    },
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config {
        line: 0,
        msg: msg.into(),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seeds) = &common.seeds {
        cfg.seeds = parse_seeds(seeds)?;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn read_reports(path: &Path) -> Result<Vec<SimReport>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}

pub fn read_workload(path: &Path) -> Result<Workload> {
    Workload::read_csv(BufReader::new(File::open(path)?), None)
}

/// Runs every (seed, strategy) pair of `cfg`, sorted by (seed, strategy).
pub fn run_all(cfg: &ExperimentConfig, external: Option<&Workload>, threads: usize) -> Result<Vec<SimReport>> {
    // An external workload has no seed of its own; it runs once.
    let workloads: Vec<(u64, Workload)> = match external {
        Some(w) => vec![(cfg.seeds[0], w.clone())],
        None => cfg
            .seeds
            .iter()
            .map(|&seed| Ok((seed, cfg.workload(seed)?)))
            .collect::<Result<_>>()?,
    };
    let jobs: Vec<(u64, Strategy)> = workloads
        .iter()
        .flat_map(|(seed, _)| cfg.strategies.iter().map(move |&s| (*seed, s)))
        .collect();
    let pool = pool(threads)?;
    let mut reports: Vec<(u64, Strategy, SimReport)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, strategy)| {
                let w = &workloads.iter().find(|(s, _)| *s == seed).expect("workload").1;
                let r = run(w, strategy, &cfg.cluster, &cfg.cost, cfg.detector_mode, &cfg.sim)?;
                Ok((seed, strategy, r))
            })
            .collect::<Result<_>>()
    })?;
    reports.sort_by_key(|(seed, s, _)| (*seed, *s));
    Ok(reports.into_iter().map(|(_, _, r)| r).collect())
}

/// Runs the sweep; rows come out sorted by (axis value, strategy, seed).
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], threads: usize) -> Result<SweepResult> {
    let configs: Vec<(f64, ExperimentConfig)> = values
        .iter()
        .map(|&v| Ok((v, cfg.with_axis(axis, v)?)))
        .collect::<Result<_>>()?;
    let pool = pool(threads)?;
    let rows: Vec<(f64, SummaryRow)> = pool.install(|| {
        configs
            .par_iter()
            .flat_map(|(v, c)| c.seeds.par_iter().map(move |&seed| (*v, c, seed)))
            .map(|(v, c, seed)| {
                let w = c.workload(seed)?;
                c.strategies
                    .iter()
                    .map(|&s| {
                        let r = run(&w, s, &c.cluster, &c.cost, c.detector_mode, &c.sim)?;
                        Ok((v, SummaryRow::from_report(&r)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<Vec<_>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    Ok(SweepResult::from_rows(axis, rows))
}

fn write_summary<W: Write>(out: &mut W, reports: &[SimReport]) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", SummaryRow::from_report(r)?.to_csv())?;
    }
    Ok(())
}

fn execute<W: Write>(cli: Cli, stdout: &mut W) -> Result<i32> {
    match cli.command {
        Command::Gen { common } => {
            let cfg = load_config(&common)?;
            let out = cfg.out.clone().ok_or_else(|| usage("gen needs --out"))?;
            let w = cfg.workload(cfg.seeds[0])?;
            let mut f = create(&out)?;
            w.write_csv(&mut f)?;
            f.flush()?;
            writeln!(stdout, "wrote {} tuples to {}", w.r_count() + w.s_count(), out.display())?;
        }
        Command::Run {
            common,
            strategies,
            workload,
            trace,
            parallel,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = strategies {
                cfg.strategies = parse_strategies(&s)?;
                cfg.validate()?;
            }
            cfg.sim.record_trace |= trace;
            let external = match &workload {
                Some(path) => {
                    let w = read_workload(path)?;
                    cfg.set("cluster.n", &w.n_nodes.to_string())?;
                    Some(w)
                }
                None => None,
            };
            let reports = run_all(&cfg, external.as_ref(), parallel)?;
            write_summary(stdout, &reports)?;
            if let Some(out) = &cfg.out {
                let mut f = create(out)?;
                serde_json::to_writer_pretty(&mut f, &reports)?;
                f.flush()?;
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
            strategies,
            parallel,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = strategies {
                cfg.strategies = parse_strategies(&s)?;
                cfg.validate()?;
            }
            let axis: SweepAxis = axis.parse()?;
            let values = parse_values(&values)?;
            if values.is_empty() {
                return Err(usage("--values is empty"));
            }
            let result = sweep(&cfg, axis, &values, parallel)?;
            match &cfg.out {
                Some(out) => {
                    let mut f = create(out)?;
                    result.write_csv(&mut f)?;
                    f.flush()?;
                }
                None => result.write_csv(&mut *stdout)?,
            }
        }
        Command::Verify { report, workload } => {
            let reports = read_reports(&report)?;
            let w = read_workload(&workload)?;
            let mut ok = true;
            for r in &reports {
                for c in verify_report(r, &w)? {
                    ok &= c.passed;
                    writeln!(stdout, "{} {} {}", r.strategy, r.detector_mode, c)?;
                }
            }
            return Ok(if ok { EXIT_OK } else { EXIT_VERIFY });
        }
        Command::Report { input, routes } => {
            let reports = read_reports(&input)?;
            write_summary(stdout, &reports)?;
            if let Some(path) = routes {
                let trace = reports
                    .iter()
                    .find_map(|r| r.trace.as_ref())
                    .ok_or(Error::MissingTrace)?;
                let mut f = create(&path)?;
                trace.write_routes_csv(&mut f)?;
                f.flush()?;
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T, W, E>(args: I, stdout: &mut W, stderr: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = write!(stderr, "{e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}
