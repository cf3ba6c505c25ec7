//! Strategy-by-skew sweeps and their CSV output.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::engine::Strategy;
use crate::sim::{run, RunMode, RunOptions, RunResult, SimError};
use crate::workload::{build_trace, load_trace, Tuple, WorkloadSpec};

/// Environment variable overriding the number of worker threads.
pub const WORKERS_ENV: &str = "JOINOPT_WORKERS";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workload: {0}")]
    Workload(#[from] crate::workload::WorkloadError),
    #[error("{strategy} z={z} seed={seed}: {source}")]
    Run { strategy: Strategy, z: f64, seed: u64, source: SimError },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("writing csv: {0}")]
    Io(#[from] std::io::Error),
}

/// One simulation in a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub strategy: Strategy,
    pub z: f64,
    pub seed: u64,
    pub adaptive: bool,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub cell: Cell,
    pub result: RunResult,
    /// Time (or throughput in stream mode) over NO's at z = 0 with the same seed.
    pub normalized: Option<f64>,
    /// Non-adaptive time over adaptive time for the same cell.
    pub nonadaptive_ratio: Option<f64>,
}

impl Row {
    /// The headline number: completion time in batch mode, throughput in stream mode.
    pub fn value(&self, mode: RunMode) -> f64 {
        match mode {
            RunMode::Batch => self.result.metrics.completion_time,
            RunMode::Stream { .. } => self.result.metrics.throughput,
        }
    }
}

/// Cells in output order: z, then seed, then strategy, adaptive before frozen.
pub fn cells(cfg: &RunConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &z in &cfg.workload.zipf {
        for &seed in &cfg.run.seeds {
            for &strategy in &cfg.run.strategies {
                out.push(Cell { strategy, z, seed, adaptive: true });
                if cfg.run.nonadaptive && strategy.caches() {
                    out.push(Cell { strategy, z, seed, adaptive: false });
                }
            }
        }
    }
    out
}

fn trace_for(cfg: &RunConfig, spec: &WorkloadSpec, seed: u64) -> Result<Vec<Tuple>, ReportError> {
    Ok(match &cfg.workload.trace {
        Some(path) => load_trace(path)?,
        None => build_trace(spec, seed)?,
    })
}

/// Runs one cell on an already generated trace.
pub fn run_cell(cfg: &RunConfig, cell: Cell, spec: &WorkloadSpec, trace: &[Tuple]) -> Result<RunResult, ReportError> {
    let opts = RunOptions {
        strategy: cell.strategy,
        adaptive: cell.adaptive,
        mode: cfg.run.mode,
        seed: cell.seed,
        event_budget: cfg.run.event_budget,
        capture_log: false,
    };
    run(&cfg.cluster, &cfg.engine, spec, trace, &opts).map_err(|source| ReportError::Run {
        strategy: cell.strategy,
        z: cell.z,
        seed: cell.seed,
        source,
    })
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every cell, one shared trace per (z, seed), in parallel.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<Row>, ReportError> {
    cfg.validate()?;
    let mut traces = Vec::new();
    for &z in &cfg.workload.zipf {
        let spec = cfg.workload.spec(z)?;
        for &seed in &cfg.run.seeds {
            let t = trace_for(cfg, &spec, seed)?;
            traces.push(((z.to_bits(), seed), (spec.clone(), Arc::new(t))));
        }
    }
    let lookup = |z: f64, seed: u64| {
        traces.iter().find(|(k, _)| *k == (z.to_bits(), seed)).map(|(_, v)| v).expect("trace prepared")
    };
    let cells = cells(cfg);
    let work = || -> Result<Vec<RunResult>, ReportError> {
        cells
            .par_iter()
            .map(|&c| {
                let (spec, trace) = lookup(c.z, c.seed);
                run_cell(cfg, c, spec, trace)
            })
            .collect()
    };
    let results = match worker_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ReportError::Pool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut rows: Vec<Row> = cells
        .into_iter()
        .zip(results)
        .map(|(cell, result)| Row { cell, result, normalized: None, nonadaptive_ratio: None })
        .collect();
    annotate(&mut rows, cfg.run.mode);
    Ok(rows)
}

/// Fills the normalized and non-adaptive ratio columns.
pub fn annotate(rows: &mut [Row], mode: RunMode) {
    let find = |rows: &[Row], s: Strategy, z: f64, seed: u64, adaptive: bool| {
        rows.iter()
            .find(|r| r.cell.strategy == s && r.cell.z == z && r.cell.seed == seed && r.cell.adaptive == adaptive)
            .map(|r| r.value(mode))
    };
    let mut updates = Vec::with_capacity(rows.len());
    for r in rows.iter() {
        let c = r.cell;
        let normalized =
            find(rows, Strategy::No, 0.0, c.seed, true).filter(|&base| base > 0.0).map(|base| r.value(mode) / base);
        let ratio = if c.adaptive && c.strategy.caches() {
            find(rows, c.strategy, c.z, c.seed, false).and_then(|frozen| {
                let adaptive = r.value(mode);
                let r = match mode {
                    RunMode::Batch => frozen / adaptive,
                    RunMode::Stream { .. } => adaptive / frozen,
                };
                r.is_finite().then_some(r)
            })
        } else {
            None
        };
        updates.push((normalized, ratio));
    }
    for (r, (n, q)) in rows.iter_mut().zip(updates) {
        r.normalized = n;
        r.nonadaptive_ratio = q;
    }
}

/// Column names, in order. Units are in the suffixes.
pub const COLUMNS: &[&str] = &[
    "strategy",
    "adaptive",
    "zipf_z",
    "seed",
    "tuples",
    "completion_time_s",
    "throughput_tuples_per_s",
    "normalized",
    "nonadaptive_ratio",
    "mean_latency_s",
    "data_requests",
    "compute_requests",
    "coalesced_requests",
    "computed_at_data",
    "returned_raw",
    "local_from_memory",
    "local_from_disk",
    "local_fetched",
    "local_returned",
    "mem_admissions",
    "mem_evictions",
    "invalidations",
    "stale_local",
    "messages",
    "bytes_sent",
    "events",
    "data_cpu_skew",
    "mean_kept_fraction",
    "compute_cpu_busy_frac",
    "data_cpu_busy_frac",
    "data_disk_busy_frac",
    "data_link_out_busy_frac",
    "event_log_sha256",
];

fn num(x: f64) -> String {
    format!("{x:.9}")
}

fn per_node(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn record(r: &Row) -> Vec<String> {
    let m = &r.result.metrics;
    vec![
        r.cell.strategy.name().to_string(),
        r.cell.adaptive.to_string(),
        format!("{}", r.cell.z),
        r.cell.seed.to_string(),
        m.tuples.to_string(),
        num(m.completion_time),
        num(m.throughput),
        opt(r.normalized),
        opt(r.nonadaptive_ratio),
        num(m.mean_latency),
        m.data_requests.to_string(),
        m.compute_requests.to_string(),
        m.coalesced.to_string(),
        m.computed_at_data.to_string(),
        m.returned_raw.to_string(),
        m.local_from_memory.to_string(),
        m.local_from_disk.to_string(),
        m.local_fetched.to_string(),
        m.local_returned.to_string(),
        m.mem_admissions.to_string(),
        m.mem_evictions.to_string(),
        m.invalidations.to_string(),
        m.stale_local.to_string(),
        m.messages.to_string(),
        m.bytes_sent.to_string(),
        m.events.to_string(),
        num(m.data_cpu_skew),
        num(m.mean_kept_fraction),
        per_node(&m.compute_cpu_busy),
        per_node(&m.data_cpu_busy),
        per_node(&m.data_disk_busy),
        per_node(&m.data_link_out_busy),
        r.result.log_hash.clone(),
    ]
}

/// Writes `#` comment lines describing the setup, then the CSV table.
pub fn write_csv<W: Write>(mut out: W, cfg: &RunConfig, rows: &[Row]) -> Result<(), ReportError> {
    let c = &cfg.cluster;
    let w = &cfg.workload;
    let p = w.profile()?;
    writeln!(out, "# joinopt {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(
        out,
        "# cluster: {} compute, {} data, link {} B/s, t_disk {} s, latency {} s, overhead {} B",
        c.compute_nodes, c.data_nodes, c.link_bandwidth, c.t_disk, c.latency, c.message_overhead
    )?;
    writeln!(
        out,
        "# workload: {} tuples, {} keys, s_k {} B, s_p {} B, s_v {} B, s_cv {} B, function {} s, drift shifts {}",
        w.tuples,
        w.key_universe,
        p.key_size,
        p.param_size,
        p.value_size,
        p.computed_size,
        p.function_cost,
        w.drift_shifts
    )?;
    let e = &cfg.engine;
    writeln!(
        out,
        "# engine: batch {}, max wait {} s, window {}, alpha {}, epsilon {}, memory cache {} B",
        e.batch_size, e.max_wait, e.prefetch_window, e.alpha, e.epsilon, e.mem_cache_bytes
    )?;
    writeln!(
        out,
        "# normalized: value over NO at z=0 for the same seed; nonadaptive_ratio: frozen over adaptive time; busy fractions are per node, ';'-separated"
    )?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(COLUMNS).map_err(csv_io)?;
    for r in rows {
        wtr.write_record(record(r)).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

/// Mean of the headline value over seeds for one strategy and skew.
pub fn mean_value(rows: &[Row], mode: RunMode, strategy: Strategy, z: f64, adaptive: bool) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.cell.strategy == strategy && r.cell.z == z && r.cell.adaptive == adaptive)
        .map(|r| r.value(mode))
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}
