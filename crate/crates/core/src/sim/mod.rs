//! Discrete-event cluster simulator.
//!
//! Every node owns four FIFO servers (CPU, disk, outbound and inbound link).
//! Work is reserved on the servers when it is issued and an event fires when
//! the last reservation of a job ends, so overlapping resources behave like
//! a pipeline and the slowest one sets the pace.

mod metrics;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use metrics::Metrics;

use crate::cache::SizeMode;
use crate::cache::TieredCache;
use crate::costs::{BandwidthMatrix, CostParams, CostSeed};
use crate::engine::{ComputeNode, DataNode, EngineConfig, KeyDirectory, Message, Placement, Strategy};
use crate::frequency::LossyCounter;
use crate::workload::{rank_to_key, rng_for, Catalog, Tuple, UpdateKeys, WorkloadSpec, ZipfTable, STREAM_UPDATES};
use crate::{ComputeId, DataId, KeyId, SimTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cluster: {0}")]
    Cluster(String),
    #[error("invalid engine config: {0}")]
    Engine(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("event budget of {budget} exhausted at t={now:.6}s; backlogs: {backlog}")]
    Budget { budget: u64, now: SimTime, backlog: String },
    #[error("simulation stalled at t={now:.6}s with {missing} tuples unfinished; backlogs: {backlog}")]
    Stalled { now: SimTime, missing: u64, backlog: String },
}

/// Shape and speeds of the simulated cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSpec {
    pub compute_nodes: usize,
    pub data_nodes: usize,
    /// Bytes per second of every compute-to-data link unless `bandwidth` is set.
    pub link_bandwidth: f64,
    /// Full compute-by-data matrix in bytes per second.
    pub bandwidth: Option<Vec<Vec<f64>>>,
    /// Seconds per disk read, used for nodes without an explicit entry.
    pub t_disk: f64,
    pub compute_t_disk: Vec<f64>,
    pub data_t_disk: Vec<f64>,
    /// Multipliers on function cost; 1.0 for nodes without an entry.
    pub compute_cpu_factor: Vec<f64>,
    pub data_cpu_factor: Vec<f64>,
    /// One-way propagation delay per message, seconds.
    pub latency: f64,
    pub message_overhead: u64,
    pub snapshot_overhead: u64,
    /// Bytes of cost feedback attached to each response entry.
    pub feedback_bytes: u64,
    pub placement: Placement,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            compute_nodes: 4,
            data_nodes: 4,
            link_bandwidth: 1e6,
            bandwidth: None,
            t_disk: 0.001,
            compute_t_disk: Vec::new(),
            data_t_disk: Vec::new(),
            compute_cpu_factor: Vec::new(),
            data_cpu_factor: Vec::new(),
            latency: 0.0002,
            message_overhead: 64,
            snapshot_overhead: 160,
            feedback_bytes: 24,
            placement: Placement::Hash,
        }
    }
}

impl ClusterSpec {
    /// Fills per-node vectors from the scalar defaults and checks every value.
    pub fn resolved(&self) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::Cluster(m));
        if self.compute_nodes == 0 || self.data_nodes == 0 {
            return bad("node counts must be positive".into());
        }
        let mut out = self.clone();
        let fill = |v: &mut Vec<f64>, n: usize, default: f64, name: &str| -> Result<(), SimError> {
            if v.is_empty() {
                *v = vec![default; n];
            }
            if v.len() != n {
                return Err(SimError::Cluster(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(SimError::Cluster(format!("{name} entries must be positive, got {x}")));
            }
            Ok(())
        };
        fill(&mut out.compute_t_disk, self.compute_nodes, self.t_disk, "compute_t_disk")?;
        fill(&mut out.data_t_disk, self.data_nodes, self.t_disk, "data_t_disk")?;
        fill(&mut out.compute_cpu_factor, self.compute_nodes, 1.0, "compute_cpu_factor")?;
        fill(&mut out.data_cpu_factor, self.data_nodes, 1.0, "data_cpu_factor")?;
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return bad(format!("latency must be >= 0, got {}", self.latency));
        }
        out.bandwidth_matrix()?;
        Ok(out)
    }

    pub fn bandwidth_matrix(&self) -> Result<BandwidthMatrix, SimError> {
        let m = match &self.bandwidth {
            Some(rows) => {
                if rows.len() != self.compute_nodes || rows.iter().any(|r| r.len() != self.data_nodes) {
                    return Err(SimError::Cluster("bandwidth matrix must be compute_nodes x data_nodes".into()));
                }
                BandwidthMatrix::from_rows(rows)
            }
            None => BandwidthMatrix::uniform(self.compute_nodes, self.data_nodes, self.link_bandwidth),
        };
        m.map_err(|e| SimError::Cluster(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum RunMode {
    /// Every tuple is available at time zero; measures total completion time.
    Batch,
    /// Tuples arrive evenly at `arrival_rate` per second for `duration` seconds;
    /// throughput is measured after the first `warmup` fraction.
    Stream { arrival_rate: f64, duration: f64, warmup: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub strategy: Strategy,
    /// False freezes ski-rental decisions after the configured prefix of tuples.
    pub adaptive: bool,
    pub mode: RunMode,
    pub seed: u64,
    /// Maximum number of events; 0 picks a limit from the trace length.
    pub event_budget: u64,
    pub capture_log: bool,
}

impl RunOptions {
    pub fn batch(strategy: Strategy, seed: u64) -> Self {
        Self { strategy, adaptive: true, mode: RunMode::Batch, seed, event_budget: 0, capture_log: false }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Metrics,
    /// SHA-256 over the event log lines.
    pub log_hash: String,
    pub log: Option<Vec<String>>,
}

/// A single FIFO rate server.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FifoServer {
    free_at: SimTime,
    busy: f64,
}

impl FifoServer {
    /// Queues `duration` of work arriving at `at`; returns its start and end.
    pub fn reserve(&mut self, at: SimTime, duration: f64) -> (SimTime, SimTime) {
        let start = at.max(self.free_at);
        let end = start + duration;
        self.free_at = end;
        self.busy += duration;
        (start, end)
    }

    pub fn free_at(&self) -> SimTime {
        self.free_at
    }

    pub fn busy(&self) -> f64 {
        self.busy
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeResources {
    pub cpu: FifoServer,
    pub disk: FifoServer,
    pub link_out: FifoServer,
    pub link_in: FifoServer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Compute(ComputeId),
    Data(DataId),
}

impl std::fmt::Display for NodeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeRef::Compute(c) => write!(f, "c{}", c.0),
            NodeRef::Data(d) => write!(f, "d{}", d.0),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum EventKind {
    Start { node: ComputeId },
    Arrival { node: ComputeId, tuple: Tuple },
    Deliver { to: NodeRef, msg: Box<Message> },
    LocalDone { node: ComputeId, job: u64 },
    BatchServed { node: DataId, batch: u64 },
    FlushTimer { node: ComputeId, dest: DataId, generation: u64 },
    StoreUpdate,
}

#[derive(Debug)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event, FIFO among ties.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

/// Clock, event queue, resources and the event log.
pub struct SimCore {
    now: SimTime,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    pub(crate) compute_res: Vec<NodeResources>,
    pub(crate) data_res: Vec<NodeResources>,
    bandwidth: BandwidthMatrix,
    latency: f64,
    message_overhead: u64,
    hasher: Sha256,
    lines: Option<Vec<String>>,
    line: String,
    events: u64,
    messages: u64,
    bytes_sent: u64,
}

impl SimCore {
    fn new(cluster: &ClusterSpec, bandwidth: BandwidthMatrix, capture: bool) -> Self {
        Self {
            now: 0.0,
            queue: BinaryHeap::new(),
            seq: 0,
            compute_res: vec![NodeResources::default(); cluster.compute_nodes],
            data_res: vec![NodeResources::default(); cluster.data_nodes],
            bandwidth,
            latency: cluster.latency,
            message_overhead: cluster.message_overhead,
            hasher: Sha256::new(),
            lines: capture.then(Vec::new),
            line: String::new(),
            events: 0,
            messages: 0,
            bytes_sent: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub(crate) fn schedule(&mut self, at: SimTime, kind: EventKind) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.queue.push(Scheduled { at: at.max(self.now), seq: self.seq, kind });
    }

    fn resources(&mut self, n: NodeRef) -> &mut NodeResources {
        match n {
            NodeRef::Compute(c) => &mut self.compute_res[c.0],
            NodeRef::Data(d) => &mut self.data_res[d.0],
        }
    }

    /// Puts a message of `payload` bytes (plus the fixed overhead) on the wire.
    pub(crate) fn send(&mut self, from: NodeRef, to: NodeRef, payload: u64, msg: Message) {
        let (i, j) = match (from, to) {
            (NodeRef::Compute(i), NodeRef::Data(j)) | (NodeRef::Data(j), NodeRef::Compute(i)) => (i, j),
            _ => panic!("messages only flow between compute and data nodes"),
        };
        let bytes = payload + self.message_overhead;
        let bw = self.bandwidth.get(i, j).expect("link exists");
        let duration = bytes as f64 / bw;
        let now = self.now;
        let (out_start, out_end) = self.resources(from).link_out.reserve(now, duration);
        let (_, in_end) = self.resources(to).link_in.reserve(out_start, duration);
        self.messages += 1;
        self.bytes_sent += bytes;
        self.log(from, "send", None, bytes);
        let at = out_end.max(in_end) + self.latency;
        self.schedule(at, EventKind::Deliver { to, msg: Box::new(msg) });
    }

    /// Appends one record to the event log.
    pub(crate) fn log(&mut self, node: NodeRef, kind: &str, key: Option<KeyId>, bytes: u64) {
        self.line.clear();
        let _ = write!(self.line, "{:.9}\t{}\t{}\t", self.now, node, kind);
        match key {
            Some(k) => {
                let _ = write!(self.line, "{k}");
            }
            None => self.line.push('-'),
        }
        let _ = writeln!(self.line, "\t{bytes}");
        self.hasher.update(self.line.as_bytes());
        if let Some(lines) = &mut self.lines {
            lines.push(self.line.trim_end().to_string());
        }
    }
}

/// Read-only context shared by all nodes during a run.
pub struct Shared<'a> {
    pub cluster: &'a ClusterSpec,
    pub engine: &'a EngineConfig,
    pub strategy: Strategy,
    pub adaptive: bool,
    pub catalog: &'a Catalog,
    pub directory: KeyDirectory,
    pub bandwidth: &'a BandwidthMatrix,
    pub total_tuples: u64,
    /// Measurement window of a stream run.
    pub window: Option<(SimTime, SimTime)>,
}

struct Updater {
    rng: rand_chacha::ChaCha8Rng,
    interval: f64,
    zipf: Option<(ZipfTable, Vec<KeyId>)>,
    universe: u64,
}

impl Updater {
    fn pick(&mut self) -> KeyId {
        match &self.zipf {
            Some((table, keys)) => keys[table.sample(&mut self.rng)],
            None => KeyId(self.rng.gen_range(0..self.universe)),
        }
    }
}

fn default_budget(tuples: u64) -> u64 {
    1_000_000 + 200 * tuples
}

fn backlog(compute: &[ComputeNode], data: &[DataNode]) -> String {
    let mut s = String::new();
    for c in compute {
        let (input, mapped) = c.backlog();
        let _ = write!(s, "c{}: input {input}, map queue {mapped}; ", c.id().0);
    }
    for d in data {
        let _ = write!(s, "d{}: pending batches {}; ", d.id().0, d.pending_batches());
    }
    s.trim_end_matches("; ").to_string()
}

/// Runs `trace` through the cluster under one strategy.
pub fn run(
    cluster: &ClusterSpec,
    engine: &EngineConfig,
    workload: &WorkloadSpec,
    trace: &[Tuple],
    opts: &RunOptions,
) -> Result<RunResult, SimError> {
    let cluster = cluster.resolved()?;
    engine.validate().map_err(SimError::Engine)?;
    workload.validate().map_err(|e| SimError::Workload(e.to_string()))?;
    if let Some(t) = trace.iter().find(|t| t.key.0 >= workload.key_universe) {
        return Err(SimError::Workload(format!("tuple {} uses key {} outside the universe", t.id, t.key)));
    }
    let bandwidth = cluster.bandwidth_matrix()?;
    let catalog = Catalog::new(workload, opts.seed);
    let nc = cluster.compute_nodes;
    let nd = cluster.data_nodes;

    let (trace, window, horizon) = match opts.mode {
        RunMode::Batch => (trace.to_vec(), None, None),
        RunMode::Stream { arrival_rate, duration, warmup } => {
            if !(arrival_rate > 0.0 && duration > 0.0 && (0.0..1.0).contains(&warmup)) {
                return Err(SimError::Workload(
                    "stream mode needs positive rate and duration and warmup in [0, 1)".into(),
                ));
            }
            let n = ((arrival_rate * duration).floor() as usize).min(trace.len());
            (trace[..n].to_vec(), Some((warmup * duration, duration)), Some(duration))
        }
    };

    let shared = Shared {
        cluster: &cluster,
        engine,
        strategy: opts.strategy,
        adaptive: opts.adaptive,
        catalog: &catalog,
        directory: KeyDirectory::new(cluster.placement, nd, workload.key_universe),
        bandwidth: &bandwidth,
        total_tuples: trace.len() as u64,
        window,
    };

    let profile = *catalog.profile();
    let seed = CostSeed {
        key_size: profile.key_size as f64,
        param_size: profile.param_size as f64,
        value_size: profile.value_size as f64,
        computed_size: profile.computed_size as f64,
        function_cost: profile.function_cost,
        compute_t_disk: cluster.compute_t_disk.clone(),
        compute_cpu_scale: cluster.compute_cpu_factor.clone(),
        data_t_disk: cluster.data_t_disk.clone(),
        data_cpu_scale: cluster.data_cpu_factor.clone(),
    };
    let size_mode: SizeMode = engine.cache_sizing.resolve(catalog.uniform_sizes());
    let mut compute = Vec::with_capacity(nc);
    for i in 0..nc {
        let costs =
            CostParams::new(bandwidth.clone(), &seed, engine.alpha).map_err(|e| SimError::Cluster(e.to_string()))?;
        let counter = LossyCounter::new(engine.epsilon).map_err(|e| SimError::Engine(e.to_string()))?;
        let cache = TieredCache::new(size_mode, engine.mem_cache_bytes, engine.disk_cache_bytes);
        compute.push(ComputeNode::new(ComputeId(i), costs, counter, cache, nd, rng_for(opts.seed, 100 + i as u64)));
    }
    let mut data: Vec<DataNode> = (0..nd)
        .map(|j| DataNode::new(DataId(j), cluster.data_cpu_factor[j], engine.alpha, rng_for(opts.seed, 200 + j as u64)))
        .collect();

    let mut core = SimCore::new(&cluster, bandwidth.clone(), opts.capture_log);
    match opts.mode {
        RunMode::Batch => {
            for t in &trace {
                compute[(t.id % nc as u64) as usize].push_input(*t);
            }
            for i in 0..nc {
                core.schedule(0.0, EventKind::Start { node: ComputeId(i) });
            }
        }
        RunMode::Stream { arrival_rate, .. } => {
            for (idx, t) in trace.iter().enumerate() {
                let node = ComputeId(idx % nc);
                core.schedule(idx as f64 / arrival_rate, EventKind::Arrival { node, tuple: *t });
            }
        }
    }
    let mut updater = (workload.update_rate > 0.0).then(|| Updater {
        rng: rng_for(opts.seed, STREAM_UPDATES),
        interval: 1.0 / workload.update_rate,
        zipf: (workload.update_keys == UpdateKeys::Zipf)
            .then(|| (ZipfTable::new(workload.key_universe, workload.zipf_z), rank_to_key(workload, opts.seed))),
        universe: workload.key_universe,
    });
    if let Some(u) = &updater {
        core.schedule(u.interval, EventKind::StoreUpdate);
    }

    let budget = if opts.event_budget == 0 { default_budget(trace.len() as u64) } else { opts.event_budget };
    while let Some(ev) = core.queue.pop() {
        if let Some(h) = horizon {
            if ev.at > h {
                break;
            }
        }
        core.events += 1;
        if core.events > budget {
            return Err(SimError::Budget { budget, now: core.now, backlog: backlog(&compute, &data) });
        }
        core.now = ev.at;
        match ev.kind {
            EventKind::Start { node } => compute[node.0].on_start(&mut core, &shared),
            EventKind::Arrival { node, tuple } => {
                let c = &mut compute[node.0];
                c.push_input(tuple);
                c.on_start(&mut core, &shared);
            }
            EventKind::Deliver { to, msg } => match (to, *msg) {
                (NodeRef::Data(j), Message::Batch(b)) => data[j.0].on_batch(&mut core, &shared, b),
                (NodeRef::Compute(i), Message::Response(r)) => compute[i.0].on_response(&mut core, &shared, r),
                (NodeRef::Compute(i), Message::Invalidate { key, updated_at, version }) => {
                    compute[i.0].on_invalidate(&mut core, &shared, key, updated_at, version)
                }
                (to, _) => panic!("unexpected message for {to}"),
            },
            EventKind::LocalDone { node, job } => compute[node.0].on_local_done(&mut core, &shared, job),
            EventKind::BatchServed { node, batch } => data[node.0].on_batch_served(&mut core, &shared, batch),
            EventKind::FlushTimer { node, dest, generation } => {
                compute[node.0].on_flush_timer(&mut core, &shared, dest, generation)
            }
            EventKind::StoreUpdate => {
                let u = updater.as_mut().expect("updates configured");
                let k = u.pick();
                let owner = shared.directory.owner(k);
                data[owner.0].update(&mut core, k);
                let busy = compute.iter().any(|c| !c.is_drained()) || horizon.is_some();
                if busy {
                    let next = core.now + u.interval;
                    core.schedule(next, EventKind::StoreUpdate);
                }
            }
        }
    }

    let completed: u64 = compute.iter().map(|c| c.stats().completed).sum();
    if horizon.is_none() && completed < trace.len() as u64 {
        return Err(SimError::Stalled {
            now: core.now,
            missing: trace.len() as u64 - completed,
            backlog: backlog(&compute, &data),
        });
    }
    let metrics = Metrics::collect(&core, &compute, &data, &shared, opts, horizon);
    let log_hash = hex::encode(core.hasher.finalize());
    Ok(RunResult { metrics, log_hash, log: core.lines })
}
