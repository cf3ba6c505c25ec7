//! Compute-node pipeline and data-node request handling.
//!
//! A compute node pre-maps each input tuple into a local computation, a data
//! request or a compute request, batches requests per destination data node,
//! and resolves tuples in input order. A data node serves batches, choosing how
//! many compute requests to run itself.

mod compute;
mod data;

pub use compute::{ComputeNode, LocalOrigin};
pub use data::DataNode;

use serde::{Deserialize, Serialize};

use crate::balance::{FormulaFidelity, LoadSnapshot};
use crate::cache::{SizeMode, Tier};
use crate::{ComputeId, DataId, KeyId, SimTime};

/// Execution policies compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// One synchronous data request at a time, no batching or caching.
    #[serde(rename = "NO")]
    No,
    /// Batched data requests, functions run at the compute nodes.
    #[serde(rename = "FC")]
    Fc,
    /// Batched compute requests, functions run at the data nodes.
    #[serde(rename = "FD")]
    Fd,
    /// Fair coin between a data and a compute request per tuple.
    #[serde(rename = "FR")]
    Fr,
    /// Rent/buy caching without load balancing.
    #[serde(rename = "CO")]
    Co,
    /// Load balancing without caching.
    #[serde(rename = "LO")]
    Lo,
    /// Caching and load balancing.
    #[serde(rename = "FO")]
    Fo,
}

impl Strategy {
    pub const ALL: [Strategy; 7] =
        [Strategy::No, Strategy::Fc, Strategy::Fd, Strategy::Fr, Strategy::Co, Strategy::Lo, Strategy::Fo];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::No => "NO",
            Strategy::Fc => "FC",
            Strategy::Fd => "FD",
            Strategy::Fr => "FR",
            Strategy::Co => "CO",
            Strategy::Lo => "LO",
            Strategy::Fo => "FO",
        }
    }

    pub fn caches(self) -> bool {
        matches!(self, Strategy::Co | Strategy::Fo)
    }

    pub fn balances(self) -> bool {
        matches!(self, Strategy::Lo | Strategy::Fo)
    }

    pub fn batches(self) -> bool {
        self != Strategy::No
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// How `d` is chosen for balanced batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Gradient,
    Exact,
}

/// What the per-node CPU cost estimate measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpuCost {
    /// Time from submission to completion of a function, queueing included.
    #[default]
    Latency,
    /// Pure service time.
    Service,
}

/// Cache size mode; `auto` picks uniform when every stored value has the same size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheSizing {
    #[default]
    Auto,
    Uniform,
    Variable,
}

impl CacheSizing {
    pub fn resolve(self, uniform_sizes: bool) -> SizeMode {
        match self {
            CacheSizing::Uniform => SizeMode::Uniform,
            CacheSizing::Variable => SizeMode::Variable,
            CacheSizing::Auto if uniform_sizes => SizeMode::Uniform,
            CacheSizing::Auto => SizeMode::Variable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub batch_size: usize,
    /// Seconds a non-full batch may wait before it is sent.
    pub max_wait: f64,
    /// Maximum tuples pre-mapped but not yet consumed, per compute node.
    pub prefetch_window: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub mem_cache_bytes: u64,
    /// `None` for an unbounded disk cache.
    pub disk_cache_bytes: Option<u64>,
    pub cache_sizing: CacheSizing,
    pub benefit_weight: f64,
    pub formula_fidelity: FormulaFidelity,
    pub solver: Solver,
    /// Always fetch when fetching is no dearer than a compute request.
    pub fetch_guard: bool,
    pub cpu_cost: CpuCost,
    /// Upper bound on a measured CPU cost relative to the pure service time.
    pub max_inflation: f64,
    /// Fraction of the input after which a non-adaptive run stops changing
    /// caching decisions.
    pub nonadaptive_fraction: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_wait: 0.010,
            prefetch_window: 512,
            alpha: crate::costs::DEFAULT_ALPHA,
            epsilon: crate::frequency::DEFAULT_EPSILON,
            mem_cache_bytes: 20_000_000,
            disk_cache_bytes: None,
            cache_sizing: CacheSizing::Auto,
            benefit_weight: 1.0,
            formula_fidelity: FormulaFidelity::Corrected,
            solver: Solver::Gradient,
            fetch_guard: false,
            cpu_cost: CpuCost::Latency,
            max_inflation: 100.0,
            nonadaptive_fraction: 0.1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.prefetch_window == 0 {
            return Err("prefetch_window must be at least 1".into());
        }
        if !(self.max_wait.is_finite() && self.max_wait >= 0.0) {
            return Err("max_wait must be >= 0".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err("alpha must lie in (0, 1]".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err("epsilon must lie in (0, 1)".into());
        }
        if !(self.benefit_weight > 0.0 && self.benefit_weight.is_finite()) {
            return Err("benefit_weight must be positive".into());
        }
        if !(self.max_inflation >= 1.0) {
            return Err("max_inflation must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.nonadaptive_fraction) {
            return Err("nonadaptive_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Where a fetched value should be cached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FetchTarget {
    /// Plain fetch, nothing is cached.
    None,
    Tier(Tier),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    Data { target: FetchTarget },
    Compute { param_size: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub tuple_id: u64,
    pub key: KeyId,
    pub kind: RequestKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestBatch {
    pub id: u64,
    pub origin: ComputeId,
    pub destination: DataId,
    pub entries: Vec<BatchEntry>,
    pub snapshot: LoadSnapshot,
    pub created_at: SimTime,
    pub flushed_at: SimTime,
}

impl RequestBatch {
    pub fn compute_entries(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e.kind, RequestKind::Compute { .. })).count()
    }
}

/// Measurements a data node returns with every response entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostFeedback {
    pub value_size: u64,
    /// CPU seconds of the function on a unit-speed node.
    pub function_cost: f64,
    /// The data node's current CPU cost multiplier.
    pub cpu_scale: f64,
    /// Disk service time per record at the data node.
    pub t_disk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ResponsePayload {
    Computed {
        result_size: u64,
    },
    /// Raw stored value; `returned` marks a compute request sent back by the
    /// balancer, which echoes the params.
    Raw {
        version: u64,
        target: FetchTarget,
        returned: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub tuple_id: u64,
    pub key: KeyId,
    pub payload: ResponsePayload,
    pub last_update: SimTime,
    pub feedback: CostFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub batch_id: u64,
    pub origin: ComputeId,
    pub source: DataId,
    pub entries: Vec<ResponseEntry>,
    /// Number of compute requests the data node ran itself.
    pub computed_here: usize,
    pub compute_requests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Batch(RequestBatch),
    Response(BatchResponse),
    /// Update notification for a key cached at the receiver.
    Invalidate {
        key: KeyId,
        updated_at: SimTime,
        version: u64,
    },
}

/// Key placement across data nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Hash,
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyDirectory {
    placement: Placement,
    data_nodes: usize,
    key_universe: u64,
}

fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl KeyDirectory {
    pub fn new(placement: Placement, data_nodes: usize, key_universe: u64) -> Self {
        assert!(data_nodes > 0);
        Self { placement, data_nodes, key_universe: key_universe.max(1) }
    }

    pub fn owner(&self, k: KeyId) -> DataId {
        let n = self.data_nodes as u64;
        let j = match self.placement {
            Placement::Hash => mix64(k.0) % n,
            Placement::Range => (k.0.min(self.key_universe - 1) * n / self.key_universe).min(n - 1),
        };
        DataId(j as usize)
    }

    pub fn data_nodes(&self) -> usize {
        self.data_nodes
    }
}
