use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    BatchResponse, CostFeedback, CpuCost, FetchTarget, Message, RequestBatch, RequestKind, ResponseEntry,
    ResponsePayload, Solver,
};
use crate::balance::{solve_d, solve_d_exact, DataNodeLoad, MessageSizes};
use crate::costs::SmoothedEstimate;
use crate::sim::{EventKind, NodeRef, Shared, SimCore};
use crate::{ComputeId, DataId, KeyId, SimTime, StableMap};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DataStats {
    pub batches: u64,
    pub data_entries: u64,
    pub compute_entries: u64,
    pub computed_here: u64,
    pub returned_raw: u64,
    pub updates: u64,
    pub notifications: u64,
    /// Sum of the `d / b` fractions over batches with compute requests.
    pub local_fraction_sum: f64,
    pub balanced_batches: u64,
    pub compute_batches: u64,
}

#[derive(Debug, Clone, Copy)]
struct PendingEntry {
    local: bool,
    compute: bool,
    ready_at: SimTime,
    cpu_end: SimTime,
}

#[derive(Debug, Clone)]
struct PendingBatch {
    batch: RequestBatch,
    status: Vec<PendingEntry>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Version {
    number: u64,
    updated_at: SimTime,
}

pub struct DataNode {
    id: DataId,
    versions: StableMap<KeyId, Version>,
    fetched_by: StableMap<KeyId, BTreeSet<ComputeId>>,
    pending: BTreeMap<u64, PendingBatch>,
    cpu_scale: SmoothedEstimate,
    rng: ChaCha8Rng,
    stats: DataStats,
}

impl DataNode {
    pub(crate) fn new(id: DataId, cpu_scale: f64, alpha: f64, rng: ChaCha8Rng) -> Self {
        Self {
            id,
            versions: StableMap::default(),
            fetched_by: StableMap::default(),
            pending: BTreeMap::new(),
            cpu_scale: SmoothedEstimate::new(cpu_scale, alpha).expect("valid cpu scale"),
            rng,
            stats: DataStats::default(),
        }
    }

    pub fn id(&self) -> DataId {
        self.id
    }

    pub fn stats(&self) -> &DataStats {
        &self.stats
    }

    pub fn pending_batches(&self) -> usize {
        self.pending.len()
    }

    pub fn version(&self, k: KeyId) -> u64 {
        self.versions.get(&k).map_or(0, |v| v.number)
    }

    /// Compute nodes currently registered as caching `k`.
    pub fn cachers(&self, k: KeyId) -> impl Iterator<Item = ComputeId> + '_ {
        self.fetched_by.get(&k).into_iter().flatten().copied()
    }

    fn load_for(&self, batch: &RequestBatch, now: SimTime, shared: &Shared) -> DataNodeLoad {
        let mut load = DataNodeLoad {
            nd_j: 0.0,
            ndr_j: 0.0,
            nr_j: 0.0,
            r_j: 0.0,
            nr_ij: 0.0,
            r_ij: 0.0,
            tc_d: 0.0,
            sizes: batch.snapshot.sizes,
            net_bw: shared.bandwidth.data_average(self.id),
        };
        for p in self.pending.values() {
            let same_origin = p.batch.origin == batch.origin;
            for st in &p.status {
                if st.compute {
                    if st.ready_at > now {
                        load.nr_j += 1.0;
                        if same_origin {
                            load.nr_ij += 1.0;
                        }
                        if st.local && st.cpu_end > now {
                            load.r_j += 1.0;
                            if same_origin {
                                load.r_ij += 1.0;
                            }
                        }
                    }
                } else if st.ready_at > now {
                    load.nd_j += 1.0;
                } else {
                    load.ndr_j += 1.0;
                }
            }
        }
        let speed = shared.cluster.data_cpu_factor[self.id.0];
        let keys: Vec<KeyId> =
            batch.entries.iter().filter(|e| matches!(e.kind, RequestKind::Compute { .. })).map(|e| e.key).collect();
        if !keys.is_empty() {
            let n = keys.len() as f64;
            load.tc_d = keys.iter().map(|&k| shared.catalog.function_cost(k)).sum::<f64>() / n * speed;
            load.sizes = MessageSizes {
                value: keys.iter().map(|&k| shared.catalog.value_size(k) as f64).sum::<f64>() / n,
                ..batch.snapshot.sizes
            };
        }
        load
    }

    pub(crate) fn on_batch(&mut self, core: &mut SimCore, shared: &Shared, batch: RequestBatch) {
        let now = core.now();
        let b = batch.compute_entries() as u64;
        let d = if b > 0 && shared.strategy.balances() {
            let load = self.load_for(&batch, now, shared);
            let fidelity = shared.engine.formula_fidelity;
            let decision = match shared.engine.solver {
                Solver::Gradient => solve_d(&batch.snapshot, &load, b, fidelity, &mut self.rng),
                Solver::Exact => solve_d_exact(&batch.snapshot, &load, b, fidelity),
            };
            self.stats.balanced_batches += 1;
            decision.d
        } else {
            b
        };
        if b > 0 {
            self.stats.local_fraction_sum += d as f64 / b as f64;
            self.stats.compute_batches += 1;
        }
        self.stats.batches += 1;

        let speed = shared.cluster.data_cpu_factor[self.id.0];
        let t_disk = shared.cluster.data_t_disk[self.id.0];
        let res = &mut core.data_res[self.id.0];
        if b > 0 && shared.engine.cpu_cost == CpuCost::Latency {
            // One sample per batch: the latency a single job arriving now would see.
            let keys = batch.entries.iter().filter(|e| matches!(e.kind, RequestKind::Compute { .. }));
            let cost = keys.map(|e| shared.catalog.function_cost(e.key)).sum::<f64>() / b as f64;
            if cost > 0.0 {
                let backlog = (res.cpu.free_at() - now).max(0.0);
                let scale = ((backlog + cost * speed) / cost).clamp(speed, speed * shared.engine.max_inflation);
                let _ = self.cpu_scale.observe(scale);
            }
        }
        let mut status = Vec::with_capacity(batch.entries.len());
        let mut ready = now;
        let mut assigned = 0;
        for e in &batch.entries {
            let (_, disk_end) = res.disk.reserve(now, t_disk);
            let compute = matches!(e.kind, RequestKind::Compute { .. });
            let local = compute && assigned < d;
            let mut st = PendingEntry { local, compute, ready_at: disk_end, cpu_end: now };
            if compute {
                self.stats.compute_entries += 1;
            } else {
                self.stats.data_entries += 1;
            }
            if local {
                assigned += 1;
                let cost = shared.catalog.function_cost(e.key);
                // Disk and CPU are separate servers and overlap, as in the cost model.
                let (_, cpu_end) = res.cpu.reserve(now, cost * speed);
                st.cpu_end = cpu_end;
                st.ready_at = disk_end.max(cpu_end);
            }
            ready = ready.max(st.ready_at);
            status.push(st);
        }
        self.stats.computed_here += d;
        self.stats.returned_raw += b - d;
        core.log(NodeRef::Data(self.id), "batch", None, batch.entries.len() as u64);
        core.schedule(ready, EventKind::BatchServed { node: self.id, batch: batch.id });
        self.pending.insert(batch.id, PendingBatch { batch, status });
    }

    pub(crate) fn on_batch_served(&mut self, core: &mut SimCore, shared: &Shared, batch_id: u64) {
        let PendingBatch { batch, status } = self.pending.remove(&batch_id).expect("pending batch");
        let profile = shared.catalog.profile();
        let t_disk = shared.cluster.data_t_disk[self.id.0];
        let cpu_scale = self.cpu_scale.current();
        let mut bytes = 0u64;
        let mut entries = Vec::with_capacity(batch.entries.len());
        let mut computed_here = 0;
        let mut compute_requests = 0;
        for (e, st) in batch.entries.iter().zip(&status) {
            let version = self.versions.get(&e.key).copied().unwrap_or_default();
            let value_size = shared.catalog.value_size(e.key);
            let payload = match e.kind {
                RequestKind::Data { target } => {
                    if let FetchTarget::Tier(_) = target {
                        self.fetched_by.entry(e.key).or_default().insert(batch.origin);
                    }
                    bytes += value_size;
                    ResponsePayload::Raw { version: version.number, target, returned: false }
                }
                RequestKind::Compute { param_size } => {
                    compute_requests += 1;
                    if st.local {
                        computed_here += 1;
                        bytes += profile.computed_size;
                        ResponsePayload::Computed { result_size: profile.computed_size }
                    } else {
                        bytes += value_size + param_size as u64;
                        ResponsePayload::Raw { version: version.number, target: FetchTarget::None, returned: true }
                    }
                }
            };
            bytes += shared.cluster.feedback_bytes;
            entries.push(ResponseEntry {
                tuple_id: e.tuple_id,
                key: e.key,
                payload,
                last_update: version.updated_at,
                feedback: CostFeedback {
                    value_size,
                    function_cost: shared.catalog.function_cost(e.key),
                    cpu_scale,
                    t_disk,
                },
            });
        }
        let resp =
            BatchResponse { batch_id, origin: batch.origin, source: self.id, entries, computed_here, compute_requests };
        core.send(NodeRef::Data(self.id), NodeRef::Compute(batch.origin), bytes, Message::Response(resp));
    }

    /// Applies an update to `k` and notifies every node that fetched it for caching.
    pub(crate) fn update(&mut self, core: &mut SimCore, k: KeyId) -> usize {
        let now = core.now();
        let v = self.versions.entry(k).or_default();
        v.number += 1;
        v.updated_at = now;
        let (number, updated_at) = (v.number, v.updated_at);
        self.stats.updates += 1;
        let targets = self.fetched_by.remove(&k).unwrap_or_default();
        for c in &targets {
            self.stats.notifications += 1;
            core.send(
                NodeRef::Data(self.id),
                NodeRef::Compute(*c),
                16,
                Message::Invalidate { key: k, updated_at, version: number },
            );
        }
        core.log(NodeRef::Data(self.id), "update", Some(k), targets.len() as u64);
        targets.len()
    }
}
