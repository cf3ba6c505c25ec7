use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    BatchEntry, BatchResponse, CpuCost, FetchTarget, Message, RequestBatch, RequestKind, ResponsePayload, Strategy,
};
use crate::balance::{LoadSnapshot, MessageSizes};
use crate::cache::{Tier, TieredCache};
use crate::costs::{decision_costs, CostParams, SmoothedEstimate};
use crate::frequency::LossyCounter;
use crate::sim::{EventKind, NodeRef, Shared, SimCore};
use crate::skirental::{decide, SkiDecision, SkiParams};
use crate::workload::Tuple;
use crate::{ComputeId, DataId, KeyId, SimTime, StableMap};

/// Where a tuple's function was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocalOrigin {
    /// Value was in the memory cache.
    CacheMemory,
    /// Value was in the disk cache.
    CacheDisk,
    /// Value arrived for a data request.
    Fetched,
    /// Value came back from a compute request the data node declined to run.
    Returned,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ComputeStats {
    pub data_requests: u64,
    pub compute_requests: u64,
    pub coalesced: u64,
    pub from_memory: u64,
    pub from_disk: u64,
    pub fetched_local: u64,
    pub returned_local: u64,
    pub computed_remote: u64,
    pub batches_sent: u64,
    pub invalidations: u64,
    /// Cached values used after the node learned of a newer version.
    pub stale_local: u64,
    pub completed: u64,
    pub latency_sum: f64,
    pub last_completion: SimTime,
    pub completed_in_window: u64,
}

#[derive(Debug, Clone)]
struct Batcher {
    entries: Vec<BatchEntry>,
    opened_at: SimTime,
    generation: u64,
}

#[derive(Debug, Clone)]
struct Inflight {
    target: Tier,
    waiters: Vec<u64>,
}

#[derive(Debug, Clone, Copy)]
struct LocalJob {
    tuple_id: u64,
}

/// Route chosen for one tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Local(Tier, u64),
    Data(FetchTarget),
    Compute,
    /// A fetch of the same key is already on its way.
    Wait,
}

#[derive(Debug, Clone, Copy, Default)]
struct KnownVersion {
    updated_at: SimTime,
    version: u64,
}

pub struct ComputeNode {
    id: ComputeId,
    costs: CostParams,
    counter: LossyCounter<KeyId>,
    cache: TieredCache<u64>,
    input: VecDeque<Tuple>,
    map_queue: VecDeque<u64>,
    submitted: StableMap<u64, SimTime>,
    resolved: StableMap<u64, ()>,
    params: StableMap<u64, u32>,
    batchers: Vec<Batcher>,
    inflight: StableMap<KeyId, Inflight>,
    outstanding_compute: Vec<u64>,
    outstanding_data: Vec<u64>,
    remote_fraction: Vec<SmoothedEstimate>,
    local_pending: u64,
    jobs: StableMap<u64, LocalJob>,
    next_job: u64,
    next_batch: u64,
    known: StableMap<KeyId, KnownVersion>,
    rng: ChaCha8Rng,
    stats: ComputeStats,
}

impl ComputeNode {
    pub(crate) fn new(
        id: ComputeId,
        costs: CostParams,
        counter: LossyCounter<KeyId>,
        cache: TieredCache<u64>,
        n_data: usize,
        rng: ChaCha8Rng,
    ) -> Self {
        let alpha = costs.alpha();
        Self {
            id,
            costs,
            counter,
            cache,
            input: VecDeque::new(),
            map_queue: VecDeque::new(),
            submitted: StableMap::default(),
            resolved: StableMap::default(),
            params: StableMap::default(),
            batchers: vec![Batcher { entries: Vec::new(), opened_at: 0.0, generation: 0 }; n_data],
            inflight: StableMap::default(),
            outstanding_compute: vec![0; n_data],
            outstanding_data: vec![0; n_data],
            remote_fraction: vec![SmoothedEstimate::new(1.0, alpha).expect("valid alpha"); n_data],
            local_pending: 0,
            jobs: StableMap::default(),
            next_job: 0,
            next_batch: 0,
            known: StableMap::default(),
            rng,
            stats: ComputeStats::default(),
        }
    }

    pub fn id(&self) -> ComputeId {
        self.id
    }

    pub fn stats(&self) -> &ComputeStats {
        &self.stats
    }

    pub fn cache(&self) -> &TieredCache<u64> {
        &self.cache
    }

    pub fn costs(&self) -> &CostParams {
        &self.costs
    }

    pub fn counter(&self) -> &LossyCounter<KeyId> {
        &self.counter
    }

    /// Tuples queued but not yet pre-mapped, plus those awaiting consumption.
    pub fn backlog(&self) -> (usize, usize) {
        (self.input.len(), self.map_queue.len())
    }

    pub fn is_drained(&self) -> bool {
        self.input.is_empty() && self.map_queue.is_empty()
    }

    pub(crate) fn push_input(&mut self, t: Tuple) {
        self.input.push_back(t);
    }

    fn window(&self, shared: &Shared) -> usize {
        if shared.strategy.batches() {
            shared.engine.prefetch_window
        } else {
            1
        }
    }

    fn batch_size(&self, shared: &Shared) -> usize {
        if shared.strategy.batches() {
            shared.engine.batch_size
        } else {
            1
        }
    }

    /// Pre-maps queued input while the prefetch window has room.
    pub(crate) fn pump(&mut self, core: &mut SimCore, shared: &Shared) {
        while self.map_queue.len() < self.window(shared) {
            let Some(t) = self.input.pop_front() else {
                break;
            };
            self.pre_map(core, shared, t);
        }
    }

    /// Routes one tuple and appends it to the map queue.
    pub(crate) fn pre_map(&mut self, core: &mut SimCore, shared: &Shared, t: Tuple) {
        let now = core.now();
        self.submitted.insert(t.id, now);
        self.params.insert(t.id, t.param_size);
        self.map_queue.push_back(t.id);
        match self.dispatch(core, shared, &t) {
            Route::Local(tier, version) => {
                let origin = match tier {
                    Tier::Memory => LocalOrigin::CacheMemory,
                    Tier::Disk => LocalOrigin::CacheDisk,
                };
                self.schedule_local(core, shared, t.id, t.key, origin, Some(version));
            }
            Route::Data(target) => {
                self.stats.data_requests += 1;
                if let FetchTarget::Tier(tier) = target {
                    self.inflight.insert(t.key, Inflight { target: tier, waiters: vec![t.id] });
                }
                self.enqueue(core, shared, t.id, t.key, RequestKind::Data { target });
            }
            Route::Compute => {
                self.stats.compute_requests += 1;
                let kind = RequestKind::Compute { param_size: t.param_size };
                self.enqueue(core, shared, t.id, t.key, kind);
            }
            Route::Wait => {
                self.stats.coalesced += 1;
                self.inflight.get_mut(&t.key).expect("waiting on a fetch in flight").waiters.push(t.id);
            }
        }
    }

    fn dispatch(&mut self, core: &mut SimCore, shared: &Shared, t: &Tuple) -> Route {
        match shared.strategy {
            Strategy::No | Strategy::Fc => Route::Data(FetchTarget::None),
            Strategy::Fd | Strategy::Lo => Route::Compute,
            Strategy::Fr => {
                if self.rng.gen_bool(0.5) {
                    Route::Data(FetchTarget::None)
                } else {
                    Route::Compute
                }
            }
            Strategy::Co | Strategy::Fo => self.ski_rental_route(core, shared, t),
        }
    }

    fn frozen(&self, shared: &Shared, t: &Tuple) -> bool {
        !shared.adaptive && (t.id as f64) >= shared.engine.nonadaptive_fraction * shared.total_tuples as f64
    }

    /// Feeds the latency a local job for `k` would see now into the CPU estimate.
    /// Sampling at decision time keeps the estimate fresh when no local jobs run.
    fn sample_local_cpu(&mut self, core: &SimCore, shared: &Shared, k: KeyId) {
        let now = core.now();
        let speed = shared.cluster.compute_cpu_factor[self.id.0];
        let cost = self.costs.function_cost(k);
        if cost <= 0.0 {
            return;
        }
        let backlog = (core.compute_res[self.id.0].cpu.free_at() - now).max(0.0);
        let scale = ((backlog + cost * speed) / cost).clamp(speed, speed * shared.engine.max_inflation);
        let _ = self.costs.compute_node_mut(self.id).cpu_scale.observe(scale);
    }

    fn ski_rental_route(&mut self, core: &mut SimCore, shared: &Shared, t: &Tuple) -> Route {
        let k = t.key;
        let now = core.now();
        if self.frozen(shared, t) {
            // Decisions and cache contents stay as they were.
            return match self.cache.peek(k) {
                Some((&v, tier)) => Route::Local(tier, v),
                None if self.inflight.contains_key(&k) => Route::Wait,
                None => Route::Compute,
            };
        }
        let freq = self.counter.observe(&k);
        self.cache.update_benefit(k, freq, shared.engine.benefit_weight);
        if let Some((v, tier)) = self.cache.get(k, now) {
            return Route::Local(tier, v);
        }
        if self.inflight.contains_key(&k) {
            return Route::Wait;
        }
        if !self.costs.knows_key(k) {
            return Route::Compute;
        }
        if shared.engine.cpu_cost == CpuCost::Latency {
            self.sample_local_cpu(core, shared, k);
        }
        let j = shared.directory.owner(k);
        let c = decision_costs(&self.costs, k, self.id, j).expect("configured link");
        let size = self.costs.value_size(k).round().max(1.0) as u64;
        if shared.engine.fetch_guard && c.t_fetch() <= c.t_compute() {
            let tier = if self.cache.cond_cache(k, None, size, now) { Tier::Memory } else { Tier::Disk };
            return Route::Data(FetchTarget::Tier(tier));
        }
        let rent = c.t_compute().max(f64::MIN_POSITIVE);
        let mem = SkiParams::new(rent, c.t_fetch(), c.t_rec_mem()).expect("valid costs");
        if decide(&mem, freq) == SkiDecision::Rent {
            return Route::Compute;
        }
        if self.cache.cond_cache(k, None, size, now) {
            return Route::Data(FetchTarget::Tier(Tier::Memory));
        }
        let disk = SkiParams::new(rent, c.t_fetch(), c.t_rec_disk()).expect("valid costs");
        if decide(&disk, freq) == SkiDecision::Rent {
            Route::Compute
        } else {
            Route::Data(FetchTarget::Tier(Tier::Disk))
        }
    }

    fn enqueue(&mut self, core: &mut SimCore, shared: &Shared, tuple_id: u64, key: KeyId, kind: RequestKind) {
        let j = shared.directory.owner(key);
        let now = core.now();
        let batch_size = self.batch_size(shared);
        let b = &mut self.batchers[j.0];
        b.entries.push(BatchEntry { tuple_id, key, kind });
        if b.entries.len() == 1 {
            b.opened_at = now;
            if batch_size > 1 {
                core.schedule(
                    now + shared.engine.max_wait,
                    EventKind::FlushTimer { node: self.id, dest: j, generation: b.generation },
                );
            }
        }
        if b.entries.len() >= batch_size {
            self.flush(core, shared, j);
        }
    }

    pub(crate) fn on_flush_timer(&mut self, core: &mut SimCore, shared: &Shared, dest: DataId, generation: u64) {
        let b = &self.batchers[dest.0];
        if b.generation == generation && !b.entries.is_empty() {
            self.flush(core, shared, dest);
        }
    }

    fn flush(&mut self, core: &mut SimCore, shared: &Shared, j: DataId) {
        let now = core.now();
        let b = &mut self.batchers[j.0];
        let entries = std::mem::take(&mut b.entries);
        let created_at = b.opened_at;
        b.generation += 1;
        let snapshot = self.snapshot(shared, j, &entries);
        let profile = shared.catalog.profile();
        let mut bytes = shared.cluster.snapshot_overhead;
        let mut n_compute = 0;
        for e in &entries {
            bytes += match e.kind {
                RequestKind::Data { .. } => profile.key_size,
                RequestKind::Compute { param_size } => {
                    n_compute += 1;
                    profile.key_size + param_size as u64
                }
            };
        }
        self.outstanding_compute[j.0] += n_compute;
        self.outstanding_data[j.0] += entries.len() as u64 - n_compute;
        self.next_batch += 1;
        let batch = RequestBatch {
            id: ((self.id.0 as u64) << 40) | self.next_batch,
            origin: self.id,
            destination: j,
            entries,
            snapshot,
            created_at,
            flushed_at: now,
        };
        self.stats.batches_sent += 1;
        core.send(NodeRef::Compute(self.id), NodeRef::Data(j), bytes, Message::Batch(batch));
    }

    /// Statistics for the batch about to be sent to `j`.
    fn snapshot(&self, shared: &Shared, j: DataId, entries: &[BatchEntry]) -> LoadSnapshot {
        let count = |kind_is_compute: bool, skip: Option<usize>| -> f64 {
            self.batchers
                .iter()
                .enumerate()
                .filter(|(idx, _)| Some(*idx) != skip)
                .flat_map(|(_, b)| b.entries.iter())
                .chain(if kind_is_compute { None } else { Some(entries.iter()) }.into_iter().flatten())
                .filter(|e| matches!(e.kind, RequestKind::Compute { .. }) == kind_is_compute)
                .count() as f64
        };
        let nd = count(false, None);
        let nc = count(true, Some(j.0));
        let ndr: u64 = self.outstanding_data.iter().sum();
        let (mut nr_bar, mut r_bar) = (0.0, 0.0);
        for (idx, &n) in self.outstanding_compute.iter().enumerate() {
            if idx != j.0 {
                nr_bar += n as f64;
                r_bar += n as f64 * self.remote_fraction[idx].current().clamp(0.0, 1.0);
            }
        }
        let compute_keys: Vec<KeyId> =
            entries.iter().filter(|e| matches!(e.kind, RequestKind::Compute { .. })).map(|e| e.key).collect();
        let avg = self.costs.averages();
        let (fc, sv) = if compute_keys.is_empty() {
            (avg.function_cost.current(), avg.value.current())
        } else {
            let n = compute_keys.len() as f64;
            (
                compute_keys.iter().map(|&k| self.costs.function_cost(k)).sum::<f64>() / n,
                compute_keys.iter().map(|&k| self.costs.value_size(k)).sum::<f64>() / n,
            )
        };
        LoadSnapshot {
            lc: self.local_pending as f64,
            nd,
            nc,
            ndr: ndr as f64,
            nr_bar,
            r_bar: r_bar.min(nr_bar),
            tc_c: fc * shared.cluster.compute_cpu_factor[self.id.0],
            sizes: MessageSizes {
                key: avg.key.current(),
                params: avg.params.current(),
                value: sv,
                computed: avg.computed.current(),
            },
            net_bw: self.costs.bandwidth().compute_average(self.id),
        }
    }

    fn schedule_local(
        &mut self,
        core: &mut SimCore,
        shared: &Shared,
        tuple_id: u64,
        key: KeyId,
        origin: LocalOrigin,
        version: Option<u64>,
    ) {
        let now = core.now();
        let speed = shared.cluster.compute_cpu_factor[self.id.0];
        let cost = shared.catalog.function_cost(key);
        let res = &mut core.compute_res[self.id.0];
        let (_, cpu_end) = res.cpu.reserve(now, cost * speed);
        let mut done = cpu_end;
        if origin == LocalOrigin::CacheDisk {
            let (_, disk_end) = res.disk.reserve(now, shared.cluster.compute_t_disk[self.id.0]);
            done = done.max(disk_end);
        }
        match origin {
            LocalOrigin::CacheMemory => self.stats.from_memory += 1,
            LocalOrigin::CacheDisk => self.stats.from_disk += 1,
            LocalOrigin::Fetched => self.stats.fetched_local += 1,
            LocalOrigin::Returned => self.stats.returned_local += 1,
        }
        if let Some(v) = version {
            if v < self.known.get(&key).map_or(0, |k| k.version) {
                self.stats.stale_local += 1;
            }
        }
        self.local_pending += 1;
        self.next_job += 1;
        let job = self.next_job;
        self.jobs.insert(job, LocalJob { tuple_id });
        core.log(NodeRef::Compute(self.id), "local", Some(key), 0);
        core.schedule(done, EventKind::LocalDone { node: self.id, job });
    }

    pub(crate) fn on_local_done(&mut self, core: &mut SimCore, shared: &Shared, job: u64) {
        let LocalJob { tuple_id } = self.jobs.remove(&job).expect("known job");
        self.local_pending -= 1;
        self.resolve(tuple_id);
        self.advance(core, shared);
    }

    /// Applies an update learned from a notification or a response timestamp.
    fn apply_update(&mut self, key: KeyId, updated_at: SimTime, version: u64) {
        let known = self.known.entry(key).or_default();
        if updated_at > known.updated_at {
            known.updated_at = updated_at;
            known.version = known.version.max(version);
            self.counter.reset(&key);
            self.cache.invalidate(key);
            self.stats.invalidations += 1;
        }
    }

    pub(crate) fn on_invalidate(&mut self, core: &mut SimCore, shared: &Shared, key: KeyId, at: SimTime, version: u64) {
        self.apply_update(key, at, version);
        self.advance(core, shared);
    }

    pub(crate) fn on_response(&mut self, core: &mut SimCore, shared: &Shared, resp: BatchResponse) {
        let j = resp.source;
        self.outstanding_compute[j.0] -= resp.compute_requests as u64;
        self.outstanding_data[j.0] -= (resp.entries.len() - resp.compute_requests) as u64;
        if resp.compute_requests > 0 {
            let frac = resp.computed_here as f64 / resp.compute_requests as f64;
            let _ = self.remote_fraction[j.0].observe(frac);
        }
        if let Some(first) = resp.entries.first() {
            let node = self.costs.data_node_mut(j);
            let _ = node.t_disk.observe(first.feedback.t_disk);
            let _ = node.cpu_scale.observe(first.feedback.cpu_scale);
        }
        let now = core.now();
        for e in resp.entries {
            let fb = e.feedback;
            let _ = self.costs.record_value_size(e.key, fb.value_size as f64);
            let _ = self.costs.record_function_cost(e.key, fb.function_cost);
            let version = match e.payload {
                ResponsePayload::Raw { version, .. } => version,
                ResponsePayload::Computed { .. } => 0,
            };
            self.apply_update(e.key, e.last_update, version);
            match e.payload {
                ResponsePayload::Computed { result_size } => {
                    let _ = self.costs.averages_mut().computed.observe(result_size as f64);
                    self.stats.computed_remote += 1;
                    self.resolve(e.tuple_id);
                }
                ResponsePayload::Raw { returned: true, .. } => {
                    self.schedule_local(core, shared, e.tuple_id, e.key, LocalOrigin::Returned, None);
                }
                ResponsePayload::Raw { target: FetchTarget::None, .. } => {
                    self.schedule_local(core, shared, e.tuple_id, e.key, LocalOrigin::Fetched, None);
                }
                ResponsePayload::Raw { target: FetchTarget::Tier(_), version, .. } => {
                    let inflight = self.inflight.remove(&e.key).expect("fetch in flight");
                    let current = version >= self.known.get(&e.key).map_or(0, |k| k.version);
                    if current {
                        let size = fb.value_size;
                        let cached = match inflight.target {
                            Tier::Memory => self.cache.cond_cache(e.key, Some(version), size, now),
                            Tier::Disk => false,
                        };
                        if !cached {
                            self.cache.install_disk(e.key, version, size, now);
                        }
                    }
                    for w in inflight.waiters {
                        self.schedule_local(core, shared, w, e.key, LocalOrigin::Fetched, None);
                    }
                }
            }
        }
        self.advance(core, shared);
    }

    fn resolve(&mut self, tuple_id: u64) {
        let fresh = self.resolved.insert(tuple_id, ()).is_none();
        debug_assert!(fresh, "tuple {tuple_id} resolved twice");
    }

    /// Consumes resolved tuples from the head of the map queue, then refills it.
    fn advance(&mut self, core: &mut SimCore, shared: &Shared) {
        let now = core.now();
        while let Some(&head) = self.map_queue.front() {
            if self.resolved.remove(&head).is_none() {
                break;
            }
            self.map_queue.pop_front();
            self.params.remove(&head);
            let submitted = self.submitted.remove(&head).expect("submitted tuple");
            self.stats.completed += 1;
            self.stats.latency_sum += now - submitted;
            self.stats.last_completion = now;
            if let Some((lo, hi)) = shared.window {
                if now >= lo && now <= hi {
                    self.stats.completed_in_window += 1;
                }
            }
            core.log(NodeRef::Compute(self.id), "consume", None, head);
        }
        self.pump(core, shared);
    }

    pub(crate) fn on_start(&mut self, core: &mut SimCore, shared: &Shared) {
        self.pump(core, shared);
    }
}
