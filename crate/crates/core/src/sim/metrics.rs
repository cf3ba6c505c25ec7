use serde::Serialize;

use super::{FifoServer, RunOptions, Shared, SimCore};
use crate::engine::{ComputeNode, DataNode, Strategy};
use crate::SimTime;

/// Aggregates of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub strategy: Strategy,
    pub adaptive: bool,
    pub seed: u64,
    pub tuples: u64,
    pub completed: u64,
    /// Time the last tuple was consumed (batch) or the run duration (stream).
    pub completion_time: SimTime,
    /// Tuples per second, over the measurement window in stream mode.
    pub throughput: f64,
    pub mean_latency: f64,
    pub data_requests: u64,
    pub compute_requests: u64,
    pub coalesced: u64,
    pub computed_at_data: u64,
    pub returned_raw: u64,
    pub local_from_memory: u64,
    pub local_from_disk: u64,
    pub local_fetched: u64,
    pub local_returned: u64,
    pub mem_admissions: u64,
    pub mem_evictions: u64,
    pub disk_admissions: u64,
    pub invalidations: u64,
    pub stale_local: u64,
    pub updates: u64,
    pub notifications: u64,
    pub messages: u64,
    pub bytes_sent: u64,
    pub events: u64,
    pub compute_cpu_busy: Vec<f64>,
    pub compute_disk_busy: Vec<f64>,
    pub compute_link_in_busy: Vec<f64>,
    pub data_cpu_busy: Vec<f64>,
    pub data_disk_busy: Vec<f64>,
    pub data_link_out_busy: Vec<f64>,
    /// Busiest data-node CPU over the mean, 1.0 when no data node computed.
    pub data_cpu_skew: f64,
    /// Mean share of compute requests a data node kept, over batches with any.
    pub mean_kept_fraction: f64,
}

fn fractions<'a>(servers: impl Iterator<Item = &'a FifoServer>, horizon: f64) -> Vec<f64> {
    servers.map(|s| if horizon > 0.0 { (s.busy() / horizon).clamp(0.0, 1.0) } else { 0.0 }).collect()
}

/// Max over mean; 1.0 for an all-zero input.
pub fn max_over_mean(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    if mean <= 0.0 {
        return 1.0;
    }
    xs.iter().cloned().fold(0.0, f64::max) / mean
}

impl Metrics {
    pub(super) fn collect(
        core: &SimCore,
        compute: &[ComputeNode],
        data: &[DataNode],
        shared: &Shared,
        opts: &RunOptions,
        horizon: Option<SimTime>,
    ) -> Self {
        let sum_c = |f: &dyn Fn(&ComputeNode) -> u64| compute.iter().map(f).sum::<u64>();
        let sum_d = |f: &dyn Fn(&DataNode) -> u64| data.iter().map(f).sum::<u64>();
        let completed = sum_c(&|c| c.stats().completed);
        let last = compute.iter().map(|c| c.stats().last_completion).fold(0.0, f64::max);
        let completion_time = horizon.unwrap_or(last);
        let throughput = match shared.window {
            Some((lo, hi)) => sum_c(&|c| c.stats().completed_in_window) as f64 / (hi - lo),
            None if completion_time > 0.0 => completed as f64 / completion_time,
            None => 0.0,
        };
        let latency_sum: f64 = compute.iter().map(|c| c.stats().latency_sum).sum();
        let span = completion_time;
        let data_cpu_seconds: Vec<f64> = core.data_res.iter().map(|r| r.cpu.busy()).collect();
        let kept_batches = sum_d(&|d| d.stats().compute_batches);
        let kept_sum: f64 = data.iter().map(|d| d.stats().local_fraction_sum).sum();
        Self {
            strategy: opts.strategy,
            adaptive: opts.adaptive,
            seed: opts.seed,
            tuples: shared.total_tuples,
            completed,
            completion_time,
            throughput,
            mean_latency: if completed > 0 { latency_sum / completed as f64 } else { 0.0 },
            data_requests: sum_c(&|c| c.stats().data_requests),
            compute_requests: sum_c(&|c| c.stats().compute_requests),
            coalesced: sum_c(&|c| c.stats().coalesced),
            computed_at_data: sum_d(&|d| d.stats().computed_here),
            returned_raw: sum_d(&|d| d.stats().returned_raw),
            local_from_memory: sum_c(&|c| c.stats().from_memory),
            local_from_disk: sum_c(&|c| c.stats().from_disk),
            local_fetched: sum_c(&|c| c.stats().fetched_local),
            local_returned: sum_c(&|c| c.stats().returned_local),
            mem_admissions: sum_c(&|c| c.cache().stats().mem_admissions),
            mem_evictions: sum_c(&|c| c.cache().stats().mem_evictions),
            disk_admissions: sum_c(&|c| c.cache().stats().disk_admissions),
            invalidations: sum_c(&|c| c.stats().invalidations),
            stale_local: sum_c(&|c| c.stats().stale_local),
            updates: sum_d(&|d| d.stats().updates),
            notifications: sum_d(&|d| d.stats().notifications),
            messages: core.messages,
            bytes_sent: core.bytes_sent,
            events: core.events,
            compute_cpu_busy: fractions(core.compute_res.iter().map(|r| &r.cpu), span),
            compute_disk_busy: fractions(core.compute_res.iter().map(|r| &r.disk), span),
            compute_link_in_busy: fractions(core.compute_res.iter().map(|r| &r.link_in), span),
            data_cpu_busy: fractions(core.data_res.iter().map(|r| &r.cpu), span),
            data_disk_busy: fractions(core.data_res.iter().map(|r| &r.disk), span),
            data_link_out_busy: fractions(core.data_res.iter().map(|r| &r.link_out), span),
            data_cpu_skew: max_over_mean(&data_cpu_seconds),
            mean_kept_fraction: if kept_batches > 0 { kept_sum / kept_batches as f64 } else { 0.0 },
        }
    }
}
