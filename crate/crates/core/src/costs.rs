//! Cost parameters and the per-key decision costs that drive the rent/buy policy.
//!
//! All costs are expressed in seconds, byte sizes in bytes. Estimates that are
//! measured at runtime are kept as exponentially smoothed values so that a
//! single slow measurement does not swing a decision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{ComputeId, DataId, KeyId, StableMap};

/// Default smoothing weight given to a fresh measurement.
pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("measurement must be finite and non-negative, got {0}")]
    InvalidMeasurement(f64),
    #[error("smoothing weight must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("cost parameter `{name}` must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no bandwidth configured between compute node {0} and data node {1}")]
    UnknownLink(usize, usize),
    #[error("recurring disk cost {disk} is below recurring memory cost {mem}")]
    RecurringOrder { mem: f64, disk: f64 },
}

/// An exponentially smoothed estimate: `current <- alpha * measured + (1 - alpha) * current`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedEstimate {
    current: f64,
    alpha: f64,
}

impl SmoothedEstimate {
    pub fn new(initial: f64, alpha: f64) -> Result<Self, CostError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(CostError::InvalidAlpha(alpha));
        }
        check_measurement(initial)?;
        Ok(Self { current: initial, alpha })
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Returns the estimate after blending in `measured`.
    pub fn smooth_update(self, measured: f64) -> Result<Self, CostError> {
        check_measurement(measured)?;
        Ok(Self { current: self.alpha * measured + (1.0 - self.alpha) * self.current, alpha: self.alpha })
    }

    /// In-place variant of [`SmoothedEstimate::smooth_update`].
    pub fn observe(&mut self, measured: f64) -> Result<f64, CostError> {
        *self = self.smooth_update(measured)?;
        Ok(self.current)
    }
}

fn check_measurement(m: f64) -> Result<(), CostError> {
    if m.is_finite() && m >= 0.0 {
        Ok(())
    } else {
        Err(CostError::InvalidMeasurement(m))
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), CostError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(CostError::NonPositive { name, value })
    }
}

/// Effective bandwidth, in bytes per second, for every (compute node, data node) pair.
///
/// Links are symmetric: the same figure is used for traffic in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthMatrix {
    n_compute: usize,
    n_data: usize,
    bytes_per_sec: Vec<f64>,
}

impl BandwidthMatrix {
    pub fn uniform(n_compute: usize, n_data: usize, bw: f64) -> Result<Self, CostError> {
        check_positive("netBw", bw)?;
        Ok(Self { n_compute, n_data, bytes_per_sec: vec![bw; n_compute * n_data] })
    }

    /// Builds a matrix from rows indexed by compute node, columns by data node.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CostError> {
        let n_compute = rows.len();
        let n_data = rows.first().map_or(0, Vec::len);
        let mut bytes_per_sec = Vec::with_capacity(n_compute * n_data);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_data {
                return Err(CostError::UnknownLink(i, row.len()));
            }
            for &bw in row {
                check_positive("netBw", bw)?;
                bytes_per_sec.push(bw);
            }
        }
        Ok(Self { n_compute, n_data, bytes_per_sec })
    }

    pub fn n_compute(&self) -> usize {
        self.n_compute
    }

    pub fn n_data(&self) -> usize {
        self.n_data
    }

    pub fn get(&self, i: ComputeId, j: DataId) -> Result<f64, CostError> {
        if i.0 < self.n_compute && j.0 < self.n_data {
            Ok(self.bytes_per_sec[i.0 * self.n_data + j.0])
        } else {
            Err(CostError::UnknownLink(i.0, j.0))
        }
    }

    /// Average bandwidth of a compute node across all data nodes.
    pub fn compute_average(&self, i: ComputeId) -> f64 {
        let row = &self.bytes_per_sec[i.0 * self.n_data..(i.0 + 1) * self.n_data];
        row.iter().sum::<f64>() / row.len().max(1) as f64
    }

    /// Average bandwidth of a data node across all compute nodes.
    pub fn data_average(&self, j: DataId) -> f64 {
        let sum: f64 = (0..self.n_compute).map(|i| self.bytes_per_sec[i * self.n_data + j.0]).sum();
        sum / self.n_compute.max(1) as f64
    }
}

/// Runtime view of one node's disk and CPU.
///
/// `cpu_scale` multiplies a key's intrinsic function cost to give the time the
/// function takes on this node; it folds in the node's speed and its measured load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCosts {
    pub t_disk: SmoothedEstimate,
    pub cpu_scale: SmoothedEstimate,
}

impl NodeCosts {
    pub fn new(t_disk: f64, cpu_scale: f64, alpha: f64) -> Result<Self, CostError> {
        check_positive("tDisk", t_disk)?;
        check_positive("cpu_scale", cpu_scale)?;
        Ok(Self { t_disk: SmoothedEstimate::new(t_disk, alpha)?, cpu_scale: SmoothedEstimate::new(cpu_scale, alpha)? })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KeyCosts {
    pub value_size: Option<SmoothedEstimate>,
    pub function_cost: Option<SmoothedEstimate>,
}

/// Global averages used when nothing key-specific is known yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeAverages {
    pub key: SmoothedEstimate,
    pub params: SmoothedEstimate,
    pub value: SmoothedEstimate,
    pub computed: SmoothedEstimate,
    pub function_cost: SmoothedEstimate,
}

/// Everything a compute node knows about the costs of reaching the store.
#[derive(Debug, Clone)]
pub struct CostParams {
    alpha: f64,
    bandwidth: BandwidthMatrix,
    averages: SizeAverages,
    compute: Vec<NodeCosts>,
    data: Vec<NodeCosts>,
    per_key: StableMap<KeyId, KeyCosts>,
}

/// Initial values a [`CostParams`] is seeded with before anything is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSeed {
    pub key_size: f64,
    pub param_size: f64,
    pub value_size: f64,
    pub computed_size: f64,
    pub function_cost: f64,
    pub compute_t_disk: Vec<f64>,
    pub compute_cpu_scale: Vec<f64>,
    pub data_t_disk: Vec<f64>,
    pub data_cpu_scale: Vec<f64>,
}

impl CostParams {
    pub fn new(bandwidth: BandwidthMatrix, seed: &CostSeed, alpha: f64) -> Result<Self, CostError> {
        for (name, v) in [
            ("s_k", seed.key_size),
            ("s_p", seed.param_size),
            ("s_v", seed.value_size),
            ("s_cv", seed.computed_size),
            ("tc", seed.function_cost),
        ] {
            check_positive(name, v)?;
        }
        let est = |v| SmoothedEstimate::new(v, alpha);
        let averages = SizeAverages {
            key: est(seed.key_size)?,
            params: est(seed.param_size)?,
            value: est(seed.value_size)?,
            computed: est(seed.computed_size)?,
            function_cost: est(seed.function_cost)?,
        };
        let nodes = |disk: &[f64], cpu: &[f64]| -> Result<Vec<NodeCosts>, CostError> {
            disk.iter().zip(cpu).map(|(&d, &c)| NodeCosts::new(d, c, alpha)).collect()
        };
        let compute = nodes(&seed.compute_t_disk, &seed.compute_cpu_scale)?;
        let data = nodes(&seed.data_t_disk, &seed.data_cpu_scale)?;
        if compute.len() != bandwidth.n_compute() {
            return Err(CostError::UnknownLink(compute.len(), bandwidth.n_data()));
        }
        if data.len() != bandwidth.n_data() {
            return Err(CostError::UnknownLink(bandwidth.n_compute(), data.len()));
        }
        Ok(Self { alpha, bandwidth, averages, compute, data, per_key: StableMap::default() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        &self.bandwidth
    }

    pub fn averages(&self) -> &SizeAverages {
        &self.averages
    }

    pub fn averages_mut(&mut self) -> &mut SizeAverages {
        &mut self.averages
    }

    pub fn compute_node(&self, i: ComputeId) -> &NodeCosts {
        &self.compute[i.0]
    }

    pub fn compute_node_mut(&mut self, i: ComputeId) -> &mut NodeCosts {
        &mut self.compute[i.0]
    }

    pub fn data_node(&self, j: DataId) -> &NodeCosts {
        &self.data[j.0]
    }

    pub fn data_node_mut(&mut self, j: DataId) -> &mut NodeCosts {
        &mut self.data[j.0]
    }

    /// True once any per-key measurement has been recorded for `key`.
    pub fn knows_key(&self, key: KeyId) -> bool {
        self.per_key.contains_key(&key)
    }

    pub fn key_costs(&self, key: KeyId) -> Option<&KeyCosts> {
        self.per_key.get(&key)
    }

    pub fn record_value_size(&mut self, key: KeyId, bytes: f64) -> Result<(), CostError> {
        self.averages.value.observe(bytes)?;
        let alpha = self.alpha;
        let entry = self.per_key.entry(key).or_default();
        match entry.value_size.as_mut() {
            Some(est) => {
                est.observe(bytes)?;
            }
            None => entry.value_size = Some(SmoothedEstimate::new(bytes, alpha)?),
        }
        Ok(())
    }

    /// Records the intrinsic (unit-speed) CPU cost of running the function on `key`.
    pub fn record_function_cost(&mut self, key: KeyId, seconds: f64) -> Result<(), CostError> {
        self.averages.function_cost.observe(seconds)?;
        let alpha = self.alpha;
        let entry = self.per_key.entry(key).or_default();
        match entry.function_cost.as_mut() {
            Some(est) => {
                est.observe(seconds)?;
            }
            None => entry.function_cost = Some(SmoothedEstimate::new(seconds, alpha)?),
        }
        Ok(())
    }

    /// Per-key state is dropped on update notifications.
    pub fn forget_key(&mut self, key: KeyId) {
        self.per_key.remove(&key);
    }

    pub fn value_size(&self, key: KeyId) -> f64 {
        self.per_key.get(&key).and_then(|k| k.value_size).unwrap_or(self.averages.value).current()
    }

    pub fn function_cost(&self, key: KeyId) -> f64 {
        self.per_key.get(&key).and_then(|k| k.function_cost).unwrap_or(self.averages.function_cost).current()
    }

    pub fn tc_compute(&self, i: ComputeId, key: KeyId) -> f64 {
        self.function_cost(key) * self.compute[i.0].cpu_scale.current()
    }

    pub fn tc_data(&self, j: DataId, key: KeyId) -> f64 {
        self.function_cost(key) * self.data[j.0].cpu_scale.current()
    }
}

/// The four costs compared by the rent/buy policy for one key and node pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionCosts {
    t_compute: f64,
    t_fetch: f64,
    t_rec_mem: f64,
    t_rec_disk: f64,
}

impl DecisionCosts {
    pub fn new(t_compute: f64, t_fetch: f64, t_rec_mem: f64, t_rec_disk: f64) -> Result<Self, CostError> {
        for v in [t_compute, t_fetch, t_rec_mem, t_rec_disk] {
            check_measurement(v)?;
        }
        if t_rec_disk < t_rec_mem {
            return Err(CostError::RecurringOrder { mem: t_rec_mem, disk: t_rec_disk });
        }
        Ok(Self { t_compute, t_fetch, t_rec_mem, t_rec_disk })
    }

    /// Cost of a compute request (the rent price).
    pub fn t_compute(&self) -> f64 {
        self.t_compute
    }

    /// Cost of fetching the value (the buy price).
    pub fn t_fetch(&self) -> f64 {
        self.t_fetch
    }

    pub fn t_rec_mem(&self) -> f64 {
        self.t_rec_mem
    }

    pub fn t_rec_disk(&self) -> f64 {
        self.t_rec_disk
    }
}

/// Evaluates the rent, buy, and recurring costs of `key` for compute node `i`
/// talking to data node `j`.
pub fn decision_costs(params: &CostParams, key: KeyId, i: ComputeId, j: DataId) -> Result<DecisionCosts, CostError> {
    if i.0 >= params.compute.len() || j.0 >= params.data.len() {
        return Err(CostError::UnknownLink(i.0, j.0));
    }
    let bw = params.bandwidth.get(i, j)?;
    let avg = &params.averages;
    let s_k = avg.key.current();
    let s_p = avg.params.current();
    let s_cv = avg.computed.current();
    let s_v = params.value_size(key);
    let t_disk_j = params.data[j.0].t_disk.current();
    let t_disk_i = params.compute[i.0].t_disk.current();
    let tc_j = params.tc_data(j, key);
    let tc_i = params.tc_compute(i, key);

    let t_compute = t_disk_j.max((s_k + s_p + s_cv) / bw).max(tc_j);
    let t_fetch = t_disk_j.max((s_k + s_v) / bw);
    let t_rec_mem = tc_i;
    let t_rec_disk = tc_i.max(t_disk_i);
    DecisionCosts::new(t_compute, t_fetch, t_rec_mem, t_rec_disk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn est(current: f64, alpha: f64) -> SmoothedEstimate {
        SmoothedEstimate::new(current, alpha).unwrap()
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(est(10.0, 0.5).smooth_update(20.0).unwrap().current(), 15.0);
        assert_eq!(est(7.0, 1.0).smooth_update(3.0).unwrap().current(), 3.0);
        assert_relative_eq!(est(4.0, 0.2).smooth_update(9.0).unwrap().current(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_rejects_bad_input() {
        assert!(matches!(est(1.0, 0.3).smooth_update(f64::NAN), Err(CostError::InvalidMeasurement(_))));
        assert!(est(1.0, 0.3).smooth_update(f64::INFINITY).is_err());
        assert!(est(1.0, 0.3).smooth_update(-1.0).is_err());
        assert!(matches!(SmoothedEstimate::new(1.0, 0.0), Err(CostError::InvalidAlpha(_))));
        assert!(SmoothedEstimate::new(1.0, 1.5).is_err());
    }

    #[test]
    fn smoothing_converges_geometrically() {
        let alpha = 0.3;
        let mut e = est(100.0, alpha);
        let target = 5.0;
        let mut gap = (e.current() - target).abs();
        for _ in 0..80 {
            e.observe(target).unwrap();
            let next = (e.current() - target).abs();
            assert!(next <= (1.0 - alpha) * gap + 1e-12 * 100.0);
            gap = next;
        }
        assert!(gap < 1e-6);
    }

    fn params(bw: f64, t_disk_j: f64, t_disk_i: f64, tc: f64, s_v: f64) -> CostParams {
        let seed = CostSeed {
            key_size: 100.0,
            param_size: 50.0,
            value_size: s_v,
            computed_size: 10.0,
            function_cost: tc,
            compute_t_disk: vec![t_disk_i],
            compute_cpu_scale: vec![1.0],
            data_t_disk: vec![t_disk_j],
            data_cpu_scale: vec![1.0],
        };
        CostParams::new(BandwidthMatrix::uniform(1, 1, bw).unwrap(), &seed, DEFAULT_ALPHA).unwrap()
    }

    #[test]
    fn fetch_cost_example() {
        // s_k = 100 B, s_v = 1e5 B, bw = 1e6 B/s, tDisk_j = 0.05 s.
        let p = params(1e6, 0.05, 0.01, 0.001, 1e5);
        let c = decision_costs(&p, KeyId(1), ComputeId(0), DataId(0)).unwrap();
        assert_relative_eq!(c.t_fetch(), 0.1001, epsilon = 1e-12);
    }

    #[test]
    fn compute_cost_is_max_of_three_terms() {
        // tDisk_j = 1, (s_k + s_p + s_cv) / bw = 160 / 80 = 2, tc_j = 3.
        let p = params(80.0, 1.0, 1.0, 3.0, 10.0);
        let c = decision_costs(&p, KeyId(1), ComputeId(0), DataId(0)).unwrap();
        assert_eq!(c.t_compute(), 3.0);
    }

    #[test]
    fn recurring_costs_when_cpu_dominates() {
        let p = params(1e9, 0.001, 2.0, 5.0, 10.0);
        let c = decision_costs(&p, KeyId(1), ComputeId(0), DataId(0)).unwrap();
        assert_eq!(c.t_rec_mem(), 5.0);
        assert_eq!(c.t_rec_disk(), 5.0);
    }

    #[test]
    fn unknown_pair_is_a_configuration_error() {
        let p = params(1e6, 0.05, 0.01, 0.001, 1e5);
        assert_eq!(decision_costs(&p, KeyId(1), ComputeId(0), DataId(3)).unwrap_err(), CostError::UnknownLink(0, 3));
    }

    #[test]
    fn per_key_overrides_fall_back_to_averages() {
        let mut p = params(1e6, 0.05, 0.01, 0.001, 1e5);
        assert_eq!(p.value_size(KeyId(9)), 1e5);
        p.record_value_size(KeyId(9), 2e5).unwrap();
        assert_eq!(p.value_size(KeyId(9)), 2e5);
        // the global average moved but is still defined for unseen keys
        assert!(p.value_size(KeyId(10)) > 1e5);
        p.forget_key(KeyId(9));
        assert!(!p.knows_key(KeyId(9)));
    }

    #[test]
    fn recurring_cost_order_is_enforced() {
        assert!(matches!(DecisionCosts::new(1.0, 1.0, 2.0, 1.0), Err(CostError::RecurringOrder { .. })));
    }

    proptest! {
        #[test]
        fn update_contracts_towards_measurement(
            current in 0.0..1e6f64, alpha in 0.01..=1.0f64, m in 0.0..1e6f64
        ) {
            let next = est(current, alpha).smooth_update(m).unwrap().current();
            let slack = 1e-9 * current.max(m).max(1.0);
            prop_assert!((next - m).abs() <= (1.0 - alpha) * (current - m).abs() + slack);
        }

        #[test]
        fn costs_are_monotone(
            bw in 1e3..1e9f64, t_disk_j in 1e-5..1.0f64, t_disk_i in 1e-5..1.0f64,
            tc in 1e-5..1.0f64, s_v in 1.0..1e6f64, grow in 1.0..10.0f64,
        ) {
            let base = params(bw, t_disk_j, t_disk_i, tc, s_v);
            let c0 = decision_costs(&base, KeyId(1), ComputeId(0), DataId(0)).unwrap();
            let variants = [
                params(bw / grow, t_disk_j, t_disk_i, tc, s_v),
                params(bw, t_disk_j * grow, t_disk_i, tc, s_v),
                params(bw, t_disk_j, t_disk_i * grow, tc, s_v),
                params(bw, t_disk_j, t_disk_i, tc * grow, s_v),
                params(bw, t_disk_j, t_disk_i, tc, s_v * grow),
            ];
            for p in &variants {
                let c = decision_costs(p, KeyId(1), ComputeId(0), DataId(0)).unwrap();
                prop_assert!(c.t_compute() >= c0.t_compute());
                prop_assert!(c.t_fetch() >= c0.t_fetch());
                prop_assert!(c.t_rec_mem() >= c0.t_rec_mem());
                prop_assert!(c.t_rec_disk() >= c0.t_rec_disk());
                prop_assert!(c.t_rec_disk() >= c.t_rec_mem());
            }
        }
    }

    #[test]
    fn non_positive_parameters_are_rejected() {
        assert!(BandwidthMatrix::uniform(1, 1, 0.0).is_err());
        assert!(NodeCosts::new(-1.0, 1.0, 0.3).is_err());
    }
}
