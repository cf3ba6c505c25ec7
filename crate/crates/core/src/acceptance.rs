//! Executable acceptance criteria, shared by the `accept` command and the
//! acceptance test target.

mod reference_cache;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::balance::{
    comp_cpu, comp_net, data_cpu, data_net, objective, solve_d, solve_d_exact, DataNodeLoad, FormulaFidelity,
    LoadSnapshot, MessageSizes,
};
use crate::cache::{SizeMode, Tier, TieredCache};
use crate::config::RunConfig;
use crate::engine::Strategy;
use crate::frequency::LossyCounter;
use crate::report::{mean_value, sweep, write_csv, Row};
use crate::sim::RunMode;
use crate::skirental::{offline_optimal_cost, policy_cost, SkiParams};
use crate::workload::Preset;
use crate::KeyId;

pub use reference_cache::ReferenceCache;

/// Sizes of the acceptance runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scale {
    pub tuples: u64,
    pub key_universe: u64,
    pub seeds: Vec<u64>,
    pub ski_instances: usize,
    pub lossy_streams: usize,
    pub balance_instances: usize,
    pub cache_steps: usize,
}

impl Scale {
    pub fn full() -> Self {
        Self {
            tuples: 100_000,
            key_universe: 10_000,
            seeds: vec![1, 2, 3],
            ski_instances: 10_000,
            lossy_streams: 100,
            balance_instances: 500,
            cache_steps: 10_000,
        }
    }

    pub fn quick() -> Self {
        Self {
            tuples: 20_000,
            key_universe: 2_000,
            seeds: vec![1],
            ski_instances: 2_000,
            lossy_streams: 20,
            balance_instances: 100,
            cache_steps: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    /// Each sub-check with its outcome.
    pub checks: Vec<(String, bool)>,
}

impl Verdict {
    fn new(id: u8, title: &'static str) -> Self {
        Self { id, title, passed: true, checks: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.passed &= ok;
        self.checks.push((what.into(), ok));
    }

    /// The failed sub-checks.
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, ok)| !ok).map(|(s, _)| s.as_str()).collect()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {status}  {}", self.id, self.title)?;
        let fails = self.failures();
        if !fails.is_empty() {
            write!(f, " | failed: {}", fails.join("; "))?;
        }
        Ok(())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Competitive bound of the rent-or-buy policy.
pub fn ski_rental(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(1, "ski-rental competitive bound");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5151);
    let mut worst = 0.0f64;
    let mut violations = 0;
    for _ in 0..scale.ski_instances {
        let r = rng.gen_range(0.01..10.0);
        let b_r = rng.gen_range(0.0..r * 0.999);
        let b = rng.gen_range(0.0..100.0);
        let n = rng.gen_range(1..2_000u64);
        let p = SkiParams::new(r, b, b_r).expect("valid");
        let bound = (2.0 - b_r / r) * offline_optimal_cost(&p, n) + r;
        let cost = policy_cost(&p, n);
        if cost > bound * (1.0 + 1e-12) {
            violations += 1;
        }
        worst = worst.max(cost - bound);
    }
    v.check(
        violations == 0,
        format!("bound with +r slack over {} instances ({violations} violations)", scale.ski_instances),
    );

    // Integral thresholds: b = M (r - b_r), evaluated at n = M + 1.
    let mut max_gap = 0.0f64;
    let mut example = (0.0, 0.0);
    for _ in 0..scale.ski_instances {
        let r = rng.gen_range(1..64) as f64;
        let b_r = rng.gen_range(0..r as u64) as f64;
        let m = rng.gen_range(1..200) as f64;
        let p = SkiParams::new(r, m * (r - b_r), b_r).expect("valid");
        let n = m as u64 + 1;
        let ratio = policy_cost(&p, n) / offline_optimal_cost(&p, n);
        let target = 2.0 - b_r / r;
        let gap = (ratio - target).abs() / target;
        if gap > max_gap {
            max_gap = gap;
            example = (ratio, target);
        }
    }
    v.check(
        max_gap <= 1e-12,
        format!(
            "ratio at n = M + 1 equals 2 - b_r/r (max relative gap {max_gap:.3e}, e.g. {:.6} vs {:.6})",
            example.0, example.1
        ),
    );

    let mut worst_ratio = 0.0f64;
    for _ in 0..scale.ski_instances {
        let r = rng.gen_range(1..64) as f64;
        let m = rng.gen_range(1..200) as f64;
        let p = SkiParams::new(r, m * r, 0.0).expect("valid");
        let n = m as u64 + 1;
        worst_ratio = worst_ratio.max(policy_cost(&p, n) / offline_optimal_cost(&p, n));
        for n in [1, m as u64, m as u64 + 5, 10 * m as u64] {
            worst_ratio = worst_ratio.max(policy_cost(&p, n) / offline_optimal_cost(&p, n));
        }
    }
    v.check(rel_close(worst_ratio, 2.0, 1e-12), format!("worst ratio with b_r = 0 is 2 (got {worst_ratio:.15})"));
    v
}

/// Error guarantees of lossy counting against exact counts.
pub fn lossy_counting(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(2, "lossy counting error bounds");
    let mut rng = ChaCha8Rng::seed_from_u64(0x1055);
    let (mut over, mut under, mut missing) = (0, 0, 0);
    for _ in 0..scale.lossy_streams {
        let eps = rng.gen_range(0.0005..0.05);
        let universe = rng.gen_range(10..5_000u64);
        let z = rng.gen_range(0.0..1.6);
        let len = rng.gen_range(1_000..20_000usize);
        let table = crate::workload::ZipfTable::new(universe, z);
        let mut c = LossyCounter::new(eps).expect("valid epsilon");
        let mut exact: HashMap<u64, u64> = HashMap::new();
        for _ in 0..len {
            let k = table.sample(&mut rng) as u64;
            c.observe(&k);
            *exact.entry(k).or_default() += 1;
        }
        let n = c.total_seen() as f64;
        for (k, &t) in &exact {
            let est = c.estimate(k);
            if est > t {
                over += 1;
            }
            if (t - est.min(t)) as f64 > eps * n {
                under += 1;
            }
            if t as f64 >= eps * n && c.max_error(k).is_none() {
                missing += 1;
            }
        }
    }
    v.check(over == 0, format!("no overestimates ({over} found)"));
    v.check(under == 0, format!("underestimate <= eps N ({under} violations)"));
    v.check(missing == 0, format!("keys with count >= eps N tracked ({missing} missing)"));
    v
}

fn random_instance(rng: &mut ChaCha8Rng) -> (LoadSnapshot, DataNodeLoad, u64) {
    let mut count = |hi: f64| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..hi).floor() };
    let nr_bar = count(500.0);
    let nr_j = count(500.0);
    let nr_ij = nr_j.min(count(500.0));
    let lc = count(500.0);
    let nd = count(300.0);
    let nc = count(300.0);
    let ndr = count(300.0);
    let nd_j = count(300.0);
    let ndr_j = count(300.0);
    let r_bar = (nr_bar * rng.gen_range(0.0..=1.0)).floor();
    let r_j = (nr_j * rng.gen_range(0.0..=1.0)).floor();
    let r_ij = r_j.min(nr_ij);
    let sizes = MessageSizes {
        key: rng.gen_range(8.0..64.0),
        params: rng.gen_range(10.0..1_000.0),
        value: rng.gen_range(100.0..200_000.0),
        computed: rng.gen_range(10.0..1_000.0),
    };
    let s = LoadSnapshot {
        lc,
        nd,
        nc,
        ndr,
        nr_bar,
        r_bar,
        tc_c: 10f64.powf(rng.gen_range(-5.0..-0.5)),
        sizes,
        net_bw: 10f64.powf(rng.gen_range(6.0..9.0)),
    };
    let j = DataNodeLoad {
        nd_j,
        ndr_j,
        nr_j,
        r_j,
        nr_ij,
        r_ij,
        tc_d: 10f64.powf(rng.gen_range(-5.0..-0.5)),
        sizes,
        net_bw: 10f64.powf(rng.gen_range(6.0..9.0)),
    };
    (s, j, rng.gen_range(1..=256))
}

/// Gradient solver against exhaustive search, and affinity of the loads.
pub fn balance_solver(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(3, "balance solver optimality");
    let mut rng = ChaCha8Rng::seed_from_u64(0xBA1A);
    let (mut mismatched, mut nonaffine) = (0, 0);
    let mut worst = 0.0f64;
    for _ in 0..scale.balance_instances {
        let (s, j, b) = random_instance(&mut rng);
        for fidelity in [FormulaFidelity::Corrected, FormulaFidelity::Printed] {
            let g = solve_d(&s, &j, b, fidelity, &mut rng);
            let e = solve_d_exact(&s, &j, b, fidelity);
            let fg = objective(&s, &j, b, g.d as f64, fidelity);
            let gap = (fg - e.predicted_completion).abs() / e.predicted_completion.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(gap);
            if gap > 1e-9 {
                mismatched += 1;
            }
            let fns: [&dyn Fn(f64) -> f64; 4] =
                [&|d| comp_cpu(&s, &j, b, d, fidelity), &|d| comp_net(&s, &j, b, d), &|d| data_cpu(&j, d), &|d| {
                    data_net(&j, b, d)
                }];
            let (d1, d2) = (rng.gen_range(0..=b) as f64, rng.gen_range(0..=b) as f64);
            let d3 = (d1 + d2) / 2.0;
            for f in fns {
                let mid = (f(d1) + f(d2)) / 2.0;
                if !rel_close(f(d3), mid, 1e-9) && (f(d3) - mid).abs() > 1e-12 {
                    nonaffine += 1;
                }
            }
        }
    }
    v.check(mismatched == 0, format!("solver matches exhaustive within 1e-9 ({mismatched} misses, worst {worst:.2e})"));
    v.check(nonaffine == 0, format!("loads affine in d ({nonaffine} violations)"));
    v
}

/// Cache admission against the straight-line reference.
pub fn cache_oracle(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(4, "cache admission matches reference");
    for mode in [SizeMode::Uniform, SizeMode::Variable] {
        for seed in 0..4u64 {
            let outcome = compare_with_reference(mode, seed, scale.cache_steps);
            v.check(
                outcome.is_ok(),
                format!("{mode:?} trace {seed}: {}", outcome.err().unwrap_or_else(|| "ok".into())),
            );
        }
    }
    v
}

/// Replays one random trace on both caches; `Err` names the first divergence.
pub fn compare_with_reference(mode: SizeMode, seed: u64, steps: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCAC4E ^ seed);
    let capacity = rng.gen_range(2_000..20_000u64);
    let keys = rng.gen_range(10..200u64);
    let size_of = |k: u64| match mode {
        SizeMode::Uniform => 1_000,
        SizeMode::Variable => 200 + (k * 7919) % 3_000,
    };
    let mut cache: TieredCache<u64> = TieredCache::new(mode, capacity, None);
    let mut reference = ReferenceCache::new(mode, capacity);
    let mut freq: HashMap<u64, u64> = HashMap::new();
    for step in 0..steps {
        let k = rng.gen_range(0..keys);
        let key = KeyId(k);
        let size = size_of(k);
        let op = rng.gen_range(0..100);
        let what;
        if op < 40 {
            let f = freq.entry(k).or_default();
            *f += 1;
            let a = cache.update_benefit(key, *f, 1.0);
            let b = reference.update_benefit(k, *f, 1.0);
            what = "update";
            if a != b {
                return Err(format!("step {step}: benefit {a} vs {b}"));
            }
        } else if op < 75 {
            let with_value = rng.gen_bool(0.7);
            let a = cache.cond_cache(key, with_value.then_some(k), size, step as f64);
            let b = reference.cond_cache(k, with_value, size);
            what = "cond_cache";
            if a != b {
                return Err(format!("step {step}: admit {a} vs {b} for k{k}"));
            }
        } else if op < 95 {
            let a = cache.get(key, step as f64).map(|(_, t)| t == Tier::Memory);
            let b = reference.get(k);
            what = "get";
            if a != b {
                return Err(format!("step {step}: lookup {a:?} vs {b:?} for k{k}"));
            }
        } else {
            cache.invalidate(key);
            reference.invalidate(k);
            freq.remove(&k);
            what = "invalidate";
        }
        let mut mem: Vec<u64> = cache.mem_keys_by_benefit().iter().map(|k| k.0).collect();
        mem.sort_unstable();
        let mut disk: Vec<u64> = cache.disk_keys().map(|k| k.0).collect();
        disk.sort_unstable();
        if mem != reference.memory_keys() || disk != reference.disk_keys() {
            return Err(format!("step {step} ({what}): tiers differ"));
        }
        if cache.aging_floor() != reference.aging_floor() {
            return Err(format!(
                "step {step} ({what}): aging floor {} vs {}",
                cache.aging_floor(),
                reference.aging_floor()
            ));
        }
        if cache.mem_used() > capacity {
            return Err(format!("step {step}: memory over capacity"));
        }
    }
    Ok(())
}

/// Experiment setup for the trend criteria.
pub fn trend_config(preset: Preset, scale: &Scale) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.workload.preset = preset;
    cfg.workload.tuples = scale.tuples;
    cfg.workload.key_universe = scale.key_universe;
    cfg.workload.zipf = vec![0.0, 0.5, 1.0, 1.5];
    cfg.run.seeds = scale.seeds.clone();
    cfg.run.strategies = Strategy::ALL.to_vec();
    cfg
}

/// Setup for the drift comparison of adaptive and frozen decisions.
pub fn drift_config(preset: Preset, scale: &Scale) -> RunConfig {
    let mut cfg = trend_config(preset, scale);
    cfg.workload.drift_shifts = 10;
    cfg.workload.zipf = vec![0.0, 1.0, 1.5];
    cfg.run.strategies = vec![Strategy::Fo];
    cfg.run.nonadaptive = true;
    cfg
}

type SweepSlot = Arc<OnceLock<Result<Arc<Vec<Row>>, String>>>;

/// Runs each distinct sweep once per process.
fn cached_sweep(cfg: &RunConfig) -> Result<Arc<Vec<Row>>, String> {
    static SLOTS: OnceLock<Mutex<HashMap<String, SweepSlot>>> = OnceLock::new();
    let key = toml::to_string(cfg).expect("config serializes");
    let slot = {
        let mut map = SLOTS.get_or_init(Default::default).lock().expect("sweep cache lock");
        map.entry(key).or_default().clone()
    };
    slot.get_or_init(|| sweep(cfg).map(Arc::new).map_err(|e| e.to_string())).clone()
}

struct Trend {
    rows: Arc<Vec<Row>>,
    mode: RunMode,
}

impl Trend {
    fn t(&self, s: Strategy, z: f64) -> f64 {
        mean_value(&self.rows, self.mode, s, z, true).unwrap_or(f64::NAN)
    }

    fn frozen_ratio(&self, z: f64) -> f64 {
        self.t_frozen(z) / self.t(Strategy::Fo, z)
    }

    fn t_frozen(&self, z: f64) -> f64 {
        mean_value(&self.rows, self.mode, Strategy::Fo, z, false).unwrap_or(f64::NAN)
    }

    fn skew(&self, s: Strategy, z: f64) -> f64 {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.cell.strategy == s && r.cell.z == z && r.cell.adaptive)
            .map(|r| r.result.metrics.data_cpu_skew)
            .collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }
}

fn trend(preset: Preset, scale: &Scale, v: &mut Verdict) -> Option<Trend> {
    trend_from(trend_config(preset, scale), preset, v)
}

fn trend_from(cfg: RunConfig, preset: Preset, v: &mut Verdict) -> Option<Trend> {
    match cached_sweep(&cfg) {
        Ok(rows) => Some(Trend { rows, mode: cfg.run.mode }),
        Err(e) => {
            v.check(false, format!("{} sweep failed: {e}", preset.name()));
            None
        }
    }
}

fn cmp(label: &str, a: f64, op: &str, b: f64) -> String {
    format!("{label}: {a:.4} {op} {b:.4}")
}

/// Data-heavy workload trends.
pub fn data_heavy(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(5, "data-heavy trends");
    let Some(t) = trend(Preset::DataHeavy, scale, &mut v) else {
        return v;
    };
    use Strategy::*;
    let (fo, fd, co) = (t.t(Fo, 0.0), t.t(Fd, 0.0), t.t(Co, 0.0));
    v.check(fo <= 1.10 * fd, cmp("z=0 FO <= 1.10 FD", fo, "<=", 1.10 * fd));
    v.check((co - fo).abs() <= 0.05 * fo, cmp("z=0 |CO - FO| <= 5% FO", (co - fo).abs(), "<=", 0.05 * fo));
    let (fo, fd, lo) = (t.t(Fo, 1.5), t.t(Fd, 1.5), t.t(Lo, 1.5));
    v.check(fo < fd, cmp("z=1.5 FO < FD", fo, "<", fd));
    v.check(fo < lo, cmp("z=1.5 FO < LO", fo, "<", lo));
    v
}

/// Compute-heavy workload trends.
pub fn compute_heavy(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(6, "compute-heavy trends");
    let Some(t) = trend(Preset::ComputeHeavy, scale, &mut v) else {
        return v;
    };
    use Strategy::*;
    for s in [Fd, Fr] {
        let (a, b, c) = (t.t(s, 0.5), t.t(s, 1.0), t.t(s, 1.5));
        v.check(a < b && b < c, format!("{} increases from z=0.5 to 1.5: {a:.4}, {b:.4}, {c:.4}", s.name()));
    }
    for z in [0.0, 0.5, 1.0, 1.5] {
        let (fo, co) = (t.t(Fo, z), t.t(Co, z));
        v.check(fo <= co, cmp(&format!("z={z} FO <= CO"), fo, "<=", co));
    }
    let (fr, fo) = (t.t(Fr, 0.0), t.t(Fo, 0.0));
    v.check(fr <= 1.1 * fo, cmp("z=0 FR <= 1.1 FO", fr, "<=", 1.1 * fo));
    v
}

/// Data-and-compute-heavy workload trends.
pub fn data_compute_heavy(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(7, "data-and-compute-heavy trends");
    let Some(t) = trend(Preset::DataComputeHeavy, scale, &mut v) else {
        return v;
    };
    use Strategy::*;
    for z in [0.5, 1.0] {
        let fo = t.t(Fo, z);
        let (best, name) = [No, Fc, Fd, Fr, Co, Lo]
            .iter()
            .map(|&s| (t.t(s, z), s.name()))
            .fold((f64::INFINITY, ""), |a, b| if b.0 < a.0 { b } else { a });
        v.check(fo <= 1.05 * best, cmp(&format!("z={z} FO <= 1.05 x best other ({name})"), fo, "<=", 1.05 * best));
    }
    let lo: Vec<f64> = [0.0, 0.5, 1.0, 1.5].iter().map(|&z| t.t(Lo, z)).collect();
    v.check(
        lo.windows(2).all(|w| w[0] < w[1]),
        format!("LO increases with z: {}", lo.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")),
    );
    v
}

/// Orderings that hold for every workload.
pub fn universal_orderings(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(8, "universal orderings");
    use Strategy::*;
    for preset in [Preset::DataHeavy, Preset::ComputeHeavy, Preset::DataComputeHeavy] {
        let Some(t) = trend(preset, scale, &mut v) else {
            continue;
        };
        let name = preset.name();
        for z in [0.0, 0.5, 1.0, 1.5] {
            let (fc, no) = (t.t(Fc, z), t.t(No, z));
            v.check(fc <= no, cmp(&format!("{name} z={z} FC <= NO"), fc, "<=", no));
        }
        for z in [1.0, 1.5] {
            let (fd, fo) = (t.skew(Fd, z), t.skew(Fo, z));
            v.check(fd >= 1.5, cmp(&format!("{name} z={z} FD data-CPU max/mean >= 1.5"), fd, ">=", 1.5));
            v.check(fo < fd, cmp(&format!("{name} z={z} FO skew < FD skew"), fo, "<", fd));
        }
    }
    v
}

/// Adaptive decisions under a drifting hot set.
pub fn drift(scale: &Scale) -> Verdict {
    let mut v = Verdict::new(9, "adaptive vs frozen decisions under drift");
    let mut ratios = HashMap::new();
    for preset in [Preset::DataHeavy, Preset::ComputeHeavy, Preset::DataComputeHeavy] {
        let Some(t) = trend_from(drift_config(preset, scale), preset, &mut v) else {
            return v;
        };
        for z in [0.0f64, 1.0, 1.5] {
            ratios.insert((preset, z.to_bits()), t.frozen_ratio(z));
        }
    }
    let ratio = |p: Preset, z: f64| ratios[&(p, z.to_bits())];
    for p in [Preset::DataHeavy, Preset::ComputeHeavy, Preset::DataComputeHeavy] {
        let r = ratio(p, 0.0);
        v.check(r <= 1.02, cmp(&format!("{} z=0 ratio <= 1.02", p.name()), r, "<=", 1.02));
    }
    for z in [1.0, 1.5] {
        for p in [Preset::DataHeavy, Preset::DataComputeHeavy] {
            let r = ratio(p, z);
            v.check(r >= 1.15, cmp(&format!("{} z={z} ratio >= 1.15", p.name()), r, ">=", 1.15));
        }
        let (ch, dh) = (ratio(Preset::ComputeHeavy, z), ratio(Preset::DataHeavy, z));
        v.check((1.0..=dh).contains(&ch), format!("CH z={z} ratio in [1, DH]: {ch:.4} in [1, {dh:.4}]"));
    }
    v
}

/// Small configuration used for the determinism checks.
pub fn determinism_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.workload.preset = Preset::DataComputeHeavy;
    cfg.workload.tuples = 4_000;
    cfg.workload.key_universe = 500;
    cfg.workload.zipf = vec![0.0, 1.2];
    cfg.workload.drift_shifts = 2;
    cfg.workload.update_rate = 20.0;
    cfg.workload.value_size_spread = 0.5;
    cfg.workload.function_cost_spread = 0.5;
    cfg.engine.mem_cache_bytes = 2_000_000;
    cfg.run.seeds = vec![7, 8];
    cfg.run.nonadaptive = true;
    cfg
}

/// Event-log hashes of [`determinism_config`], in sweep order.
pub const GOLDEN_LOG_HASHES: &[&str] = &[
    "7224f747fa34d83ffec1468910007d74ce6a0cba93504ab08fa1950671c49ef2",
    "fe01127d4183fd6d74592c36e02108d8d261203e7a2d4c0d042a6f0170f601ae",
    "08157909beeb4b7abf51ed3c69c1678e1f5eec52e5aad630854ceeb515b698ed",
    "d320da5f6e6b5faf37616cf92f6ba4d59587889cd11e67299739cbb437f07c92",
    "a7b6f2b33e32ba4c8c1c640bf0bb813530b8158a206e14430031048bc73b39a0",
    "08157909beeb4b7abf51ed3c69c1678e1f5eec52e5aad630854ceeb515b698ed",
    "2d2913775e89c35c319766cd0a07dc2842c9ac0b0b6965580e6b50cc58ff4ef9",
    "b1bb38204560cde7327104211b84584915097a3fa84489b28805d29e25784e39",
    "2d2913775e89c35c319766cd0a07dc2842c9ac0b0b6965580e6b50cc58ff4ef9",
    "3758d9d5813f8ab148390caed8c2493d8263c8c8a01eb885b2393181a8d65724",
    "8ce0f15e9d92346510fb5b46acb8d1f014891feaf20d693a882971e8579f37ce",
    "6c2ed18a533dd4a6ce78f027ac4a94411a4f75ff555a3ab6224c08abb2086249",
    "0173518ed2d45f92514fe66677254aa35469fb9c69d3a7f490786e3d95c327f9",
    "429dca5cf9b14fe7d4812246206fa6018ec02bcd3a93421eb8d61b04c143df23",
    "6c2ed18a533dd4a6ce78f027ac4a94411a4f75ff555a3ab6224c08abb2086249",
    "19e2dfbd06f1765d432f55b03fef554f35a6a7ca697c83d13c76232d75b40998",
    "6d2dd8900c4eba6e030cb47702be78fae93f34b6b296ecde6a6849dfb88fb31f",
    "19e2dfbd06f1765d432f55b03fef554f35a6a7ca697c83d13c76232d75b40998",
    "bedee6a9a39dcb4a6b90eaa9965f54e3d19cac0bd9ecc09a899ce0f283df6a27",
    "a994d59ccda7e18a41d37147e2a0df11a3233adb193caed055f887386a2398db",
    "da81c6a307aa6d4761d72b7dd2f00cb40b9f747de59948f6af67857bb79684cd",
    "73af585391ae1c9245a9cb963d1a68499a21bff4cbb04343ce492e344d9d12b1",
    "ef3411d510c3ad8ef2cb3aed7a2fe67c02cebe07f473f8c88efa062f42be1fe9",
    "da81c6a307aa6d4761d72b7dd2f00cb40b9f747de59948f6af67857bb79684cd",
    "a8689518dae88de34fd4915828162784124cdbfc026909a882a66c1de0768aec",
    "8cc0e515b7b21f54bb982cb09f90dab9d75246a51b589ef63ef602bf8ffa2a14",
    "a8689518dae88de34fd4915828162784124cdbfc026909a882a66c1de0768aec",
    "df9f5c41c616f26ee92fe84642a49cf8ba3e3e039f4ac236dbbad219b3ff6fa7",
    "607b2eb014a403a8434854b92eb29b952a516bbcfd27239e41ac786d94b03cf9",
    "05cc42d9d1ac3b58b9f2c64e5e8fa1b06549033c45e9445c55c0608ce2a6d2e2",
    "4aac68b29f759ee8d4afc5273c9b9b24600405b9351099d42c8445675b1746fc",
    "15b49be6650022b3aa8f230a6f1c8ccb6126f6c14fd3b7da6170a4d7e478e1cf",
    "05cc42d9d1ac3b58b9f2c64e5e8fa1b06549033c45e9445c55c0608ce2a6d2e2",
    "33f50380e99f95c73ebed22aeef584409fcc7b5e14e313a8a4bbf0626afc69c4",
    "49736a5f8918996ed6bd9d12c11147edf131c4a4e8658428100dbf5290001832",
    "33f50380e99f95c73ebed22aeef584409fcc7b5e14e313a8a4bbf0626afc69c4",
];

fn csv_bytes(cfg: &RunConfig) -> Result<(Vec<u8>, Vec<String>), String> {
    let rows = sweep(cfg).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    write_csv(&mut out, cfg, &rows).map_err(|e| e.to_string())?;
    Ok((out, rows.iter().map(|r| r.result.log_hash.clone()).collect()))
}

/// Reruns are bit-identical and event logs match the recorded hashes.
pub fn determinism(_scale: &Scale) -> Verdict {
    let mut v = Verdict::new(10, "determinism");
    let cfg = determinism_config();
    match (csv_bytes(&cfg), csv_bytes(&cfg)) {
        (Ok((a, ha)), Ok((b, _))) => {
            v.check(a == b, "rerun gives a bit-identical CSV");
            let mismatched = ha.iter().zip(GOLDEN_LOG_HASHES).filter(|(x, y)| x != y).count();
            v.check(
                ha.len() == GOLDEN_LOG_HASHES.len() && mismatched == 0,
                format!(
                    "event-log hashes match {} recorded ({} runs, {mismatched} differ)",
                    GOLDEN_LOG_HASHES.len(),
                    ha.len()
                ),
            );
        }
        (Err(e), _) | (_, Err(e)) => v.check(false, format!("sweep failed: {e}")),
    }
    v
}

/// Every criterion, in order.
pub fn run_all(scale: &Scale) -> Vec<Verdict> {
    vec![
        ski_rental(scale),
        lossy_counting(scale),
        balance_solver(scale),
        cache_oracle(scale),
        data_heavy(scale),
        compute_heavy(scale),
        data_compute_heavy(scale),
        universal_orderings(scale),
        drift(scale),
        determinism(scale),
    ]
}
