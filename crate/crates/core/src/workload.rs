//! Synthetic join workloads: Zipf key draws, per-key store contents, presets
//! and hot-set drift.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::KeyId;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace format: {0}")]
    Format(#[from] csv::Error),
}

/// Named workload shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    /// Large values, cheap function.
    #[serde(rename = "DH")]
    DataHeavy,
    /// Small values, expensive function.
    #[serde(rename = "CH")]
    ComputeHeavy,
    /// Large values and an expensive function.
    #[serde(rename = "DCH")]
    DataComputeHeavy,
    #[serde(rename = "custom")]
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::DataHeavy, Preset::ComputeHeavy, Preset::DataComputeHeavy];

    pub fn name(self) -> &'static str {
        match self {
            Preset::DataHeavy => "DH",
            Preset::ComputeHeavy => "CH",
            Preset::DataComputeHeavy => "DCH",
            Preset::Custom => "custom",
        }
    }

    /// Built-in sizes and costs; `None` for custom workloads.
    pub fn profile(self) -> Option<Profile> {
        let base =
            Profile { key_size: 16, param_size: 100, value_size: 100_000, computed_size: 100, function_cost: 1e-4 };
        match self {
            Preset::DataHeavy => Some(base),
            Preset::ComputeHeavy => Some(Profile { value_size: 1_000, function_cost: 0.1, ..base }),
            Preset::DataComputeHeavy => Some(Profile { function_cost: 0.1, ..base }),
            Preset::Custom => None,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DH" => Ok(Preset::DataHeavy),
            "CH" => Ok(Preset::ComputeHeavy),
            "DCH" => Ok(Preset::DataComputeHeavy),
            "CUSTOM" => Ok(Preset::Custom),
            other => Err(WorkloadError::Invalid(format!("unknown preset `{other}`"))),
        }
    }
}

/// Sizes in bytes and the function's CPU cost in seconds on a unit-speed node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub key_size: u64,
    pub param_size: u64,
    pub value_size: u64,
    pub computed_size: u64,
    pub function_cost: f64,
}

/// How keys for store updates are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateKeys {
    #[default]
    Uniform,
    /// Same skew as the lookups, so hot keys are updated more often.
    Zipf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub preset: Preset,
    pub profile: Profile,
    pub tuples: u64,
    pub key_universe: u64,
    pub zipf_z: f64,
    pub drift_shifts: u32,
    /// Relative spread of per-key value sizes, 0 for identical sizes.
    pub value_size_spread: f64,
    /// Relative spread of per-key function costs.
    pub function_cost_spread: f64,
    /// Store updates per simulated second, over the whole store.
    pub update_rate: f64,
    pub update_keys: UpdateKeys,
}

impl WorkloadSpec {
    pub fn preset(preset: Preset, tuples: u64, key_universe: u64, zipf_z: f64) -> Self {
        Self {
            preset,
            profile: preset.profile().expect("built-in preset"),
            tuples,
            key_universe,
            zipf_z,
            drift_shifts: 0,
            value_size_spread: 0.0,
            function_cost_spread: 0.0,
            update_rate: 0.0,
            update_keys: UpdateKeys::Uniform,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if self.key_universe == 0 {
            return bad("key universe must be non-empty");
        }
        if !(self.zipf_z.is_finite() && self.zipf_z >= 0.0) {
            return bad("zipf exponent must be finite and >= 0");
        }
        let p = &self.profile;
        if p.key_size == 0 || p.value_size == 0 || p.computed_size == 0 {
            return bad("key, value and computed sizes must be positive");
        }
        if !(p.function_cost.is_finite() && p.function_cost > 0.0) {
            return bad("function cost must be positive");
        }
        for spread in [self.value_size_spread, self.function_cost_spread] {
            if !(0.0..1.0).contains(&spread) {
                return bad("spreads must lie in [0, 1)");
            }
        }
        if !(self.update_rate.is_finite() && self.update_rate >= 0.0) {
            return bad("update rate must be >= 0");
        }
        Ok(())
    }
}

/// One input tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tuple {
    pub id: u64,
    pub key: KeyId,
    pub param_size: u32,
}

// Independent random streams derived from one seed.
const STREAM_DRAWS: u64 = 1;
const STREAM_MAPPING: u64 = 2;
const STREAM_CATALOG: u64 = 3;
pub(crate) const STREAM_UPDATES: u64 = 4;
const STREAM_DRIFT: u64 = 16;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF sampler over ranks `0..n` with weight `1 / (rank + 1)^z`.
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(n: u64, z: f64) -> Self {
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for rank in 1..=n {
            acc += (rank as f64).powf(-z);
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        Self { cdf }
    }

    /// Probability mass of `rank` (0-based).
    pub fn mass(&self, rank: usize) -> f64 {
        self.cdf[rank] - if rank == 0 { 0.0 } else { self.cdf[rank - 1] }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

fn permutation(n: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut p: Vec<u64> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Draws `spec.tuples` keys. Rank order is mapped to keys through a seeded
/// permutation so the hottest key is not always key 0.
pub fn generate(spec: &WorkloadSpec, seed: u64) -> Result<Vec<Tuple>, WorkloadError> {
    spec.validate()?;
    let table = ZipfTable::new(spec.key_universe, spec.zipf_z);
    let mapping = permutation(spec.key_universe, &mut rng_for(seed, STREAM_MAPPING));
    let mut rng = rng_for(seed, STREAM_DRAWS);
    let param_size = spec.profile.param_size as u32;
    Ok((0..spec.tuples).map(|id| Tuple { id, key: KeyId(mapping[table.sample(&mut rng)]), param_size }).collect())
}

/// Key at each popularity rank before any drift; index 0 is the hottest key.
pub fn rank_to_key(spec: &WorkloadSpec, seed: u64) -> Vec<KeyId> {
    permutation(spec.key_universe, &mut rng_for(seed, STREAM_MAPPING)).into_iter().map(KeyId).collect()
}

/// Splits the stream into `drift_shifts + 1` equal segments and gives every
/// segment after the first a fresh rank-to-key mapping.
pub fn apply_drift(spec: &WorkloadSpec, seed: u64, stream: Vec<Tuple>) -> Vec<Tuple> {
    let shifts = spec.drift_shifts as u64;
    if shifts == 0 || stream.is_empty() {
        return stream;
    }
    let n = spec.key_universe;
    let base = permutation(n, &mut rng_for(seed, STREAM_MAPPING));
    let mut rank_of = vec![0u64; n as usize];
    for (rank, &key) in base.iter().enumerate() {
        rank_of[key as usize] = rank as u64;
    }
    let mut mappings = vec![base];
    for s in 1..=shifts {
        let mut next = permutation(n, &mut rng_for(seed, STREAM_DRIFT + s));
        let prev_top = mappings[mappings.len() - 1][0];
        if next[0] == prev_top && n > 1 {
            next.swap(0, 1);
        }
        mappings.push(next);
    }
    let len = stream.len() as u64;
    let segments = shifts + 1;
    stream
        .into_iter()
        .enumerate()
        .map(|(i, mut t)| {
            let seg = (i as u64 * segments / len) as usize;
            if seg > 0 {
                let rank = rank_of[t.key.0 as usize];
                t.key = KeyId(mappings[seg][rank as usize]);
            }
            t
        })
        .collect()
}

/// Segment index of position `i` in a drifted stream of length `len`.
pub fn segment_of(i: u64, len: u64, shifts: u32) -> u64 {
    (i * (shifts as u64 + 1)).checked_div(len).unwrap_or(0)
}

/// Generates the stream and applies drift.
pub fn build_trace(spec: &WorkloadSpec, seed: u64) -> Result<Vec<Tuple>, WorkloadError> {
    Ok(apply_drift(spec, seed, generate(spec, seed)?))
}

/// Per-key contents of the store: value size and the function's CPU cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    profile: Profile,
    value_sizes: Vec<u64>,
    function_costs: Vec<f64>,
}

impl Catalog {
    pub fn new(spec: &WorkloadSpec, seed: u64) -> Self {
        let mut rng = rng_for(seed, STREAM_CATALOG);
        let n = spec.key_universe as usize;
        let p = spec.profile;
        let mut jitter = |spread: f64| {
            if spread == 0.0 {
                1.0
            } else {
                rng.gen_range(1.0 - spread..=1.0 + spread)
            }
        };
        let mut value_sizes = Vec::with_capacity(n);
        let mut function_costs = Vec::with_capacity(n);
        for _ in 0..n {
            let size = (p.value_size as f64 * jitter(spec.value_size_spread)).round().max(1.0);
            value_sizes.push(size as u64);
            function_costs.push(p.function_cost * jitter(spec.function_cost_spread));
        }
        Self { profile: p, value_sizes, function_costs }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn len(&self) -> usize {
        self.value_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value_sizes.is_empty()
    }

    pub fn value_size(&self, k: KeyId) -> u64 {
        self.value_sizes[k.0 as usize]
    }

    pub fn function_cost(&self, k: KeyId) -> f64 {
        self.function_costs[k.0 as usize]
    }

    pub fn uniform_sizes(&self) -> bool {
        self.value_sizes.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    tuple_id: u64,
    key: u64,
    param_size: u32,
}

/// Writes a tab-separated trace with a header line.
pub fn write_trace<W: Write>(out: W, trace: &[Tuple]) -> Result<(), WorkloadError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    for t in trace {
        w.serialize(TraceRecord { tuple_id: t.id, key: t.key.0, param_size: t.param_size })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<Tuple>, WorkloadError> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let rec: TraceRecord = rec?;
        out.push(Tuple { id: rec.tuple_id, key: KeyId(rec.key), param_size: rec.param_size });
    }
    Ok(out)
}

pub fn dump_trace(path: &Path, trace: &[Tuple]) -> Result<(), WorkloadError> {
    write_trace(std::fs::File::create(path)?, trace)
}

pub fn load_trace(path: &Path) -> Result<Vec<Tuple>, WorkloadError> {
    read_trace(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn counts(trace: &[Tuple]) -> HashMap<KeyId, u64> {
        let mut m = HashMap::new();
        for t in trace {
            *m.entry(t.key).or_default() += 1;
        }
        m
    }

    fn top_key(trace: &[Tuple]) -> KeyId {
        let c = counts(trace);
        let mut v: Vec<_> = c.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v[0].0
    }

    #[test]
    fn uniform_draws_stay_within_binomial_band() {
        let spec = WorkloadSpec::preset(Preset::DataHeavy, 1_000_000, 1000, 0.0);
        let trace = generate(&spec, 1).unwrap();
        let c = counts(&trace);
        let mean = 1000.0;
        let sd = (1e6_f64 * 1e-3 * (1.0 - 1e-3)).sqrt();
        let max = *c.values().max().unwrap() as f64;
        // max of 1000 binomials: allow the usual tail for the maximum
        assert!(max - mean <= 4.0 * sd, "max {max}");
        assert_eq!(c.len(), 1000);
    }

    #[test]
    fn skewed_top_key_matches_zipf_mass() {
        let spec = WorkloadSpec::preset(Preset::DataHeavy, 400_000, 10_000, 1.5);
        let trace = generate(&spec, 2).unwrap();
        let h: f64 = (1..=10_000u64).map(|r| (r as f64).powf(-1.5)).sum();
        let expected = 1.0 / h;
        let c = counts(&trace);
        let share = *c.values().max().unwrap() as f64 / trace.len() as f64;
        assert!((share - expected).abs() < 0.01, "{share} vs {expected}");
    }

    #[test]
    fn single_key_universe() {
        let spec = WorkloadSpec::preset(Preset::ComputeHeavy, 500, 1, 1.0);
        assert!(generate(&spec, 3).unwrap().iter().all(|t| t.key == KeyId(0)));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = WorkloadSpec::preset(Preset::DataHeavy, 5000, 100, 1.0);
        assert_eq!(generate(&spec, 4).unwrap(), generate(&spec, 4).unwrap());
        assert_ne!(generate(&spec, 4).unwrap(), generate(&spec, 5).unwrap());
    }

    #[test]
    fn no_drift_leaves_stream_alone() {
        let spec = WorkloadSpec::preset(Preset::DataHeavy, 5000, 100, 1.0);
        let t = generate(&spec, 6).unwrap();
        assert_eq!(apply_drift(&spec, 6, t.clone()), t);
    }

    #[test]
    fn drift_changes_top_key_every_segment() {
        let mut spec = WorkloadSpec::preset(Preset::DataHeavy, 110_000, 1000, 1.5);
        spec.drift_shifts = 10;
        let t = build_trace(&spec, 7).unwrap();
        let seg_len = t.len() / 11;
        let tops: Vec<KeyId> = t.chunks(seg_len).take(11).map(top_key).collect();
        for w in tops.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }

    #[test]
    fn drift_preserves_segment_shape() {
        let mut spec = WorkloadSpec::preset(Preset::DataHeavy, 110_000, 1000, 1.0);
        spec.drift_shifts = 10;
        let t = build_trace(&spec, 8).unwrap();
        let table = ZipfTable::new(1000, 1.0);
        for seg in t.chunks(10_000) {
            let c = counts(seg);
            let mut sorted: Vec<u64> = c.values().copied().collect();
            sorted.sort_unstable_by(|a, b| b.cmp(a));
            let share = sorted[0] as f64 / seg.len() as f64;
            assert!((share - table.mass(0)).abs() < 0.02, "{share}");
        }
    }

    #[test]
    fn trace_round_trips() {
        let spec = WorkloadSpec::preset(Preset::DataHeavy, 100, 50, 0.5);
        let t = generate(&spec, 9).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("tuple_id\tkey\tparam_size\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn catalog_spreads_are_bounded() {
        let mut spec = WorkloadSpec::preset(Preset::DataHeavy, 0, 500, 0.0);
        assert!(Catalog::new(&spec, 1).uniform_sizes());
        spec.value_size_spread = 0.5;
        spec.function_cost_spread = 0.2;
        let c = Catalog::new(&spec, 1);
        assert!(!c.uniform_sizes());
        for k in 0..500 {
            let s = c.value_size(KeyId(k)) as f64;
            assert!((50_000.0..=150_000.0).contains(&s));
            let f = c.function_cost(KeyId(k));
            assert!((0.8e-4..=1.2e-4).contains(&f));
        }
    }

    #[test]
    fn presets_keep_their_ratios() {
        let dh = Preset::DataHeavy.profile().unwrap();
        let ch = Preset::ComputeHeavy.profile().unwrap();
        let dch = Preset::DataComputeHeavy.profile().unwrap();
        assert_eq!(dh.value_size, 100_000);
        assert_eq!(ch.value_size, 1_000);
        assert_eq!(dch.value_size, 100_000);
        assert_eq!(dh.function_cost, 1e-4);
        assert_eq!(ch.function_cost, 0.1);
        assert_eq!(dch.function_cost, 0.1);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = WorkloadSpec::preset(Preset::DataHeavy, 10, 10, -1.0);
        assert!(spec.validate().is_err());
        spec.zipf_z = 1.0;
        spec.key_universe = 0;
        assert!(spec.validate().is_err());
    }
}
