//! Per-key choice between data requests and compute requests for joins against
//! a partitioned key-value store, plus the discrete-event cluster simulator used
//! to evaluate it.

pub mod acceptance;
pub mod balance;
pub mod cache;
pub mod config;
pub mod costs;
pub mod engine;
pub mod frequency;
pub mod report;
pub mod sim;
pub mod skirental;
pub mod workload;

use serde::{Deserialize, Serialize};

/// Key of a stored record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyId(pub u64);

/// Index of a compute node in the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComputeId(pub usize);

/// Index of a data node in the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataId(pub usize);

/// Simulated time in seconds.
pub type SimTime = f64;

impl std::fmt::Display for KeyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k{}", self.0)
    }
}

/// Hash map with a fixed hasher, so iteration order is the same on every run.
pub type StableMap<K, V> =
    std::collections::HashMap<K, V, std::hash::BuildHasherDefault<std::collections::hash_map::DefaultHasher>>;

/// Set counterpart of [`StableMap`].
pub type StableSet<K> =
    std::collections::HashSet<K, std::hash::BuildHasherDefault<std::collections::hash_map::DefaultHasher>>;
