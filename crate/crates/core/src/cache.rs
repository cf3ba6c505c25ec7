//! Memory + disk cache with LFU-DA aged benefits.
//!
//! Admission into memory follows the conditional caching routine for either
//! uniform or variable item sizes. Items pushed out of memory are demoted to
//! the disk tier; items promoted from disk keep their disk copy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{KeyId, SimTime, StableMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Memory,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeMode {
    Uniform,
    Variable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedItem<V> {
    pub key: KeyId,
    pub value: V,
    pub size: u64,
    pub fetched_at: SimTime,
    seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub mem_hits: u64,
    pub disk_hits: u64,
    pub misses: u64,
    pub mem_admissions: u64,
    pub mem_evictions: u64,
    pub disk_admissions: u64,
    pub disk_evictions: u64,
    pub promotions: u64,
    pub invalidations: u64,
}

// Non-negative finite floats order the same as their bit patterns.
type OrderKey = (u64, u64, KeyId);

fn order_key(benefit: f64, seq: u64, key: KeyId) -> OrderKey {
    debug_assert!(benefit >= 0.0 && benefit.is_finite());
    (benefit.to_bits(), seq, key)
}

#[derive(Debug, Clone)]
pub struct TieredCache<V> {
    mode: SizeMode,
    mem_capacity: u64,
    disk_capacity: Option<u64>,
    mem_used: u64,
    disk_used: u64,
    aging_floor: f64,
    benefits: StableMap<KeyId, f64>,
    mem: StableMap<KeyId, CachedItem<V>>,
    mem_order: BTreeSet<OrderKey>,
    disk: StableMap<KeyId, CachedItem<V>>,
    next_seq: u64,
    stats: CacheStats,
}

impl<V: Clone> TieredCache<V> {
    pub fn new(mode: SizeMode, mem_capacity: u64, disk_capacity: Option<u64>) -> Self {
        Self {
            mode,
            mem_capacity,
            disk_capacity,
            mem_used: 0,
            disk_used: 0,
            aging_floor: 0.0,
            benefits: StableMap::default(),
            mem: StableMap::default(),
            mem_order: BTreeSet::new(),
            disk: StableMap::default(),
            next_seq: 0,
            stats: CacheStats::default(),
        }
    }

    pub fn mode(&self) -> SizeMode {
        self.mode
    }

    pub fn mem_capacity(&self) -> u64 {
        self.mem_capacity
    }

    pub fn disk_capacity(&self) -> Option<u64> {
        self.disk_capacity
    }

    pub fn mem_used(&self) -> u64 {
        self.mem_used
    }

    pub fn disk_used(&self) -> u64 {
        self.disk_used
    }

    pub fn mem_free(&self) -> u64 {
        self.mem_capacity - self.mem_used
    }

    pub fn aging_floor(&self) -> f64 {
        self.aging_floor
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn benefit(&self, k: KeyId) -> f64 {
        self.benefits.get(&k).copied().unwrap_or(0.0)
    }

    pub fn in_memory(&self, k: KeyId) -> bool {
        self.mem.contains_key(&k)
    }

    pub fn on_disk(&self, k: KeyId) -> bool {
        self.disk.contains_key(&k)
    }

    pub fn mem_len(&self) -> usize {
        self.mem.len()
    }

    pub fn disk_len(&self) -> usize {
        self.disk.len()
    }

    /// Memory-resident keys in eviction order (lowest benefit first).
    pub fn mem_keys_by_benefit(&self) -> Vec<KeyId> {
        self.mem_order.iter().map(|&(_, _, k)| k).collect()
    }

    pub fn disk_keys(&self) -> impl Iterator<Item = KeyId> + '_ {
        self.disk.keys().copied()
    }

    /// Lowest benefit among memory-resident items.
    pub fn min_mem_benefit(&self) -> Option<f64> {
        self.mem_order.first().map(|&(bits, _, _)| f64::from_bits(bits))
    }

    /// Sets `benefit(k) = L + weight * freq` and returns it.
    pub fn update_benefit(&mut self, k: KeyId, freq: u64, weight: f64) -> f64 {
        debug_assert!(weight > 0.0);
        let benefit = self.aging_floor + weight * freq as f64;
        let old = self.benefits.insert(k, benefit);
        if let Some(item) = self.mem.get(&k) {
            let seq = item.seq;
            self.mem_order.remove(&order_key(old.unwrap_or(0.0), seq, k));
            self.mem_order.insert(order_key(benefit, seq, k));
        }
        benefit
    }

    /// Looks `k` up, memory first. A disk hit also tries to promote the item
    /// into memory.
    pub fn get(&mut self, k: KeyId, now: SimTime) -> Option<(V, Tier)> {
        if let Some(item) = self.mem.get(&k) {
            self.stats.mem_hits += 1;
            return Some((item.value.clone(), Tier::Memory));
        }
        if let Some(item) = self.disk.get(&k) {
            self.stats.disk_hits += 1;
            let (value, size) = (item.value.clone(), item.size);
            if self.cond_cache(k, Some(value.clone()), size, now) {
                self.stats.promotions += 1;
            }
            return Some((value, Tier::Disk));
        }
        self.stats.misses += 1;
        None
    }

    /// Read-only lookup; no statistics, no promotion.
    pub fn peek(&self, k: KeyId) -> Option<(&V, Tier)> {
        self.mem.get(&k).map(|i| (&i.value, Tier::Memory)).or_else(|| self.disk.get(&k).map(|i| (&i.value, Tier::Disk)))
    }

    /// Conditional memory caching in the configured size mode.
    pub fn cond_cache(&mut self, k: KeyId, value: Option<V>, size: u64, now: SimTime) -> bool {
        match self.mode {
            SizeMode::Uniform => self.cond_cache_uniform(k, value, size, now),
            SizeMode::Variable => self.cond_cache_variable(k, value, size, now),
        }
    }

    /// Uniform item sizes. Without a value only the decision is computed.
    pub fn cond_cache_uniform(&mut self, k: KeyId, value: Option<V>, size: u64, now: SimTime) -> bool {
        let Some(victims) = self.plan_uniform(k, size) else {
            return false;
        };
        if let Some(v) = value {
            self.commit(k, v, size, now, victims);
        }
        true
    }

    /// Variable item sizes. Without a value only the decision is computed.
    pub fn cond_cache_variable(&mut self, k: KeyId, value: Option<V>, size: u64, now: SimTime) -> bool {
        let Some(victims) = self.plan_variable(k, size) else {
            return false;
        };
        if let Some(v) = value {
            self.commit(k, v, size, now, victims);
        }
        true
    }

    fn plan_uniform(&self, k: KeyId, size: u64) -> Option<Vec<KeyId>> {
        if self.mem.contains_key(&k) {
            return Some(Vec::new());
        }
        if size > self.mem_capacity {
            return None;
        }
        if self.mem_free() >= size {
            return Some(Vec::new());
        }
        let &(bits, _, min_key) = self.mem_order.first()?;
        if self.benefit(k) > f64::from_bits(bits) {
            let freed = self.mem[&min_key].size;
            // Only reachable if sizes are not actually uniform.
            if self.mem_free() + freed < size {
                return None;
            }
            Some(vec![min_key])
        } else {
            None
        }
    }

    fn plan_variable(&self, k: KeyId, size: u64) -> Option<Vec<KeyId>> {
        if self.mem.contains_key(&k) {
            return Some(Vec::new());
        }
        if size > self.mem_capacity {
            return None;
        }
        let free = self.mem_free();
        if free >= size {
            return Some(Vec::new());
        }
        let mut prelim = Vec::new();
        let mut freed = 0u64;
        let mut benefit_sum = 0.0;
        for &(bits, _, key) in &self.mem_order {
            prelim.push(key);
            freed += self.mem[&key].size;
            benefit_sum += f64::from_bits(bits);
            if freed + free > size {
                break;
            }
        }
        // Every item together may free exactly `size` without exceeding it.
        if freed + free < size {
            return None;
        }
        if self.benefit(k) < benefit_sum {
            return None;
        }
        let room = freed + free - size;
        let mut kept = 0u64;
        let mut victims = Vec::new();
        // prelim is ascending; walk it from the most beneficial end.
        for &key in prelim.iter().rev() {
            let s = self.mem[&key].size;
            if kept + s <= room {
                kept += s;
            } else {
                victims.push(key);
            }
        }
        victims.reverse();
        Some(victims)
    }

    fn commit(&mut self, k: KeyId, value: V, size: u64, now: SimTime, victims: Vec<KeyId>) {
        if self.mem.contains_key(&k) {
            return;
        }
        for victim in victims {
            self.demote(victim);
        }
        debug_assert!(self.mem_free() >= size);
        let seq = self.bump_seq();
        let benefit = self.benefit(k);
        self.mem_order.insert(order_key(benefit, seq, k));
        self.mem.insert(k, CachedItem { key: k, value, size, fetched_at: now, seq });
        self.mem_used += size;
        self.stats.mem_admissions += 1;
    }

    fn demote(&mut self, victim: KeyId) {
        let item = self.remove_mem(victim).expect("victim is memory resident");
        let benefit = self.benefit(victim);
        self.aging_floor = self.aging_floor.max(benefit);
        self.stats.mem_evictions += 1;
        if !self.disk.contains_key(&victim) {
            self.insert_disk(item);
        }
    }

    fn remove_mem(&mut self, k: KeyId) -> Option<CachedItem<V>> {
        let item = self.mem.remove(&k)?;
        let benefit = self.benefit(k);
        let removed = self.mem_order.remove(&order_key(benefit, item.seq, k));
        debug_assert!(removed);
        self.mem_used -= item.size;
        Some(item)
    }

    fn bump_seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    /// Stores a fetched value straight into the disk tier.
    pub fn install_disk(&mut self, k: KeyId, value: V, size: u64, now: SimTime) -> bool {
        if self.disk.contains_key(&k) {
            return true;
        }
        let seq = self.bump_seq();
        self.insert_disk(CachedItem { key: k, value, size, fetched_at: now, seq })
    }

    fn insert_disk(&mut self, item: CachedItem<V>) -> bool {
        if let Some(cap) = self.disk_capacity {
            if item.size > cap {
                return false;
            }
        }
        self.evict_disk_if_needed(item.size);
        self.disk_used += item.size;
        self.stats.disk_admissions += 1;
        self.disk.insert(item.key, item);
        true
    }

    /// Makes room for `incoming_size` bytes on a bounded disk tier by dropping
    /// the items with the lowest benefit-to-size ratio, oldest first on ties.
    pub fn evict_disk_if_needed(&mut self, incoming_size: u64) {
        let Some(cap) = self.disk_capacity else {
            return;
        };
        while self.disk_used + incoming_size > cap && !self.disk.is_empty() {
            let victim = self
                .disk
                .values()
                .min_by(|a, b| {
                    let ra = self.benefit(a.key) / a.size as f64;
                    let rb = self.benefit(b.key) / b.size as f64;
                    ra.total_cmp(&rb).then(a.fetched_at.total_cmp(&b.fetched_at)).then(a.seq.cmp(&b.seq))
                })
                .map(|i| i.key)
                .expect("disk tier is non-empty");
            let item = self.disk.remove(&victim).expect("victim present");
            self.disk_used -= item.size;
            self.stats.disk_evictions += 1;
        }
    }

    /// Drops `k` from both tiers.
    pub fn invalidate(&mut self, k: KeyId) {
        let mut hit = self.remove_mem(k).is_some();
        if let Some(item) = self.disk.remove(&k) {
            self.disk_used -= item.size;
            hit = true;
        }
        if hit {
            self.stats.invalidations += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache(mode: SizeMode, mem: u64) -> TieredCache<u32> {
        TieredCache::new(mode, mem, None)
    }

    fn fill(c: &mut TieredCache<u32>, items: &[(u64, u64, f64)]) {
        for &(k, size, benefit) in items {
            c.benefits.insert(KeyId(k), benefit);
            assert!(c.cond_cache(KeyId(k), Some(k as u32), size, 0.0));
        }
    }

    #[test]
    fn benefit_examples() {
        let mut c = cache(SizeMode::Uniform, 10);
        assert_eq!(c.update_benefit(KeyId(1), 3, 1.0), 3.0);
        c.aging_floor = 10.0;
        assert_eq!(c.update_benefit(KeyId(2), 1, 1.0), 11.0);
    }

    #[test]
    fn eviction_raises_aging_floor() {
        let mut c = cache(SizeMode::Uniform, 1);
        c.update_benefit(KeyId(1), 7, 1.0);
        assert!(c.cond_cache(KeyId(1), Some(1), 1, 0.0));
        c.update_benefit(KeyId(2), 9, 1.0);
        assert!(c.cond_cache(KeyId(2), Some(2), 1, 0.0));
        assert_eq!(c.aging_floor(), 7.0);
        assert_eq!(c.update_benefit(KeyId(3), 1, 1.0), 8.0);
    }

    #[test]
    fn uniform_examples() {
        let mut c = cache(SizeMode::Uniform, 2);
        assert!(c.cond_cache_uniform(KeyId(9), None, 1, 0.0));
        fill(&mut c, &[(1, 1, 7.0), (2, 1, 8.0)]);
        c.benefits.insert(KeyId(5), 5.0);
        assert!(!c.cond_cache_uniform(KeyId(5), Some(5), 1, 0.0));
        c.benefits.insert(KeyId(6), 9.0);
        assert!(c.cond_cache_uniform(KeyId(6), Some(6), 1, 0.0));
        assert!(c.on_disk(KeyId(1)));
        assert!(!c.in_memory(KeyId(1)));
        assert!(c.in_memory(KeyId(6)));
    }

    #[test]
    fn uniform_equal_benefit_is_rejected() {
        let mut c = cache(SizeMode::Uniform, 1);
        fill(&mut c, &[(1, 1, 7.0)]);
        c.benefits.insert(KeyId(2), 7.0);
        assert!(!c.cond_cache_uniform(KeyId(2), None, 1, 0.0));
    }

    #[test]
    fn variable_examples() {
        let mut c = cache(SizeMode::Variable, 12);
        fill(&mut c, &[(1, 4, 1.0), (2, 4, 2.0), (3, 4, 10.0)]);
        c.benefits.insert(KeyId(4), 2.5);
        assert!(!c.cond_cache_variable(KeyId(4), Some(4), 6, 0.0));
        c.benefits.insert(KeyId(4), 4.0);
        assert!(c.cond_cache_variable(KeyId(4), Some(4), 6, 0.0));
        assert!(c.on_disk(KeyId(1)) && c.on_disk(KeyId(2)));
        assert!(c.in_memory(KeyId(3)) && c.in_memory(KeyId(4)));
        assert_eq!(c.mem_used(), 10);
    }

    #[test]
    fn variable_exact_fit_needs_no_eviction() {
        let mut c = cache(SizeMode::Variable, 10);
        fill(&mut c, &[(1, 4, 1.0)]);
        assert!(c.cond_cache_variable(KeyId(2), Some(2), 6, 0.0));
        assert_eq!(c.mem_used(), 10);
        assert_eq!(c.stats().mem_evictions, 0);
    }

    #[test]
    fn variable_keeps_most_beneficial_subset() {
        // prelim = {1 (size 2), 2 (size 5)}: 7 + 0 > 4; room = 7 - 4 = 3, so the
        // benefit-2 item of size 5 cannot stay but the size-2 item can.
        let mut c = cache(SizeMode::Variable, 10);
        fill(&mut c, &[(1, 2, 1.0), (2, 5, 2.0), (3, 3, 50.0)]);
        c.benefits.insert(KeyId(4), 3.0);
        assert!(c.cond_cache_variable(KeyId(4), Some(4), 4, 0.0));
        assert!(c.in_memory(KeyId(1)));
        assert!(!c.in_memory(KeyId(2)));
    }

    #[test]
    fn oversized_items_never_fit() {
        let mut c = cache(SizeMode::Variable, 10);
        c.benefits.insert(KeyId(1), 1e9);
        assert!(!c.cond_cache_variable(KeyId(1), Some(1), 11, 0.0));
        let mut u = cache(SizeMode::Uniform, 10);
        assert!(!u.cond_cache_uniform(KeyId(1), Some(1), 11, 0.0));
    }

    #[test]
    fn decision_mode_is_pure() {
        let mut c = cache(SizeMode::Variable, 12);
        fill(&mut c, &[(1, 4, 1.0), (2, 4, 2.0), (3, 4, 10.0)]);
        c.benefits.insert(KeyId(4), 100.0);
        let before = (c.mem_keys_by_benefit(), c.disk_len(), c.mem_used(), c.aging_floor());
        assert!(c.cond_cache_variable(KeyId(4), None, 6, 0.0));
        let after = (c.mem_keys_by_benefit(), c.disk_len(), c.mem_used(), c.aging_floor());
        assert_eq!(before, after);
    }

    #[test]
    fn lookup_order_and_promotion() {
        let mut c = cache(SizeMode::Uniform, 1);
        fill(&mut c, &[(1, 1, 1.0)]);
        c.benefits.insert(KeyId(2), 5.0);
        assert!(c.cond_cache(KeyId(2), Some(2), 1, 0.0));
        // key 1 is on disk only; key 2 in memory
        assert_eq!(c.get(KeyId(2), 1.0).unwrap().1, Tier::Memory);
        assert!(c.get(KeyId(3), 1.0).is_none());
        // make key 1 more valuable than the resident item and hit it on disk
        c.update_benefit(KeyId(1), 10, 1.0);
        assert_eq!(c.get(KeyId(1), 2.0).unwrap().1, Tier::Disk);
        assert!(c.in_memory(KeyId(1)));
        assert!(c.on_disk(KeyId(1)));
        assert_eq!(c.get(KeyId(1), 3.0).unwrap().1, Tier::Memory);
    }

    #[test]
    fn invalidate_removes_both_tiers() {
        let mut c = cache(SizeMode::Uniform, 1);
        fill(&mut c, &[(1, 1, 1.0)]);
        c.install_disk(KeyId(1), 1, 1, 0.0);
        c.invalidate(KeyId(1));
        assert!(c.peek(KeyId(1)).is_none());
        assert_eq!(c.mem_used(), 0);
        assert_eq!(c.disk_used(), 0);
        c.invalidate(KeyId(42));
    }

    #[test]
    fn disk_eviction_by_ratio() {
        let mut c: TieredCache<u32> = TieredCache::new(SizeMode::Variable, 1, Some(3));
        c.benefits.insert(KeyId(1), 4.0);
        c.benefits.insert(KeyId(2), 3.0);
        c.install_disk(KeyId(1), 1, 2, 0.0);
        c.install_disk(KeyId(2), 2, 1, 1.0);
        c.evict_disk_if_needed(1);
        assert!(!c.on_disk(KeyId(1)));
        assert!(c.on_disk(KeyId(2)));
    }

    #[test]
    fn disk_eviction_ties_go_to_older() {
        let mut c: TieredCache<u32> = TieredCache::new(SizeMode::Variable, 1, Some(2));
        c.benefits.insert(KeyId(1), 2.0);
        c.benefits.insert(KeyId(2), 2.0);
        c.install_disk(KeyId(2), 2, 1, 5.0);
        c.install_disk(KeyId(1), 1, 1, 3.0);
        c.evict_disk_if_needed(1);
        assert!(!c.on_disk(KeyId(1)));
        assert!(c.on_disk(KeyId(2)));
    }

    #[test]
    fn unbounded_disk_never_evicts() {
        let mut c: TieredCache<u32> = TieredCache::new(SizeMode::Variable, 1, None);
        for k in 0..100 {
            c.install_disk(KeyId(k), 0, 1000, 0.0);
        }
        c.evict_disk_if_needed(u64::MAX / 2);
        assert_eq!(c.disk_len(), 100);
    }
}
