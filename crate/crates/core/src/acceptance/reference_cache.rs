//! Deliberately naive cache used as an oracle: linear scans over plain
//! vectors, one routine per admission rule, no shared helpers with the real
//! cache beyond the key type.

use std::collections::HashMap;

use crate::cache::SizeMode;

#[derive(Debug, Clone)]
struct Slot {
    key: u64,
    size: u64,
    admitted: u64,
}

#[derive(Debug, Clone)]
pub struct ReferenceCache {
    mode: SizeMode,
    capacity: u64,
    used: u64,
    floor: f64,
    clock: u64,
    benefit: HashMap<u64, f64>,
    memory: Vec<Slot>,
    disk: Vec<(u64, u64)>,
}

impl ReferenceCache {
    pub fn new(mode: SizeMode, capacity: u64) -> Self {
        Self {
            mode,
            capacity,
            used: 0,
            floor: 0.0,
            clock: 0,
            benefit: HashMap::new(),
            memory: Vec::new(),
            disk: Vec::new(),
        }
    }

    pub fn aging_floor(&self) -> f64 {
        self.floor
    }

    pub fn memory_keys(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.memory.iter().map(|s| s.key).collect();
        v.sort_unstable();
        v
    }

    pub fn disk_keys(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.disk.iter().map(|d| d.0).collect();
        v.sort_unstable();
        v
    }

    fn b(&self, k: u64) -> f64 {
        *self.benefit.get(&k).unwrap_or(&0.0)
    }

    pub fn update_benefit(&mut self, k: u64, freq: u64, weight: f64) -> f64 {
        let v = self.floor + weight * freq as f64;
        self.benefit.insert(k, v);
        v
    }

    /// `Some(true)` for a memory hit, `Some(false)` for a disk hit.
    pub fn get(&mut self, k: u64) -> Option<bool> {
        if self.memory.iter().any(|s| s.key == k) {
            return Some(true);
        }
        let size = self.disk.iter().find(|d| d.0 == k)?.1;
        self.cond_cache(k, true, size);
        Some(false)
    }

    pub fn invalidate(&mut self, k: u64) {
        if let Some(i) = self.memory.iter().position(|s| s.key == k) {
            self.used -= self.memory[i].size;
            self.memory.remove(i);
        }
        self.disk.retain(|d| d.0 != k);
    }

    pub fn cond_cache(&mut self, k: u64, store: bool, size: u64) -> bool {
        if self.memory.iter().any(|s| s.key == k) {
            return true;
        }
        if size > self.capacity {
            return false;
        }
        if self.capacity - self.used >= size {
            if store {
                self.admit(k, size);
            }
            return true;
        }
        match self.mode {
            SizeMode::Uniform => self.uniform(k, store, size),
            SizeMode::Variable => self.variable(k, store, size),
        }
    }

    fn uniform(&mut self, k: u64, store: bool, size: u64) -> bool {
        // Least beneficial item; the earliest admitted wins ties.
        let mut min = 0;
        for i in 1..self.memory.len() {
            let (a, m) = (&self.memory[i], &self.memory[min]);
            if self.b(a.key) < self.b(m.key) || (self.b(a.key) == self.b(m.key) && a.admitted < m.admitted) {
                min = i;
            }
        }
        let victim = self.memory[min].clone();
        if !(self.b(k) > self.b(victim.key)) {
            return false;
        }
        if self.capacity - self.used + victim.size < size {
            return false;
        }
        if store {
            self.evict(victim.key);
            self.admit(k, size);
        }
        true
    }

    fn variable(&mut self, k: u64, store: bool, size: u64) -> bool {
        let free = self.capacity - self.used;
        let mut order = self.memory.clone();
        order.sort_by(|x, y| self.b(x.key).partial_cmp(&self.b(y.key)).unwrap().then(x.admitted.cmp(&y.admitted)));
        let mut prelim = Vec::new();
        let mut total = 0;
        let mut sum = 0.0;
        for s in order {
            total += s.size;
            sum += self.b(s.key);
            prelim.push(s);
            if total + free > size {
                break;
            }
        }
        if total + free < size {
            return false;
        }
        if self.b(k) < sum {
            return false;
        }
        if store {
            // Keep the most beneficial prelim items that still leave room.
            let room = total + free - size;
            let mut kept = 0;
            let mut evict = Vec::new();
            let mut i = prelim.len();
            while i > 0 {
                i -= 1;
                if kept + prelim[i].size <= room {
                    kept += prelim[i].size;
                } else {
                    evict.push(prelim[i].key);
                }
            }
            evict.reverse();
            for key in evict {
                self.evict(key);
            }
            self.admit(k, size);
        }
        true
    }

    fn evict(&mut self, key: u64) {
        let i = self.memory.iter().position(|s| s.key == key).unwrap();
        let slot = self.memory.remove(i);
        self.used -= slot.size;
        if self.b(key) > self.floor {
            self.floor = self.b(key);
        }
        if !self.disk.iter().any(|d| d.0 == key) {
            self.disk.push((key, slot.size));
        }
    }

    fn admit(&mut self, k: u64, size: u64) {
        self.clock += 1;
        self.memory.push(Slot { key: k, size, admitted: self.clock });
        self.used += size;
    }
}
