//! Streaming heavy-hitter detection with Space Saving.
//!
//! The sketch keeps at most `k` counters in an array ordered by descending
//! count, with a hash index from key to array slot. An increment swaps the
//! counter with the first slot holding the same count before bumping it, so
//! the order is preserved without shifting.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub key: u64,
    pub count: u64,
    /// Upper bound on how much `count` overstates the true frequency.
    pub overestimate: u64,
}

#[derive(Debug, Clone)]
pub struct SkewSketch {
    capacity: usize,
    /// Sorted by descending count.
    counters: Vec<Counter>,
    slots: HashMap<u64, usize>,
    n_seen: u64,
}

impl SkewSketch {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "sketch capacity must be positive");
        Self {
            capacity,
            counters: Vec::with_capacity(capacity),
            slots: HashMap::with_capacity(capacity),
            n_seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    /// Counters in descending count order.
    pub fn counters(&self) -> &[Counter] {
        &self.counters
    }

    pub fn get(&self, key: u64) -> Option<Counter> {
        self.slots.get(&key).map(|&i| self.counters[i])
    }

    /// Smallest tracked count, or 0 while the sketch still has free slots.
    pub fn min_count(&self) -> u64 {
        if self.counters.len() < self.capacity {
            0
        } else {
            self.counters.last().map_or(0, |c| c.count)
        }
    }

    pub fn observe(&mut self, key: u64) {
        self.n_seen += 1;
        if let Some(&slot) = self.slots.get(&key) {
            self.bump(slot);
        } else if self.counters.len() < self.capacity {
            self.counters.push(Counter {
                key,
                count: 1,
                overestimate: 0,
            });
            self.slots.insert(key, self.counters.len() - 1);
            // A fresh count of 1 is never above the tail, so order holds.
        } else {
            let slot = self.counters.len() - 1;
            let evicted = self.counters[slot];
            self.slots.remove(&evicted.key);
            self.counters[slot] = Counter {
                key,
                count: evicted.count,
                overestimate: evicted.count,
            };
            self.slots.insert(key, slot);
            self.bump(slot);
        }
    }

    /// Increments the counter at `slot`, keeping descending order.
    fn bump(&mut self, slot: usize) {
        let count = self.counters[slot].count;
        let head = self.counters.partition_point(|c| c.count > count);
        if head != slot {
            self.counters.swap(head, slot);
            self.slots.insert(self.counters[head].key, head);
            self.slots.insert(self.counters[slot].key, slot);
        }
        self.counters[head].count += 1;
    }

    /// Whether `key` is currently a heavy hitter: the warm-up has passed, the
    /// key is tracked, and its estimate is at least `theta * n_seen`.
    pub fn is_skewed(&self, key: u64, theta: f64, warmup: u64) -> bool {
        if self.n_seen < warmup {
            return false;
        }
        match self.get(key) {
            Some(c) => c.count as f64 >= theta * self.n_seen as f64,
            None => false,
        }
    }

    /// Merges two sketches of equal capacity. Counts and overestimates of
    /// shared keys are summed. A key missing from a full sketch is charged
    /// that sketch's minimum count, which keeps `est >= true`. The result is
    /// truncated back to the `k` largest counters.
    pub fn merge(&self, other: &SkewSketch) -> Result<SkewSketch> {
        if self.capacity != other.capacity {
            return Err(Error::CapacityMismatch {
                left: self.capacity,
                right: other.capacity,
            });
        }
        let pad_self = self.min_count();
        let pad_other = other.min_count();
        let mut merged: HashMap<u64, Counter> = HashMap::new();
        for c in &self.counters {
            let (count, over) = match other.get(c.key) {
                Some(o) => (c.count + o.count, c.overestimate + o.overestimate),
                None => (c.count + pad_other, c.overestimate + pad_other),
            };
            merged.insert(
                c.key,
                Counter {
                    key: c.key,
                    count,
                    overestimate: over,
                },
            );
        }
        for o in &other.counters {
            merged.entry(o.key).or_insert(Counter {
                key: o.key,
                count: o.count + pad_self,
                overestimate: o.overestimate + pad_self,
            });
        }
        let mut counters: Vec<Counter> = merged.into_values().collect();
        counters.sort_by(|a, b| b.count.cmp(&a.count).then(a.key.cmp(&b.key)));
        counters.truncate(self.capacity);
        let slots = counters.iter().enumerate().map(|(i, c)| (c.key, i)).collect();
        Ok(SkewSketch {
            capacity: self.capacity,
            counters,
            slots,
            n_seen: self.n_seen + other.n_seen,
        })
    }

    /// `key,est,overestimate` rows in descending count order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "key,est,overestimate")?;
        for c in &self.counters {
            writeln!(out, "{},{},{}", c.key, c.count, c.overestimate)?;
        }
        Ok(())
    }

    #[cfg(test)]
    fn check_order(&self) {
        assert!(self.counters.windows(2).all(|w| w[0].count >= w[1].count));
        for (i, c) in self.counters.iter().enumerate() {
            assert_eq!(self.slots[&c.key], i);
        }
        assert_eq!(self.slots.len(), self.counters.len());
    }
}

/// Detection parameters shared by every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Relative frequency threshold against the node-local observation count.
    pub theta: f64,
    /// Counters per node.
    pub capacity: usize,
    /// Observations before any key can be reported skewed.
    pub warmup: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            theta: 0.001,
            capacity: 1024,
            warmup: 1000,
        }
    }
}

/// One data node's detector. Positive decisions latch for the rest of the run.
#[derive(Debug, Clone)]
pub struct SkewDetector {
    params: DetectorParams,
    sketch: SkewSketch,
    latched: HashSet<u64>,
}

impl SkewDetector {
    pub fn new(params: DetectorParams) -> Self {
        Self {
            params,
            sketch: SkewSketch::new(params.capacity),
            latched: HashSet::new(),
        }
    }

    pub fn sketch(&self) -> &SkewSketch {
        &self.sketch
    }

    /// Observes a probe key and classifies it.
    pub fn observe_and_classify(&mut self, key: u64) -> bool {
        self.sketch.observe(key);
        self.classify(key)
    }

    /// Classifies without observing (used for build tuples).
    pub fn classify(&mut self, key: u64) -> bool {
        if self.latched.contains(&key) {
            return true;
        }
        let p = self.params;
        if self.sketch.is_skewed(key, p.theta, p.warmup) {
            self.latched.insert(key);
            true
        } else {
            false
        }
    }

    pub fn latched(&self) -> &HashSet<u64> {
        &self.latched
    }
}
