//! The table of cached forward activations and backward derivatives that local
//! updates draw from.
//!
//! Each entry carries two clocks: the communication round it was inserted at
//! and how many local updates have used it. Entries leave the table when they
//! fall out of the `W`-round window or reach the use cap. Sampling is round
//! robin: the oldest entry that has uses left and was not among the last
//! `W - 1` samples.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub batch_id: u64,
    pub z_a: Matrix<f64>,
    pub dz_a: Matrix<f64>,
    pub insert_time: u64,
    pub use_count: u32,
    pub batch_indices: Vec<usize>,
}

impl CacheEntry {
    pub fn new(batch_id: u64, z_a: Matrix<f64>, dz_a: Matrix<f64>, batch_indices: Vec<usize>) -> Self {
        CacheEntry {
            batch_id,
            z_a,
            dz_a,
            insert_time: batch_id,
            use_count: 0,
            batch_indices,
        }
    }
}

/// How entries have left the table so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WorksetStats {
    pub inserted: u64,
    pub evicted_by_window: u64,
    /// Local uses achieved by the entries counted in `evicted_by_window`.
    pub uses_of_window_evicted: u64,
    pub dropped_at_cap: u64,
}

#[derive(Clone, Debug)]
pub struct WorksetTable {
    capacity: usize,
    max_uses: u32,
    entries: VecDeque<CacheEntry>,
    recent: VecDeque<u64>,
    now: Option<u64>,
    stats: WorksetStats,
}

impl WorksetTable {
    /// `capacity` is the window `W` (at least 1); `max_uses` caps local uses
    /// per entry and may be 0, in which case nothing is ever sampled.
    pub fn new(capacity: usize, max_uses: u32) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("workset capacity must be at least 1".into()));
        }
        Ok(WorksetTable {
            capacity,
            max_uses,
            entries: VecDeque::with_capacity(capacity),
            recent: VecDeque::with_capacity(capacity),
            now: None,
            stats: WorksetStats::default(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_uses(&self) -> u32 {
        self.max_uses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn now(&self) -> Option<u64> {
        self.now
    }

    pub fn stats(&self) -> WorksetStats {
        self.stats
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter()
    }

    pub fn get(&self, batch_id: u64) -> Option<&CacheEntry> {
        self.entries.iter().find(|e| e.batch_id == batch_id)
    }

    /// Batch ids of the most recent samples, oldest first (at most `W - 1`).
    pub fn recent_samples(&self) -> impl Iterator<Item = u64> + '_ {
        self.recent.iter().copied()
    }

    /// Appends `entry` at time `now` and evicts everything inserted before
    /// `now - W + 1`. Returns the evicted entries.
    pub fn insert(&mut self, mut entry: CacheEntry, now: u64) -> Result<Vec<CacheEntry>> {
        if let Some(prev) = self.now {
            if now <= prev {
                return Err(Error::Logic(format!(
                    "insertion time {now} does not follow {prev}"
                )));
            }
        }
        if self.entries.iter().any(|e| e.batch_id == entry.batch_id) {
            return Err(Error::Logic(format!("batch {} already cached", entry.batch_id)));
        }
        self.now = Some(now);
        entry.insert_time = now;
        entry.use_count = 0;
        self.entries.push_back(entry);
        self.stats.inserted += 1;

        let mut evicted = Vec::new();
        while let Some(front) = self.entries.front() {
            if front.insert_time + self.capacity as u64 > now {
                break;
            }
            let e = self.entries.pop_front().expect("front exists");
            self.stats.evicted_by_window += 1;
            self.stats.uses_of_window_evicted += u64::from(e.use_count);
            evicted.push(e);
        }
        if self.max_uses == 0 {
            let e = self.entries.pop_back().expect("just inserted");
            self.stats.dropped_at_cap += 1;
            evicted.push(e);
        }
        Ok(evicted)
    }

    fn eligible(&self, e: &CacheEntry) -> bool {
        e.use_count < self.max_uses && !self.recent.contains(&e.batch_id)
    }

    /// Picks the oldest eligible entry and records it in the round-robin
    /// window. `None` is a bubble: nothing may be sampled right now.
    pub fn sample_next(&mut self) -> Option<CacheEntry> {
        let picked = self.entries.iter().find(|e| self.eligible(e))?.clone();
        let window = self.capacity - 1;
        if window > 0 {
            if self.recent.len() == window {
                self.recent.pop_front();
            }
            self.recent.push_back(picked.batch_id);
        }
        Some(picked)
    }

    /// Counts one local use of `batch_id`; the entry is dropped once it reaches
    /// the cap and is then returned.
    pub fn mark_used(&mut self, batch_id: u64) -> Result<Option<CacheEntry>> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.batch_id == batch_id)
            .ok_or_else(|| Error::Logic(format!("batch {batch_id} is not cached")))?;
        let entry = &mut self.entries[pos];
        entry.use_count += 1;
        if entry.use_count >= self.max_uses {
            self.stats.dropped_at_cap += 1;
            return Ok(self.entries.remove(pos));
        }
        Ok(None)
    }

    /// Samples and counts the use in one step. The returned entry carries the
    /// use count it had when it was picked.
    pub fn take_next(&mut self) -> Option<CacheEntry> {
        let picked = self.sample_next()?;
        self.mark_used(picked.batch_id)
            .expect("sampled entry is cached");
        Some(picked)
    }

    /// Removes everything left at the end of a run.
    pub fn drain(&mut self) -> Vec<CacheEntry> {
        self.entries.drain(..).collect()
    }
}

/// A workset shared by a party's communication worker (inserting) and local
/// worker (sampling). Every operation is atomic with respect to the others.
#[derive(Clone, Debug)]
pub struct SharedWorkset(Arc<Mutex<WorksetTable>>);

impl SharedWorkset {
    pub fn new(table: WorksetTable) -> Self {
        SharedWorkset(Arc::new(Mutex::new(table)))
    }

    pub fn insert(&self, entry: CacheEntry, now: u64) -> Result<Vec<CacheEntry>> {
        self.0.lock().unwrap().insert(entry, now)
    }

    pub fn take_next(&self) -> Option<CacheEntry> {
        self.0.lock().unwrap().take_next()
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut WorksetTable) -> R) -> R {
        f(&mut self.0.lock().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(id: u64) -> CacheEntry {
        CacheEntry::new(id, Matrix::zeros(1, 1), Matrix::zeros(1, 1), vec![id as usize])
    }

    fn ids<'a>(entries: impl Iterator<Item = &'a CacheEntry>) -> Vec<u64> {
        entries.map(|e| e.batch_id).collect()
    }

    #[test]
    fn window_eviction() {
        let mut t = WorksetTable::new(3, 3).unwrap();
        for now in 1..=3 {
            assert!(t.insert(entry(now), now).unwrap().is_empty());
        }
        let evicted = t.insert(entry(4), 4).unwrap();
        assert_eq!(ids(evicted.iter()), vec![1]);
        assert_eq!(ids(t.entries()), vec![2, 3, 4]);
        assert!(t.entries().all(|e| e.use_count == 0));
    }

    #[test]
    fn capacity_one_keeps_only_newest() {
        let mut t = WorksetTable::new(1, 5).unwrap();
        for now in 1..=4 {
            t.insert(entry(now), now).unwrap();
            assert_eq!(ids(t.entries()), vec![now]);
        }
    }

    #[test]
    fn insert_rejects_non_monotonic_time() {
        let mut t = WorksetTable::new(2, 2).unwrap();
        t.insert(entry(5), 5).unwrap();
        assert!(matches!(t.insert(entry(6), 5), Err(Error::Logic(_))));
        assert!(matches!(t.insert(entry(4), 4), Err(Error::Logic(_))));
    }

    #[test]
    fn round_robin_fills_the_window_in_order() {
        let mut t = WorksetTable::new(3, 3).unwrap();
        for now in 1..=3 {
            t.insert(entry(now), now).unwrap();
        }
        let order: Vec<u64> = std::iter::from_fn(|| t.take_next().map(|e| e.batch_id)).collect();
        assert_eq!(order, vec![1, 2, 3, 1, 2, 3, 1, 2, 3]);
        assert!(t.is_empty());
    }

    #[test]
    fn lone_entry_bubbles_until_window_passes() {
        let mut t = WorksetTable::new(3, 3).unwrap();
        t.insert(entry(1), 1).unwrap();
        assert_eq!(t.sample_next().map(|e| e.batch_id), Some(1));
        assert!(t.sample_next().is_none());
        assert!(t.sample_next().is_none());
        assert!(WorksetTable::new(3, 3).unwrap().sample_next().is_none());
    }

    #[test]
    fn mark_used_cap_and_isolation() {
        let mut t = WorksetTable::new(4, 2).unwrap();
        t.insert(entry(1), 1).unwrap();
        t.insert(entry(2), 2).unwrap();
        t.mark_used(2).unwrap();
        assert!(t.mark_used(1).unwrap().is_none());
        assert_eq!(t.get(1).unwrap().use_count, 1);
        let dropped = t.mark_used(1).unwrap().unwrap();
        assert_eq!(dropped.use_count, 2);
        assert!(t.get(1).is_none());
        assert_eq!(t.get(2).unwrap().use_count, 1);
        assert_eq!(t.get(2).unwrap().insert_time, 2);
        assert!(matches!(t.mark_used(9), Err(Error::Logic(_))));
    }

    #[test]
    fn zero_cap_drops_on_insert() {
        let mut t = WorksetTable::new(2, 0).unwrap();
        let out = t.insert(entry(1), 1).unwrap();
        assert_eq!(out.len(), 1);
        assert!(t.is_empty() && t.sample_next().is_none());
    }

    /// Replays the deterministic "insert one, then up to `budget` local steps"
    /// schedule and returns (local steps per round, uses per batch at exit).
    fn replay(w: usize, r: u32, budget: usize, rounds: u64) -> (Vec<usize>, Vec<(u64, u32)>) {
        let mut t = WorksetTable::new(w, r).unwrap();
        let mut per_round = Vec::new();
        let mut uses = std::collections::BTreeMap::new();
        for now in 1..=rounds {
            for e in t.insert(entry(now), now).unwrap() {
                uses.insert(e.batch_id, e.use_count);
            }
            let mut steps = 0;
            while steps < budget {
                match t.take_next() {
                    Some(e) => {
                        steps += 1;
                        if e.use_count + 1 == r {
                            uses.insert(e.batch_id, r);
                        }
                    }
                    None => break,
                }
            }
            per_round.push(steps);
        }
        (per_round, uses.into_iter().collect())
    }

    #[test]
    fn deterministic_schedule_by_hand() {
        // Worked by hand for W = R = 3: round 1 samples b1 then bubbles, round 2
        // samples b2 then bubbles, from round 3 on the window is full.
        let (per_round, uses) = replay(3, 3, 3, 9);
        assert_eq!(per_round, vec![1, 1, 3, 3, 3, 3, 3, 3, 3]);
        // b1 falls out of the window with two uses; later batches get all three.
        assert_eq!(uses[0], (1, 2));
        assert!(uses[1..].iter().all(|&(_, u)| u == 3), "{uses:?}");
        let total: usize = per_round.iter().sum();
        assert_eq!(total, 3 * (9 - 2) + 2);
    }

    #[test]
    fn fuzzed_operations_keep_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let w = rng.random_range(1..=6);
            let r = rng.random_range(1..=5);
            let mut t = WorksetTable::new(w, r).unwrap();
            let mut now = 0u64;
            let mut samples: Vec<u64> = Vec::new();
            let mut pending: Option<u64> = None;
            for _ in 0..1000 {
                match rng.random_range(0..3) {
                    0 => {
                        now += rng.random_range(1..3);
                        t.insert(entry(now), now).unwrap();
                        pending = pending.filter(|id| t.get(*id).is_some());
                    }
                    1 => {
                        if let Some(e) = t.sample_next() {
                            assert!(now - e.insert_time < w as u64);
                            samples.push(e.batch_id);
                            pending = Some(e.batch_id);
                        }
                    }
                    _ => {
                        if let Some(id) = pending.take() {
                            t.mark_used(id).unwrap();
                        }
                    }
                }
                assert!(t.len() <= w);
                assert!(t.entries().all(|e| e.use_count < r));
                assert!(t.entries().all(|e| e.insert_time + (w as u64) > now));
            }
            for window in samples.windows(w) {
                let mut sorted = window.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), w, "repeat within {window:?}");
            }
        }
    }

    #[test]
    fn every_entry_leaves_exactly_once() {
        let mut t = WorksetTable::new(3, 2).unwrap();
        let mut gone = 0u64;
        for now in 1..=20 {
            gone += t.insert(entry(now), now).unwrap().len() as u64;
            for _ in 0..2 {
                if let Some(e) = t.sample_next() {
                    gone += u64::from(t.mark_used(e.batch_id).unwrap().is_some());
                }
            }
        }
        let drained = t.drain().len() as u64;
        assert_eq!(gone + drained, 20);
        let s = t.stats();
        assert_eq!(s.inserted, 20);
        assert_eq!(s.evicted_by_window + s.dropped_at_cap + drained, 20);
    }
}
