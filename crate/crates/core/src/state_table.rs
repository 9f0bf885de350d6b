//! Dense open-addressing table for per-flow state.
//!
//! Keys are [`FlowKey`]s, which are already SipHash outputs, so the low bits
//! index the slot array directly. Collisions use triangular probing (offsets
//! 1, 3, 6, 10, ...), which visits every slot of a power-of-two table. The
//! table starts at 8 slots and doubles whenever an insertion would push
//! `occupied + tombstones` past half the capacity; tombstones are purged only
//! by that rehash.

use std::cell::Cell;

use thiserror::Error;

use crate::flow_hash::FlowKey;

pub const INITIAL_CAPACITY: usize = 8;
pub const MAX_CAPACITY: usize = 1 << 31;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("table capacity would exceed {limit} slots")]
    CapacityOverflow { limit: usize },
}

#[derive(Debug, Clone)]
enum Slot<V> {
    Empty,
    Tombstone,
    Occupied(u64, V),
}

#[derive(Debug, Clone)]
pub struct StateTable<V> {
    slots: Vec<Slot<V>>,
    occupied: usize,
    tombstones: usize,
    resize_count: u64,
    probe_count: Cell<u64>,
    max_capacity: usize,
}

impl<V> Default for StateTable<V> {
    fn default() -> Self {
        Self::new()
    }
}

enum Probe {
    Found(usize),
    /// Key absent; the slot where it would be inserted.
    Vacant(usize),
}

impl<V> StateTable<V> {
    pub fn new() -> Self {
        Self::with_max_capacity(MAX_CAPACITY)
    }

    /// Caps growth below the default 2^31 slots; used to exercise overflow.
    pub fn with_max_capacity(max_capacity: usize) -> Self {
        Self {
            slots: empty_slots(INITIAL_CAPACITY),
            occupied: 0,
            tombstones: 0,
            resize_count: 0,
            probe_count: Cell::new(0),
            max_capacity: max_capacity.clamp(INITIAL_CAPACITY, MAX_CAPACITY),
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.occupied
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    pub fn tombstones(&self) -> usize {
        self.tombstones
    }

    pub fn resize_count(&self) -> u64 {
        self.resize_count
    }

    /// Total slots inspected by all lookups, inserts and removes so far.
    pub fn probe_count(&self) -> u64 {
        self.probe_count.get()
    }

    /// Inserts `key` unless already present. Returns `false` (and leaves the
    /// stored value untouched) for a duplicate key.
    pub fn insert(&mut self, key: FlowKey, value: V) -> Result<bool, TableError> {
        if let Probe::Found(_) = self.probe(key.0) {
            return Ok(false);
        }
        if (self.occupied + self.tombstones + 1) * 2 > self.capacity() {
            self.grow()?;
        }
        let idx = match self.probe(key.0) {
            Probe::Vacant(idx) => idx,
            Probe::Found(_) => unreachable!("key checked absent above"),
        };
        if let Slot::Tombstone = self.slots[idx] {
            self.tombstones -= 1;
        }
        self.slots[idx] = Slot::Occupied(key.0, value);
        self.occupied += 1;
        Ok(true)
    }

    pub fn lookup(&self, key: FlowKey) -> Option<&V> {
        match self.probe(key.0) {
            Probe::Found(idx) => match &self.slots[idx] {
                Slot::Occupied(_, v) => Some(v),
                _ => None,
            },
            Probe::Vacant(_) => None,
        }
    }

    pub fn lookup_mut(&mut self, key: FlowKey) -> Option<&mut V> {
        match self.probe(key.0) {
            Probe::Found(idx) => match &mut self.slots[idx] {
                Slot::Occupied(_, v) => Some(v),
                _ => None,
            },
            Probe::Vacant(_) => None,
        }
    }

    pub fn remove(&mut self, key: FlowKey) -> bool {
        match self.probe(key.0) {
            Probe::Found(idx) => {
                self.slots[idx] = Slot::Tombstone;
                self.occupied -= 1;
                self.tombstones += 1;
                true
            }
            Probe::Vacant(_) => false,
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = FlowKey> + '_ {
        self.slots.iter().filter_map(|s| match s {
            Slot::Occupied(k, _) => Some(FlowKey(*k)),
            _ => None,
        })
    }

    fn probe(&self, key: u64) -> Probe {
        let mask = self.capacity() - 1;
        let mut idx = key as usize & mask;
        let mut first_tombstone = None;
        let mut probes = 0u64;
        let mut step = 0usize;
        let found = loop {
            probes += 1;
            match &self.slots[idx] {
                Slot::Occupied(k, _) if *k == key => break Probe::Found(idx),
                Slot::Occupied(..) => {}
                Slot::Tombstone => {
                    first_tombstone.get_or_insert(idx);
                }
                Slot::Empty => break Probe::Vacant(first_tombstone.unwrap_or(idx)),
            }
            step += 1;
            if step > mask {
                // Every slot visited; the load bound makes this unreachable for
                // the empty case, but a table full of tombstones can get here.
                break Probe::Vacant(first_tombstone.expect("table has no vacant slot"));
            }
            idx = (idx + step) & mask;
        };
        self.probe_count.set(self.probe_count.get() + probes);
        found
    }

    fn grow(&mut self) -> Result<(), TableError> {
        let new_cap = self.capacity() * 2;
        if new_cap > self.max_capacity {
            return Err(TableError::CapacityOverflow {
                limit: self.max_capacity,
            });
        }
        let old = std::mem::replace(&mut self.slots, empty_slots(new_cap));
        let mask = new_cap - 1;
        for slot in old {
            if let Slot::Occupied(k, v) = slot {
                let mut idx = k as usize & mask;
                let mut step = 0;
                while !matches!(self.slots[idx], Slot::Empty) {
                    step += 1;
                    idx = (idx + step) & mask;
                }
                self.slots[idx] = Slot::Occupied(k, v);
            }
        }
        self.tombstones = 0;
        self.resize_count += 1;
        Ok(())
    }
}

fn empty_slots<V>(n: usize) -> Vec<Slot<V>> {
    let mut v = Vec::with_capacity(n);
    v.resize_with(n, || Slot::Empty);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn k(x: u64) -> FlowKey {
        FlowKey(x)
    }

    /// Capacity the growth rule predicts after `n` distinct inserts, by direct
    /// simulation of the `(occupied + 1) > capacity / 2` trigger.
    fn simulate_growth(n: usize) -> (usize, u64) {
        let (mut cap, mut resizes) = (INITIAL_CAPACITY, 0);
        for occupied in 0..n {
            if (occupied + 1) * 2 > cap {
                cap *= 2;
                resizes += 1;
            }
        }
        (cap, resizes)
    }

    #[test]
    fn four_inserts_fit_in_initial_capacity() {
        let mut t = StateTable::new();
        for i in 0..4 {
            assert!(t.insert(k(i), i).unwrap());
        }
        assert_eq!((t.capacity(), t.len(), t.resize_count()), (8, 4, 0));
    }

    #[test]
    fn fifth_insert_doubles_first() {
        let mut t = StateTable::new();
        for i in 0..5 {
            t.insert(k(i), i).unwrap();
        }
        assert_eq!((t.capacity(), t.resize_count()), (16, 1));
        assert_eq!(simulate_growth(5), (16, 1));
    }

    #[test]
    fn thousand_inserts_end_at_2048() {
        let mut t = StateTable::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut n = 0;
        while n < 1000 {
            if t.insert(k(rng.gen()), ()).unwrap() {
                n += 1;
            }
        }
        assert_eq!(simulate_growth(1000), (2048, 8));
        assert_eq!((t.capacity(), t.resize_count()), (2048, 8));
    }

    #[test]
    fn lookup_on_empty_table() {
        let t: StateTable<u32> = StateTable::new();
        assert_eq!(t.lookup(k(42)), None);
    }

    #[test]
    fn read_your_write() {
        let mut t = StateTable::new();
        t.insert(k(7), "s").unwrap();
        assert_eq!(t.lookup(k(7)), Some(&"s"));
    }

    #[test]
    fn duplicate_insert_keeps_original() {
        let mut t = StateTable::new();
        assert!(t.insert(k(7), 1).unwrap());
        assert!(!t.insert(k(7), 2).unwrap());
        assert_eq!(t.lookup(k(7)), Some(&1));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn remove_semantics() {
        let mut t = StateTable::new();
        assert!(!t.remove(k(1)));
        t.insert(k(1), 10).unwrap();
        assert!(t.remove(k(1)));
        assert_eq!(t.lookup(k(1)), None);
        assert_eq!(t.tombstones(), 1);
        t.insert(k(1), 20).unwrap();
        assert_eq!(t.lookup(k(1)), Some(&20));
        assert_eq!(t.tombstones(), 0);
    }

    #[test]
    fn colliding_low_bits_still_resolve() {
        let mut t = StateTable::new();
        // All share the same initial slot in any capacity up to 2^32.
        let keys: Vec<u64> = (1..=40).map(|i| i << 32).collect();
        for &key in &keys {
            t.insert(k(key), key).unwrap();
        }
        for &key in &keys {
            assert_eq!(t.lookup(k(key)), Some(&key));
        }
    }

    #[test]
    fn overflow_is_reported() {
        let mut t = StateTable::with_max_capacity(16);
        for i in 0..8 {
            t.insert(k(i), ()).unwrap();
        }
        assert_eq!(
            t.insert(k(100), ()),
            Err(TableError::CapacityOverflow { limit: 16 })
        );
        assert_eq!(t.len(), 8);
    }

    #[test]
    fn tombstones_purged_by_resize() {
        let mut t = StateTable::new();
        for i in 0..4 {
            t.insert(k(i), ()).unwrap();
        }
        t.remove(k(0));
        t.remove(k(1));
        assert_eq!(t.tombstones(), 2);
        t.insert(k(10), ()).unwrap();
        assert_eq!(t.capacity(), 16);
        assert_eq!(t.tombstones(), 0);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn mean_probes_per_lookup_at_half_load() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut t = StateTable::new();
        let keys: Vec<u64> = (0..100_000).map(|_| rng.gen()).collect();
        for &key in &keys {
            t.insert(k(key), ()).unwrap();
        }
        let before = t.probe_count();
        for &key in &keys {
            assert!(t.lookup(k(key)).is_some());
        }
        let mean = (t.probe_count() - before) as f64 / keys.len() as f64;
        assert!(mean <= 2.0, "mean probes {mean}");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(u64, u32),
        Lookup(u64),
        Remove(u64),
    }

    fn arb_op() -> impl Strategy<Value = Op> {
        // Small key universe forces duplicates, removals of present keys and
        // tombstone reuse.
        prop_oneof![
            (0u64..64, any::<u32>()).prop_map(|(k, v)| Op::Insert(k.wrapping_mul(0x9e37_79b9_7f4a_7c15), v)),
            (0u64..64).prop_map(|k| Op::Lookup(k.wrapping_mul(0x9e37_79b9_7f4a_7c15))),
            (0u64..64).prop_map(|k| Op::Remove(k.wrapping_mul(0x9e37_79b9_7f4a_7c15))),
        ]
    }

    proptest! {
        #[test]
        fn matches_association_list(ops in proptest::collection::vec(arb_op(), 0..2000)) {
            let mut t = StateTable::new();
            let mut oracle: Vec<(u64, u32)> = Vec::new();
            for op in ops {
                match op {
                    Op::Insert(key, v) => {
                        let present = oracle.iter().any(|(k2, _)| *k2 == key);
                        if !present {
                            oracle.push((key, v));
                        }
                        prop_assert_eq!(t.insert(k(key), v).unwrap(), !present);
                    }
                    Op::Lookup(key) => {
                        let want = oracle.iter().find(|(k2, _)| *k2 == key).map(|(_, v)| v);
                        prop_assert_eq!(t.lookup(k(key)), want);
                    }
                    Op::Remove(key) => {
                        let pos = oracle.iter().position(|(k2, _)| *k2 == key);
                        if let Some(p) = pos {
                            oracle.remove(p);
                        }
                        prop_assert_eq!(t.remove(k(key)), pos.is_some());
                    }
                }
                prop_assert!((t.len() + t.tombstones()) * 2 <= t.capacity());
                prop_assert_eq!(t.capacity(), INITIAL_CAPACITY << t.resize_count());
                prop_assert_eq!(t.len(), oracle.len());
            }
        }
    }
}
