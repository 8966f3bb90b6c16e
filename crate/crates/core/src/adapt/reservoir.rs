use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default number of entries a leaf reservoir holds.
pub const RESERVOIR_CAPACITY: usize = 1024;

/// One observed surface point: world position and its colour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirEntry {
    pub world_pos: [f32; 3],
    pub colour: [u8; 3],
}

impl ReservoirEntry {
    pub fn new(world_pos: &Vector3<f64>, colour: [u8; 3]) -> Self {
        debug_assert!(world_pos.iter().all(|v| v.is_finite()));
        Self {
            world_pos: [world_pos.x as f32, world_pos.y as f32, world_pos.z as f32],
            colour,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(
            self.world_pos[0] as f64,
            self.world_pos[1] as f64,
            self.world_pos[2] as f64,
        )
    }
}

/// Bounded uniform sample of every entry ever offered to a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafReservoir {
    capacity: usize,
    seen: u64,
    entries: Vec<ReservoirEntry>,
}

impl LeafReservoir {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "reservoir capacity must be at least 1");
        Self {
            capacity,
            seen: 0,
            entries: Vec::new(),
        }
    }

    pub(crate) fn from_parts(capacity: usize, seen: u64, entries: Vec<ReservoirEntry>) -> Self {
        debug_assert_eq!(entries.len() as u64, seen.min(capacity as u64));
        Self { capacity, seen, entries }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of entries ever offered.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[ReservoirEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Algorithm R: the first `capacity` entries are kept in order; after that
/// the n-th entry overwrites a uniformly chosen slot with probability
/// `capacity / n`.
pub fn reservoir_insert(reservoir: &mut LeafReservoir, entry: ReservoirEntry, rng: &mut impl Rng) {
    reservoir.seen += 1;
    if reservoir.entries.len() < reservoir.capacity {
        reservoir.entries.push(entry);
        return;
    }
    let j = rng.random_range(0..reservoir.seen);
    if (j as usize) < reservoir.capacity {
        reservoir.entries[j as usize] = entry;
    }
}
