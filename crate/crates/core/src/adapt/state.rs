use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::{cluster_reservoir, ClusterConfig, LeafPrediction, ModalCluster};
use super::reservoir::{reservoir_insert, LeafReservoir, ReservoirEntry, RESERVOIR_CAPACITY};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::{compute_feature_vectors, sample_grid_pixels};
use crate::forest::RegressionForest;
use crate::frame::RgbdFrame;
use crate::geom::{back_project, RigidTransform};

/// Number of leaves re-clustered per integrated frame.
pub const DEFAULT_REFRESH_BUDGET: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub reservoir_capacity: usize,
    pub clustering: ClusterConfig,
    pub refresh_budget: usize,
    /// Seeds the reservoir replacement generator.
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            reservoir_capacity: RESERVOIR_CAPACITY,
            clustering: ClusterConfig::default(),
            refresh_budget: DEFAULT_REFRESH_BUDGET,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.clustering;
        if self.reservoir_capacity == 0 || self.refresh_budget == 0 {
            return Err(Error::InvalidConfig("reservoir_capacity and refresh_budget must be ≥ 1".into()));
        }
        if !(c.bandwidth > 0.0 && c.link_radius > 0.0 && c.covariance_floor > 0.0) || c.max_modes == 0 {
            return Err(Error::InvalidConfig("clustering parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Per-leaf reservoirs and modes for one forest, plus the round-robin
/// refresh schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    config: AdaptConfig,
    reservoirs: Vec<LeafReservoir>,
    predictions: Vec<LeafPrediction>,
    cursor: usize,
    rng: ChaCha8Rng,
    refresh_calls: u64,
    /// Value of `refresh_calls` when each leaf was last re-clustered
    /// (0 = never).
    last_refreshed: Vec<u64>,
}

impl AdaptState {
    pub fn new(leaf_count: usize, config: AdaptConfig) -> Self {
        Self {
            config,
            reservoirs: vec![LeafReservoir::new(config.reservoir_capacity.max(1)); leaf_count],
            predictions: vec![LeafPrediction::default(); leaf_count],
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            refresh_calls: 0,
            last_refreshed: vec![0; leaf_count],
        }
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.config
    }

    pub fn leaf_count(&self) -> usize {
        self.reservoirs.len()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn reservoir(&self, leaf: u32) -> &LeafReservoir {
        &self.reservoirs[leaf as usize]
    }

    pub fn prediction(&self, leaf: u32) -> &LeafPrediction {
        &self.predictions[leaf as usize]
    }

    pub fn refresh_calls(&self) -> u64 {
        self.refresh_calls
    }

    pub fn last_refreshed(&self) -> &[u64] {
        &self.last_refreshed
    }

    /// Total number of modes over all leaves.
    pub fn mode_count(&self) -> usize {
        self.predictions.iter().map(|p| p.modes.len()).sum()
    }

    pub fn insert(&mut self, leaf: u32, entry: ReservoirEntry) {
        reservoir_insert(&mut self.reservoirs[leaf as usize], entry, &mut self.rng);
    }

    /// Re-clusters the leaves `[cursor, cursor + budget)` (wrapping) and
    /// advances the cursor. A budget at or above the leaf count refreshes
    /// every leaf exactly once. Returns the refreshed leaf ids in order.
    pub fn refresh_leaves(&mut self, budget: usize) -> Vec<u32> {
        assert!(budget >= 1, "refresh budget must be at least 1");
        let n = self.leaf_count();
        if n == 0 {
            return Vec::new();
        }
        let ids: Vec<u32> = (0..budget.min(n)).map(|k| ((self.cursor + k) % n) as u32).collect();
        let cfg = self.config.clustering;
        let fresh: Vec<LeafPrediction> = ids
            .par_iter()
            .map(|&l| cluster_reservoir(&self.reservoirs[l as usize], &cfg))
            .collect();
        self.refresh_calls += 1;
        for (&l, p) in ids.iter().zip(fresh) {
            self.predictions[l as usize] = p;
            self.last_refreshed[l as usize] = self.refresh_calls;
        }
        self.cursor = (self.cursor + budget) % n;
        ids
    }

    /// Re-clusters every leaf without moving the cursor.
    pub fn refresh_all(&mut self) {
        let cfg = self.config.clustering;
        self.predictions = self.reservoirs.par_iter().map(|r| cluster_reservoir(r, &cfg)).collect();
    }

    pub(crate) fn encode<W: Write>(&self, w: &mut Writer<W>) -> Result<()> {
        let c = &self.config;
        w.len(c.reservoir_capacity)?;
        w.f64(c.clustering.bandwidth)?;
        w.f64(c.clustering.link_radius)?;
        w.f64(c.clustering.covariance_floor)?;
        w.len(c.clustering.min_cluster_size)?;
        w.len(c.clustering.max_modes)?;
        w.len(c.refresh_budget)?;
        w.u64(c.seed)?;

        w.len(self.cursor)?;
        w.bytes(&self.rng.get_seed())?;
        w.u64(self.rng.get_stream())?;
        w.u128(self.rng.get_word_pos())?;
        w.u64(self.refresh_calls)?;

        w.len(self.leaf_count())?;
        for ((res, pred), &stamp) in self.reservoirs.iter().zip(&self.predictions).zip(&self.last_refreshed) {
            w.u64(stamp)?;
            w.u64(res.seen())?;
            w.len(res.len())?;
            for e in res.entries() {
                for v in e.world_pos {
                    w.f32(v)?;
                }
                w.bytes(&e.colour)?;
            }
            w.len(pred.modes.len())?;
            for m in &pred.modes {
                for v in m.position.iter() {
                    w.f64(*v)?;
                }
                w.bytes(&m.colour)?;
                for (i, j) in UPPER {
                    w.f64(m.covariance[(i, j)])?;
                }
                w.u32(m.size)?;
            }
        }
        Ok(())
    }

    pub(crate) fn decode<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        const LIMIT: usize = 1 << 24;
        let reservoir_capacity = r.len(LIMIT)?;
        let clustering = ClusterConfig {
            bandwidth: r.f64()?,
            link_radius: r.f64()?,
            covariance_floor: r.f64()?,
            min_cluster_size: r.len(LIMIT)?,
            max_modes: r.len(LIMIT)?,
        };
        let config = AdaptConfig {
            reservoir_capacity,
            clustering,
            refresh_budget: r.len(LIMIT)?,
            seed: r.u64()?,
        };
        config.validate().map_err(|e| Error::Format(e.to_string()))?;

        let cursor = r.len(LIMIT)?;
        let mut seed = [0u8; 32];
        r.fill(&mut seed)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(r.u128()?);
        let refresh_calls = r.u64()?;

        let leaf_count = r.len(LIMIT)?;
        if leaf_count > 0 && cursor >= leaf_count {
            return Err(Error::Format("refresh cursor out of range".into()));
        }
        let mut reservoirs = Vec::with_capacity(leaf_count);
        let mut predictions = Vec::with_capacity(leaf_count);
        let mut last_refreshed = Vec::with_capacity(leaf_count);
        for _ in 0..leaf_count {
            last_refreshed.push(r.u64()?);
            let seen = r.u64()?;
            let len = r.len(reservoir_capacity)?;
            if len as u64 != seen.min(reservoir_capacity as u64) {
                return Err(Error::Format("reservoir length disagrees with its count".into()));
            }
            let mut entries = Vec::with_capacity(len);
            for _ in 0..len {
                let world_pos = [r.f32()?, r.f32()?, r.f32()?];
                let mut colour = [0u8; 3];
                r.fill(&mut colour)?;
                entries.push(ReservoirEntry { world_pos, colour });
            }
            reservoirs.push(LeafReservoir::from_parts(reservoir_capacity, seen, entries));

            let count = r.len(config.clustering.max_modes)?;
            let mut modes = Vec::with_capacity(count);
            for _ in 0..count {
                let position = nalgebra::Vector3::new(r.f64()?, r.f64()?, r.f64()?);
                let mut colour = [0u8; 3];
                r.fill(&mut colour)?;
                let mut cov = nalgebra::Matrix3::zeros();
                for (i, j) in UPPER {
                    let v = r.f64()?;
                    cov[(i, j)] = v;
                    cov[(j, i)] = v;
                }
                let size = r.u32()?;
                modes.push(
                    ModalCluster::new(position, colour, cov, size)
                        .ok_or_else(|| Error::Format("mode covariance is not positive definite".into()))?,
                );
            }
            predictions.push(LeafPrediction { modes });
        }
        Ok(Self {
            config,
            reservoirs,
            predictions,
            cursor,
            rng,
            refresh_calls,
            last_refreshed,
        })
    }
}

const UPPER: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Feeds one posed frame into the reservoirs and refreshes the next batch of
/// leaves. Every valid grid pixel is inserted into the reservoir of the
/// leaf it reaches in each tree. Returns the number of insertions.
///
/// Frames flagged unreliable leave the state untouched.
pub fn integrate_frame(
    state: &mut AdaptState,
    forest: &RegressionForest,
    frame: &RgbdFrame,
    pose: &RigidTransform,
    tracking_reliable: bool,
) -> usize {
    if !tracking_reliable {
        return 0;
    }
    assert_eq!(state.leaf_count(), forest.leaf_count(), "state was built for another forest");
    let pixels = sample_grid_pixels(frame);
    let features = compute_feature_vectors(frame, &pixels, forest.bank());
    let mut leaves = Vec::with_capacity(forest.tree_count());
    let mut inserted = 0;
    for (p, f) in pixels.iter().zip(&features) {
        let Ok(cam) = back_project(*p, &frame.depth, &frame.intrinsics) else {
            continue;
        };
        let entry = ReservoirEntry::new(&pose.transform_point(&cam), frame.colour.at(p.x, p.y));
        forest.find_leaves_into(f, &mut leaves);
        for &leaf in &leaves {
            state.insert(leaf, entry);
            inserted += 1;
        }
    }
    let budget = state.config.refresh_budget;
    state.refresh_leaves(budget);
    inserted
}
