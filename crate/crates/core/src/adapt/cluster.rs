//! Really Quick Shift over the 3D positions of a leaf reservoir.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::reservoir::{LeafReservoir, ReservoirEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Density kernel radius σ in metres.
    pub bandwidth: f64,
    /// Maximum link length τ in metres.
    pub link_radius: f64,
    /// Added to every covariance as `floor · I`, in m².
    pub covariance_floor: f64,
    /// Smaller clusters are dropped unless nothing larger exists.
    pub min_cluster_size: usize,
    pub max_modes: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.10,
            link_radius: 0.20,
            covariance_floor: 1e-6,
            min_cluster_size: 2,
            max_modes: 10,
        }
    }
}

/// Gaussian summary of one cluster of reservoir entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalCluster {
    pub position: Vector3<f64>,
    pub colour: [u8; 3],
    pub covariance: Matrix3<f64>,
    /// `L⁻¹` for the Cholesky factor `Σ = L·Lᵀ`, so that
    /// `‖L⁻¹ r‖² = rᵀ Σ⁻¹ r`.
    pub inv_factor: Matrix3<f64>,
    pub size: u32,
}

impl ModalCluster {
    /// Builds a mode from its moments. Returns `None` if `covariance` is not
    /// positive definite.
    pub fn new(position: Vector3<f64>, colour: [u8; 3], covariance: Matrix3<f64>, size: u32) -> Option<Self> {
        let chol = covariance.cholesky()?;
        let inv_factor = chol.l().try_inverse()?;
        Some(Self {
            position,
            colour,
            covariance,
            inv_factor,
            size,
        })
    }

    /// `‖Σ^(-1/2) (x − μ)‖`.
    #[inline]
    pub fn mahalanobis(&self, x: &Vector3<f64>) -> f64 {
        (self.inv_factor * (x - self.position)).norm()
    }
}

/// The modes stored in one leaf, largest cluster first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LeafPrediction {
    pub modes: Vec<ModalCluster>,
}

impl LeafPrediction {
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

type Cell = (i64, i64, i64);

fn cell_of(p: &[f64; 3], size: f64) -> Cell {
    (
        (p[0] / size).floor() as i64,
        (p[1] / size).floor() as i64,
        (p[2] / size).floor() as i64,
    )
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Spatial hash with cells at least as wide as the largest query radius, so
/// every neighbour lies in the 27 surrounding cells.
struct Grid {
    size: f64,
    cells: HashMap<Cell, Vec<u32>>,
}

impl Grid {
    fn new(points: &[[f64; 3]], size: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, size)).or_default().push(i as u32);
        }
        Self { size, cells }
    }

    fn for_each_near(&self, p: &[f64; 3], mut f: impl FnMut(u32)) {
        let (cx, cy, cz) = cell_of(p, self.size);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(members) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        members.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }
}

/// Quick-shift parent of every point (`None` for roots).
///
/// Density is the number of points within `bandwidth` (self included).
/// Point `j` ranks above `i` when it is denser, or equally dense with a
/// lower index. Each point links to its nearest higher-ranked point within
/// `link_radius`, ties going to the lower index.
pub(crate) fn quick_shift_parents(points: &[[f64; 3]], bandwidth: f64, link_radius: f64) -> Vec<Option<u32>> {
    let n = points.len();
    let grid = Grid::new(points, bandwidth.max(link_radius).max(f64::MIN_POSITIVE));
    let bw2 = bandwidth * bandwidth;
    let link2 = link_radius * link_radius;

    let mut density = vec![0u32; n];
    for (i, p) in points.iter().enumerate() {
        grid.for_each_near(p, |j| {
            if dist2(p, &points[j as usize]) <= bw2 {
                density[i] += 1;
            }
        });
    }
    let outranks = |j: usize, i: usize| density[j] > density[i] || (density[j] == density[i] && j < i);

    let mut parents = vec![None; n];
    for (i, p) in points.iter().enumerate() {
        let mut best: Option<(f64, u32)> = None;
        grid.for_each_near(p, |j| {
            let ju = j as usize;
            if ju == i || !outranks(ju, i) {
                return;
            }
            let d = dist2(p, &points[ju]);
            if d > link2 {
                return;
            }
            let better = match best {
                None => true,
                Some((bd, bj)) => d < bd || (d == bd && j < bj),
            };
            if better {
                best = Some((d, j));
            }
        });
        parents[i] = best.map(|(_, j)| j);
    }
    parents
}

/// Groups point indices into clusters (trees of the link forest). Members
/// are listed in increasing index order; clusters are ordered by their
/// smallest member.
pub(crate) fn link_forest_clusters(parents: &[Option<u32>]) -> Vec<Vec<u32>> {
    let n = parents.len();
    let mut root = vec![u32::MAX; n];
    for i in 0..n {
        // Parents always outrank their children, so the chain terminates.
        let mut r = i;
        let mut path = Vec::new();
        while let Some(p) = parents[r] {
            if root[r] != u32::MAX {
                break;
            }
            path.push(r);
            r = p as usize;
        }
        let top = if root[r] != u32::MAX { root[r] } else { r as u32 };
        root[r] = top;
        for q in path {
            root[q] = top;
        }
    }
    let mut slot: HashMap<u32, usize> = HashMap::new();
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    for (i, &r) in root.iter().enumerate() {
        let k = *slot.entry(r).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[k].push(i as u32);
    }
    clusters
}

fn summarise(entries: &[ReservoirEntry], points: &[[f64; 3]], members: &[u32], floor: f64) -> ModalCluster {
    let n = members.len() as f64;
    let mut mean = Vector3::zeros();
    let mut colour = [0f64; 3];
    for &m in members {
        let p = &points[m as usize];
        mean += Vector3::new(p[0], p[1], p[2]);
        for (c, v) in colour.iter_mut().zip(entries[m as usize].colour) {
            *c += v as f64;
        }
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for &m in members {
        let p = &points[m as usize];
        let d = Vector3::new(p[0], p[1], p[2]) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    cov += Matrix3::identity() * floor;
    let colour = colour.map(|c| (c / n).round().clamp(0.0, 255.0) as u8);
    ModalCluster::new(mean, colour, cov, members.len() as u32)
        .expect("covariance with a positive floor is positive definite")
}

/// Clusters a reservoir into at most `max_modes` modes, largest first.
///
/// Clusters smaller than `min_cluster_size` are only emitted when no
/// cluster reaches that size. Equal-sized clusters are ordered by their
/// smallest entry index.
pub fn cluster_reservoir(reservoir: &LeafReservoir, config: &ClusterConfig) -> LeafPrediction {
    cluster_entries(reservoir.entries(), config)
}

pub(crate) fn cluster_entries(entries: &[ReservoirEntry], config: &ClusterConfig) -> LeafPrediction {
    if entries.is_empty() {
        return LeafPrediction::default();
    }
    let points: Vec<[f64; 3]> = entries.iter().map(|e| e.world_pos.map(|v| v as f64)).collect();
    let parents = quick_shift_parents(&points, config.bandwidth, config.link_radius);
    let mut clusters = link_forest_clusters(&parents);

    if clusters.iter().any(|c| c.len() >= config.min_cluster_size) {
        clusters.retain(|c| c.len() >= config.min_cluster_size);
    }
    // Stable sort keeps the smallest-member order among equal sizes.
    clusters.sort_by_key(|c| std::cmp::Reverse(c.len()));
    clusters.truncate(config.max_modes);

    LeafPrediction {
        modes: clusters
            .iter()
            .map(|c| summarise(entries, &points, c, config.covariance_floor))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn entry(p: [f64; 3]) -> ReservoirEntry {
        ReservoirEntry::new(&Vector3::new(p[0], p[1], p[2]), [10, 20, 30])
    }

    fn blob(rng: &mut ChaCha8Rng, centre: [f64; 3], n: usize, sd: f64) -> Vec<ReservoirEntry> {
        let noise = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| entry([0, 1, 2].map(|k| centre[k] + noise.sample(rng))))
            .collect()
    }

    fn mean_of(entries: &[ReservoirEntry]) -> Vector3<f64> {
        entries.iter().map(|e| e.position()).sum::<Vector3<f64>>() / entries.len() as f64
    }

    #[test]
    fn empty_reservoir_gives_no_modes() {
        assert!(cluster_entries(&[], &ClusterConfig::default()).is_empty());
    }

    #[test]
    fn single_entry_is_one_floored_mode() {
        let cfg = ClusterConfig::default();
        let pred = cluster_entries(&[entry([1.0, 2.0, 3.0])], &cfg);
        assert_eq!(pred.modes.len(), 1);
        let m = &pred.modes[0];
        assert_eq!(m.position, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(m.covariance, Matrix3::identity() * 1e-6);
        assert_eq!(m.size, 1);
        assert_eq!(m.colour, [10, 20, 30]);
    }

    #[test]
    fn two_blobs_give_two_modes_at_blob_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = blob(&mut rng, [0.0, 0.0, 2.0], 50, 0.01);
        let b = blob(&mut rng, [1.0, 0.0, 2.0], 50, 0.01);
        let all: Vec<_> = a.iter().chain(&b).copied().collect();
        let cfg = ClusterConfig {
            bandwidth: 0.1,
            link_radius: 0.1,
            ..Default::default()
        };
        let pred = cluster_entries(&all, &cfg);
        assert_eq!(pred.modes.len(), 2);
        let (ma, mb) = (mean_of(&a), mean_of(&b));
        let found: Vec<_> = pred.modes.iter().map(|m| m.position).collect();
        assert!(found.iter().any(|p| (p - ma).amax() < 1e-9));
        assert!(found.iter().any(|p| (p - mb).amax() < 1e-9));
    }

    #[test]
    fn twelve_singletons_truncate_to_ten() {
        let points: Vec<_> = (0..12).map(|i| entry([i as f64 * 2.0, 0.0, 0.0])).collect();
        let pred = cluster_entries(&points, &ClusterConfig::default());
        assert_eq!(pred.modes.len(), 10);
        // Equal sizes keep entry order.
        for (i, m) in pred.modes.iter().enumerate() {
            assert_eq!(m.position.x, i as f64 * 2.0);
        }
    }

    #[test]
    fn singletons_dropped_when_a_larger_cluster_exists() {
        let mut points = vec![entry([0.0, 0.0, 0.0]), entry([0.01, 0.0, 0.0])];
        points.push(entry([5.0, 5.0, 5.0]));
        let pred = cluster_entries(&points, &ClusterConfig::default());
        assert_eq!(pred.modes.len(), 1);
        assert_eq!(pred.modes[0].size, 2);
    }

    #[test]
    fn modes_sorted_by_decreasing_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut all = blob(&mut rng, [0.0, 0.0, 0.0], 10, 0.01);
        all.extend(blob(&mut rng, [2.0, 0.0, 0.0], 40, 0.01));
        all.extend(blob(&mut rng, [4.0, 0.0, 0.0], 25, 0.01));
        let sizes: Vec<_> = cluster_entries(&all, &ClusterConfig::default())
            .modes
            .iter()
            .map(|m| m.size)
            .collect();
        assert_eq!(sizes, vec![40, 25, 10]);
    }

    #[test]
    fn colour_centroid_is_rounded_mean() {
        let mut a = entry([0.0, 0.0, 0.0]);
        a.colour = [0, 255, 10];
        let mut b = entry([0.01, 0.0, 0.0]);
        b.colour = [1, 254, 13];
        let pred = cluster_entries(&[a, b], &ClusterConfig::default());
        // 0.5 rounds away from zero, 11.5 likewise.
        assert_eq!(pred.modes[0].colour, [1, 255, 12]);
    }

    #[test]
    fn links_go_to_the_densest_nearby_point() {
        // Point 1 sits between 0 and a dense group; it must link into the group.
        let points = [[0.0, 0.0, 0.0], [0.16, 0.0, 0.0], [0.3, 0.0, 0.0], [0.31, 0.0, 0.0], [0.32, 0.0, 0.0]];
        let parents = quick_shift_parents(&points, 0.1, 0.2);
        let density = [1, 1, 3, 3, 3];
        for (i, p) in parents.iter().enumerate() {
            if let Some(j) = p {
                let j = *j as usize;
                assert!(density[j] > density[i] || (density[j] == density[i] && j < i));
            }
        }
        assert_eq!(parents[2], None);
        assert_eq!(parents[1], Some(2));
    }

    #[test]
    fn grid_search_matches_brute_force_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(1..300);
            let points: Vec<[f64; 3]> = (0..n)
                .map(|_| [0, 1, 2].map(|_| rng.random_range(-0.7..0.7)))
                .collect();
            let fast = quick_shift_parents(&points, 0.1, 0.2);
            let density: Vec<usize> = points
                .iter()
                .map(|p| points.iter().filter(|q| dist2(p, q) <= 0.01).count())
                .collect();
            for i in 0..n {
                let mut best: Option<(f64, usize)> = None;
                for j in 0..n {
                    let higher = density[j] > density[i] || (density[j] == density[i] && j < i);
                    let d = dist2(&points[i], &points[j]);
                    if j != i && higher && d <= 0.04 && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, j));
                    }
                }
                assert_eq!(fast[i], best.map(|(_, j)| j as u32));
            }
        }
    }

    #[test]
    fn shuffling_well_separated_blobs_keeps_the_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut all = Vec::new();
        for (k, n) in [30, 20, 12].into_iter().enumerate() {
            all.extend(blob(&mut rng, [k as f64, 0.5, 1.0], n, 0.01));
        }
        let summary = |entries: &[ReservoirEntry]| {
            let mut v: Vec<_> = cluster_entries(entries, &ClusterConfig::default())
                .modes
                .iter()
                .map(|m| (m.size, m.position))
                .collect();
            v.sort_by(|a, b| a.1.x.total_cmp(&b.1.x));
            v
        };
        let reference = summary(&all);
        for _ in 0..10 {
            all.shuffle(&mut rng);
            let got = summary(&all);
            assert_eq!(got.len(), reference.len());
            for ((sa, pa), (sb, pb)) in got.iter().zip(&reference) {
                assert_eq!(sa, sb);
                assert!((pa - pb).amax() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn every_mode_covariance_is_spd(
            raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..200),
            flat in any::<bool>(),
        ) {
            // `flat` puts everything on a plane to stress the floor.
            let entries: Vec<_> = raw
                .iter()
                .map(|&(x, y, z)| entry([x * 0.3, y * 0.3, if flat { 0.0 } else { z * 0.3 }]))
                .collect();
            let pred = cluster_entries(&entries, &ClusterConfig::default());
            prop_assert!(!pred.modes.is_empty() && pred.modes.len() <= 10);
            for m in &pred.modes {
                prop_assert!(m.covariance.cholesky().is_some());
                prop_assert_eq!(m.covariance, m.covariance.transpose());
                let eig = m.covariance.symmetric_eigenvalues();
                prop_assert!(eig.min() >= 1e-6 * (1.0 - 1e-9));
            }
        }
    }
}
