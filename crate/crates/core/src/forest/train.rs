use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::variance::SpatialStats;
use super::{RegressionForest, SplitParams, Tree, TreeNode, MAX_TREE_DEPTH};
use crate::adapt::{AdaptConfig, AdaptState, ReservoirEntry};
use crate::error::{Error, Result};
use crate::features::{
    compute_feature_vectors, generate_feature_bank, FeatureBank, FeatureVector, OffsetRange, FEATURE_COUNT,
};
use crate::frame::RgbdFrame;
use crate::geom::{back_project, Pixel};

/// A feature vector labelled with the world position and colour of the
/// surface point it was computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub feature: FeatureVector,
    pub world_pos: Vector3<f64>,
    pub colour: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub tree_count: usize,
    pub max_depth: usize,
    /// Candidate `(φ, τ)` pairs drawn per node.
    pub candidate_count: usize,
    /// Fraction of the examples each tree trains on, drawn without
    /// replacement.
    pub subsample_fraction: f64,
    /// Upper bound on examples drawn from each frame.
    pub examples_per_frame: usize,
    /// Nodes holding fewer examples become leaves.
    pub min_examples_to_split: usize,
    pub offset_range: OffsetRange,
    /// Fill the leaves with modes clustered from the training examples.
    pub populate_leaves: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            tree_count: 5,
            max_depth: MAX_TREE_DEPTH,
            candidate_count: 512,
            subsample_fraction: 0.5,
            examples_per_frame: 5000,
            min_examples_to_split: 2,
            offset_range: OffsetRange::default(),
            populate_leaves: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.tree_count == 0 {
            return bad("tree_count must be at least 1");
        }
        if self.max_depth > MAX_TREE_DEPTH {
            return bad("max_depth exceeds 15");
        }
        if self.candidate_count == 0 {
            return bad("candidate_count must be at least 1");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad("subsample_fraction must lie in (0, 1]");
        }
        if self.examples_per_frame == 0 {
            return bad("examples_per_frame must be at least 1");
        }
        Ok(())
    }
}

/// Draws up to `per_frame` valid pixels uniformly from each posed frame.
pub fn collect_training_examples(
    frames: &[RgbdFrame],
    bank: &FeatureBank,
    per_frame: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for frame in frames {
        let pose = frame.gt_pose.ok_or_else(|| Error::Frame {
            index: frame.index,
            message: "training frame has no pose".into(),
        })?;
        let valid: Vec<Pixel> = (0..frame.height())
            .flat_map(|y| (0..frame.width()).map(move |x| Pixel::new(x, y)))
            .filter(|p| frame.depth.is_valid(p.x, p.y))
            .collect();
        let k = per_frame.min(valid.len());
        let mut chosen: Vec<Pixel> = sample(rng, valid.len(), k).into_iter().map(|i| valid[i]).collect();
        chosen.sort();
        let features = compute_feature_vectors(frame, &chosen, bank);
        for (p, feature) in chosen.into_iter().zip(features) {
            let cam = back_project(p, &frame.depth, &frame.intrinsics)?;
            out.push(TrainingExample {
                feature,
                world_pos: pose.transform_point(&cam),
                colour: frame.colour.at(p.x, p.y),
            });
        }
    }
    Ok(out)
}

/// Trains a forest on posed frames. Deterministic for a given seed.
pub fn train_forest(sequence: &[RgbdFrame], config: &TrainingConfig, seed: u64) -> Result<RegressionForest> {
    config.validate()?;
    if sequence.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = generate_feature_bank(rng.next_u64(), config.offset_range)?;
    let examples = collect_training_examples(sequence, &bank, config.examples_per_frame, &mut rng)?;
    train_forest_from_examples(&examples, bank, config, rng.next_u64())
}

pub fn train_forest_from_examples(
    examples: &[TrainingExample],
    bank: FeatureBank,
    config: &TrainingConfig,
    seed: u64,
) -> Result<RegressionForest> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let positions: Vec<[f64; 3]> = examples.iter().map(|e| [e.world_pos.x, e.world_pos.y, e.world_pos.z]).collect();
    let grown: Vec<GrownTree> = (0..config.tree_count)
        .into_par_iter()
        .map(|t| grow_tree(examples, &positions, config, seed, t))
        .collect();

    let mut trees = Vec::with_capacity(grown.len());
    let mut offset = 0u32;
    for g in grown {
        let mut nodes = g.nodes;
        for n in nodes.iter_mut() {
            if let TreeNode::Leaf { leaf_id } = n {
                *leaf_id += offset;
            }
        }
        offset += g.leaf_members.len() as u32;
        trees.push(Tree::from_nodes(nodes)?);
    }
    let forest = RegressionForest::new(trees, bank)?;
    if !config.populate_leaves {
        return Ok(forest);
    }

    let mut state = AdaptState::new(
        forest.leaf_count(),
        AdaptConfig {
            seed,
            ..AdaptConfig::default()
        },
    );
    let mut leaves = Vec::with_capacity(forest.tree_count());
    for e in examples {
        forest.find_leaves_into(&e.feature, &mut leaves);
        let entry = ReservoirEntry::new(&e.world_pos, e.colour);
        for &leaf in &leaves {
            state.insert(leaf, entry);
        }
    }
    state.refresh_all();
    forest.with_leaf_state(state)
}

pub(crate) struct GrownTree {
    pub nodes: Vec<TreeNode>,
    /// Example indices reaching each tree-local leaf, by local leaf id.
    pub leaf_members: Vec<Vec<u32>>,
    /// Gain of the selected split at each branch, in node order.
    #[cfg_attr(not(test), allow(dead_code))]
    pub branch_gains: Vec<f64>,
}

pub(crate) fn grow_tree(
    examples: &[TrainingExample],
    positions: &[[f64; 3]],
    config: &TrainingConfig,
    seed: u64,
    tree_index: usize,
) -> GrownTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index as u64 + 1);
    let n = examples.len();
    let k = ((n as f64 * config.subsample_fraction).round() as usize).clamp(1, n);
    let mut subset: Vec<u32> = sample(&mut rng, n, k).into_iter().map(|i| i as u32).collect();
    subset.sort_unstable();

    let mut nodes = vec![TreeNode::Leaf { leaf_id: 0 }];
    let mut leaf_members = Vec::new();
    let mut branch_gains = Vec::new();
    let mut queue = VecDeque::from([(0usize, 0usize, subset)]);
    let mut scratch = SplitScratch::default();

    while let Some((node, depth, members)) = queue.pop_front() {
        let split = if depth < config.max_depth && members.len() >= config.min_examples_to_split.max(2) {
            best_split(examples, positions, &members, config.candidate_count, &mut rng, &mut scratch)
        } else {
            None
        };
        match split {
            Some((split, gain)) => {
                let (right, left): (Vec<u32>, Vec<u32>) = members
                    .iter()
                    .partition(|&&i| split.goes_right(&examples[i as usize].feature));
                let l = nodes.len() as u32;
                nodes.push(TreeNode::Leaf { leaf_id: 0 });
                nodes.push(TreeNode::Leaf { leaf_id: 0 });
                nodes[node] = TreeNode::Branch { split, left: l, right: l + 1 };
                branch_gains.push(gain);
                queue.push_back((l as usize, depth + 1, left));
                queue.push_back((l as usize + 1, depth + 1, right));
            }
            None => {
                nodes[node] = TreeNode::Leaf { leaf_id: u32::MAX };
                leaf_members.push((node, members));
            }
        }
    }

    // Breadth-first processing pops nodes in index order, so leaves are
    // numbered in node order.
    leaf_members.sort_by_key(|(node, _)| *node);
    for (local, (node, _)) in leaf_members.iter().enumerate() {
        nodes[*node] = TreeNode::Leaf { leaf_id: local as u32 };
    }
    GrownTree {
        nodes,
        leaf_members: leaf_members.into_iter().map(|(_, m)| m).collect(),
        branch_gains,
    }
}

/// Gains at or below this are rounding noise (the child weights need not
/// sum to exactly 1 in floating point) and count as no gain.
const MIN_GAIN: f64 = 1e-9;

#[derive(Default)]
struct SplitScratch {
    values: Vec<f32>,
    points: Vec<[f64; 3]>,
}

/// Exhaustive search over randomly drawn candidates; ties go to the lowest
/// candidate index. Returns `None` when no candidate splits the node with
/// positive gain.
fn best_split(
    examples: &[TrainingExample],
    positions: &[[f64; 3]],
    members: &[u32],
    candidate_count: usize,
    rng: &mut ChaCha8Rng,
    scratch: &mut SplitScratch,
) -> Option<(SplitParams, f64)> {
    let n = members.len();
    let candidates: Vec<SplitParams> = (0..candidate_count)
        .map(|_| {
            let phi = rng.random_range(0..FEATURE_COUNT);
            let donor = members[rng.random_range(0..n)] as usize;
            SplitParams::new(phi, examples[donor].feature.values[phi])
        })
        .collect();

    scratch.points.clear();
    scratch.points.extend(members.iter().map(|&i| positions[i as usize]));
    let mut total = SpatialStats::default();
    scratch.points.iter().for_each(|p| total.add(p));
    let parent = total.variance();

    // Visit candidates grouped by feature so each column is gathered once.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&c| (candidates[c].phi, c));

    let mut best: Option<(usize, f64)> = None;
    let mut current_phi = None;
    for c in order {
        let split = candidates[c];
        if current_phi != Some(split.phi) {
            current_phi = Some(split.phi);
            scratch.values.clear();
            scratch
                .values
                .extend(members.iter().map(|&i| examples[i as usize].feature.values[split.phi as usize]));
        }
        let mut right = SpatialStats::default();
        for (v, p) in scratch.values.iter().zip(&scratch.points) {
            if *v >= split.tau {
                right.add(p);
            }
        }
        if right.count == 0 || right.count == n {
            continue;
        }
        let left = total.minus(&right);
        let gain = parent
            - left.count as f64 / n as f64 * left.variance()
            - right.count as f64 / n as f64 * right.variance();
        let better = match best {
            None => true,
            Some((bc, bg)) => gain > bg || (gain == bg && c < bc),
        };
        if better {
            best = Some((c, gain));
        }
    }
    best.filter(|&(_, g)| g > MIN_GAIN).map(|(c, g)| (candidates[c], g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureBank, OffsetRange};
    use crate::forest::{find_leaves, information_gain, write_forest};

    fn bank() -> FeatureBank {
        generate_feature_bank(1, OffsetRange::default()).unwrap()
    }

    fn small_config() -> TrainingConfig {
        TrainingConfig {
            candidate_count: 64,
            populate_leaves: false,
            ..TrainingConfig::default()
        }
    }

    fn random_examples(n: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let pos = Vector3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..3.0), rng.random_range(0.0..4.0));
                let mut values = [0.0f32; FEATURE_COUNT];
                // Some features correlate with position so splits are useful.
                for (i, v) in values.iter_mut().enumerate() {
                    *v = (pos[i % 3] as f32) * (i % 5) as f32 + rng.random_range(-0.5..0.5);
                }
                TrainingExample { feature: FeatureVector::from_values(values), world_pos: pos, colour: [rng.random(), rng.random(), rng.random()] }
            })
            .collect()
    }

    #[test]
    fn identical_examples_give_single_leaf_trees() {
        let ex = vec![random_examples(1, 3)[0].clone(); 50];
        let forest = train_forest_from_examples(&ex, bank(), &small_config(), 0).unwrap();
        assert_eq!(forest.tree_count(), 5);
        assert_eq!(forest.leaf_count(), 5);
        assert!(forest.trees().iter().all(|t| t.nodes().len() == 1));
    }

    #[test]
    fn two_separated_clusters_give_depth_one_trees() {
        let mut ex = Vec::new();
        for i in 0..200 {
            let side = i % 2;
            let pos = if side == 0 { Vector3::new(0.0, 0.0, 1.0) } else { Vector3::new(3.0, 0.0, 1.0) };
            let mut values = [0.0f32; FEATURE_COUNT];
            // Every feature separates the sides, so any threshold drawn from
            // the far side splits them perfectly.
            values.iter_mut().for_each(|v| *v = side as f32 * 10.0);
            ex.push(TrainingExample { feature: FeatureVector::from_values(values), world_pos: pos, colour: [0; 3] });
        }
        let forest = train_forest_from_examples(&ex, bank(), &small_config(), 1).unwrap();
        for tree in forest.trees() {
            assert_eq!(tree.depth(), 1);
        }
        // Routing oracle: every example of a cluster lands in the same leaf,
        // and the two clusters never share one.
        for t in 0..forest.tree_count() {
            let leaf_of = |side: usize| -> Vec<u32> {
                ex.iter().enumerate().filter(|(i, _)| i % 2 == side).map(|(_, e)| find_leaves(&forest, &e.feature)[t]).collect()
            };
            let (a, b) = (leaf_of(0), leaf_of(1));
            assert!(a.iter().all(|&l| l == a[0]));
            assert!(b.iter().all(|&l| l == b[0]));
            assert_ne!(a[0], b[0]);
        }
    }

    #[test]
    fn training_partition_matches_descent() {
        let ex = random_examples(600, 4);
        let positions: Vec<[f64; 3]> = ex.iter().map(|e| [e.world_pos.x, e.world_pos.y, e.world_pos.z]).collect();
        let cfg = TrainingConfig { max_depth: 6, ..small_config() };
        let grown = grow_tree(&ex, &positions, &cfg, 11, 0);
        let tree = Tree::from_nodes(grown.nodes.clone()).unwrap();
        assert!(tree.depth() <= 6);
        let mut union: Vec<u32> = Vec::new();
        for (leaf, members) in grown.leaf_members.iter().enumerate() {
            for &m in members {
                assert_eq!(tree.find_leaf(&ex[m as usize].feature), leaf as u32);
            }
            union.extend(members);
        }
        union.sort_unstable();
        union.dedup();
        assert_eq!(union.len(), 300, "union of leaf sets is the 50% subset");
        assert!(grown.branch_gains.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn selected_split_gain_matches_exact_evaluation() {
        let ex = random_examples(150, 5);
        let positions: Vec<[f64; 3]> = ex.iter().map(|e| [e.world_pos.x, e.world_pos.y, e.world_pos.z]).collect();
        let members: Vec<u32> = (0..150).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (split, gain) = best_split(&ex, &positions, &members, 128, &mut rng, &mut SplitScratch::default()).unwrap();
        assert!((gain - information_gain(&ex, &split)).abs() < 1e-8);
    }

    #[test]
    fn same_seed_gives_byte_identical_forests() {
        let ex = random_examples(400, 6);
        let cfg = TrainingConfig { max_depth: 5, populate_leaves: true, ..small_config() };
        let a = train_forest_from_examples(&ex, bank(), &cfg, 21).unwrap();
        let b = train_forest_from_examples(&ex, bank(), &cfg, 21).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_forest(&a, &mut ba).unwrap();
        write_forest(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = train_forest_from_examples(&ex, bank(), &cfg, 22).unwrap();
        let mut bc = Vec::new();
        write_forest(&c, &mut bc).unwrap();
        assert_ne!(ba, bc);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            train_forest_from_examples(&[], bank(), &small_config(), 0),
            Err(Error::EmptyTrainingSet)
        ));
        assert!(matches!(train_forest(&[], &small_config(), 0), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn populated_forest_has_modes_in_leaves() {
        let ex = random_examples(300, 7);
        let cfg = TrainingConfig { max_depth: 4, populate_leaves: true, ..small_config() };
        let forest = train_forest_from_examples(&ex, bank(), &cfg, 2).unwrap();
        let state = forest.leaf_state().unwrap();
        let populated = (0..forest.leaf_count()).filter(|&l| !state.prediction(l as u32).modes.is_empty()).count();
        assert!(populated > 0);
    }
}
