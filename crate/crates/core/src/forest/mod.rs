//! Regression forests over the 256-D pixel features.
//!
//! Trees are stored as flat node arrays in breadth-first order. Leaf ids are
//! global across the forest and contiguous in `[0, leaf_count)`, so per-leaf
//! state (reservoirs, modes) can live in plain vectors indexed by leaf id.

mod io;
mod train;
mod variance;

use serde::{Deserialize, Serialize};

pub use io::{read_forest, write_forest, FOREST_MAGIC, FOREST_VERSION};
pub use train::{collect_training_examples, train_forest, train_forest_from_examples, TrainingConfig};
pub use variance::{information_gain, spatial_variance, SpatialStats, VARIANCE_REGULARISER};

use crate::adapt::AdaptState;
use crate::error::{Error, Result};
use crate::features::{FeatureBank, FeatureVector, FEATURE_COUNT};

/// Deepest level a tree may reach; the root is at depth 0.
pub const MAX_TREE_DEPTH: usize = 15;

/// Threshold test `f[phi] >= tau`; passing examples go right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub phi: u16,
    pub tau: f32,
}

impl SplitParams {
    pub fn new(phi: usize, tau: f32) -> Self {
        assert!(phi < FEATURE_COUNT, "feature index {phi} out of range");
        Self { phi: phi as u16, tau }
    }

    #[inline]
    pub fn goes_right(&self, f: &FeatureVector) -> bool {
        f.values[self.phi as usize] >= self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Branch { split: SplitParams, left: u32, right: u32 },
    Leaf { leaf_id: u32 },
}

/// One binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    /// Checks that the nodes form a tree rooted at 0 in breadth-first order
    /// with children stored after their parent.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Format("tree has no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if let TreeNode::Branch { split, left, right } = *node {
                if split.phi as usize >= FEATURE_COUNT {
                    return Err(Error::Format(format!("node {i}: feature index out of range")));
                }
                for child in [left, right] {
                    let c = child as usize;
                    if c <= i || c >= nodes.len() || referenced[c] {
                        return Err(Error::Format(format!("node {i}: bad child index {c}")));
                    }
                    referenced[c] = true;
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err(Error::Format("tree contains unreachable nodes".into()));
        }
        let tree = Self { nodes };
        if tree.depth() > MAX_TREE_DEPTH {
            return Err(Error::Format(format!("tree deeper than {MAX_TREE_DEPTH}")));
        }
        Ok(tree)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    #[inline]
    pub fn find_leaf(&self, f: &FeatureVector) -> u32 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { leaf_id } => return leaf_id,
                TreeNode::Branch { split, left, right } => {
                    i = if split.goes_right(f) { right } else { left } as usize;
                }
            }
        }
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { leaf_id } => Some(*leaf_id),
            TreeNode::Branch { .. } => None,
        })
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if let TreeNode::Branch { left, right, .. } = *node {
                depth[left as usize] = depth[i] + 1;
                depth[right as usize] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }
}

/// A set of trees sharing one feature bank, optionally carrying per-leaf
/// distributions (`leaf_state`).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    bank: FeatureBank,
    leaf_count: u32,
    leaf_state: Option<AdaptState>,
}

impl RegressionForest {
    /// Validates that leaf ids are unique and contiguous across all trees.
    pub fn new(trees: Vec<Tree>, bank: FeatureBank) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Format("forest has no trees".into()));
        }
        let total: usize = trees.iter().map(|t| t.leaf_ids().count()).sum();
        let mut seen = vec![false; total];
        for id in trees.iter().flat_map(|t| t.leaf_ids()) {
            let slot = seen
                .get_mut(id as usize)
                .ok_or_else(|| Error::Format(format!("leaf id {id} outside [0, {total})")))?;
            if *slot {
                return Err(Error::Format(format!("duplicate leaf id {id}")));
            }
            *slot = true;
        }
        Ok(Self {
            trees,
            bank,
            leaf_count: total as u32,
            leaf_state: None,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn bank(&self) -> &FeatureBank {
        &self.bank
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count as usize
    }

    pub fn leaf_state(&self) -> Option<&AdaptState> {
        self.leaf_state.as_ref()
    }

    pub fn take_leaf_state(&mut self) -> Option<AdaptState> {
        self.leaf_state.take()
    }

    /// Attaches per-leaf distributions; the state must cover every leaf.
    pub fn with_leaf_state(mut self, state: AdaptState) -> Result<Self> {
        if state.leaf_count() != self.leaf_count() {
            return Err(Error::InvalidConfig(format!(
                "leaf state covers {} leaves, forest has {}",
                state.leaf_count(),
                self.leaf_count
            )));
        }
        self.leaf_state = Some(state);
        Ok(self)
    }

    /// Writes the leaf reached in each tree into `out`.
    #[inline]
    pub fn find_leaves_into(&self, f: &FeatureVector, out: &mut Vec<u32>) {
        out.clear();
        out.extend(self.trees.iter().map(|t| t.find_leaf(f)));
    }
}

/// Leaf reached in each tree, in tree order.
pub fn find_leaves(forest: &RegressionForest, feature: &FeatureVector) -> Vec<u32> {
    debug_assert!(feature.valid, "find_leaves called on an invalid feature vector");
    forest.trees.iter().map(|t| t.find_leaf(feature)).collect()
}

/// Drops all per-leaf distributions, keeping structure, split parameters,
/// leaf ids and the feature bank.
pub fn strip_leaves(forest: &RegressionForest) -> RegressionForest {
    RegressionForest {
        trees: forest.trees.clone(),
        bank: forest.bank.clone(),
        leaf_count: forest.leaf_count,
        leaf_state: None,
    }
}
