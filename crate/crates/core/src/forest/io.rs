//! Binary forest container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "RELOCFOR"
//! version      u32      1
//! bank         u32 count, then per feature:
//!                u8 kind (0 = depth, 1 = DA-RGB), u8 channel (0..3, 255 for depth),
//!                f64 dx, f64 dy
//! trees        u32 count, then per tree:
//!                u32 node count, then per node (breadth-first order):
//!                  u8 tag 0 = branch: u16 phi, f32 tau, u32 left, u32 right
//!                  u8 tag 1 = leaf:   u32 leaf id
//! leaf count   u32
//! payload      u8 flag; when 1 the adaptation state follows
//!              (see `AdaptState` encoding)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{RegressionForest, SplitParams, Tree, TreeNode};
use crate::adapt::AdaptState;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::{ColourChannel, FeatureBank, FeatureParams, FEATURE_COUNT};

pub const FOREST_MAGIC: &[u8; 8] = b"RELOCFOR";
pub const FOREST_VERSION: u32 = 1;

const MAX_TREES: usize = 1 << 10;
const MAX_NODES: usize = 1 << 17;

pub fn write_forest(forest: &RegressionForest, out: impl Write) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(FOREST_MAGIC)?;
    w.u32(FOREST_VERSION)?;

    w.len(forest.bank().params().len())?;
    for p in forest.bank().params() {
        let (kind, channel, [dx, dy]) = match *p {
            FeatureParams::Depth { delta } => (0u8, 255u8, delta),
            FeatureParams::DaRgb { delta, channel } => (1, channel as u8, delta),
        };
        w.u8(kind)?;
        w.u8(channel)?;
        w.f64(dx)?;
        w.f64(dy)?;
    }

    w.len(forest.trees().len())?;
    for tree in forest.trees() {
        w.len(tree.nodes().len())?;
        for node in tree.nodes() {
            match *node {
                TreeNode::Branch { split, left, right } => {
                    w.u8(0)?;
                    w.u16(split.phi)?;
                    w.f32(split.tau)?;
                    w.u32(left)?;
                    w.u32(right)?;
                }
                TreeNode::Leaf { leaf_id } => {
                    w.u8(1)?;
                    w.u32(leaf_id)?;
                }
            }
        }
    }
    w.u32(forest.leaf_count() as u32)?;

    match forest.leaf_state() {
        Some(state) => {
            w.u8(1)?;
            state.encode(&mut w)?;
        }
        None => w.u8(0)?,
    }
    Ok(())
}

pub fn read_forest(input: impl Read) -> Result<RegressionForest> {
    let mut r = Reader::new(input);
    let mut magic = [0u8; 8];
    r.fill(&mut magic)?;
    if &magic != FOREST_MAGIC {
        return Err(Error::Format("not a forest file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FOREST_VERSION {
        return Err(Error::Format(format!("unsupported forest version {version}")));
    }

    let count = r.len(FEATURE_COUNT)?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8()?;
        let channel = r.u8()?;
        let delta = [r.f64()?, r.f64()?];
        params.push(match kind {
            0 => FeatureParams::Depth { delta },
            1 => FeatureParams::DaRgb {
                delta,
                channel: ColourChannel::from_index(channel)
                    .ok_or_else(|| Error::Format(format!("bad colour channel {channel}")))?,
            },
            k => return Err(Error::Format(format!("bad feature kind {k}"))),
        });
    }
    let bank = FeatureBank::from_params(params)?;

    let tree_count = r.len(MAX_TREES)?;
    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        let n = r.len(MAX_NODES)?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(match r.u8()? {
                0 => {
                    let phi = r.u16()?;
                    let tau = r.f32()?;
                    let left = r.u32()?;
                    let right = r.u32()?;
                    if phi as usize >= FEATURE_COUNT {
                        return Err(Error::Format(format!("feature index {phi} out of range")));
                    }
                    TreeNode::Branch { split: SplitParams { phi, tau }, left, right }
                }
                1 => TreeNode::Leaf { leaf_id: r.u32()? },
                t => return Err(Error::Format(format!("bad node tag {t}"))),
            });
        }
        trees.push(Tree::from_nodes(nodes)?);
    }
    let forest = RegressionForest::new(trees, bank)?;
    let leaf_count = r.u32()? as usize;
    if leaf_count != forest.leaf_count() {
        return Err(Error::Format(format!(
            "header says {leaf_count} leaves, trees hold {}",
            forest.leaf_count()
        )));
    }

    let forest = match r.u8()? {
        0 => forest,
        1 => {
            let state = AdaptState::decode(&mut r)?;
            forest.with_leaf_state(state)?
        }
        f => return Err(Error::Format(format!("bad payload flag {f}"))),
    };
    r.expect_end()?;
    Ok(forest)
}

impl RegressionForest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_forest(self, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_forest(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{AdaptConfig, ReservoirEntry};
    use crate::features::{generate_feature_bank, OffsetRange};
    use crate::forest::strip_leaves;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn forest() -> RegressionForest {
        let bank = generate_feature_bank(3, OffsetRange::default()).unwrap();
        let t0 = Tree::from_nodes(vec![
            TreeNode::Branch { split: SplitParams::new(7, 0.25), left: 1, right: 2 },
            TreeNode::Leaf { leaf_id: 0 },
            TreeNode::Branch { split: SplitParams::new(200, -3.5), left: 3, right: 4 },
            TreeNode::Leaf { leaf_id: 1 },
            TreeNode::Leaf { leaf_id: 2 },
        ])
        .unwrap();
        let t1 = Tree::from_nodes(vec![TreeNode::Leaf { leaf_id: 3 }]).unwrap();
        RegressionForest::new(vec![t0, t1], bank).unwrap()
    }

    fn encode(f: &RegressionForest) -> Vec<u8> {
        let mut out = Vec::new();
        write_forest(f, &mut out).unwrap();
        out
    }

    fn adapted() -> RegressionForest {
        let f = forest();
        let mut state = AdaptState::new(f.leaf_count(), AdaptConfig::default());
        for i in 0..300 {
            let p = Vector3::new((i % 7) as f64 * 0.01, (i % 3) as f64 * 0.02, 1.0);
            state.insert((i % 4) as u32, ReservoirEntry::new(&p, [i as u8, 3, 9]));
        }
        state.refresh_all();
        f.with_leaf_state(state).unwrap()
    }

    #[test]
    fn stripped_forest_round_trips_bit_exactly() {
        let f = forest();
        let bytes = encode(&f);
        let back = read_forest(bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn adapted_forest_round_trips_bit_exactly() {
        let f = adapted();
        let bytes = encode(&f);
        let back = read_forest(bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn stripped_file_is_smaller_than_populated_file() {
        let f = adapted();
        assert!(encode(&strip_leaves(&f)).len() < encode(&f).len());
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = encode(&forest());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_forest(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(read_forest(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_forest(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_forest(long.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let mut data = FOREST_MAGIC.to_vec();
            data.extend_from_slice(&FOREST_VERSION.to_le_bytes());
            data.extend(bytes);
            let _ = read_forest(data.as_slice());
        }
    }
}
