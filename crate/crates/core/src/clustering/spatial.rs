//! Hierarchical spatial K-means over keypoint locations.
//!
//! The tree is stored in breadth-first slot order of the complete
//! `branching`-ary tree with `levels` levels, so the children of slot `s`
//! are `s * V + 1 ..= s * V + V`. Slots whose parent had fewer member points
//! than the branching factor stay absent.

use std::ops::Range;

use super::kmeans::{kmeans, KMeansParams, DEFAULT_MAX_ITERS};
use crate::error::{Error, Result};
use crate::features::FeatureSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeShape {
    pub levels: usize,
    pub branching: usize,
}

impl TreeShape {
    pub fn new(levels: usize, branching: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParameter("tree needs at least one level".into()));
        }
        if levels > 1 && branching < 2 {
            return Err(Error::InvalidParameter("branching factor must be at least 2".into()));
        }
        Ok(TreeShape { levels, branching })
    }

    /// First slot of level `l`: `(V^l - 1) / (V - 1)`.
    pub fn level_start(&self, l: usize) -> usize {
        (0..l).map(|i| self.branching.pow(i as u32)).sum()
    }

    pub fn level_range(&self, l: usize) -> Range<usize> {
        self.level_start(l)..self.level_start(l + 1)
    }

    /// Total cells of a fully populated tree, `1 + Σ_{l=1}^{L-1} V^l`.
    pub fn slot_count(&self) -> usize {
        self.level_start(self.levels)
    }

    pub fn leaf_count(&self) -> usize {
        self.branching.pow((self.levels - 1) as u32)
    }

    pub fn level_of(&self, slot: usize) -> usize {
        (0..self.levels)
            .find(|&l| self.level_range(l).contains(&slot))
            .expect("slot within tree")
    }

    pub fn children(&self, slot: usize) -> Range<usize> {
        if self.level_of(slot) + 1 >= self.levels {
            return 0..0;
        }
        let first = slot * self.branching + 1;
        first..first + self.branching
    }

    pub fn parent(&self, slot: usize) -> Option<usize> {
        (slot > 0).then(|| (slot - 1) / self.branching)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionNode {
    /// Spatial centroid in pixels.
    pub centroid: (f64, f64),
    /// Indices into the source feature set's keypoints.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    pub shape: TreeShape,
    /// One entry per slot; `None` marks an absent cell.
    pub nodes: Vec<Option<PartitionNode>>,
}

impl PartitionTree {
    pub fn node(&self, slot: usize) -> Option<&PartitionNode> {
        self.nodes.get(slot).and_then(Option::as_ref)
    }

    pub fn is_present(&self, slot: usize) -> bool {
        self.node(slot).is_some()
    }

    pub fn absent_bitmap(&self) -> Vec<bool> {
        self.nodes.iter().map(Option::is_none).collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    pub fn has_children(&self, slot: usize) -> bool {
        self.shape.children(slot).any(|c| self.is_present(c))
    }

    /// Checks that each internal node's children partition its members.
    pub fn check_invariants(&self, n_points: usize) -> Result<()> {
        let fail = |m: String| Err(Error::ShapeMismatch(m));
        if self.nodes.len() != self.shape.slot_count() {
            return fail(format!("{} slots for shape {:?}", self.nodes.len(), self.shape));
        }
        let Some(root) = self.node(0) else {
            return fail("root absent".into());
        };
        let mut all: Vec<usize> = root.members.clone();
        all.sort_unstable();
        if all != (0..n_points).collect::<Vec<_>>() {
            return fail("root does not hold every keypoint".into());
        }
        for slot in 0..self.nodes.len() {
            let Some(node) = self.node(slot) else {
                if let Some(p) = self.shape.parent(slot) {
                    if self.is_present(p) && self.has_children(p) {
                        return fail(format!("slot {slot} absent beside present siblings"));
                    }
                }
                continue;
            };
            if slot > 0 && !self.is_present(self.shape.parent(slot).unwrap()) {
                return fail(format!("slot {slot} present under an absent parent"));
            }
            if !self.has_children(slot) {
                continue;
            }
            let mut union: Vec<usize> = self
                .shape
                .children(slot)
                .filter_map(|c| self.node(c))
                .flat_map(|c| c.members.iter().copied())
                .collect();
            union.sort_unstable();
            let before = union.len();
            union.dedup();
            if union.len() != before {
                return fail(format!("children of slot {slot} overlap"));
            }
            let mut members = node.members.clone();
            members.sort_unstable();
            if union != members {
                return fail(format!("children of slot {slot} do not cover it"));
            }
        }
        Ok(())
    }
}

fn node_seed(seed: u64, slot: usize) -> u64 {
    // splitmix64 finalizer over (seed, slot)
    let mut z = seed ^ (slot as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn centroid_of(fs: &FeatureSet, members: &[usize]) -> (f64, f64) {
    if members.is_empty() {
        return (fs.width as f64 / 2.0, fs.height as f64 / 2.0);
    }
    let n = members.len() as f64;
    let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), &i| {
        (sx + fs.keypoints[i].x as f64, sy + fs.keypoints[i].y as f64)
    });
    (sx / n, sy / n)
}

/// Builds an `levels`-level Voronoi partition tree by recursive K-means
/// (`k = branching`) on raw pixel coordinates. A node with fewer member
/// points than `branching` is not split.
pub fn spatial_hkmeans(
    fs: &FeatureSet,
    levels: usize,
    branching: usize,
    seed: u64,
) -> Result<PartitionTree> {
    let shape = TreeShape::new(levels, branching)?;
    if levels > 1 && branching < 2 {
        return Err(Error::InvalidParameter("branching factor must be at least 2".into()));
    }
    let mut nodes: Vec<Option<PartitionNode>> = vec![None; shape.slot_count()];
    let all: Vec<usize> = (0..fs.len()).collect();
    nodes[0] = Some(PartitionNode {
        centroid: centroid_of(fs, &all),
        members: all,
    });

    for level in 0..levels.saturating_sub(1) {
        for slot in shape.level_range(level) {
            let Some(node) = &nodes[slot] else { continue };
            if node.members.len() < branching {
                continue;
            }
            let coords: Vec<f64> = node
                .members
                .iter()
                .flat_map(|&i| [fs.keypoints[i].x as f64, fs.keypoints[i].y as f64])
                .collect();
            let params = KMeansParams {
                k: branching,
                max_iters: DEFAULT_MAX_ITERS,
                seed: node_seed(seed, slot),
            };
            let km = kmeans(&coords, 2, &params)?;
            let mut groups = vec![Vec::new(); branching];
            for (&member, &a) in node.members.iter().zip(&km.assignments) {
                groups[a].push(member);
            }
            for (c, (child, members)) in shape.children(slot).zip(groups).enumerate() {
                let cen = km.centroid(c);
                nodes[child] = Some(PartitionNode {
                    centroid: (cen[0], cen[1]),
                    members,
                });
            }
        }
    }
    Ok(PartitionTree { shape, nodes })
}
