//! Rectangular multi-scale grid: level `l` tiles the image into an
//! `(l+1) × (l+1)` grid of equal blocks.

use crate::features::FeatureSet;

#[derive(Debug, Clone, PartialEq)]
pub struct GridPartition {
    pub levels: usize,
    /// Keypoint indices per block, level by level, row-major within a level.
    pub blocks: Vec<Vec<usize>>,
}

impl GridPartition {
    pub fn level_offset(&self, level: usize) -> usize {
        grid_block_count(level)
    }
}

/// Blocks over levels `0..levels`: `Σ (l+1)^2 = L(L+1)(2L+1)/6`.
pub fn grid_block_count(levels: usize) -> usize {
    levels * (levels + 1) * (2 * levels + 1) / 6
}

/// Assigns every keypoint to one block per level. A keypoint on a block
/// boundary goes to the higher-index block; the right and bottom image
/// edges belong to the last block. Undeclared image sizes fall back to the
/// keypoints' extent.
pub fn grid_partition(fs: &FeatureSet, levels: usize) -> GridPartition {
    let (w, h) = if fs.has_declared_size() {
        (fs.width as f64, fs.height as f64)
    } else {
        let mx = fs.keypoints.iter().map(|k| k.x as f64).fold(0.0, f64::max);
        let my = fs.keypoints.iter().map(|k| k.y as f64).fold(0.0, f64::max);
        (mx.max(1.0), my.max(1.0))
    };
    let mut blocks = Vec::with_capacity(grid_block_count(levels));
    for l in 0..levels {
        let side = l + 1;
        let mut level_blocks = vec![Vec::new(); side * side];
        let cell = |v: f32, extent: f64| ((v as f64 * side as f64 / extent).floor() as usize).min(side - 1);
        for (i, kp) in fs.keypoints.iter().enumerate() {
            let (col, row) = (cell(kp.x, w), cell(kp.y, h));
            level_blocks[row * side + col].push(i);
        }
        blocks.extend(level_blocks);
    }
    GridPartition { levels, blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Keypoint;

    fn fs(kps: Vec<Keypoint>) -> FeatureSet {
        let n = kps.len();
        FeatureSet::new("g", 90, 60, 1, kps, vec![0.0; n]).unwrap()
    }

    #[test]
    fn three_levels_give_fourteen_blocks() {
        assert_eq!(grid_block_count(3), 14);
        let g = grid_partition(&fs(vec![Keypoint::new(5.0, 5.0)]), 3);
        assert_eq!(g.blocks.len(), 14);
        for l in 1..6 {
            let direct: usize = (0..l).map(|i| (i + 1) * (i + 1)).sum();
            assert_eq!(grid_block_count(l), direct);
        }
    }

    #[test]
    fn one_level_is_one_block() {
        let g = grid_partition(&fs(vec![Keypoint::new(5.0, 5.0), Keypoint::new(80.0, 50.0)]), 1);
        assert_eq!(g.blocks, vec![vec![0, 1]]);
    }

    #[test]
    fn boundary_goes_to_higher_block() {
        // x = 45 is the level-1 column boundary of a 90 px wide image
        let g = grid_partition(&fs(vec![Keypoint::new(45.0, 10.0)]), 2);
        assert_eq!(g.blocks[1 + 1], vec![0]);
        let total: usize = g.blocks[1..5].iter().map(Vec::len).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn every_point_once_per_level() {
        let kps: Vec<Keypoint> = (0..50)
            .map(|i| Keypoint::new((i * 7 % 90) as f32, (i * 13 % 60) as f32))
            .collect();
        let g = grid_partition(&fs(kps), 3);
        for l in 0..3 {
            let range = grid_block_count(l)..grid_block_count(l + 1);
            let mut all: Vec<usize> = g.blocks[range].iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..50).collect::<Vec<_>>());
        }
    }
}
