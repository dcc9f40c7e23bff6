//! Reconstruction of every tree cell from terminal cells alone. Before SSR
//! a cell's VLAD is the sum of its children's, and projection is linear,
//! so a parent is recovered from its terminal descendants up to centering
//! and renormalization.

use crate::clustering::TreeShape;
use crate::encoder::{PcaModel, ProjectedDescriptor};
use crate::error::{Error, Result};

use super::{Cell, VoronoiIndex};

/// Per-slot keypoint counts plus a payload for each terminal cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafIndex<P = Vec<f64>> {
    pub image_id: String,
    pub shape: TreeShape,
    pub absent: Vec<bool>,
    pub counts: Vec<u32>,
    /// `Some` exactly at present slots without present children.
    pub leaves: Vec<Option<P>>,
}

impl<P> LeafIndex<P> {
    pub fn is_present(&self, slot: usize) -> bool {
        !self.absent[slot]
    }

    pub fn terminal_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.leaves.len()).filter(|&s| self.leaves[s].is_some())
    }

    /// Terminal slots in the subtree rooted at `slot`.
    pub fn terminals_under(&self, slot: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![slot];
        while let Some(s) = stack.pop() {
            if !self.is_present(s) {
                continue;
            }
            if self.leaves[s].is_some() {
                out.push(s);
            } else {
                stack.extend(self.shape.children(s).rev());
            }
        }
        out
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let n = self.shape.slot_count();
        if self.absent.len() != n || self.counts.len() != n || self.leaves.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} slots expected for {:?}",
                n, self.shape
            )));
        }
        for s in 0..n {
            let terminal =
                self.is_present(s) && !self.shape.children(s).any(|c| self.is_present(c));
            if terminal != self.leaves[s].is_some() {
                return Err(Error::ShapeMismatch(format!(
                    "slot {s}: terminal payload present = {}",
                    self.leaves[s].is_some()
                )));
            }
        }
        Ok(())
    }
}

/// Every present cell becomes the sum of its terminal descendants' `Rᵀ v`,
/// minus `Rᵀ μ`, then L2-normalized. Cells without keypoints, and cells
/// whose sum cancels, become the zero sentinel.
pub fn level_project(leaves: &LeafIndex, pca: &PcaModel) -> Result<VoronoiIndex> {
    leaves.check_shape()?;
    let d = pca.output_dim;
    if let Some(bad) = leaves.leaves.iter().flatten().find(|v| v.len() != d) {
        return Err(Error::ShapeMismatch(format!(
            "leaf vector of length {} for {d}-D projection",
            bad.len()
        )));
    }
    let offset = pca.projected_mean();
    let n = leaves.shape.slot_count();
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); n];
    // children have larger slot numbers, so a reverse sweep is bottom-up
    for s in (0..n).rev() {
        if !leaves.is_present(s) {
            continue;
        }
        sums[s] = match &leaves.leaves[s] {
            Some(v) => v.clone(),
            None => {
                let mut acc = vec![0.0; d];
                for c in leaves.shape.children(s).filter(|&c| leaves.is_present(c)) {
                    acc.iter_mut().zip(&sums[c]).for_each(|(a, x)| *a += x);
                }
                acc
            }
        };
    }
    let cells = (0..n)
        .map(|s| {
            let descriptor = if !leaves.is_present(s) || leaves.counts[s] == 0 {
                ProjectedDescriptor::zeros(d)
            } else {
                ProjectedDescriptor::from_unnormalized(
                    sums[s].iter().zip(&offset).map(|(x, o)| x - o).collect(),
                )
            };
            Cell {
                descriptor,
                point_count: leaves.counts[s],
            }
        })
        .collect();
    Ok(VoronoiIndex {
        image_id: leaves.image_id.clone(),
        shape: leaves.shape,
        absent: leaves.absent.clone(),
        cells,
    })
}
