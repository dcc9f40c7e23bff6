//! Per-image Voronoi encoding: one projected VLAD per cell of the spatial
//! partition tree, together with the cell's keypoint count. Also the
//! rectangular-grid index used as a baseline.

mod file;
mod level;
mod storage;

pub use file::{load_index, save_index, IndexSet};
pub use level::{level_project, LeafIndex};
pub use storage::{storage_report, StorageReport};

use crate::clustering::{grid_partition, PartitionTree, TreeShape, Vocabulary};
use crate::encoder::{
    assign_features, project, ssr_normalize, vlad_encode_assigned, ProjectedDescriptor,
    RawDescriptor, Whitener,
};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::encoder::PcaModel;
use crate::pq::{wnpq_encode, PQCode, PQModel, SignCode};

/// Something stored per cell that may be the empty-cell sentinel.
pub trait Payload: Clone {
    fn is_empty(&self) -> bool;
}

impl Payload for ProjectedDescriptor {
    fn is_empty(&self) -> bool {
        self.empty
    }
}

impl Payload for PQCode {
    fn is_empty(&self) -> bool {
        self.empty
    }
}

impl Payload for SignCode {
    fn is_empty(&self) -> bool {
        self.empty
    }
}

/// Placeholder payload stored at absent tree slots.
pub trait Absent {
    fn absent(width: usize) -> Self;
}

impl Absent for ProjectedDescriptor {
    fn absent(width: usize) -> Self {
        ProjectedDescriptor::zeros(width)
    }
}

impl Absent for SignCode {
    fn absent(width: usize) -> Self {
        SignCode::from_values(&vec![0.0; width], true)
    }
}

impl Absent for PQCode {
    fn absent(width: usize) -> Self {
        PQCode {
            codes: vec![0; width],
            empty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell<P> {
    pub descriptor: P,
    pub point_count: u32,
}

pub type CellDescriptor = Cell<ProjectedDescriptor>;
pub type QuantizedCell = Cell<PQCode>;

impl<P: Payload> Cell<P> {
    pub fn is_empty(&self) -> bool {
        self.descriptor.is_empty()
    }
}

impl<P> Cell<P> {
    pub fn try_map<Q>(&self, f: impl Fn(&P) -> Result<Q>) -> Result<Cell<Q>> {
        Ok(Cell {
            descriptor: f(&self.descriptor)?,
            point_count: self.point_count,
        })
    }
}

/// Cells in breadth-first slot order of the complete tree. Absent slots
/// hold an empty placeholder and are flagged in `absent`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiIndex<P = ProjectedDescriptor> {
    pub image_id: String,
    pub shape: TreeShape,
    pub absent: Vec<bool>,
    pub cells: Vec<Cell<P>>,
}

impl<P> VoronoiIndex<P> {
    pub fn is_present(&self, slot: usize) -> bool {
        !self.absent[slot]
    }

    pub fn node_count(&self) -> usize {
        self.absent.iter().filter(|a| !**a).count()
    }

    /// Present with no present children.
    pub fn is_terminal(&self, slot: usize) -> bool {
        self.is_present(slot) && !self.shape.children(slot).any(|c| self.is_present(c))
    }

    pub fn present_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cells.len()).filter(|&s| self.is_present(s))
    }

    pub fn root(&self) -> &Cell<P> {
        &self.cells[0]
    }

    /// Maps present cells; absent slots get `Q`'s placeholder.
    pub fn try_map<Q: Absent>(&self, width: usize, f: impl Fn(&P) -> Result<Q>) -> Result<VoronoiIndex<Q>> {
        let cells = self
            .cells
            .iter()
            .enumerate()
            .map(|(s, c)| {
                if self.is_present(s) {
                    c.try_map(&f)
                } else {
                    Ok(Cell {
                        descriptor: Q::absent(width),
                        point_count: c.point_count,
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(VoronoiIndex {
            image_id: self.image_id.clone(),
            shape: self.shape,
            absent: self.absent.clone(),
            cells,
        })
    }

    /// Keeps only terminal-cell payloads, as stored for level projection.
    pub fn terminal_only(&self) -> LeafIndex<P>
    where
        P: Clone,
    {
        LeafIndex {
            image_id: self.image_id.clone(),
            shape: self.shape,
            absent: self.absent.clone(),
            counts: self.cells.iter().map(|c| c.point_count).collect(),
            leaves: (0..self.cells.len())
                .map(|s| self.is_terminal(s).then(|| self.cells[s].descriptor.clone()))
                .collect(),
        }
    }
}

/// Grid blocks, level by level and row-major within a level.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndex<P = ProjectedDescriptor> {
    pub image_id: String,
    pub levels: usize,
    pub blocks: Vec<Cell<P>>,
}

impl<P> MultiIndex<P> {
    pub fn try_map<Q>(&self, f: impl Fn(&P) -> Result<Q>) -> Result<MultiIndex<Q>> {
        Ok(MultiIndex {
            image_id: self.image_id.clone(),
            levels: self.levels,
            blocks: self.blocks.iter().map(|c| c.try_map(&f)).collect::<Result<_>>()?,
        })
    }
}

/// Encodes cells with a fixed vocabulary and projection. SSR is on by
/// default; turning it off makes cell vectors additive before projection.
#[derive(Debug, Clone, Copy)]
pub struct CellEncoder<'a> {
    pub vocab: &'a Vocabulary,
    pub pca: &'a PcaModel,
    pub ssr: bool,
}

impl<'a> CellEncoder<'a> {
    pub fn new(vocab: &'a Vocabulary, pca: &'a PcaModel) -> Result<Self> {
        let len = vocab.k * vocab.dim;
        if len != pca.input_dim {
            return Err(Error::DimMismatch {
                expected: pca.input_dim,
                found: len,
            });
        }
        Ok(CellEncoder {
            vocab,
            pca,
            ssr: true,
        })
    }

    pub fn with_ssr(mut self, ssr: bool) -> Self {
        self.ssr = ssr;
        self
    }

    pub(crate) fn raw(&self, fs: &FeatureSet, assignments: &[usize], members: &[usize]) -> Result<RawDescriptor> {
        let raw = vlad_encode_assigned(fs, self.vocab, assignments, members)?;
        Ok(if self.ssr { ssr_normalize(&raw) } else { raw })
    }

    fn cell(&self, fs: &FeatureSet, assignments: &[usize], members: &[usize]) -> Result<CellDescriptor> {
        Ok(Cell {
            descriptor: project(&self.raw(fs, assignments, members)?, self.pca)?,
            point_count: members.len() as u32,
        })
    }

    /// One descriptor over every keypoint.
    pub fn encode_whole(&self, fs: &FeatureSet) -> Result<CellDescriptor> {
        let assignments = assign_features(fs, self.vocab)?;
        self.cell(fs, &assignments, &(0..fs.len()).collect::<Vec<_>>())
    }

    pub fn encode_tree(&self, fs: &FeatureSet, tree: &PartitionTree) -> Result<VoronoiIndex> {
        tree.check_invariants(fs.len())?;
        let assignments = assign_features(fs, self.vocab)?;
        let cells = tree
            .nodes
            .iter()
            .map(|node| match node {
                Some(n) => self.cell(fs, &assignments, &n.members),
                None => Ok(Cell {
                    descriptor: ProjectedDescriptor::zeros(self.pca.output_dim),
                    point_count: 0,
                }),
            })
            .collect::<Result<_>>()?;
        Ok(VoronoiIndex {
            image_id: fs.image_id.clone(),
            shape: tree.shape,
            absent: tree.absent_bitmap(),
            cells,
        })
    }

    pub fn encode_grid(&self, fs: &FeatureSet, levels: usize) -> Result<MultiIndex> {
        if levels == 0 {
            return Err(Error::InvalidParameter("grid needs at least one level".into()));
        }
        let assignments = assign_features(fs, self.vocab)?;
        let grid = grid_partition(fs, levels);
        let blocks = grid
            .blocks
            .iter()
            .map(|members| self.cell(fs, &assignments, members))
            .collect::<Result<_>>()?;
        Ok(MultiIndex {
            image_id: fs.image_id.clone(),
            levels,
            blocks,
        })
    }

    /// Terminal cells as un-normalized, un-centered projections `Rᵀ v`.
    pub fn encode_leaves(&self, fs: &FeatureSet, tree: &PartitionTree) -> Result<LeafIndex> {
        tree.check_invariants(fs.len())?;
        let assignments = assign_features(fs, self.vocab)?;
        let mut leaves = Vec::with_capacity(tree.nodes.len());
        let mut counts = Vec::with_capacity(tree.nodes.len());
        for (slot, node) in tree.nodes.iter().enumerate() {
            counts.push(node.as_ref().map_or(0, |n| n.members.len() as u32));
            leaves.push(match node {
                Some(n) if !tree.has_children(slot) => {
                    let raw = self.raw(fs, &assignments, &n.members)?;
                    Some(self.pca.apply(&raw.values)?)
                }
                _ => None,
            });
        }
        Ok(LeafIndex {
            image_id: fs.image_id.clone(),
            shape: tree.shape,
            absent: tree.absent_bitmap(),
            counts,
            leaves,
        })
    }
}

/// Projected descriptor for every node of `tree`.
pub fn ve_encode(
    fs: &FeatureSet,
    vocab: &Vocabulary,
    tree: &PartitionTree,
    pca: &PcaModel,
) -> Result<VoronoiIndex> {
    CellEncoder::new(vocab, pca)?.encode_tree(fs, tree)
}

/// Projected descriptor for every block of an `levels`-level grid.
pub fn multi_encode(fs: &FeatureSet, vocab: &Vocabulary, pca: &PcaModel, levels: usize) -> Result<MultiIndex> {
    CellEncoder::new(vocab, pca)?.encode_grid(fs, levels)
}

/// Whitens, normalizes and quantizes every cell.
pub fn quantize_index(index: &VoronoiIndex, whitener: &Whitener, pq: &PQModel) -> Result<VoronoiIndex<PQCode>> {
    index.try_map(pq.m, |pd| wnpq_encode(pd, whitener, pq))
}

pub fn quantize_multi(index: &MultiIndex, whitener: &Whitener, pq: &PQModel) -> Result<MultiIndex<PQCode>> {
    index.try_map(|pd| wnpq_encode(pd, whitener, pq))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::encoder::pca_train;
    use crate::features::{synth_generate, SyntheticDatasetSpec};

    /// A small trained pipeline over synthetic images.
    pub struct Fixture {
        pub images: Vec<FeatureSet>,
        pub vocab: Vocabulary,
        pub pca: PcaModel,
    }

    pub fn fixture(k: usize, d: usize, ssr: bool) -> Fixture {
        let spec = SyntheticDatasetSpec {
            dataset_size: 30,
            planted_roi_count: 4,
            descriptor_dim: 8,
            background_points_range: (40, 70),
            ..Default::default()
        };
        let (images, _) = synth_generate(&spec).unwrap();
        let points: Vec<f64> = images
            .iter()
            .flat_map(|f| f.descriptors.iter().map(|&v| v as f64))
            .collect();
        let vocab = Vocabulary::train(&points, 8, &crate::clustering::KMeansParams::new(k, 1)).unwrap();
        let mut rows = Vec::new();
        for fs in &images {
            let assignments = assign_features(fs, &vocab).unwrap();
            let tree = crate::clustering::spatial_hkmeans(fs, 2, 3, 0).unwrap();
            for node in tree.nodes.iter().flatten() {
                let raw = vlad_encode_assigned(fs, &vocab, &assignments, &node.members).unwrap();
                rows.extend(if ssr { ssr_normalize(&raw) } else { raw }.values);
            }
        }
        let pca = pca_train(&rows, k * 8, d).unwrap();
        Fixture { images, vocab, pca }
    }
}
