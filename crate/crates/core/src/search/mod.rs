//! Scoring of queries against per-image cell indexes.
//!
//! Every method is written once over a [`CellScorer`], so the unquantized,
//! product-quantized and sign-code variants share the same control flow.

mod fast;
mod rank;

pub use fast::{
    fast_ve_search, fast_ve_search_with, level_projection_search, modal_scale, phase2,
    quantized_fast_ve_search, quantized_level_projection_score, LevelBest, Phase2,
};
pub use rank::{rank_dataset, rank_leaves, rank_multi, rank_results, subquery_search, Method, QueryEncoding, RankedResult};

use crate::encoder::ProjectedDescriptor;
use crate::linalg::dot;
use crate::pq::{hamming_similarity, sdc_similarity, PQCode, PQModel, SignCode};
use crate::voronoi::{Cell, MultiIndex, Payload, VoronoiIndex};

/// A query-side cell: descriptor plus the query's keypoint count.
pub type QueryDescriptor<P = ProjectedDescriptor> = Cell<P>;

/// Similarity between two non-empty payloads, and its cost.
pub trait CellScorer<P>: Sync {
    fn similarity(&self, a: &P, b: &P) -> f64;
    /// Lookup-table reads per similarity (zero for direct inner products).
    fn reads_per_score(&self) -> usize;
}

/// Inner product of unit vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl CellScorer<ProjectedDescriptor> for Exact {
    fn similarity(&self, a: &ProjectedDescriptor, b: &ProjectedDescriptor) -> f64 {
        dot(&a.values, &b.values)
    }

    fn reads_per_score(&self) -> usize {
        0
    }
}

/// Symmetric distance computation through the model's lookup tables.
#[derive(Debug, Clone, Copy)]
pub struct Sdc<'a>(pub &'a PQModel);

impl CellScorer<PQCode> for Sdc<'_> {
    fn similarity(&self, a: &PQCode, b: &PQCode) -> f64 {
        sdc_similarity(a, b, self.0)
    }

    fn reads_per_score(&self) -> usize {
        self.0.m
    }
}

/// One bit per component, compared by popcount.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hamming;

impl CellScorer<SignCode> for Hamming {
    fn similarity(&self, a: &SignCode, b: &SignCode) -> f64 {
        hamming_similarity(a, b)
    }

    fn reads_per_score(&self) -> usize {
        0
    }
}

/// The scorer's similarity, or `-∞` when either side is the empty sentinel.
#[inline]
pub fn cell_score<P: Payload, S: CellScorer<P> + ?Sized>(scorer: &S, q: &P, cell: &P) -> f64 {
    if q.is_empty() || cell.is_empty() {
        f64::NEG_INFINITY
    } else {
        scorer.similarity(q, cell)
    }
}

/// Inner product between a query and one unquantized cell.
pub fn whole_image_score(q: &QueryDescriptor, cell: &Cell<ProjectedDescriptor>) -> f64 {
    cell_score(&Exact, &q.descriptor, &cell.descriptor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub image_id: String,
    pub score: f64,
    /// Level at which the greedy descent stopped.
    pub l_ph1: usize,
    /// Cells whose similarity was evaluated, empty ones included.
    pub cells_accessed: usize,
    pub table_reads: usize,
    /// Best cell per visited level with its count difference and weight.
    pub per_level_best: Vec<LevelBest>,
    /// The weight scale actually used in the final combination.
    pub scale: f64,
}

/// Cells that can be scanned exhaustively.
pub trait CellSet<P> {
    fn image_id(&self) -> &str;
    fn present_cells(&self) -> Box<dyn Iterator<Item = &Cell<P>> + '_>;
}

impl<P> CellSet<P> for VoronoiIndex<P> {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn present_cells(&self) -> Box<dyn Iterator<Item = &Cell<P>> + '_> {
        Box::new(self.present_slots().map(|s| &self.cells[s]))
    }
}

impl<P> CellSet<P> for MultiIndex<P> {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn present_cells(&self) -> Box<dyn Iterator<Item = &Cell<P>> + '_> {
        Box::new(self.blocks.iter())
    }
}

/// Maximum similarity over every cell.
pub fn global_max_score<P: Payload, S: CellScorer<P> + ?Sized>(
    q: &QueryDescriptor<P>,
    index: &impl CellSet<P>,
    scorer: &S,
) -> SearchResult {
    let mut best = f64::NEG_INFINITY;
    let mut accessed = 0;
    for cell in index.present_cells() {
        accessed += 1;
        best = best.max(cell_score(scorer, &q.descriptor, &cell.descriptor));
    }
    SearchResult {
        image_id: index.image_id().to_string(),
        score: best,
        l_ph1: 0,
        cells_accessed: accessed,
        table_reads: accessed * scorer.reads_per_score(),
        per_level_best: Vec::new(),
        scale: 1.0,
    }
}

/// Similarity to the whole-image (root) descriptor only.
pub fn root_score<P: Payload, S: CellScorer<P> + ?Sized>(
    q: &QueryDescriptor<P>,
    index: &VoronoiIndex<P>,
    scorer: &S,
) -> SearchResult {
    SearchResult {
        image_id: index.image_id.clone(),
        score: cell_score(scorer, &q.descriptor, &index.root().descriptor),
        l_ph1: 0,
        cells_accessed: 1,
        table_reads: scorer.reads_per_score(),
        per_level_best: Vec::new(),
        scale: 1.0,
    }
}
