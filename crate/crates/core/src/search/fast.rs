//! Two-phase tree search.
//!
//! Phase 1 descends greedily from the root, moving to the best child only
//! while that child scores strictly higher than its parent. Phase 2 mixes the
//! best score of every visited level, weighting each level by how closely
//! its best cell's keypoint count matches the query's.

use std::collections::HashMap;

use crate::clustering::TreeShape;
use crate::pq::{sdc_similarity, PQCode, PQModel};
use crate::voronoi::{LeafIndex, Payload, VoronoiIndex};

use super::{cell_score, CellScorer, QueryDescriptor, Sdc, SearchResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelBest {
    pub level: usize,
    pub slot: usize,
    /// `S*_l`.
    pub score: f64,
    /// Query keypoint count minus the best cell's count.
    pub v: i64,
    /// Normalized weight `ŵ_l`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2 {
    pub score: f64,
    pub weights: Vec<f64>,
    pub scale: f64,
}

/// `10^m` for the most frequent `m = floor(log10(max(|v|, 1)))`, smallest
/// `m` on ties.
pub fn modal_scale(v: &[i64]) -> f64 {
    let mut freq: HashMap<u32, usize> = HashMap::new();
    for &x in v {
        *freq.entry(x.unsigned_abs().max(1).ilog10()).or_default() += 1;
    }
    let m = freq
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(m, _)| m);
    10f64.powi(m as i32)
}

/// `w_l = C / max(|v_l|, 1)`, L1-normalized, applied to `scores`. `scale`
/// overrides `C`.
pub fn phase2(scores: &[f64], v: &[i64], scale: Option<f64>) -> Phase2 {
    debug_assert_eq!(scores.len(), v.len());
    let c = scale.unwrap_or_else(|| modal_scale(v));
    let raw: Vec<f64> = v.iter().map(|x| c / x.unsigned_abs().max(1) as f64).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let score = if weights.len() == 1 {
        scores[0]
    } else {
        weights.iter().zip(scores).map(|(w, s)| w * s).sum()
    };
    Phase2 {
        score,
        weights,
        scale: c,
    }
}

/// Shared control flow. `score(slot)` is called once per probed cell.
pub(crate) fn descend(
    shape: TreeShape,
    present: impl Fn(usize) -> bool,
    count: impl Fn(usize) -> u32,
    query_count: u32,
    mut score: impl FnMut(usize) -> f64,
    scale: Option<f64>,
) -> (usize, usize, Vec<LevelBest>, Phase2) {
    let mut accessed = 1;
    let mut cur = 0;
    let mut cur_score = score(0);
    let mut best = vec![(0usize, cur_score)];
    let mut l_ph1 = 0;
    for level in 1..shape.levels {
        let mut top: Option<(usize, f64)> = None;
        for child in shape.children(cur).filter(|&c| present(c)) {
            accessed += 1;
            let s = score(child);
            if top.is_none_or(|(_, t)| s > t) {
                top = Some((child, s));
            }
        }
        match top {
            Some((slot, s)) if s > cur_score => {
                cur = slot;
                cur_score = s;
                best.push((slot, s));
                l_ph1 = level;
            }
            _ => break,
        }
    }
    let v: Vec<i64> = best
        .iter()
        .map(|&(slot, _)| query_count as i64 - count(slot) as i64)
        .collect();
    let scores: Vec<f64> = best.iter().map(|b| b.1).collect();
    let p2 = phase2(&scores, &v, scale);
    let levels = best
        .iter()
        .enumerate()
        .map(|(level, &(slot, score))| LevelBest {
            level,
            slot,
            score,
            v: v[level],
            weight: p2.weights[level],
        })
        .collect();
    (l_ph1, accessed, levels, p2)
}

/// Fast-VE search with any cell scorer; `scale` overrides the weight
/// scale `C`.
pub fn fast_ve_search_with<P: Payload, S: CellScorer<P> + ?Sized>(
    q: &QueryDescriptor<P>,
    index: &VoronoiIndex<P>,
    scorer: &S,
    scale: Option<f64>,
) -> SearchResult {
    let (l_ph1, accessed, per_level_best, p2) = descend(
        index.shape,
        |s| index.is_present(s),
        |s| index.cells[s].point_count,
        q.point_count,
        |s| cell_score(scorer, &q.descriptor, &index.cells[s].descriptor),
        scale,
    );
    SearchResult {
        image_id: index.image_id.clone(),
        score: p2.score,
        l_ph1,
        cells_accessed: accessed,
        table_reads: accessed * scorer.reads_per_score(),
        per_level_best,
        scale: p2.scale,
    }
}

pub fn fast_ve_search(q: &QueryDescriptor, index: &VoronoiIndex) -> SearchResult {
    fast_ve_search_with(q, index, &super::Exact, None)
}

pub fn quantized_fast_ve_search(
    q: &QueryDescriptor<PQCode>,
    index: &VoronoiIndex<PQCode>,
    model: &PQModel,
) -> SearchResult {
    fast_ve_search_with(q, index, &Sdc(model), None)
}

/// Parent score approximated as the mean of its constituent cells' scores.
pub fn quantized_level_projection_score(q: &PQCode, leaves: &[&PQCode], model: &PQModel) -> f64 {
    let live: Vec<f64> = leaves
        .iter()
        .filter(|l| !l.empty)
        .map(|l| sdc_similarity(q, l, model))
        .collect();
    if q.empty || live.is_empty() {
        f64::NEG_INFINITY
    } else {
        live.iter().sum::<f64>() / live.len() as f64
    }
}

/// Fast-VE over an index that stores only terminal cells. A non-terminal
/// cell scores the mean over its present, non-empty children, applied
/// recursively; terminal scores are computed once per query.
pub fn level_projection_search<P: Payload, S: CellScorer<P> + ?Sized>(
    q: &QueryDescriptor<P>,
    index: &LeafIndex<P>,
    scorer: &S,
) -> SearchResult {
    let mut memo: HashMap<usize, f64> = HashMap::new();
    let mut leaf_scores = 0usize;
    fn eval<P: Payload, S: CellScorer<P> + ?Sized>(
        slot: usize,
        q: &P,
        index: &LeafIndex<P>,
        scorer: &S,
        memo: &mut HashMap<usize, f64>,
        leaf_scores: &mut usize,
    ) -> f64 {
        if let Some(&s) = memo.get(&slot) {
            return s;
        }
        let s = match &index.leaves[slot] {
            Some(leaf) => {
                *leaf_scores += 1;
                cell_score(scorer, q, leaf)
            }
            None => {
                let kids: Vec<f64> = index
                    .shape
                    .children(slot)
                    .filter(|&c| index.is_present(c))
                    .map(|c| eval(c, q, index, scorer, memo, leaf_scores))
                    .filter(|s| s.is_finite())
                    .collect();
                if kids.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    kids.iter().sum::<f64>() / kids.len() as f64
                }
            }
        };
        memo.insert(slot, s);
        s
    }
    let (l_ph1, accessed, per_level_best, p2) = descend(
        index.shape,
        |s| index.is_present(s),
        |s| index.counts[s],
        q.point_count,
        |s| eval(s, &q.descriptor, index, scorer, &mut memo, &mut leaf_scores),
        None,
    );
    SearchResult {
        image_id: index.image_id.clone(),
        score: p2.score,
        l_ph1,
        cells_accessed: accessed,
        table_reads: leaf_scores * scorer.reads_per_score(),
        per_level_best,
        scale: p2.scale,
    }
}
