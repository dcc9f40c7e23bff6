use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::voronoi::{Cell, LeafIndex, MultiIndex, Payload, VoronoiIndex};

use super::fast::{fast_ve_search_with, level_projection_search};
use super::{global_max_score, root_score, CellScorer, QueryDescriptor, SearchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Best cell over an exhaustive scan.
    Global,
    /// Greedy descent with level weighting.
    Fast,
    /// Fast search per query cell, averaged.
    Subquery,
    /// Whole-image descriptor only.
    Root,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Method::Global),
            "fast" => Ok(Method::Fast),
            "subquery" => Ok(Method::Subquery),
            "root" => Ok(Method::Root),
            _ => Err(Error::InvalidParameter(format!(
                "unknown method {s:?} (expected global, fast, subquery or root)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Global => "global",
            Method::Fast => "fast",
            Method::Subquery => "subquery",
            Method::Root => "root",
        })
    }
}

/// Whole-query descriptor, plus the query's own partition when subqueries
/// are wanted.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEncoding<P> {
    pub whole: QueryDescriptor<P>,
    pub partition: Option<VoronoiIndex<P>>,
}

/// Per-image results, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    pub results: Vec<SearchResult>,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<&str> {
        self.results.iter().map(|r| r.image_id.as_str()).collect()
    }

    pub fn cells_accessed(&self) -> usize {
        self.results.iter().map(|r| r.cells_accessed).sum()
    }

    pub fn table_reads(&self) -> usize {
        self.results.iter().map(|r| r.table_reads).sum()
    }
}

/// Sorts by descending score, ties by ascending image id.
pub fn rank_results(mut results: Vec<SearchResult>) -> RankedResult {
    results.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.image_id.cmp(&b.image_id)));
    RankedResult { results }
}

/// Runs the fast search once per non-empty query cell and averages the
/// scores with equal weights.
pub fn subquery_search<P: Payload, S: CellScorer<P> + ?Sized>(
    query: &VoronoiIndex<P>,
    index: &VoronoiIndex<P>,
    scorer: &S,
) -> SearchResult {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut accessed = 0;
    let mut reads = 0;
    for slot in query.present_slots() {
        let cell: &Cell<P> = &query.cells[slot];
        if cell.is_empty() {
            continue;
        }
        let r = fast_ve_search_with(cell, index, scorer, None);
        total += r.score;
        n += 1;
        accessed += r.cells_accessed;
        reads += r.table_reads;
    }
    SearchResult {
        image_id: index.image_id.clone(),
        score: if n == 0 { f64::NEG_INFINITY } else { total / n as f64 },
        l_ph1: 0,
        cells_accessed: accessed,
        table_reads: reads,
        per_level_best: Vec::new(),
        scale: 1.0,
    }
}

pub fn rank_dataset<P, S>(
    q: &QueryEncoding<P>,
    indexes: &[VoronoiIndex<P>],
    method: Method,
    scorer: &S,
) -> Result<RankedResult>
where
    P: Payload + Sync + Send,
    S: CellScorer<P> + ?Sized,
{
    if method == Method::Subquery && q.partition.is_none() {
        return Err(Error::InvalidParameter("subquery search needs a partitioned query".into()));
    }
    let results = indexes
        .par_iter()
        .map(|idx| match method {
            Method::Global => global_max_score(&q.whole, idx, scorer),
            Method::Fast => fast_ve_search_with(&q.whole, idx, scorer, None),
            Method::Root => root_score(&q.whole, idx, scorer),
            Method::Subquery => subquery_search(q.partition.as_ref().expect("checked"), idx, scorer),
        })
        .collect();
    Ok(rank_results(results))
}

/// Exhaustive best-block ranking over grid indexes.
pub fn rank_multi<P, S>(q: &QueryDescriptor<P>, indexes: &[MultiIndex<P>], scorer: &S) -> RankedResult
where
    P: Payload + Sync + Send,
    S: CellScorer<P> + ?Sized,
{
    rank_results(indexes.par_iter().map(|idx| global_max_score(q, idx, scorer)).collect())
}

/// Fast search over terminal-only indexes.
pub fn rank_leaves<P, S>(q: &QueryDescriptor<P>, indexes: &[LeafIndex<P>], scorer: &S) -> RankedResult
where
    P: Payload + Sync + Send,
    S: CellScorer<P> + ?Sized,
{
    rank_results(indexes.par_iter().map(|idx| level_projection_search(q, idx, scorer)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, score: f64) -> SearchResult {
        SearchResult {
            image_id: id.into(),
            score,
            l_ph1: 0,
            cells_accessed: 1,
            table_reads: 0,
            per_level_best: Vec::new(),
            scale: 1.0,
        }
    }

    #[test]
    fn singleton() {
        assert_eq!(rank_results(vec![result("a", 0.1)]).ids(), vec!["a"]);
    }

    #[test]
    fn ties_break_by_id() {
        let r = rank_results(vec![result("b", 0.5), result("a", 0.5)]);
        assert_eq!(r.ids(), vec!["a", "b"]);
    }

    #[test]
    fn matches_reference_sort() {
        let scores = [0.3, -0.2, 0.9, f64::NEG_INFINITY, 0.3, 0.0];
        let results: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| result(&format!("i{i}"), s))
            .collect();
        let mut expect: Vec<(f64, String)> = scores.iter().enumerate().map(|(i, &s)| (s, format!("i{i}"))).collect();
        expect.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let ranked = rank_results(results);
        assert_eq!(ranked.ids(), expect.iter().map(|e| e.1.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn method_names() {
        for m in [Method::Global, Method::Fast, Method::Subquery, Method::Root] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("best".parse::<Method>().is_err());
    }
}
