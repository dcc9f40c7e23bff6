//! Retrieval quality and cost measurement.

mod bench;

pub use bench::{bench_m_sweep, BenchRow, BenchSetup};

use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::features::Relevance;
use crate::search::RankedResult;

/// Relevance judgements for one query. The query's own source image, when
/// known, is ignored like junk.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryRecord {
    pub query_id: String,
    pub good: BTreeSet<String>,
    pub junk: BTreeSet<String>,
    pub source: Option<String>,
}

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, rel: &Relevance, source: Option<String>) -> Self {
        QueryRecord {
            query_id: query_id.into(),
            good: rel.good.clone(),
            junk: rel.junk.clone(),
            source,
        }
    }

    fn ignored(&self, id: &str) -> bool {
        self.junk.contains(id) || self.source.as_deref() == Some(id)
    }
}

/// Mean over good hits of `hits so far / rank`, with junk removed from the
/// list before ranks are counted. Good images missing from the list count
/// as zero precision.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], rec: &QueryRecord) -> Result<f64> {
    if rec.good.is_empty() {
        return Err(Error::EmptyGoodSet(rec.query_id.clone()));
    }
    let mut seen = HashSet::with_capacity(ranked.len());
    let mut rank = 0usize;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for id in ranked {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        if rec.ignored(id) {
            continue;
        }
        rank += 1;
        if rec.good.contains(id) {
            hits += 1;
            sum += hits as f64 / rank as f64;
        }
    }
    Ok(sum / rec.good.len() as f64)
}

pub fn ranked_average_precision(ranked: &RankedResult, rec: &QueryRecord) -> Result<f64> {
    average_precision(&ranked.ids(), rec)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::InvalidParameter("mAP over zero queries".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// What one similarity evaluation costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    /// Inner products of `dim`-dimensional vectors, in units of one 128-D
    /// inner product.
    Unquantized { dim: usize },
    /// Table reads, in units of the `m` reads one code comparison needs.
    Quantized { m: usize },
    /// One popcount comparison per cell.
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityReport {
    /// Multiply-accumulate operations or table reads, summed over queries.
    pub operations: usize,
    /// Mean per query and dataset image, in baseline units.
    pub normalized: f64,
    pub mean_cells_accessed: f64,
}

pub const BASELINE_DIM: usize = 128;

/// Averages per query over the dataset images it was scored against.
pub fn complexity_accounting(results: &[RankedResult], cost: CostModel) -> ComplexityReport {
    let mut operations = 0;
    let mut per_query_units = 0.0;
    let mut per_query_cells = 0.0;
    let mut queries = 0;
    for r in results.iter().filter(|r| !r.results.is_empty()) {
        let images = r.results.len() as f64;
        let cells = r.cells_accessed();
        let (ops, units) = match cost {
            CostModel::Unquantized { dim } => {
                (cells * dim, cells as f64 * dim as f64 / BASELINE_DIM as f64)
            }
            CostModel::Quantized { m } => (r.table_reads(), r.table_reads() as f64 / m as f64),
            CostModel::Sign => (cells, cells as f64),
        };
        operations += ops;
        per_query_units += units / images;
        per_query_cells += cells as f64 / images;
        queries += 1;
    }
    let q = queries.max(1) as f64;
    ComplexityReport {
        operations,
        normalized: per_query_units / q,
        mean_cells_accessed: per_query_cells / q,
    }
}
