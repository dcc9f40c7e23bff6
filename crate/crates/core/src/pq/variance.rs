//! Per-subspace covariance summaries, used to check that whitening
//! balances the blocks that product quantization treats independently.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::encoder::{ProjectedDescriptor, Whitener};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum VariancePipeline<'a> {
    /// PCA output blocks as they are.
    Plain,
    /// Blocks after whitening and per-block normalization.
    Whitened(&'a Whitener),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStats {
    pub log_det: f64,
    pub trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub blocks: Vec<BlockStats>,
}

fn coefficient_of_variation(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

impl VarianceReport {
    pub fn cv_log_det(&self) -> f64 {
        coefficient_of_variation(self.blocks.iter().map(|b| b.log_det))
    }

    pub fn cv_trace(&self) -> f64 {
        coefficient_of_variation(self.blocks.iter().map(|b| b.trace))
    }
}

/// Sample covariance of each of the `m` blocks over the rows of a row-major
/// `dim`-wide matrix.
pub fn subspace_variance_report(
    rows: &[f64],
    dim: usize,
    m: usize,
    pipeline: VariancePipeline,
) -> Result<VarianceReport> {
    if m == 0 || dim == 0 || !dim.is_multiple_of(m) {
        return Err(Error::InvalidParameter(format!(
            "dimension {dim} is not divisible into {m} blocks"
        )));
    }
    let n = rows.len() / dim;
    if n < 2 {
        return Err(Error::InsufficientRows {
            needed: 2,
            available: n,
        });
    }
    let data: Vec<f64> = match pipeline {
        VariancePipeline::Plain => rows[..n * dim].to_vec(),
        VariancePipeline::Whitened(w) => {
            if w.block_count != m {
                return Err(Error::InvalidParameter(format!(
                    "whitener has {} blocks, report asked for {m}",
                    w.block_count
                )));
            }
            let mut out = Vec::with_capacity(n * dim);
            for r in rows.chunks_exact(dim) {
                let pd = ProjectedDescriptor {
                    values: r.to_vec(),
                    empty: false,
                };
                out.extend(w.apply(&pd)?.values);
            }
            out
        }
    };
    let d = dim / m;
    let blocks = (0..m)
        .map(|b| {
            let x = DMatrix::from_fn(n, d, |i, j| data[i * dim + b * d + j]);
            let mean = x.row_mean();
            let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
            let cov = centered.transpose() * &centered / (n as f64 - 1.0);
            let trace = cov.trace();
            let log_det = SymmetricEigen::new(cov)
                .eigenvalues
                .iter()
                .map(|l| l.max(f64::MIN_POSITIVE).ln())
                .sum();
            BlockStats { log_det, trace }
        })
        .collect();
    Ok(VarianceReport { blocks })
}
