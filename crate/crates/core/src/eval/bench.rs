//! Sweep over the number of product-quantization blocks.

use log::info;

use crate::encoder::{PcaModel, ProjectedDescriptor, Whitener};
use crate::error::{Error, Result};
use crate::pq::{pq_train, quantize, reconstruct, wnpq_encode, PQModel, PqTrainParams, SignCode};
use crate::search::{rank_dataset, Hamming, Method, QueryEncoding, RankedResult, Sdc};
use crate::voronoi::{Cell, VoronoiIndex};

use super::{complexity_accounting, mean_average_precision, ranked_average_precision, CostModel, QueryRecord};

/// Everything held fixed across the sweep.
pub struct BenchSetup<'a> {
    pub pca: &'a PcaModel,
    /// Cells used to train each PQ model.
    pub training: &'a [ProjectedDescriptor],
    pub dataset: &'a [VoronoiIndex],
    pub queries: &'a [(Cell<ProjectedDescriptor>, QueryRecord)],
    pub centroids: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub m: usize,
    pub map: f64,
    /// Mean squared error between the unit-norm whitened descriptor and its
    /// reconstruction, over the training cells.
    pub distortion: f64,
    pub reads_per_query: f64,
}

fn distortion(setup: &BenchSetup, whitener: &Whitener, model: &PQModel) -> Result<f64> {
    let scale = 1.0 / (model.m as f64).sqrt();
    let mut total = 0.0;
    let mut n = 0;
    for pd in setup.training.iter().filter(|p| !p.empty) {
        let wd = whitener.apply(pd)?;
        let rec = reconstruct(&quantize(&wd, model)?, model);
        total += wd.values.iter().zip(&rec).map(|(x, r)| (x * scale - r).powi(2)).sum::<f64>();
        n += 1;
    }
    Ok(total / n.max(1) as f64)
}

/// For each `M`, trains a PQ model (or uses sign codes when `M = D`),
/// quantizes dataset and queries, and runs the fast search.
pub fn bench_m_sweep(setup: &BenchSetup, ms: &[usize]) -> Result<Vec<BenchRow>> {
    let dim = setup.pca.output_dim;
    let mut rows = Vec::with_capacity(ms.len());
    for &m in ms {
        let whitener = Whitener::new(setup.pca, m)?;
        let sign = m == dim;
        let model = if sign {
            PQModel::sign_limit(dim)?
        } else {
            let training: Vec<_> = setup
                .training
                .iter()
                .map(|pd| whitener.apply(pd))
                .collect::<Result<_>>()?;
            pq_train(&training, &PqTrainParams::new(m, setup.centroids, setup.seed))?
        };
        let dataset: Vec<VoronoiIndex<_>> = setup
            .dataset
            .iter()
            .map(|idx| idx.try_map(m, |pd| wnpq_encode(pd, &whitener, &model)))
            .collect::<Result<_>>()?;
        let signs: Vec<VoronoiIndex<SignCode>> = if sign {
            dataset
                .iter()
                .map(|idx| idx.try_map(dim, |c| Ok(SignCode::from_pq_code(c))))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mut ranked: Vec<RankedResult> = Vec::with_capacity(setup.queries.len());
        let mut aps = Vec::with_capacity(setup.queries.len());
        for (q, rec) in setup.queries {
            let code = q.try_map(|pd| wnpq_encode(pd, &whitener, &model))?;
            let r = if sign {
                let query = QueryEncoding {
                    whole: code.try_map(|c| Ok(SignCode::from_pq_code(c)))?,
                    partition: None,
                };
                rank_dataset(&query, &signs, Method::Fast, &Hamming)?
            } else {
                let query = QueryEncoding {
                    whole: code,
                    partition: None,
                };
                rank_dataset(&query, &dataset, Method::Fast, &Sdc(&model))?
            };
            aps.push(ranked_average_precision(&r, rec)?);
            ranked.push(r);
        }
        if aps.is_empty() {
            return Err(Error::InvalidParameter("benchmark needs at least one query".into()));
        }
        let cost = if sign {
            CostModel::Sign
        } else {
            CostModel::Quantized { m }
        };
        let reads: usize = complexity_accounting(&ranked, cost).operations;
        let row = BenchRow {
            m,
            map: mean_average_precision(&aps)?,
            distortion: distortion(setup, &whitener, &model)?,
            reads_per_query: if sign { 0.0 } else { reads as f64 / aps.len() as f64 },
        };
        info!("M={} mAP={:.4} distortion={:.4}", row.m, row.map, row.distortion);
        rows.push(row);
    }
    Ok(rows)
}
