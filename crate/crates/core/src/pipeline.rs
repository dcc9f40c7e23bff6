//! End-to-end helpers shared by the command-line tool and the test suites:
//! model training from feature sets, dataset encoding and query encoding.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clustering::{spatial_hkmeans, KMeansParams, Vocabulary, DEFAULT_MAX_ITERS};
use crate::encoder::{pca_train, PcaModel, ProjectedDescriptor, Whitener};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::pq::{pq_train, PQModel, PqTrainParams};
use crate::search::QueryEncoding;
use crate::voronoi::{CellEncoder, LeafIndex, MultiIndex, VoronoiIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub vocab_k: usize,
    pub levels: usize,
    pub branching: usize,
    pub pca_dim: usize,
    pub pq_m: usize,
    pub pq_zp: usize,
    /// Shape of the query-side tree used for subqueries.
    pub subquery_levels: usize,
    pub subquery_branching: usize,
    pub ssr: bool,
    /// Upper bound on local descriptors sampled for vocabulary training.
    pub vocab_sample: usize,
    /// Upper bound on cell descriptors used for PCA training.
    pub pca_sample: usize,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            vocab_k: 64,
            levels: 3,
            branching: 3,
            pca_dim: 128,
            pq_m: 32,
            pq_zp: 256,
            subquery_levels: 3,
            subquery_branching: 2,
            ssr: true,
            vocab_sample: 100_000,
            pca_sample: 4_000,
            seed: 7,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_k == 0 || self.pca_dim == 0 || self.levels == 0 || self.subquery_levels == 0 {
            return Err(Error::InvalidParameter("K, D and tree levels must be positive".into()));
        }
        if self.pq_m == 0 || !self.pca_dim.is_multiple_of(self.pq_m) {
            return Err(Error::InvalidParameter(format!(
                "D = {} is not divisible by M = {}",
                self.pca_dim, self.pq_m
            )));
        }
        if self.pq_zp == 0 || self.pq_zp > 256 {
            return Err(Error::InvalidParameter(format!("Z' = {} must be in 1..=256", self.pq_zp)));
        }
        Ok(())
    }
}

fn subsample(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut picks = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, cap).into_vec();
    picks.sort_unstable();
    picks
}

/// K-means over a deterministic sample of every local descriptor.
pub fn train_vocabulary(images: &[FeatureSet], params: &PipelineParams) -> Result<Vocabulary> {
    let dim = images
        .first()
        .map(|f| f.dim)
        .ok_or(Error::InsufficientRows { needed: params.vocab_k, available: 0 })?;
    let mut all = Vec::new();
    for fs in images {
        fs.expect_dim(dim)?;
        all.extend(fs.descriptors.iter().map(|&v| v as f64));
    }
    let n = all.len() / dim;
    let rows: Vec<f64> = subsample(n, params.vocab_sample, params.seed)
        .into_iter()
        .flat_map(|i| all[i * dim..(i + 1) * dim].to_vec())
        .collect();
    Vocabulary::train(
        &rows,
        dim,
        &KMeansParams {
            k: params.vocab_k,
            max_iters: DEFAULT_MAX_ITERS,
            seed: params.seed,
        },
    )
}

/// Cell VLADs from every level of every image's tree, pooled.
pub fn cell_training_rows(images: &[FeatureSet], vocab: &Vocabulary, params: &PipelineParams) -> Result<Vec<f64>> {
    let u = vocab.k * vocab.dim;
    let per_image: Vec<Vec<f64>> = images
        .par_iter()
        .map(|fs| {
            let tree = spatial_hkmeans(fs, params.levels, params.branching, params.seed)?;
            let assignments = crate::encoder::assign_features(fs, vocab)?;
            let mut rows = Vec::new();
            for node in tree.nodes.iter().flatten().filter(|n| !n.members.is_empty()) {
                let raw = crate::encoder::vlad_encode_assigned(fs, vocab, &assignments, &node.members)?;
                let raw = if params.ssr { crate::encoder::ssr_normalize(&raw) } else { raw };
                rows.extend(raw.values);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = per_image.into_iter().flatten().collect();
    let n = all.len() / u;
    Ok(subsample(n, params.pca_sample, params.seed ^ 0x5ca1ab1e)
        .into_iter()
        .flat_map(|i| all[i * u..(i + 1) * u].to_vec())
        .collect())
}

pub fn train_pca(images: &[FeatureSet], vocab: &Vocabulary, params: &PipelineParams) -> Result<PcaModel> {
    let rows = cell_training_rows(images, vocab, params)?;
    pca_train(&rows, vocab.k * vocab.dim, params.pca_dim)
}

/// Every projected cell of the training images, the rows PQ is trained on.
pub fn training_cells(
    images: &[FeatureSet],
    vocab: &Vocabulary,
    pca: &PcaModel,
    params: &PipelineParams,
) -> Result<Vec<ProjectedDescriptor>> {
    let indexes = encode_dataset(images, vocab, pca, params)?;
    Ok(indexes
        .into_iter()
        .flat_map(|idx| {
            let present: Vec<usize> = idx.present_slots().collect();
            present.into_iter().map(move |s| idx.cells[s].descriptor.clone())
        })
        .filter(|pd| !pd.empty)
        .collect())
}

pub fn train_pq(cells: &[ProjectedDescriptor], pca: &PcaModel, params: &PipelineParams) -> Result<(Whitener, PQModel)> {
    let whitener = Whitener::new(pca, params.pq_m)?;
    let rows: Vec<_> = cells.iter().map(|pd| whitener.apply(pd)).collect::<Result<_>>()?;
    let model = pq_train(&rows, &PqTrainParams::new(params.pq_m, params.pq_zp, params.seed))?;
    Ok((whitener, model))
}

fn encoder<'a>(vocab: &'a Vocabulary, pca: &'a PcaModel, params: &PipelineParams) -> Result<CellEncoder<'a>> {
    Ok(CellEncoder::new(vocab, pca)?.with_ssr(params.ssr))
}

pub fn encode_dataset(
    images: &[FeatureSet],
    vocab: &Vocabulary,
    pca: &PcaModel,
    params: &PipelineParams,
) -> Result<Vec<VoronoiIndex>> {
    let enc = encoder(vocab, pca, params)?;
    images
        .par_iter()
        .map(|fs| enc.encode_tree(fs, &spatial_hkmeans(fs, params.levels, params.branching, params.seed)?))
        .collect()
}

/// Terminal cells only, for level projection.
pub fn encode_leaves_dataset(
    images: &[FeatureSet],
    vocab: &Vocabulary,
    pca: &PcaModel,
    params: &PipelineParams,
) -> Result<Vec<LeafIndex>> {
    let enc = encoder(vocab, pca, params)?;
    images
        .par_iter()
        .map(|fs| enc.encode_leaves(fs, &spatial_hkmeans(fs, params.levels, params.branching, params.seed)?))
        .collect()
}

pub fn encode_grid_dataset(
    images: &[FeatureSet],
    vocab: &Vocabulary,
    pca: &PcaModel,
    params: &PipelineParams,
) -> Result<Vec<MultiIndex>> {
    let enc = encoder(vocab, pca, params)?;
    images.par_iter().map(|fs| enc.encode_grid(fs, params.levels)).collect()
}

/// Whole-query descriptor, and the query's own partition when `subqueries`.
pub fn encode_query(
    fs: &FeatureSet,
    vocab: &Vocabulary,
    pca: &PcaModel,
    params: &PipelineParams,
    subqueries: bool,
) -> Result<QueryEncoding<ProjectedDescriptor>> {
    let enc = encoder(vocab, pca, params)?;
    let partition = if subqueries {
        let tree = spatial_hkmeans(fs, params.subquery_levels, params.subquery_branching, params.seed)?;
        Some(enc.encode_tree(fs, &tree)?)
    } else {
        None
    };
    Ok(QueryEncoding {
        whole: enc.encode_whole(fs)?,
        partition,
    })
}
