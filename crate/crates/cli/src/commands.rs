use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use vore::clustering::{load_vocabulary, save_vocabulary, TreeShape, Vocabulary};
use vore::encoder::{load_pca, save_pca, PcaModel, ProjectedDescriptor, Whitener};
use vore::eval::{
    bench_m_sweep, complexity_accounting, mean_average_precision, ranked_average_precision, BenchRow,
    BenchSetup, CostModel, QueryRecord,
};
use vore::features::{
    load_features, read_ground_truth, read_manifest, read_queries, save_features, synth_generate,
    write_ground_truth, write_manifest, write_queries, FeatureSet, ManifestEntry, Rect,
    SyntheticDatasetSpec,
};
use vore::pipeline::{
    encode_dataset, encode_grid_dataset, encode_leaves_dataset, encode_query, train_pca, train_pq,
    train_vocabulary, training_cells,
};
use vore::pq::{load_pq, save_pq, wnpq_encode, PQCode, PQModel, SignCode};
use vore::search::{
    rank_dataset, rank_leaves, rank_multi, Exact, Hamming, Method, QueryEncoding, RankedResult, Sdc,
};
use vore::voronoi::{
    level_project, load_index, quantize_index, quantize_multi, save_index, storage_report, IndexSet,
    LeafIndex, MultiIndex, VoronoiIndex,
};

use crate::config::{Layout, PipelineConfig};

const VOCAB_FILE: &str = "vocab.vvoc";
const PCA_FILE: &str = "pca.vpca";
const PQ_FILE: &str = "pq.vpqm";

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("`{key}` is not set (add it to the config file)"))
}

pub fn load_images(manifest: &Path) -> Result<Vec<FeatureSet>> {
    let entries = read_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    entries
        .par_iter()
        .map(|e| {
            let fs = load_features(&e.path).with_context(|| format!("loading {}", e.path.display()))?;
            if fs.image_id != e.image_id {
                bail!(
                    "{} holds image {:?} but the manifest lists {:?}",
                    e.path.display(),
                    fs.image_id,
                    e.image_id
                );
            }
            Ok(fs)
        })
        .collect()
}

fn check_disjoint(cfg: &PipelineConfig, allow_overlap: bool) -> Result<()> {
    let (Some(train), Some(test)) = (&cfg.train_manifest, &cfg.manifest) else {
        return Ok(());
    };
    let canonical = |p: &Path| -> Result<HashSet<PathBuf>> {
        Ok(read_manifest(p)?
            .into_iter()
            .map(|e| fs::canonicalize(&e.path).unwrap_or(e.path))
            .collect())
    };
    let shared = canonical(train)?.intersection(&canonical(test)?).count();
    if shared > 0 && !allow_overlap {
        warn!("training and test manifests share {shared} feature files; pass --allow-overlap to silence");
    }
    Ok(())
}

fn training_images(cfg: &PipelineConfig, allow_overlap: bool) -> Result<Vec<FeatureSet>> {
    check_disjoint(cfg, allow_overlap)?;
    let images = load_images(required(&cfg.train_manifest, "train_manifest")?)?;
    if images.is_empty() {
        bail!("training manifest is empty");
    }
    Ok(images)
}

fn prepare_models_dir(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.models).with_context(|| format!("creating {}", cfg.models.display()))
}

pub fn train_vocab(cfg: &PipelineConfig, allow_overlap: bool) -> Result<()> {
    let images = training_images(cfg, allow_overlap)?;
    let vocab = train_vocabulary(&images, &cfg.params)?;
    prepare_models_dir(cfg)?;
    let path = cfg.model_path(VOCAB_FILE);
    save_vocabulary(&vocab, &path)?;
    info!("wrote {} (K={}, dim={})", path.display(), vocab.k, vocab.dim);
    Ok(())
}

fn vocab(cfg: &PipelineConfig) -> Result<Vocabulary> {
    let p = cfg.model_path(VOCAB_FILE);
    load_vocabulary(&p).with_context(|| format!("loading {} (run train-vocab first)", p.display()))
}

fn pca(cfg: &PipelineConfig) -> Result<PcaModel> {
    let p = cfg.model_path(PCA_FILE);
    load_pca(&p).with_context(|| format!("loading {} (run train-pca first)", p.display()))
}

fn pq(cfg: &PipelineConfig) -> Result<PQModel> {
    let p = cfg.model_path(PQ_FILE);
    load_pq(&p).with_context(|| format!("loading {} (run train-pq first)", p.display()))
}

pub fn train_pca_cmd(cfg: &PipelineConfig, allow_overlap: bool) -> Result<()> {
    let images = training_images(cfg, allow_overlap)?;
    let vocab = vocab(cfg)?;
    let model = train_pca(&images, &vocab, &cfg.params)?;
    let path = cfg.model_path(PCA_FILE);
    save_pca(&model, &path)?;
    info!("wrote {} (U={}, D={}, Y={})", path.display(), model.input_dim, model.output_dim, model.training_rows);
    Ok(())
}

pub fn train_pq_cmd(cfg: &PipelineConfig, allow_overlap: bool) -> Result<()> {
    let pca = pca(cfg)?;
    let model = if cfg.sign_limit {
        PQModel::sign_limit(pca.output_dim)?
    } else {
        let images = training_images(cfg, allow_overlap)?;
        let vocab = vocab(cfg)?;
        let cells = training_cells(&images, &vocab, &pca, &cfg.params)?;
        train_pq(&cells, &pca, &cfg.params)?.1
    };
    let path = cfg.model_path(PQ_FILE);
    save_pq(&model, &path)?;
    info!("wrote {} (M={}, Z'={})", path.display(), model.m, model.zp);
    Ok(())
}

pub fn encode(cfg: &PipelineConfig) -> Result<()> {
    let images = load_images(required(&cfg.manifest, "manifest")?)?;
    let vocab = vocab(cfg)?;
    let pca = pca(cfg)?;
    let params = &cfg.params;
    let quantizer = if cfg.quantized {
        let model = pq(cfg)?;
        Some((Whitener::new(&pca, model.m)?, model))
    } else {
        None
    };
    let set = match (cfg.layout, &quantizer, cfg.level_projection) {
        (Layout::Grid, None, _) => IndexSet::Multi(encode_grid_dataset(&images, &vocab, &pca, params)?),
        (Layout::Grid, Some((w, m)), _) => IndexSet::MultiQuantized(
            encode_grid_dataset(&images, &vocab, &pca, params)?
                .iter()
                .map(|i| quantize_multi(i, w, m))
                .collect::<vore::Result<_>>()?,
        ),
        (Layout::Voronoi, None, false) => IndexSet::Voronoi(encode_dataset(&images, &vocab, &pca, params)?),
        (Layout::Voronoi, None, true) => IndexSet::Leaves(encode_leaves_dataset(&images, &vocab, &pca, params)?),
        (Layout::Voronoi, Some((w, m)), lp) => {
            let q: Vec<VoronoiIndex<PQCode>> = encode_dataset(&images, &vocab, &pca, params)?
                .iter()
                .map(|i| quantize_index(i, w, m))
                .collect::<vore::Result<_>>()?;
            if lp {
                IndexSet::LeavesQuantized(q.iter().map(VoronoiIndex::terminal_only).collect())
            } else {
                IndexSet::VoronoiQuantized(q)
            }
        }
    };
    let path = cfg.index_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    save_index(&set, &path)?;
    let shape = TreeShape::new(params.levels, params.branching)?;
    let bits = quantizer.as_ref().map_or(0, |(_, m)| m.code_bits());
    let report = storage_report(shape, pca.output_dim, bits);
    info!("wrote {} ({} images)", path.display(), set.len());
    eprintln!(
        "storage per image: full {} B, leaf-only {} B, quantized {} B",
        report.full_bytes, report.leaf_bytes, report.quantized_bytes
    );
    Ok(())
}

/// Index contents ready for scoring.
enum Prepared {
    Exact(Vec<VoronoiIndex>),
    Pq(Vec<VoronoiIndex<PQCode>>),
    Sign(Vec<VoronoiIndex<SignCode>>),
    PqLeaves(Vec<LeafIndex<PQCode>>),
    Grid(Vec<MultiIndex>),
    PqGrid(Vec<MultiIndex<PQCode>>),
}

struct Engine {
    vocab: Vocabulary,
    pca: PcaModel,
    quantizer: Option<(Whitener, PQModel)>,
    index: Prepared,
}

fn is_sign_model(m: &PQModel) -> bool {
    m.sub_dim == 1 && m.zp == 2 && *m == PQModel::sign_limit(m.m).expect("positive dimension")
}

impl Engine {
    fn load(cfg: &PipelineConfig) -> Result<Self> {
        let vocab = vocab(cfg)?;
        let pca = pca(cfg)?;
        let path = cfg.index_path();
        let set = load_index(&path).with_context(|| format!("loading index {} (run encode first)", path.display()))?;
        if cfg.quantized && !set.is_quantized() {
            bail!("--quantized was requested but {} is not quantized", path.display());
        }
        let quantizer = if set.is_quantized() {
            let model = pq(cfg)?;
            Some((Whitener::new(&pca, model.m)?, model))
        } else {
            None
        };
        let sign = quantizer.as_ref().is_some_and(|(_, m)| is_sign_model(m));
        let index = match set {
            IndexSet::Voronoi(v) => Prepared::Exact(v),
            IndexSet::Leaves(v) => Prepared::Exact(
                v.iter().map(|l| level_project(l, &pca)).collect::<vore::Result<_>>()?,
            ),
            IndexSet::VoronoiQuantized(v) if sign => Prepared::Sign(
                v.iter()
                    .map(|i| i.try_map(pca.output_dim, |c| Ok(SignCode::from_pq_code(c))))
                    .collect::<vore::Result<_>>()?,
            ),
            IndexSet::VoronoiQuantized(v) => Prepared::Pq(v),
            IndexSet::LeavesQuantized(v) => Prepared::PqLeaves(v),
            IndexSet::Multi(v) => Prepared::Grid(v),
            IndexSet::MultiQuantized(v) => Prepared::PqGrid(v),
        };
        Ok(Engine { vocab, pca, quantizer, index })
    }

    fn cost(&self) -> CostModel {
        match (&self.index, &self.quantizer) {
            (Prepared::Sign(_), _) => CostModel::Sign,
            (_, Some((_, m))) => CostModel::Quantized { m: m.m },
            _ => CostModel::Unquantized { dim: self.pca.output_dim },
        }
    }

    fn rank(&self, cfg: &PipelineConfig, fs: &FeatureSet, method: Method) -> Result<RankedResult> {
        let grid = matches!(self.index, Prepared::Grid(_) | Prepared::PqGrid(_));
        if grid && method != Method::Global {
            bail!("grid indexes support only --method global");
        }
        if matches!(self.index, Prepared::PqLeaves(_)) && method != Method::Fast {
            bail!("quantized level-projection indexes support only --method fast");
        }
        let q = encode_query(fs, &self.vocab, &self.pca, &cfg.params, method == Method::Subquery)?;
        let quantize = |q: &QueryEncoding<ProjectedDescriptor>| -> Result<QueryEncoding<PQCode>> {
            let (w, m) = self.quantizer.as_ref().expect("quantized index has a model");
            Ok(QueryEncoding {
                whole: q.whole.try_map(|pd| wnpq_encode(pd, w, m))?,
                partition: q
                    .partition
                    .as_ref()
                    .map(|p| p.try_map(m.m, |pd| wnpq_encode(pd, w, m)))
                    .transpose()?,
            })
        };
        Ok(match &self.index {
            Prepared::Exact(v) => rank_dataset(&q, v, method, &Exact)?,
            Prepared::Grid(v) => rank_multi(&q.whole, v, &Exact),
            Prepared::Pq(v) => {
                let (_, m) = self.quantizer.as_ref().expect("model");
                rank_dataset(&quantize(&q)?, v, method, &Sdc(m))?
            }
            Prepared::PqGrid(v) => {
                let (_, m) = self.quantizer.as_ref().expect("model");
                rank_multi(&quantize(&q)?.whole, v, &Sdc(m))
            }
            Prepared::PqLeaves(v) => {
                let (_, m) = self.quantizer.as_ref().expect("model");
                rank_leaves(&quantize(&q)?.whole, v, &Sdc(m))
            }
            Prepared::Sign(v) => {
                let qq = quantize(&q)?;
                let dim = self.pca.output_dim;
                let signs = QueryEncoding {
                    whole: qq.whole.try_map(|c| Ok(SignCode::from_pq_code(c)))?,
                    partition: qq
                        .partition
                        .as_ref()
                        .map(|p| p.try_map(dim, |c| Ok(SignCode::from_pq_code(c))))
                        .transpose()?,
                };
                rank_dataset(&signs, v, method, &Hamming)?
            }
        })
    }
}

fn query_features(path: &Path, roi: Option<&Rect>) -> Result<FeatureSet> {
    let fs = load_features(path).with_context(|| format!("loading query {}", path.display()))?;
    Ok(match roi {
        Some(r) => fs.crop(r),
        None => fs,
    })
}

pub fn query(cfg: &PipelineConfig, features: &Path, roi: Option<&Rect>, top: Option<usize>, out: &mut impl Write) -> Result<()> {
    let engine = Engine::load(cfg)?;
    let fs = query_features(features, roi)?;
    if fs.is_empty() {
        warn!("query has no keypoints; every score is -inf");
    }
    let ranked = engine.rank(cfg, &fs, cfg.method)?;
    for (i, r) in ranked.results.iter().take(top.unwrap_or(usize::MAX)).enumerate() {
        writeln!(out, "{}\t{}\t{:.6}", i + 1, r.image_id, r.score)?;
    }
    Ok(())
}

pub fn eval(cfg: &PipelineConfig, out: &mut impl Write) -> Result<()> {
    let engine = Engine::load(cfg)?;
    let queries = read_queries(required(&cfg.queries, "queries")?)?;
    let truth = read_ground_truth(required(&cfg.ground_truth, "ground_truth")?)?;
    let entries: HashMap<String, PathBuf> = read_manifest(required(&cfg.manifest, "manifest")?)?
        .into_iter()
        .map(|e| (e.image_id, e.path))
        .collect();
    let mut aps = Vec::with_capacity(queries.len());
    let mut ranked = Vec::with_capacity(queries.len());
    for q in &queries {
        let rel = truth
            .get(&q.query_id)
            .with_context(|| format!("query {} has no ground truth", q.query_id))?;
        let src = entries
            .get(&q.source_image)
            .with_context(|| format!("query {}: source image {} is not in the manifest", q.query_id, q.source_image))?;
        let fs = query_features(src, q.roi.as_ref())?;
        let r = engine.rank(cfg, &fs, cfg.method)?;
        let ap = ranked_average_precision(&r, &QueryRecord::new(&q.query_id, rel, Some(q.source_image.clone())))?;
        writeln!(out, "{}\t{:.6}", q.query_id, ap)?;
        aps.push(ap);
        ranked.push(r);
    }
    let map = mean_average_precision(&aps)?;
    let cx = complexity_accounting(&ranked, engine.cost());
    writeln!(out, "mAP\t{map:.6}")?;
    writeln!(out, "complexity\t{:.4}", cx.normalized)?;
    writeln!(out, "cells_per_image\t{:.4}", cx.mean_cells_accessed)?;
    Ok(())
}

pub fn bench(cfg: &PipelineConfig, ms: &[usize], allow_overlap: bool, out: impl Write) -> Result<Vec<BenchRow>> {
    let train = training_images(cfg, allow_overlap)?;
    let images = load_images(required(&cfg.manifest, "manifest")?)?;
    let vocab = vocab(cfg)?;
    let pca = pca(cfg)?;
    let params = &cfg.params;
    let training = training_cells(&train, &vocab, &pca, params)?;
    let dataset = encode_dataset(&images, &vocab, &pca, params)?;
    let by_id: HashMap<&str, &FeatureSet> = images.iter().map(|f| (f.image_id.as_str(), f)).collect();
    let truth = read_ground_truth(required(&cfg.ground_truth, "ground_truth")?)?;
    let mut queries = Vec::new();
    for q in read_queries(required(&cfg.queries, "queries")?)? {
        let src = by_id
            .get(q.source_image.as_str())
            .with_context(|| format!("query {}: source image {} is not in the manifest", q.query_id, q.source_image))?;
        let fs = match &q.roi {
            Some(r) => src.crop(r),
            None => (*src).clone(),
        };
        let rel = truth
            .get(&q.query_id)
            .with_context(|| format!("query {} has no ground truth", q.query_id))?;
        let enc = encode_query(&fs, &vocab, &pca, params, false)?;
        queries.push((enc.whole, QueryRecord::new(&q.query_id, rel, Some(q.source_image.clone()))));
    }
    let setup = BenchSetup {
        pca: &pca,
        training: &training,
        dataset: &dataset,
        queries: &queries,
        centroids: params.pq_zp,
        seed: params.seed,
    };
    let rows = bench_m_sweep(&setup, ms)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["M", "mAP", "distortion", "reads_per_query"])?;
    for r in &rows {
        w.write_record([
            r.m.to_string(),
            format!("{:.6}", r.map),
            format!("{:.6}", r.distortion),
            format!("{:.1}", r.reads_per_query),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn synth(out: &Path, spec: &SyntheticDatasetSpec) -> Result<()> {
    let (images, truth) = synth_generate(spec)?;
    let dir = out.join("features");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let entries: Vec<ManifestEntry> = images
        .par_iter()
        .map(|fs| {
            let path = dir.join(format!("{}.vfea", fs.image_id));
            save_features(fs, &path)?;
            Ok(ManifestEntry { image_id: fs.image_id.clone(), path })
        })
        .collect::<vore::Result<_>>()?;
    write_manifest(out.join("manifest.tsv"), &entries)?;
    let rel: BTreeMap<_, _> = truth.relevance();
    write_ground_truth(out.join("ground_truth.tsv"), &rel)?;
    write_queries(out.join("queries.tsv"), &truth.queries())?;
    info!("wrote {} images and {} queries to {}", images.len(), rel.len(), out.display());
    Ok(())
}
