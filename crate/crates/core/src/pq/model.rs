use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::clustering::{kmeans, KMeansParams, DEFAULT_MAX_ITERS};
use crate::encoder::{ProjectedDescriptor, WhitenedDescriptor, Whitener};
use crate::error::{Error, Result};
use crate::linalg::{dot, nearest_row, norm, round_f32, sq_dist};

const MAGIC: &[u8; 4] = b"VPQM";
const VERSION: u16 = 1;

/// Centroids per block; one byte per code.
pub const DEFAULT_ZP: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PqTrainParams {
    pub blocks: usize,
    pub centroids: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub normalized: bool,
}

impl PqTrainParams {
    pub fn new(blocks: usize, centroids: usize, seed: u64) -> Self {
        PqTrainParams {
            blocks,
            centroids,
            max_iters: DEFAULT_MAX_ITERS,
            seed,
            normalized: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PQModel {
    /// Number of blocks, `M`.
    pub m: usize,
    /// Block dimension, `D' = D / M`.
    pub sub_dim: usize,
    /// Centroids per block, `Z'`.
    pub zp: usize,
    pub normalized: bool,
    /// `M × Z' × D'` codeword values.
    pub subcodebooks: Vec<f64>,
    /// `M × Z' × Z'` similarity lookup tables.
    pub tables: Vec<f64>,
    /// Per block, the code given to an all-zero block: the codeword with the
    /// smallest norm before normalization.
    pub reserved: Vec<u8>,
}

/// One byte per block, plus a flag for empty cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PQCode {
    pub codes: Vec<u8>,
    pub empty: bool,
}

impl PQModel {
    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    /// Total bits per code, `B = M log2 Z'`.
    pub fn code_bits(&self) -> usize {
        self.m * (usize::BITS - (self.zp - 1).leading_zeros()) as usize
    }

    pub fn codeword(&self, block: usize, i: usize) -> &[f64] {
        let start = (block * self.zp + i) * self.sub_dim;
        &self.subcodebooks[start..start + self.sub_dim]
    }

    #[inline]
    pub fn table(&self, block: usize, i: u8, j: u8) -> f64 {
        self.tables[(block * self.zp + i as usize) * self.zp + j as usize]
    }

    /// The `M = D` limit: one sign per component, codewords `-1` (code 0)
    /// and `+1` (code 1), zero components coded as `+1`.
    pub fn sign_limit(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        let subcodebooks = (0..dim).flat_map(|_| [-1.0, 1.0]).collect();
        let mut model = PQModel {
            m: dim,
            sub_dim: 1,
            zp: 2,
            normalized: true,
            subcodebooks,
            tables: Vec::new(),
            reserved: vec![1; dim],
        };
        model.tables = model.compute_tables();
        Ok(model)
    }

    fn compute_tables(&self) -> Vec<f64> {
        let mut tables = vec![0.0; self.m * self.zp * self.zp];
        let scale = 1.0 / self.m as f64;
        for b in 0..self.m {
            for i in 0..self.zp {
                let ci = self.codeword(b, i);
                for j in 0..self.zp {
                    let cj = self.codeword(b, j);
                    let v = if self.normalized {
                        dot(ci, cj) * scale / (norm(ci) * norm(cj))
                    } else {
                        dot(ci, cj)
                    };
                    tables[(b * self.zp + i) * self.zp + j] = v;
                }
            }
        }
        tables
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.m as u32);
        w.u32(self.sub_dim as u32);
        w.u32(self.zp as u32);
        w.u8(self.normalized as u8);
        w.f32s(self.subcodebooks.iter().copied());
        w.f32s(self.tables.iter().copied());
        w.bytes(&self.reserved);
        w.finish()
    }

    /// Tables are recomputed from the stored codewords and checked against
    /// the stored `f32` copy.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, _) = Reader::open(bytes, MAGIC, "PQ model", VERSION)?;
        let m = r.u32("M")? as usize;
        let sub_dim = r.u32("D'")? as usize;
        let zp = r.u32("Z'")? as usize;
        let normalized = match r.u8("normalized flag")? {
            0 => false,
            1 => true,
            f => return Err(Error::Corrupt(format!("normalized flag {f}"))),
        };
        if m == 0 || sub_dim == 0 || zp == 0 || zp > 256 {
            return Err(Error::Corrupt(format!("PQ shape M={m} D'={sub_dim} Z'={zp}")));
        }
        let subcodebooks = r.f64s(m * zp * sub_dim, "subcodebooks")?;
        let stored = r.f64s(m * zp * zp, "tables")?;
        let reserved = r.take(m, "reserved codes")?.to_vec();
        r.finish()?;
        if reserved.iter().any(|&c| c as usize >= zp) {
            return Err(Error::Corrupt("reserved code out of range".into()));
        }
        let mut model = PQModel {
            m,
            sub_dim,
            zp,
            normalized,
            subcodebooks,
            tables: Vec::new(),
            reserved,
        };
        model.tables = model.compute_tables();
        if let Some(bad) = model
            .tables
            .iter()
            .zip(&stored)
            .position(|(a, b)| (a - b).abs() > 1e-6 * a.abs().max(1.0))
        {
            return Err(Error::Corrupt(format!("lookup table entry {bad} disagrees with codewords")));
        }
        Ok(model)
    }
}

pub fn save_pq(model: &PQModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_pq(path: impl AsRef<Path>) -> Result<PQModel> {
    PQModel::from_bytes(&fs::read(path)?)
}

fn block_seed(seed: u64, block: usize) -> u64 {
    seed.wrapping_add((block as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains on whitened cell descriptors pooled from every level. Empty cells
/// are skipped.
pub fn pq_train(rows: &[WhitenedDescriptor], params: &PqTrainParams) -> Result<PQModel> {
    let dim = rows.first().map(|r| r.values.len()).unwrap_or(0);
    let mut flat = Vec::new();
    for r in rows.iter().filter(|r| !r.empty) {
        if r.values.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: r.values.len(),
            });
        }
        flat.extend_from_slice(&r.values);
    }
    if dim == 0 {
        return Err(Error::InsufficientRows {
            needed: params.centroids,
            available: 0,
        });
    }
    pq_train_rows(&flat, dim, params)
}

/// Trains on a row-major matrix of `dim`-wide rows.
pub fn pq_train_rows(rows: &[f64], dim: usize, params: &PqTrainParams) -> Result<PQModel> {
    let m = params.blocks;
    let zp = params.centroids;
    if m == 0 || dim == 0 || !dim.is_multiple_of(m) {
        return Err(Error::InvalidParameter(format!(
            "dimension {dim} is not divisible into {m} blocks"
        )));
    }
    if zp == 0 || zp > 256 {
        return Err(Error::InvalidParameter(format!("Z' = {zp} must be in 1..=256")));
    }
    let n = rows.len() / dim;
    if n < zp {
        return Err(Error::InsufficientRows {
            needed: zp,
            available: n,
        });
    }
    let sub_dim = dim / m;
    let mut subcodebooks = Vec::with_capacity(m * zp * sub_dim);
    let mut reserved = Vec::with_capacity(m);
    for b in 0..m {
        let slices: Vec<f64> = rows
            .chunks_exact(dim)
            .flat_map(|r| r[b * sub_dim..(b + 1) * sub_dim].iter().copied())
            .collect();
        let km = kmeans(
            &slices,
            sub_dim,
            &KMeansParams {
                k: zp,
                max_iters: params.max_iters,
                seed: block_seed(params.seed, b),
            },
        )?;
        let mut book = km.centroids.clone();
        let norms: Vec<f64> = book.chunks_exact(sub_dim).map(norm).collect();
        let min_norm = norms
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        reserved.push(min_norm as u8);
        if params.normalized {
            for (i, word) in book.chunks_exact_mut(sub_dim).enumerate() {
                if norms[i] > 0.0 {
                    word.iter_mut().for_each(|w| *w /= norms[i]);
                    continue;
                }
                // zero codeword: reseed from the nonzero slice farthest from its centroid
                let replacement = slices
                    .chunks_exact(sub_dim)
                    .zip(&km.assignments)
                    .filter(|(s, _)| norm(s) > 0.0)
                    .max_by(|a, b| {
                        sq_dist(a.0, km.centroid(*a.1)).total_cmp(&sq_dist(b.0, km.centroid(*b.1)))
                    })
                    .map(|(s, _)| s.to_vec())
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("block {b} has no nonzero training data"))
                    })?;
                let n = norm(&replacement);
                word.iter_mut().zip(&replacement).for_each(|(w, r)| *w = r / n);
            }
        }
        subcodebooks.extend(book);
    }
    round_f32(&mut subcodebooks);
    let mut model = PQModel {
        m,
        sub_dim,
        zp,
        normalized: params.normalized,
        subcodebooks,
        tables: Vec::new(),
        reserved,
    };
    model.tables = model.compute_tables();
    Ok(model)
}

/// Nearest codeword per block by squared Euclidean distance (lowest index
/// on ties). All-zero blocks take the block's reserved code.
pub fn quantize_values(values: &[f64], empty: bool, model: &PQModel) -> Result<PQCode> {
    if values.len() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            found: values.len(),
        });
    }
    let d = model.sub_dim;
    let book_len = model.zp * d;
    let codes = values
        .chunks_exact(d)
        .enumerate()
        .map(|(b, block)| {
            if block.iter().all(|&v| v == 0.0) {
                model.reserved[b]
            } else {
                let book = &model.subcodebooks[b * book_len..(b + 1) * book_len];
                nearest_row(block, book, d).0 as u8
            }
        })
        .collect();
    Ok(PQCode {
        codes,
        empty: empty || values.iter().all(|&v| v == 0.0),
    })
}

pub fn quantize(wd: &WhitenedDescriptor, model: &PQModel) -> Result<PQCode> {
    quantize_values(&wd.values, wd.empty, model)
}

/// `Σ_m table_m[a_m][b_m]`.
#[inline]
pub fn sdc_similarity(a: &PQCode, b: &PQCode, model: &PQModel) -> f64 {
    debug_assert_eq!(a.codes.len(), model.m);
    debug_assert_eq!(b.codes.len(), model.m);
    a.codes
        .iter()
        .zip(&b.codes)
        .enumerate()
        .map(|(m, (&i, &j))| model.table(m, i, j))
        .sum()
}

/// Codewords concatenated per block; for a normalized model each block is
/// scaled to `1/√M` so the whole reconstruction has unit norm.
pub fn reconstruct(code: &PQCode, model: &PQModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.dim());
    let scale = if model.normalized {
        1.0 / (model.m as f64).sqrt()
    } else {
        1.0
    };
    for (b, &c) in code.codes.iter().enumerate() {
        let w = model.codeword(b, c as usize);
        let n = if model.normalized { norm(w) } else { 1.0 };
        out.extend(w.iter().map(|x| x * scale / n));
    }
    out
}

/// Whitening and subspace normalization followed by quantization.
pub fn wnpq_encode(pd: &ProjectedDescriptor, whitener: &Whitener, model: &PQModel) -> Result<PQCode> {
    if whitener.block_count != model.m {
        return Err(Error::InvalidParameter(format!(
            "whitener has {} blocks, PQ model {}",
            whitener.block_count, model.m
        )));
    }
    quantize(&whitener.apply(pd)?, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::subspace_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn training(n: usize, dim: usize, m: usize, seed: u64) -> Vec<WhitenedDescriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                subspace_normalize(&v, m).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_centroid_tables() {
        let model = pq_train(&training(20, 8, 4, 1), &PqTrainParams::new(4, 1, 0)).unwrap();
        for b in 0..4 {
            assert!((model.table(b, 0, 0) - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn tables_symmetric_with_diagonal_one_over_m() {
        let model = pq_train(&training(300, 16, 4, 2), &PqTrainParams::new(4, 16, 3)).unwrap();
        for b in 0..4 {
            for i in 0..16u8 {
                assert!((model.table(b, i, i) - 0.25).abs() < 1e-12);
                for j in 0..16u8 {
                    assert_eq!(model.table(b, i, j), model.table(b, j, i));
                    assert!(model.table(b, i, j).abs() <= 0.25 + 1e-12);
                }
            }
            for i in 0..16 {
                assert!((norm(model.codeword(b, i)) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tables_match_direct_formula() {
        let model = pq_train(&training(200, 8, 2, 4), &PqTrainParams::new(2, 4, 5)).unwrap();
        for b in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let (ci, cj) = (model.codeword(b, i), model.codeword(b, j));
                    let ip: f64 = ci.iter().zip(cj).map(|(x, y)| x * y).sum();
                    let ni = ci.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nj = cj.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let expect = ip / (2.0 * ni * nj);
                    assert!((model.table(b, i as u8, j as u8) - expect).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn codeword_block_quantizes_to_itself() {
        let model = pq_train(&training(400, 8, 2, 6), &PqTrainParams::new(2, 16, 7)).unwrap();
        let mut v = model.codeword(0, 7).to_vec();
        v.extend_from_slice(model.codeword(1, 3));
        let code = quantize_values(&v, false, &model).unwrap();
        assert_eq!(code.codes, vec![7, 3]);
        // re-quantizing a reconstruction is stable
        let again = quantize_values(&reconstruct(&code, &model), false, &model).unwrap();
        assert_eq!(again.codes, code.codes);
    }

    #[test]
    fn matches_block_linear_scan() {
        let model = pq_train(&training(400, 12, 3, 8), &PqTrainParams::new(3, 8, 1)).unwrap();
        for wd in training(50, 12, 3, 99) {
            let code = quantize(&wd, &model).unwrap();
            for b in 0..3 {
                let block = wd.block(b);
                let mut best = (0usize, f64::INFINITY);
                for i in 0..8 {
                    let d: f64 = block
                        .iter()
                        .zip(model.codeword(b, i))
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                assert_eq!(code.codes[b] as usize, best.0);
            }
        }
    }

    #[test]
    fn zero_sentinel_uses_reserved_code() {
        let model = pq_train(&training(100, 8, 2, 1), &PqTrainParams::new(2, 4, 0)).unwrap();
        let code = quantize_values(&[0.0; 8], true, &model).unwrap();
        assert!(code.empty);
        assert_eq!(code.codes, model.reserved);
    }

    #[test]
    fn self_similarity_is_one() {
        let model = pq_train(&training(200, 8, 4, 2), &PqTrainParams::new(4, 8, 0)).unwrap();
        let code = quantize(&training(1, 8, 4, 77)[0], &model).unwrap();
        assert!((sdc_similarity(&code, &code, &model) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antipodal_codes_give_minus_one() {
        let model = PQModel::sign_limit(6).unwrap();
        let a = PQCode { codes: vec![0, 1, 0, 1, 1, 0], empty: false };
        let b = PQCode { codes: a.codes.iter().map(|c| 1 - c).collect(), empty: false };
        assert!((sdc_similarity(&a, &b, &model) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn insufficient_rows_and_divisibility() {
        assert!(matches!(
            pq_train(&training(3, 8, 2, 1), &PqTrainParams::new(2, 4, 0)),
            Err(Error::InsufficientRows { needed: 4, available: 3 })
        ));
        assert!(matches!(
            pq_train(&training(10, 9, 3, 1), &PqTrainParams::new(2, 4, 0)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let model = pq_train(&training(100, 8, 2, 1), &PqTrainParams::new(2, 8, 0)).unwrap();
        assert_eq!(PQModel::from_bytes(&model.to_bytes()).unwrap(), model);
        let mut bytes = model.to_bytes();
        let table_start = 4 + 2 + 12 + 1 + model.subcodebooks.len() * 4;
        bytes[table_start..table_start + 4].copy_from_slice(&0.9f32.to_le_bytes());
        assert!(matches!(PQModel::from_bytes(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn code_bits() {
        let model = pq_train(&training(300, 8, 4, 1), &PqTrainParams::new(4, 256, 0)).unwrap();
        assert_eq!(model.code_bits(), 32);
        assert_eq!(PQModel::sign_limit(16).unwrap().code_bits(), 16);
    }
}
