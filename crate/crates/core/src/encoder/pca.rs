//! PCA trained on whole-image descriptors.
//!
//! When the input dimension exceeds the number of training rows the
//! eigenproblem is solved on the small `Y × Y` Gram matrix of the centered
//! training set and its eigenvectors are rotated back into input space,
//! `R = Φ · R_rot · diag(λ^{-1/2})`, followed by explicit column
//! normalization.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::vlad::RawDescriptor;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::{normalize, round_f32};

const MAGIC: &[u8; 4] = b"VPCA";
const VERSION: u16 = 1;

/// Eigenvalues below `RANK_TOLERANCE * λ_max` count as zero for rank checks.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaRoute {
    /// Gram route when `input_dim > rows`, covariance route otherwise.
    Auto,
    Covariance,
    Gram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub training_rows: usize,
    pub mean: Vec<f64>,
    /// Covariance eigenvalues of the retained components, descending.
    pub eigenvalues: Vec<f64>,
    /// `input_dim × output_dim`, row-major; columns are the principal axes.
    pub projection: Vec<f64>,
}

/// Unit-norm projected descriptor, or the all-zero sentinel when `empty`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDescriptor {
    pub values: Vec<f64>,
    pub empty: bool,
}

impl ProjectedDescriptor {
    pub fn zeros(dim: usize) -> Self {
        ProjectedDescriptor {
            values: vec![0.0; dim],
            empty: true,
        }
    }

    /// Normalizes `values`; a zero vector becomes the empty sentinel.
    pub fn from_unnormalized(mut values: Vec<f64>) -> Self {
        let empty = !normalize(&mut values);
        if empty {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
        ProjectedDescriptor { values, empty }
    }
}

fn sorted_eigen(mat: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn numerical_rank(eigenvalues: &[f64]) -> usize {
    let max = eigenvalues.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    eigenvalues.iter().filter(|&&l| l > max * RANK_TOLERANCE).count()
}

pub fn pca_train(training: &[f64], input_dim: usize, output_dim: usize) -> Result<PcaModel> {
    pca_train_with(training, input_dim, output_dim, PcaRoute::Auto)
}

/// Trains on `training`, a row-major `Y × input_dim` matrix, and retains
/// `output_dim` components.
pub fn pca_train_with(
    training: &[f64],
    input_dim: usize,
    output_dim: usize,
    route: PcaRoute,
) -> Result<PcaModel> {
    if input_dim == 0 {
        return Err(Error::ZeroDim);
    }
    if !training.len().is_multiple_of(input_dim) {
        return Err(Error::DimMismatch {
            expected: input_dim,
            found: training.len() % input_dim,
        });
    }
    let rows = training.len() / input_dim;
    if rows < 2 {
        return Err(Error::InsufficientRows {
            needed: 2,
            available: rows,
        });
    }
    let max_dim = (rows - 1).min(input_dim);
    if output_dim == 0 || output_dim > max_dim {
        return Err(Error::InvalidParameter(format!(
            "cannot retain {output_dim} components from {rows} rows of dimension {input_dim} (max {max_dim})"
        )));
    }

    let mut mean = vec![0.0; input_dim];
    for row in training.chunks_exact(input_dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    // rows × U centered data
    let centered = DMatrix::from_fn(rows, input_dim, |r, c| training[r * input_dim + c] - mean[c]);
    let scale = 1.0 / (rows - 1) as f64;

    let use_gram = match route {
        PcaRoute::Auto => input_dim > rows,
        PcaRoute::Covariance => false,
        PcaRoute::Gram => true,
    };

    let (eigenvalues, axes) = if use_gram {
        // Φ is U × Y with the centered samples as columns; Φᵀ Φ is Y × Y.
        let gram = &centered * centered.transpose();
        let (gram_values, rot) = sorted_eigen(gram);
        let rank = numerical_rank(&gram_values);
        if output_dim > rank {
            return Err(Error::RankDeficient {
                requested: output_dim,
                rank,
            });
        }
        let inv_sqrt = DMatrix::from_fn(output_dim, output_dim, |r, c| {
            if r == c {
                gram_values[r].powf(-0.5)
            } else {
                0.0
            }
        });
        let rot = rot.columns(0, output_dim).into_owned();
        let axes = centered.transpose() * rot * inv_sqrt;
        let values: Vec<f64> = gram_values[..output_dim].iter().map(|l| l * scale).collect();
        (values, axes)
    } else {
        let cov = centered.transpose() * &centered * scale;
        let (values, vectors) = sorted_eigen(cov);
        let rank = numerical_rank(&values);
        if output_dim > rank {
            return Err(Error::RankDeficient {
                requested: output_dim,
                rank,
            });
        }
        (values[..output_dim].to_vec(), vectors.columns(0, output_dim).into_owned())
    };

    let mut projection = vec![0.0; input_dim * output_dim];
    for c in 0..output_dim {
        let mut col: Vec<f64> = axes.column(c).iter().copied().collect();
        normalize(&mut col);
        // deterministic sign: largest-magnitude entry positive
        let pivot = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, v)| *v)
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (r, v) in col.iter().enumerate() {
            projection[r * output_dim + c] = sign * v;
        }
    }

    let mut model = PcaModel {
        input_dim,
        output_dim,
        training_rows: rows,
        mean,
        eigenvalues,
        projection,
    };
    round_f32(&mut model.mean);
    round_f32(&mut model.eigenvalues);
    round_f32(&mut model.projection);
    Ok(model)
}

impl PcaModel {
    /// `Rᵀ x` without centering or normalization.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let d = self.output_dim;
        let mut out = vec![0.0; d];
        for (xi, row) in x.iter().zip(self.projection.chunks_exact(d)) {
            if *xi == 0.0 {
                continue;
            }
            out.iter_mut().zip(row).for_each(|(o, r)| *o += xi * r);
        }
        Ok(out)
    }

    /// `Rᵀ μ`, the offset removed by centering.
    pub fn projected_mean(&self) -> Vec<f64> {
        self.apply(&self.mean).expect("mean has input dimension")
    }

    pub fn axis(&self, c: usize) -> Vec<f64> {
        self.projection
            .iter()
            .skip(c)
            .step_by(self.output_dim)
            .copied()
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.input_dim as u32);
        w.u32(self.output_dim as u32);
        w.u32(self.training_rows as u32);
        w.f32s(self.mean.iter().copied());
        w.f32s(self.eigenvalues.iter().copied());
        w.f32s(self.projection.iter().copied());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, _) = Reader::open(bytes, MAGIC, "PCA model", VERSION)?;
        let input_dim = r.u32("U")? as usize;
        let output_dim = r.u32("D")? as usize;
        let training_rows = r.u32("Y")? as usize;
        if input_dim == 0 || output_dim == 0 || output_dim > input_dim {
            return Err(Error::Corrupt(format!("PCA dimensions U={input_dim} D={output_dim}")));
        }
        let mean = r.f64s(input_dim, "mean")?;
        let eigenvalues = r.f64s(output_dim, "eigenvalues")?;
        let projection = r.f64s(input_dim * output_dim, "projection")?;
        r.finish()?;
        Ok(PcaModel {
            input_dim,
            output_dim,
            training_rows,
            mean,
            eigenvalues,
            projection,
        })
    }
}

/// Centers, projects and L2-normalizes. Empty or zero results become the
/// zero sentinel.
pub fn project(raw: &RawDescriptor, model: &PcaModel) -> Result<ProjectedDescriptor> {
    if raw.values.len() != model.input_dim {
        return Err(Error::DimMismatch {
            expected: model.input_dim,
            found: raw.values.len(),
        });
    }
    if raw.empty {
        return Ok(ProjectedDescriptor::zeros(model.output_dim));
    }
    let centered: Vec<f64> = raw.values.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok(ProjectedDescriptor::from_unnormalized(model.apply(&centered)?))
}

pub fn save_pca(model: &PcaModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_pca(path: impl AsRef<Path>) -> Result<PcaModel> {
    PcaModel::from_bytes(&fs::read(path)?)
}
