use std::fs;
use std::path::Path;

use super::kmeans::{kmeans, KMeansParams};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::{nearest_row, round_f32};

const MAGIC: &[u8; 4] = b"VVOC";
const VERSION: u16 = 1;

/// Visual vocabulary: `k` centroids in local-descriptor space. Centroids are
/// held at `f32` precision so a saved vocabulary reloads bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<f64>,
}

impl Vocabulary {
    pub fn new(dim: usize, mut centroids: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "{} centroid values do not form rows of {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite centroid".into()));
        }
        round_f32(&mut centroids);
        Ok(Vocabulary {
            k: centroids.len() / dim,
            dim,
            centroids,
        })
    }

    /// Trains on row-major `points` of width `dim`.
    pub fn train(points: &[f64], dim: usize, params: &KMeansParams) -> Result<Self> {
        let r = kmeans(points, dim, params)?;
        Vocabulary::new(dim, r.centroids)
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid by squared Euclidean distance, lowest index on ties.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(nearest_row(x, &self.centroids, self.dim).0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.k as u32);
        w.u32(self.dim as u32);
        w.f32s(self.centroids.iter().copied());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, _) = Reader::open(bytes, MAGIC, "vocabulary", VERSION)?;
        let k = r.u32("k")? as usize;
        let dim = r.u32("dim")? as usize;
        let centroids = r.f64s(k * dim, "centroids")?;
        r.finish()?;
        if k == 0 {
            return Err(Error::Corrupt("vocabulary with zero centroids".into()));
        }
        Vocabulary::new(dim, centroids)
    }
}

pub fn save_vocabulary(v: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, v.to_bytes())?;
    Ok(())
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    Vocabulary::from_bytes(&fs::read(path)?)
}
