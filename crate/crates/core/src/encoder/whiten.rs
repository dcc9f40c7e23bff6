//! Per-subspace whitening and normalization. Block `m` (components
//! `a+1 ..= a+D'`, `a = D'(m-1)`) is scaled componentwise by `λ_i^{-1/2}` and
//! then L2-normalized on its own.

use log::warn;

use super::pca::{PcaModel, ProjectedDescriptor};
use crate::error::{Error, Result};
use crate::linalg::normalize;

/// Relative floor applied to eigenvalues before the inverse square root.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedDescriptor {
    pub values: Vec<f64>,
    pub block_count: usize,
    pub empty: bool,
}

impl WhitenedDescriptor {
    pub fn block_dim(&self) -> usize {
        self.values.len() / self.block_count
    }

    pub fn block(&self, m: usize) -> &[f64] {
        let d = self.block_dim();
        &self.values[m * d..(m + 1) * d]
    }
}

/// Precomputed per-component whitening scales for a given block count.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub block_count: usize,
    pub scales: Vec<f64>,
    /// Components whose eigenvalue was raised to the floor.
    pub floored: Vec<usize>,
}

impl Whitener {
    pub fn new(model: &PcaModel, block_count: usize) -> Result<Self> {
        Whitener::from_eigenvalues(&model.eigenvalues, block_count)
    }

    pub fn from_eigenvalues(eigenvalues: &[f64], block_count: usize) -> Result<Self> {
        let dim = eigenvalues.len();
        if block_count == 0 || !dim.is_multiple_of(block_count) {
            return Err(Error::InvalidParameter(format!(
                "dimension {dim} is not divisible into {block_count} blocks"
            )));
        }
        if let Some((index, &value)) = eigenvalues
            .iter()
            .enumerate()
            .find(|(_, l)| !l.is_finite() || **l < 0.0)
        {
            return Err(Error::InvalidEigenvalue { index, value });
        }
        let max = eigenvalues.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(Error::InvalidEigenvalue {
                index: 0,
                value: max,
            });
        }
        let floor = EIGENVALUE_FLOOR * max;
        let mut floored = Vec::new();
        let scales = eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                if l < floor {
                    floored.push(i);
                }
                l.max(floor).powf(-0.5)
            })
            .collect();
        if !floored.is_empty() {
            warn!(
                "{} eigenvalues below {:e} were floored before whitening",
                floored.len(),
                floor
            );
        }
        Ok(Whitener {
            block_count,
            scales,
            floored,
        })
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    pub fn apply(&self, pd: &ProjectedDescriptor) -> Result<WhitenedDescriptor> {
        if pd.values.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: pd.values.len(),
            });
        }
        let mut values: Vec<f64> = pd.values.iter().zip(&self.scales).map(|(v, s)| v * s).collect();
        let block_dim = self.dim() / self.block_count;
        values.chunks_exact_mut(block_dim).for_each(|b| {
            normalize(b);
        });
        let empty = pd.empty || values.iter().all(|&v| v == 0.0);
        Ok(WhitenedDescriptor {
            values,
            block_count: self.block_count,
            empty,
        })
    }
}

/// Whitening followed by per-block normalization into `block_count` blocks.
pub fn whiten_normalize(
    pd: &ProjectedDescriptor,
    model: &PcaModel,
    block_count: usize,
) -> Result<WhitenedDescriptor> {
    Whitener::new(model, block_count)?.apply(pd)
}

/// Per-block normalization without whitening.
pub fn subspace_normalize(values: &[f64], block_count: usize) -> Result<WhitenedDescriptor> {
    if block_count == 0 || !values.len().is_multiple_of(block_count) {
        return Err(Error::InvalidParameter(format!(
            "dimension {} is not divisible into {block_count} blocks",
            values.len()
        )));
    }
    let mut out = values.to_vec();
    out.chunks_exact_mut(values.len() / block_count).for_each(|b| {
        normalize(b);
    });
    let empty = out.iter().all(|&v| v == 0.0);
    Ok(WhitenedDescriptor {
        values: out,
        block_count,
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(dim: usize, seed: u64) -> ProjectedDescriptor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProjectedDescriptor::from_unnormalized((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn equal_eigenvalues_reduce_to_subspace_normalization() {
        let pd = unit(12, 1);
        let w = Whitener::from_eigenvalues(&[0.7; 12], 3).unwrap().apply(&pd).unwrap();
        let s = subspace_normalize(&pd.values, 3).unwrap();
        for (a, b) in w.values.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_block_is_globally_whitened() {
        let pd = unit(6, 2);
        let eig = [4.0, 2.0, 1.0, 0.5, 0.25, 0.125];
        let w = Whitener::from_eigenvalues(&eig, 1).unwrap().apply(&pd).unwrap();
        let mut expect: Vec<f64> = pd.values.iter().zip(&eig).map(|(v, l)| v / l.sqrt()).collect();
        normalize(&mut expect);
        for (a, b) in w.values.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blocks_are_unit_and_match_formula() {
        let pd = unit(8, 3);
        let eig: Vec<f64> = (0..8).map(|i| 0.9f64.powi(i)).collect();
        let w = Whitener::from_eigenvalues(&eig, 2).unwrap().apply(&pd).unwrap();
        for m in 0..2 {
            let scaled: Vec<f64> = (0..4).map(|i| pd.values[m * 4 + i] / eig[m * 4 + i].sqrt()).collect();
            let n = norm(&scaled);
            for (got, want) in w.block(m).iter().zip(&scaled) {
                assert!((got - want / n).abs() < 1e-12);
            }
            assert!((norm(w.block(m)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_sentinel_stays_zero() {
        let w = Whitener::from_eigenvalues(&[1.0; 4], 2).unwrap();
        let out = w.apply(&ProjectedDescriptor::zeros(4)).unwrap();
        assert!(out.empty);
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_eigenvalues_are_floored() {
        let w = Whitener::from_eigenvalues(&[1.0, 1e-3, 0.0, 0.0], 2).unwrap();
        assert_eq!(w.floored, vec![2, 3]);
        assert!(w.scales.iter().all(|s| s.is_finite()));
        assert!(matches!(
            Whitener::from_eigenvalues(&[1.0, -1.0], 1),
            Err(Error::InvalidEigenvalue { index: 1, .. })
        ));
        assert!(Whitener::from_eigenvalues(&[1.0; 6], 4).is_err());
    }
}
