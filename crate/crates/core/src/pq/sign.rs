//! The `M = D` limit of product quantization: one bit per component and
//! similarity through a Hamming distance.

use crate::encoder::WhitenedDescriptor;
use crate::error::{Error, Result};

use super::model::PQCode;

/// Bit `i` is set iff component `i` is non-negative.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignCode {
    pub bits: Vec<u64>,
    pub dim: usize,
    pub empty: bool,
}

impl SignCode {
    pub fn from_values(values: &[f64], empty: bool) -> Self {
        let mut bits = vec![0u64; values.len().div_ceil(64)];
        for (i, &v) in values.iter().enumerate() {
            if v >= 0.0 {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        SignCode {
            bits,
            dim: values.len(),
            empty,
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    /// Reads a code produced under `PQModel::sign_limit`.
    pub fn from_pq_code(code: &PQCode) -> Self {
        let mut bits = vec![0u64; code.codes.len().div_ceil(64)];
        for (i, &c) in code.codes.iter().enumerate() {
            if c == 1 {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        SignCode {
            bits,
            dim: code.codes.len(),
            empty: code.empty,
        }
    }

    /// The equivalent code under `PQModel::sign_limit`.
    pub fn to_pq_code(&self) -> PQCode {
        PQCode {
            codes: (0..self.dim).map(|i| self.bit(i) as u8).collect(),
            empty: self.empty,
        }
    }

    pub fn hamming(&self, other: &SignCode) -> u32 {
        debug_assert_eq!(self.dim, other.dim);
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

pub fn sign_binarize(wd: &WhitenedDescriptor) -> Result<SignCode> {
    if wd.block_count != wd.values.len() {
        return Err(Error::InvalidParameter(format!(
            "sign codes need one block per component, got {} blocks for {} components",
            wd.block_count,
            wd.values.len()
        )));
    }
    Ok(SignCode::from_values(&wd.values, wd.empty))
}

/// `1 - 2 ham(a, b) / D`.
#[inline]
pub fn hamming_similarity(a: &SignCode, b: &SignCode) -> f64 {
    1.0 - 2.0 * a.hamming(b) as f64 / a.dim as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pq::{quantize, sdc_similarity, PQModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wd(rng: &mut ChaCha8Rng, dim: usize) -> WhitenedDescriptor {
        crate::encoder::subspace_normalize(
            &(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
            dim,
        )
        .unwrap()
    }

    #[test]
    fn self_and_complement() {
        let a = SignCode::from_values(&[1.0, -2.0, 0.0, 3.0, -0.5], false);
        let c = SignCode::from_values(&[-1.0, 2.0, -1.0, -3.0, 0.5], false);
        assert_eq!(hamming_similarity(&a, &a), 1.0);
        assert_eq!(hamming_similarity(&a, &c), -1.0);
    }

    #[test]
    fn popcount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = sign_binarize(&random_wd(&mut rng, 16)).unwrap();
            let b = sign_binarize(&random_wd(&mut rng, 16)).unwrap();
            let mut mismatches = 0;
            for i in 0..16 {
                if a.bit(i) != b.bit(i) {
                    mismatches += 1;
                }
            }
            assert_eq!(hamming_similarity(&a, &b), 1.0 - mismatches as f64 / 8.0);
        }
    }

    #[test]
    fn agrees_with_sign_subcodebooks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = PQModel::sign_limit(70).unwrap();
        for _ in 0..50 {
            let (wa, wb) = (random_wd(&mut rng, 70), random_wd(&mut rng, 70));
            let (a, b) = (sign_binarize(&wa).unwrap(), sign_binarize(&wb).unwrap());
            assert_eq!(quantize(&wa, &model).unwrap(), a.to_pq_code());
            assert_eq!(SignCode::from_pq_code(&a.to_pq_code()), a);
            let sdc = sdc_similarity(&a.to_pq_code(), &b.to_pq_code(), &model);
            assert!((sdc - hamming_similarity(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn requires_one_block_per_component() {
        let wd = crate::encoder::subspace_normalize(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert!(sign_binarize(&wd).is_err());
    }
}
