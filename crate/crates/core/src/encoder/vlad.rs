use crate::clustering::Vocabulary;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg::normalize;

/// Concatenated per-word residual sums, `K * descriptor_dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDescriptor {
    pub values: Vec<f64>,
    /// Set when the descriptor was aggregated over no keypoints.
    pub empty: bool,
}

impl RawDescriptor {
    pub fn zeros(len: usize) -> Self {
        RawDescriptor {
            values: vec![0.0; len],
            empty: true,
        }
    }
}

/// Nearest visual word of every keypoint descriptor.
pub fn assign_features(fs: &FeatureSet, vocab: &Vocabulary) -> Result<Vec<usize>> {
    fs.expect_dim(vocab.dim)?;
    let mut buf = vec![0.0; fs.dim];
    (0..fs.len())
        .map(|i| {
            buf.iter_mut()
                .zip(fs.descriptor(i))
                .for_each(|(b, &d)| *b = d as f64);
            vocab.assign(&buf)
        })
        .collect()
}

/// VLAD over the keypoints listed in `members`, using precomputed word
/// assignments.
pub fn vlad_encode_assigned(
    fs: &FeatureSet,
    vocab: &Vocabulary,
    assignments: &[usize],
    members: &[usize],
) -> Result<RawDescriptor> {
    fs.expect_dim(vocab.dim)?;
    let dim = vocab.dim;
    let mut raw = RawDescriptor::zeros(vocab.k * dim);
    for &m in members {
        if m >= fs.len() || m >= assignments.len() {
            return Err(Error::IndexOutOfRange {
                index: m,
                len: fs.len(),
            });
        }
        let k = assignments[m];
        let mu = vocab.centroid(k);
        let block = &mut raw.values[k * dim..(k + 1) * dim];
        for ((v, &x), &c) in block.iter_mut().zip(fs.descriptor(m)).zip(mu) {
            *v += x as f64 - c;
        }
    }
    raw.empty = members.is_empty();
    Ok(raw)
}

/// `v_k = Σ_{n ∈ members, f(x_n) = k} (x_n − μ_k)`, blocks concatenated over k.
pub fn vlad_encode(fs: &FeatureSet, vocab: &Vocabulary, members: &[usize]) -> Result<RawDescriptor> {
    if let Some(&bad) = members.iter().find(|&&m| m >= fs.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: fs.len(),
        });
    }
    fs.expect_dim(vocab.dim)?;
    let mut assignments = vec![0; fs.len()];
    let mut buf = vec![0.0; fs.dim];
    for &m in members {
        buf.iter_mut()
            .zip(fs.descriptor(m))
            .for_each(|(b, &d)| *b = d as f64);
        assignments[m] = vocab.assign(&buf)?;
    }
    vlad_encode_assigned(fs, vocab, &assignments, members)
}

/// Signed square root of every component followed by L2 normalization.
/// The zero vector passes through unchanged.
pub fn ssr_normalize(raw: &RawDescriptor) -> RawDescriptor {
    let mut values: Vec<f64> = raw
        .values
        .iter()
        .map(|&c| c.signum() * c.abs().sqrt())
        .map(|c| if c == 0.0 { 0.0 } else { c })
        .collect();
    normalize(&mut values);
    RawDescriptor {
        values,
        empty: raw.empty,
    }
}
