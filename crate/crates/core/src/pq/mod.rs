//! Product quantization with symmetric distance computation.
//!
//! Each descriptor is split into `M` blocks of `D' = D/M` values and every
//! block is replaced by the index of its nearest subcodeword. Subcodewords
//! are normalized, so the stored table entry between codewords `i` and `j` of
//! block `m` is `⟨c_i, c_j⟩ / (M ‖c_i‖ ‖c_j‖)` and the similarity of two codes
//! is a sum of `M` table reads bounded to `[-1, 1]`.

mod model;
mod sign;
mod variance;

pub use model::{
    load_pq, pq_train, pq_train_rows, quantize, quantize_values, reconstruct, save_pq,
    sdc_similarity, wnpq_encode, PQCode, PQModel, PqTrainParams, DEFAULT_ZP,
};
pub use sign::{hamming_similarity, sign_binarize, SignCode};
pub use variance::{subspace_variance_report, BlockStats, VariancePipeline, VarianceReport};
