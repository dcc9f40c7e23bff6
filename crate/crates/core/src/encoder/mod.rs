//! Aggregation of local descriptors into VLAD vectors, power and L2
//! normalization, PCA projection and per-subspace whitening.

mod pca;
mod vlad;
mod whiten;

pub use pca::{
    load_pca, pca_train, pca_train_with, project, save_pca, PcaModel, PcaRoute,
    ProjectedDescriptor,
};
pub use vlad::{assign_features, ssr_normalize, vlad_encode, vlad_encode_assigned, RawDescriptor};
pub use whiten::{
    subspace_normalize, whiten_normalize, WhitenedDescriptor, Whitener, EIGENVALUE_FLOOR,
};
