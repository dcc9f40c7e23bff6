//! Region-of-interest image retrieval with multi-level Voronoi cell
//! descriptors.
//!
//! Each image's keypoints are partitioned by hierarchical spatial K-means
//! into a tree of Voronoi cells. Every cell gets a PCA-projected VLAD
//! descriptor; queries descend the tree greedily and combine the best score
//! found at each level, weighted by how closely the cell's keypoint count
//! matches the query's. Cell descriptors can be whitened, normalized per
//! subspace and product-quantized so that matching becomes table lookups.

pub mod clustering;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod pipeline;
pub mod pq;
pub mod search;
pub mod voronoi;

mod binio;

pub use error::{Error, Result};
