//! K-means in descriptor space (visual vocabulary), hierarchical spatial
//! K-means over keypoint locations, and the rectangular grid baseline.

mod grid;
mod kmeans;
mod spatial;
mod vocab;

pub use grid::{grid_block_count, grid_partition, GridPartition};
pub use kmeans::{kmeans, objective, KMeansParams, KMeansResult, DEFAULT_MAX_ITERS};
pub use spatial::{spatial_hkmeans, PartitionNode, PartitionTree, TreeShape};
pub use vocab::{load_vocabulary, save_vocabulary, Vocabulary};
