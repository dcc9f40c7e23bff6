use crate::clustering::TreeShape;

/// Per-image storage in bytes for one tree shape, with `f32` descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub cells: usize,
    pub leaves: usize,
    /// Every cell as a `D`-dimensional float vector.
    pub full_bytes: usize,
    /// Only the last level, other levels rebuilt by projection.
    pub leaf_bytes: usize,
    /// Every cell as a `B`-bit code.
    pub quantized_bytes: usize,
    /// Only last-level codes.
    pub quantized_leaf_bytes: usize,
}

/// `code_bits` is the PQ code length `B` per cell.
pub fn storage_report(shape: TreeShape, dim: usize, code_bits: usize) -> StorageReport {
    let cells = shape.slot_count();
    let leaves = shape.leaf_count();
    StorageReport {
        cells,
        leaves,
        full_bytes: cells * dim * 4,
        leaf_bytes: leaves * dim * 4,
        quantized_bytes: (cells * code_bits).div_ceil(8),
        quantized_leaf_bytes: (leaves * code_bits).div_ceil(8),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configuration() {
        let r = storage_report(TreeShape::new(3, 3).unwrap(), 128, 256);
        assert_eq!(r.cells, 13);
        assert_eq!(r.full_bytes, 6656);
        assert_eq!(r.leaf_bytes, 4608);
        assert_eq!(r.quantized_bytes, 416);
        assert_eq!(r.quantized_leaf_bytes, 288);
    }
}
