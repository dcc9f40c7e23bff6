//! Local image features: keypoints paired with fixed-width descriptors, the
//! `VFEA` binary format, dataset manifests and ground truth files, and a
//! deterministic synthetic dataset generator.

mod manifest;
mod synth;

use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub use manifest::{
    read_ground_truth, read_manifest, read_queries, write_ground_truth, write_manifest,
    write_queries, ManifestEntry, QuerySpec, Relevance,
};
pub use synth::{synth_generate, GroundTruth, Placement, PlantedObject, SyntheticDatasetSpec};

pub const FEATURE_MAGIC: &[u8; 4] = b"VFEA";
pub const FEATURE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
}

impl Keypoint {
    pub fn new(x: f32, y: f32) -> Self {
        Keypoint { x, y }
    }
}

/// Axis-aligned pixel rectangle, `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl Rect {
    pub fn contains(&self, kp: Keypoint) -> bool {
        kp.x >= self.x && kp.x < self.x + self.w && kp.y >= self.y && kp.y < self.y + self.h
    }
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl std::str::FromStr for Rect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f32> = s
            .split(',')
            .map(|p| p.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidParameter(format!("rectangle {s:?}: {e}")))?;
        match parts[..] {
            [x, y, w, h] if w > 0.0 && h > 0.0 => Ok(Rect { x, y, w, h }),
            _ => Err(Error::InvalidParameter(format!(
                "rectangle {s:?}: expected X,Y,W,H with positive W and H"
            ))),
        }
    }
}

/// The keypoints and descriptors of one image. Descriptors are stored
/// row-major, one row of `dim` values per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub image_id: String,
    /// Zero width and height mean the image size is undeclared.
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<f32>,
}

impl FeatureSet {
    pub fn new(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        dim: usize,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<f32>,
    ) -> Result<Self> {
        let fs = FeatureSet {
            image_id: image_id.into(),
            width,
            height,
            dim,
            keypoints,
            descriptors,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn empty(image_id: impl Into<String>, width: u32, height: u32, dim: usize) -> Self {
        FeatureSet {
            image_id: image_id.into(),
            width,
            height,
            dim,
            keypoints: Vec::new(),
            descriptors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn has_declared_size(&self) -> bool {
        self.width > 0 && self.height > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::ZeroDim);
        }
        if self.dim > u16::MAX as usize {
            return Err(Error::OutOfRange(format!(
                "descriptor dimension {} exceeds u16",
                self.dim
            )));
        }
        if self.descriptors.len() != self.keypoints.len() * self.dim {
            return Err(Error::DimMismatch {
                expected: self.keypoints.len() * self.dim,
                found: self.descriptors.len(),
            });
        }
        let declared = self.has_declared_size();
        for (index, kp) in self.keypoints.iter().enumerate() {
            let inside = kp.x.is_finite()
                && kp.y.is_finite()
                && kp.x >= 0.0
                && kp.y >= 0.0
                && (!declared || (kp.x < self.width as f32 && kp.y < self.height as f32));
            if !inside {
                return Err(Error::KeypointOutOfBounds {
                    index,
                    x: kp.x,
                    y: kp.y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }

    pub fn expect_dim(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: self.dim,
            });
        }
        Ok(())
    }

    /// Keeps only the keypoints inside `roi`; image id and size are retained.
    pub fn crop(&self, roi: &Rect) -> FeatureSet {
        let mut out = FeatureSet::empty(self.image_id.clone(), self.width, self.height, self.dim);
        for (i, kp) in self.keypoints.iter().enumerate() {
            if roi.contains(*kp) {
                out.keypoints.push(*kp);
                out.descriptors.extend_from_slice(self.descriptor(i));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let n = u32::try_from(self.len())
            .map_err(|_| Error::OutOfRange(format!("{} keypoints exceed u32", self.len())))?;
        let mut w = Writer::new(FEATURE_MAGIC, FEATURE_VERSION);
        w.short_str(&self.image_id)?;
        w.u32(self.width);
        w.u32(self.height);
        w.u32(n);
        w.u16(self.dim as u16);
        for kp in &self.keypoints {
            w.f32(kp.x);
            w.f32(kp.y);
        }
        for &d in &self.descriptors {
            w.f32(d);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, _) = Reader::open(bytes, FEATURE_MAGIC, "feature file", FEATURE_VERSION)?;
        let image_id = r.short_str("image id")?;
        let width = r.u32("width")?;
        let height = r.u32("height")?;
        let n = r.u32("keypoint count")? as usize;
        let dim = r.u16("descriptor dimension")? as usize;
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        let coords = r.f32s(n * 2, "keypoint records")?;
        let descriptors = r.f32s(n * dim, "descriptor records")?;
        r.finish()?;
        let keypoints = coords
            .chunks_exact(2)
            .map(|c| Keypoint::new(c[0], c[1]))
            .collect();
        FeatureSet::new(image_id, width, height, dim, keypoints, descriptors)
    }
}

pub fn save_features(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = fs.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    FeatureSet::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, dim: usize) -> FeatureSet {
        let keypoints = (0..n)
            .map(|i| Keypoint::new(i as f32 * 3.5, 10.0 + i as f32))
            .collect();
        let descriptors = (0..n * dim).map(|i| (i as f32 * 0.37).sin()).collect();
        FeatureSet::new("img", 64, 48, dim, keypoints, descriptors).unwrap()
    }

    #[test]
    fn empty_set_round_trips() {
        let fs = FeatureSet::empty("nothing", 10, 10, 8);
        let bytes = fs.to_bytes().unwrap();
        assert_eq!(FeatureSet::from_bytes(&bytes).unwrap(), fs);
    }

    #[test]
    fn round_trip_preserves_every_descriptor_bit() {
        let fs = sample(5, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vfea");
        save_features(&fs, &path).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back.descriptors.len(), 40);
        for (a, b) in fs.descriptors.iter().zip(&back.descriptors) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, fs);
    }

    #[test]
    fn keypoint_on_right_edge_is_rejected() {
        let mut fs = sample(2, 4);
        fs.keypoints[1].x = fs.width as f32;
        assert!(matches!(
            fs.to_bytes(),
            Err(Error::KeypointOutOfBounds { index: 1, .. })
        ));
    }

    #[test]
    fn zero_dim_is_rejected() {
        let fs = FeatureSet::empty("z", 1, 1, 0);
        assert!(matches!(fs.to_bytes(), Err(Error::ZeroDim)));
    }

    #[test]
    fn corrupted_magic_is_bad_magic() {
        let mut bytes = sample(3, 4).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            FeatureSet::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn missing_record_is_truncated() {
        let fs = sample(10, 4);
        let bytes = fs.to_bytes().unwrap();
        // drop the last descriptor row: the header still declares N = 10
        let cut = &bytes[..bytes.len() - 4 * 4];
        assert!(matches!(
            FeatureSet::from_bytes(cut),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn out_of_bounds_keypoint_in_file_is_rejected() {
        let fs = sample(3, 4);
        let mut bytes = fs.to_bytes().unwrap();
        // header: magic 4 + version 2 + id len 2 + id 3 + w 4 + h 4 + n 4 + dim 2
        let first_x = 4 + 2 + 2 + 3 + 4 + 4 + 4 + 2;
        bytes[first_x..first_x + 4].copy_from_slice(&1000.0f32.to_le_bytes());
        assert!(matches!(
            FeatureSet::from_bytes(&bytes),
            Err(Error::KeypointOutOfBounds { index: 0, .. })
        ));
    }

    #[test]
    fn dim_expectation_is_checked() {
        let fs = sample(1, 4);
        assert!(fs.expect_dim(4).is_ok());
        assert!(matches!(
            fs.expect_dim(8),
            Err(Error::DimMismatch { expected: 8, found: 4 })
        ));
    }

    #[test]
    fn crop_filters_by_rectangle() {
        let fs = sample(6, 2);
        let full = Rect { x: 0.0, y: 0.0, w: 64.0, h: 48.0 };
        assert_eq!(fs.crop(&full), fs);
        let part = fs.crop(&Rect { x: 0.0, y: 0.0, w: 7.0, h: 48.0 });
        assert_eq!(part.len(), 2);
        assert_eq!(part.descriptor(1), fs.descriptor(1));
    }

    #[test]
    fn rect_parses() {
        let r: Rect = "1,2,3.5,4".parse().unwrap();
        assert_eq!(r, Rect { x: 1.0, y: 2.0, w: 3.5, h: 4.0 });
        assert!("1,2,0,4".parse::<Rect>().is_err());
        assert!("1,2,3".parse::<Rect>().is_err());
    }
}
