//! Deterministic synthetic datasets with planted region-of-interest objects.
//!
//! Every image gets uniformly scattered background keypoints whose
//! descriptors come from a broad Gaussian mixture. A planted object is a
//! spatial Gaussian cluster of keypoints whose descriptors are the object's
//! signature vector plus noise. Each object is planted with a "good" number
//! of keypoints in some images and with fewer than [`JUNK_THRESHOLD`]
//! keypoints (barely visible) in others.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{QuerySpec, Relevance};
use super::{FeatureSet, Keypoint, Rect};
use crate::error::{Error, Result};

/// Plantings with fewer keypoints than this are junk rather than good.
pub const JUNK_THRESHOLD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub dataset_size: usize,
    pub planted_roi_count: usize,
    /// Images in which each object is planted with a good keypoint count.
    pub images_per_roi: usize,
    /// Images in which each object is planted with 1..JUNK_THRESHOLD keypoints.
    pub junk_per_roi: usize,
    pub roi_points_range: (usize, usize),
    pub background_points_range: (usize, usize),
    pub descriptor_dim: usize,
    pub cluster_spread: f32,
    pub signature_noise: f32,
    /// Number of mixture components of the background descriptor distribution.
    pub background_modes: usize,
    pub background_noise: f32,
    pub image_width: u32,
    pub image_height: u32,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            dataset_size: 200,
            planted_roi_count: 20,
            images_per_roi: 6,
            junk_per_roi: 2,
            roi_points_range: (12, 20),
            background_points_range: (120, 180),
            descriptor_dim: 32,
            cluster_spread: 8.0,
            signature_noise: 0.35,
            background_modes: 48,
            background_noise: 0.6,
            image_width: 320,
            image_height: 240,
            id_prefix: "img".to_string(),
            seed: 7,
        }
    }
}

impl SyntheticDatasetSpec {
    /// Small objects in busy images: ROI keypoints stay under 7% of each
    /// image and the background is hard to tell from the objects.
    pub fn roi_benchmark() -> Self {
        SyntheticDatasetSpec {
            background_points_range: (300, 400),
            background_modes: 16,
            background_noise: 1.2,
            signature_noise: 0.6,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("synthetic spec: {m}")));
        let (rmin, rmax) = self.roi_points_range;
        let (bmin, bmax) = self.background_points_range;
        if rmin > rmax || rmin == 0 {
            return bad("roi_points_range must be a nonempty range of positive counts");
        }
        if bmin > bmax {
            return bad("background_points_range must be nonempty");
        }
        if self.descriptor_dim == 0 || self.descriptor_dim > u16::MAX as usize {
            return bad("descriptor_dim must be in 1..=65535");
        }
        let positive = |v: f32| v.is_finite() && v > 0.0;
        if !positive(self.cluster_spread) || !positive(self.signature_noise) || !positive(self.background_noise) {
            return bad("spreads and noise levels must be positive");
        }
        if self.background_modes == 0 {
            return bad("background_modes must be positive");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive");
        }
        if self.planted_roi_count > 0 && self.images_per_roi + self.junk_per_roi > self.dataset_size {
            return bad("images_per_roi + junk_per_roi exceeds dataset_size");
        }
        Ok(())
    }

    fn image_id(&self, i: usize) -> String {
        format!("{}{:05}", self.id_prefix, i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub image_id: String,
    /// Bounding box of the planted keypoints.
    pub region: Rect,
    pub points: usize,
}

impl Placement {
    pub fn is_good(&self) -> bool {
        self.points >= JUNK_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedObject {
    pub object_id: String,
    pub placements: Vec<Placement>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<PlantedObject>,
    /// Margin (pixels) added around the planted bounding box for queries.
    pub query_margin: f32,
    pub image_size: (u32, u32),
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// The good placement each object's query is cropped from: the one in
    /// the lexicographically smallest image id.
    fn query_source(obj: &PlantedObject) -> Option<&Placement> {
        obj.placements
            .iter()
            .filter(|p| p.is_good())
            .min_by(|a, b| a.image_id.cmp(&b.image_id))
    }

    /// One region-of-interest query per object with at least one good
    /// placement.
    pub fn queries(&self) -> Vec<QuerySpec> {
        let (w, h) = (self.image_size.0 as f32, self.image_size.1 as f32);
        self.objects
            .iter()
            .filter_map(|obj| {
                let src = Self::query_source(obj)?;
                let m = self.query_margin;
                let x0 = (src.region.x - m).max(0.0);
                let y0 = (src.region.y - m).max(0.0);
                let x1 = (src.region.x + src.region.w + m).min(w);
                let y1 = (src.region.y + src.region.h + m).min(h);
                Some(QuerySpec {
                    query_id: obj.object_id.clone(),
                    source_image: src.image_id.clone(),
                    roi: Some(Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }),
                })
            })
            .collect()
    }

    /// Good and junk image sets per object id. The query source image is
    /// listed in neither.
    pub fn relevance(&self) -> BTreeMap<String, Relevance> {
        let mut out = BTreeMap::new();
        for obj in &self.objects {
            let source = Self::query_source(obj).map(|p| p.image_id.as_str());
            let mut rel = Relevance::default();
            for p in &obj.placements {
                if Some(p.image_id.as_str()) == source {
                    continue;
                }
                if p.is_good() {
                    rel.good.insert(p.image_id.clone());
                } else {
                    rel.junk.insert(p.image_id.clone());
                }
            }
            out.insert(obj.object_id.clone(), rel);
        }
        out
    }

    /// All images (source included) holding a good planting of `object_id`.
    pub fn positives(&self, object_id: &str) -> BTreeSet<String> {
        self.objects
            .iter()
            .filter(|o| o.object_id == object_id)
            .flat_map(|o| o.placements.iter().filter(|p| p.is_good()))
            .map(|p| p.image_id.clone())
            .collect()
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, std: f32) -> Vec<f32> {
    let normal = Normal::new(0.0f32, std).expect("positive std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

pub fn synth_generate(spec: &SyntheticDatasetSpec) -> Result<(Vec<FeatureSet>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.descriptor_dim;
    let (w, h) = (spec.image_width as f32, spec.image_height as f32);

    let modes: Vec<Vec<f32>> = (0..spec.background_modes)
        .map(|_| gaussian_vec(&mut rng, dim, 1.0))
        .collect();
    let signatures: Vec<Vec<f32>> = (0..spec.planted_roi_count)
        .map(|_| gaussian_vec(&mut rng, dim, 1.0))
        .collect();

    // (object, good?) plantings per image
    let mut plants: Vec<Vec<(usize, bool)>> = vec![Vec::new(); spec.dataset_size];
    for obj in 0..spec.planted_roi_count {
        let picks = sample(&mut rng, spec.dataset_size, spec.images_per_roi + spec.junk_per_roi);
        for (k, img) in picks.into_iter().enumerate() {
            plants[img].push((obj, k < spec.images_per_roi));
        }
    }

    let mut objects: Vec<PlantedObject> = (0..spec.planted_roi_count)
        .map(|i| PlantedObject {
            object_id: format!("obj{i:03}"),
            placements: Vec::new(),
        })
        .collect();

    let bg_noise = Normal::new(0.0f32, spec.background_noise).expect("positive");
    let sig_noise = Normal::new(0.0f32, spec.signature_noise).expect("positive");
    let spatial = Normal::new(0.0f32, spec.cluster_spread).expect("positive");
    let clamp_x = |x: f32| x.clamp(0.0, w - 0.01);
    let clamp_y = |y: f32| y.clamp(0.0, h - 0.01);

    let mut sets = Vec::with_capacity(spec.dataset_size);
    for (i, image_plants) in plants.iter().enumerate() {
        let id = spec.image_id(i);
        let mut fs = FeatureSet::empty(id.clone(), spec.image_width, spec.image_height, dim);
        let n_bg = rng.random_range(spec.background_points_range.0..=spec.background_points_range.1);
        for _ in 0..n_bg {
            let x = rng.random_range(0.0..w);
            let y = rng.random_range(0.0..h);
            fs.keypoints.push(Keypoint::new(clamp_x(x), clamp_y(y)));
            let mode = &modes[rng.random_range(0..modes.len())];
            fs.descriptors
                .extend(mode.iter().map(|&m| m + bg_noise.sample(&mut rng)));
        }
        for &(obj, good) in image_plants {
            let n = if good {
                rng.random_range(spec.roi_points_range.0..=spec.roi_points_range.1)
            } else {
                rng.random_range(1..JUNK_THRESHOLD)
            };
            let margin_x = (3.0 * spec.cluster_spread).min(w / 2.0);
            let margin_y = (3.0 * spec.cluster_spread).min(h / 2.0);
            let cx = rng.random_range(margin_x..=(w - margin_x));
            let cy = rng.random_range(margin_y..=(h - margin_y));
            let (mut x0, mut y0, mut x1, mut y1) = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
            for _ in 0..n {
                let x = clamp_x(cx + spatial.sample(&mut rng));
                let y = clamp_y(cy + spatial.sample(&mut rng));
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                fs.keypoints.push(Keypoint::new(x, y));
                fs.descriptors
                    .extend(signatures[obj].iter().map(|&s| s + sig_noise.sample(&mut rng)));
            }
            objects[obj].placements.push(Placement {
                image_id: id.clone(),
                // half-open rectangle that still contains the extreme points
                region: Rect { x: x0, y: y0, w: (x1 - x0) + 0.01, h: (y1 - y0) + 0.01 },
                points: n,
            });
        }
        fs.validate()?;
        sets.push(fs);
    }

    for obj in &mut objects {
        obj.placements.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }
    let truth = GroundTruth {
        objects,
        query_margin: 0.5 * spec.cluster_spread,
        image_size: (spec.image_width, spec.image_height),
    };
    Ok((sets, truth))
}
