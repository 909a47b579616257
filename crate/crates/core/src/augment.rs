//! Fixed-multiplier dataset expansion.
//!
//! A recipe is an ordered list of exactly [`RECIPE_LEN`] named transforms.
//! Every original record yields one augmented record per transform, each
//! applied independently to the original image.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnnotationRecord, DatasetError, DatasetManifest, Provenance};
use crate::imaging::{
    add_noise, adjust, crop, denoise, load_png, save_png, transform_geometric, Adjustment, Channels,
    GeometricOp, ImagingError, PixelRegion, RasterImage, ADJUST_RANGE,
};
use crate::seed;

/// Number of augmented images produced per original.
pub const RECIPE_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("record {0:?} is not resolved")]
    Unresolved(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = AugmentError> = std::result::Result<T, E>;

/// A single transform with its fixed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformOp {
    Adjust { kind: Adjustment, delta: i32 },
    Noise { sigma: f64 },
    Denoise,
    Geometric { transform: GeometricOp },
    /// Region given as fractions of the image's width and height.
    Crop { x: f64, y: f64, w: f64, h: f64 },
}

impl TransformOp {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AugmentError::InvalidRecipe(msg));
        match *self {
            TransformOp::Adjust { delta, .. } if !ADJUST_RANGE.contains(&delta) => {
                bad(format!("adjust delta {delta} outside {ADJUST_RANGE:?}"))
            }
            TransformOp::Noise { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                bad(format!("noise sigma {sigma} must be finite and non-negative"))
            }
            TransformOp::Crop { x, y, w, h } => {
                let unit = |v: f64| (0.0..=1.0).contains(&v);
                if unit(x) && unit(y) && w > 0.0 && h > 0.0 && x + w <= 1.0 && y + h <= 1.0 {
                    Ok(())
                } else {
                    bad(format!("crop fractions ({x}, {y}, {w}, {h}) leave the unit square"))
                }
            }
            _ => Ok(()),
        }
    }

    /// Applies the transform. `seed` is only consumed by noise.
    pub fn apply(&self, img: &RasterImage, seed: u64) -> Result<RasterImage> {
        Ok(match *self {
            TransformOp::Adjust {
                kind: Adjustment::Saturation,
                delta,
            } if img.channels() == Channels::Gray => {
                // Saturation needs color; gray inputs are promoted first.
                adjust(&gray_to_rgb(img), Adjustment::Saturation, delta)?
            }
            TransformOp::Adjust { kind, delta } => adjust(img, kind, delta)?,
            TransformOp::Noise { sigma } => add_noise(img, sigma, seed)?,
            TransformOp::Denoise => denoise(img),
            TransformOp::Geometric { transform } => transform_geometric(img, transform),
            TransformOp::Crop { x, y, w, h } => {
                let span = |frac_at: f64, frac_len: f64, size: u32| {
                    let at = ((frac_at * size as f64).floor() as u32).min(size - 1);
                    let len = ((frac_len * size as f64).round() as u32).clamp(1, size - at);
                    (at, len)
                };
                let (px, pw) = span(x, w, img.width());
                let (py, ph) = span(y, h, img.height());
                crop(img, PixelRegion::new(px, py, pw, ph))?
            }
        })
    }
}

fn gray_to_rgb(img: &RasterImage) -> RasterImage {
    RasterImage::from_fn(img.width(), img.height(), Channels::Rgb, |x, y, _| img.get(x, y, 0))
        .expect("dimensions come from a valid image")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub name: String,
    #[serde(flatten)]
    pub op: TransformOp,
}

impl TransformSpec {
    pub fn new(name: impl Into<String>, op: TransformOp) -> Self {
        Self { name: name.into(), op }
    }
}

/// Exactly [`RECIPE_LEN`] uniquely named transforms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentationRecipe {
    transforms: Vec<TransformSpec>,
}

impl AugmentationRecipe {
    pub fn new(transforms: Vec<TransformSpec>) -> Result<Self> {
        if transforms.len() != RECIPE_LEN {
            return Err(AugmentError::InvalidRecipe(format!(
                "expected {RECIPE_LEN} transforms, got {}",
                transforms.len()
            )));
        }
        let mut names = HashSet::new();
        for t in &transforms {
            if t.name.is_empty() || t.name.contains(['/', '\\']) {
                return Err(AugmentError::InvalidRecipe(format!("bad transform name {:?}", t.name)));
            }
            if !names.insert(t.name.as_str()) {
                return Err(AugmentError::InvalidRecipe(format!("duplicate transform name {:?}", t.name)));
            }
            t.op.validate()?;
        }
        Ok(Self { transforms })
    }

    pub fn transforms(&self) -> &[TransformSpec] {
        &self.transforms
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }
}

impl<'de> Deserialize<'de> for AugmentationRecipe {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            transforms: Vec<TransformSpec>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Self::new(raw.transforms).map_err(serde::de::Error::custom)
    }
}

impl Default for AugmentationRecipe {
    fn default() -> Self {
        build_recipe()
    }
}

/// The default recipe: ±20 brightness, contrast and saturation, Gaussian
/// noise at sigma 8, median denoise, the three right-angle rotations and a
/// horizontal flip.
pub fn build_recipe() -> AugmentationRecipe {
    let adj = |name: &str, kind, delta| TransformSpec::new(name, TransformOp::Adjust { kind, delta });
    let geo = |name: &str, transform| TransformSpec::new(name, TransformOp::Geometric { transform });
    AugmentationRecipe::new(vec![
        adj("brightness_plus20", Adjustment::Brightness, 20),
        adj("brightness_minus20", Adjustment::Brightness, -20),
        adj("contrast_plus20", Adjustment::Contrast, 20),
        adj("contrast_minus20", Adjustment::Contrast, -20),
        adj("saturation_plus20", Adjustment::Saturation, 20),
        adj("saturation_minus20", Adjustment::Saturation, -20),
        TransformSpec::new("noise_sigma8", TransformOp::Noise { sigma: 8.0 }),
        TransformSpec::new("denoise", TransformOp::Denoise),
        geo("rot90", GeometricOp::Rot90),
        geo("rot180", GeometricOp::Rot180),
        geo("rot270", GeometricOp::Rot270),
        geo("flip_h", GeometricOp::FlipH),
    ])
    .expect("default recipe is valid")
}

/// One output per transform, in recipe order. Noise transforms draw from
/// `derive_str(seed, name)`.
pub fn augment_image(img: &RasterImage, recipe: &AugmentationRecipe, seed: u64) -> Result<Vec<RasterImage>> {
    recipe
        .transforms()
        .iter()
        .map(|t| t.op.apply(img, seed::derive_str(seed, &t.name)))
        .collect()
}

/// Per-record seed used when augmenting `record_id`.
pub fn record_seed(seed: u64, record_id: &str) -> u64 {
    seed::derive_str(seed, record_id)
}

pub fn augmented_id(parent_id: &str, transform: &str) -> String {
    format!("{parent_id}__{transform}")
}

/// Returns the originals followed by [`RECIPE_LEN`] augmented records per
/// original. Labels and split assignments are inherited from the parent.
/// Records that are already augmented are carried over but not expanded.
pub fn augment_manifest(manifest: &DatasetManifest, recipe: &AugmentationRecipe) -> Result<DatasetManifest> {
    if let Some(r) = manifest.first_unresolved() {
        return Err(AugmentError::Unresolved(r.record_id.clone()));
    }
    let mut records = manifest.records().to_vec();
    let mut splits: BTreeMap<String, _> = manifest.splits().clone();
    for parent in manifest.records().iter().filter(|r| !r.is_augmented()) {
        let (instrument, defect) = parent.labels().expect("checked resolved");
        for t in recipe.transforms() {
            let id = augmented_id(&parent.record_id, &t.name);
            if let Some(split) = manifest.split_of(&parent.record_id) {
                splits.insert(id.clone(), split);
            }
            records.push(AnnotationRecord::labeled(
                id.clone(),
                format!("augmented/{id}.png"),
                instrument,
                defect,
                Provenance::Augmented {
                    parent_id: parent.record_id.clone(),
                    transform: t.name.clone(),
                },
            ));
        }
    }
    Ok(DatasetManifest::with_splits(records, splits)?)
}

/// Renders every augmented record of `manifest` whose image is missing,
/// reading parents and writing outputs relative to `root`. Work is spread
/// over the available cores; outputs are deterministic regardless.
pub fn materialize(manifest: &DatasetManifest, recipe: &AugmentationRecipe, seed: u64, root: &Path) -> Result<usize> {
    let originals: Vec<&AnnotationRecord> = manifest.records().iter().filter(|r| !r.is_augmented()).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(originals.len().max(1));
    let chunk = originals.len().div_ceil(workers).max(1);
    let written = std::thread::scope(|scope| {
        let handles: Vec<_> = originals
            .chunks(chunk)
            .map(|part| scope.spawn(move || materialize_part(part, manifest, recipe, seed, root)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("augmentation worker panicked"))
            .collect::<Result<Vec<usize>>>()
    })?;
    Ok(written.into_iter().sum())
}

fn materialize_part(
    parents: &[&AnnotationRecord],
    manifest: &DatasetManifest,
    recipe: &AugmentationRecipe,
    seed: u64,
    root: &Path,
) -> Result<usize> {
    let mut written = 0;
    for parent in parents {
        let pending: Vec<(usize, &AnnotationRecord)> = recipe
            .transforms()
            .iter()
            .enumerate()
            .filter_map(|(i, t)| manifest.get(&augmented_id(&parent.record_id, &t.name)).map(|r| (i, r)))
            .filter(|(_, r)| !root.join(&r.image_path).exists())
            .collect();
        if pending.is_empty() {
            continue;
        }
        let img = load_png(root.join(&parent.image_path))?;
        let outputs = augment_image(&img, recipe, record_seed(seed, &parent.record_id))?;
        for (i, record) in pending {
            save_png(&outputs[i], root.join(&record.image_path))?;
            written += 1;
        }
    }
    Ok(written)
}
