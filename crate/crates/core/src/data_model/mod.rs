//! Domain types, dataset ingestion and ROI geometry.

mod gray;
mod manifest;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gray::{cubic_weight, resize_bicubic, resize_bicubic_to, sample_bicubic, GrayImage, CUBIC_A};
pub use manifest::{load_dataset, write_dataset, ManifestRow, MANIFEST_HEADER};
pub(crate) use manifest::sanitize;

/// Side of the square model input.
pub const ROI_SIZE: usize = 64;

/// Fraction of the lesion diameter added as context on each side of the
/// canonical crop.
pub const DEFAULT_MARGIN_FRAC: f64 = 0.25;

/// Context margin (fraction of diameter per side) retained at ingestion so
/// that the widest context rescale (0.4·d) can be cut from the stored ROI.
pub const CONTEXT_MARGIN_FRAC: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LesionClass {
    Cyst,
    Metastasis,
    Hemangioma,
}

impl LesionClass {
    pub const ALL: [LesionClass; 3] = [LesionClass::Cyst, LesionClass::Metastasis, LesionClass::Hemangioma];

    pub fn index(self) -> usize {
        match self {
            LesionClass::Cyst => 0,
            LesionClass::Metastasis => 1,
            LesionClass::Hemangioma => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LesionClass::Cyst => "cyst",
            LesionClass::Metastasis => "metastasis",
            LesionClass::Hemangioma => "hemangioma",
        }
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LesionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cyst" | "0" => Ok(LesionClass::Cyst),
            "metastasis" | "met" | "1" => Ok(LesionClass::Metastasis),
            "hemangioma" | "hem" | "2" => Ok(LesionClass::Hemangioma),
            other => Err(Error::validation(format!("unknown lesion class {other:?}"))),
        }
    }
}

/// Where a sample came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    /// Geometric augmentation of the real lesion `source_lesion_id`.
    ClassicAug { source_lesion_id: String, index: usize },
    /// Drawn from the generator checkpoint `checkpoint_id`.
    Synthetic { checkpoint_id: String, index: usize },
}

impl Provenance {
    pub fn kind(&self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::ClassicAug { .. } => "classic_aug",
            Provenance::Synthetic { .. } => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LesionRoi {
    /// Lesion-centred square crop, samples in [0,1]. For real lesions this is
    /// the stored context window at native resolution; derived samples are
    /// already `ROI_SIZE`×`ROI_SIZE`.
    pub pixels: GrayImage,
    /// Lesion diameter in units of `pixels`.
    pub diameter_px: f64,
    pub label: LesionClass,
    pub patient_id: String,
    pub lesion_id: String,
    pub provenance: Provenance,
}

impl LesionRoi {
    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_px.is_finite() && self.diameter_px > 0.0) {
            return Err(Error::validation(format!(
                "lesion {}: diameter must be positive, got {}",
                self.lesion_id, self.diameter_px
            )));
        }
        if !self.pixels.all_in_unit_range() {
            return Err(Error::validation(format!(
                "lesion {}: pixel values must be finite and in [0,1]",
                self.lesion_id
            )));
        }
        Ok(())
    }

    /// Identity of this sample within a dataset.
    pub fn sample_key(&self) -> String {
        match &self.provenance {
            Provenance::Real => self.lesion_id.clone(),
            Provenance::ClassicAug { index, .. } => format!("{}#aug{}", self.lesion_id, index),
            Provenance::Synthetic { checkpoint_id, index } => {
                format!("{}#synth{}@{}", self.lesion_id, index, checkpoint_id)
            }
        }
    }

    /// The real lesion this sample derives from, if any.
    pub fn root_lesion_id(&self) -> Option<&str> {
        match &self.provenance {
            Provenance::Real => Some(&self.lesion_id),
            Provenance::ClassicAug { source_lesion_id, .. } => Some(source_lesion_id),
            Provenance::Synthetic { .. } => None,
        }
    }

    /// The `ROI_SIZE`×`ROI_SIZE` view fed to the networks. Real lesions are
    /// centre-cropped to `diameter·(1+2·margin_frac)` (limited to the stored
    /// extent) and resized; derived samples are returned as stored.
    pub fn model_input(&self, margin_frac: f64) -> Result<GrayImage> {
        match self.provenance {
            Provenance::Real => canonical_view(&self.pixels, self.diameter_px, margin_frac),
            _ => {
                if self.height() == ROI_SIZE && self.width() == ROI_SIZE {
                    Ok(self.pixels.clone())
                } else {
                    resize_bicubic(&self.pixels, ROI_SIZE)
                }
            }
        }
    }
}

/// Centre crop of side `round(diameter·(1+2·margin_frac))`, reduced to the
/// image extent when larger, resized to `ROI_SIZE`.
pub fn canonical_view(pixels: &GrayImage, diameter_px: f64, margin_frac: f64) -> Result<GrayImage> {
    let side = window_side(diameter_px * (1.0 + 2.0 * margin_frac))
        .min(pixels.height())
        .min(pixels.width());
    let crop = center_crop(pixels, side)?;
    resize_bicubic(&crop, ROI_SIZE)
}

pub(crate) fn window_side(extent: f64) -> usize {
    (extent.round() as usize).max(1)
}

/// Exact centre crop of an integer side.
pub fn center_crop(pixels: &GrayImage, side: usize) -> Result<GrayImage> {
    if side == 0 || side > pixels.height() || side > pixels.width() {
        return Err(Error::Crop(format!(
            "centre window of side {side} does not fit a {}x{} image",
            pixels.height(),
            pixels.width()
        )));
    }
    let top = ((pixels.height() - side) as f64 / 2.0).round() as isize;
    let left = ((pixels.width() - side) as f64 / 2.0).round() as isize;
    Ok(pixels.window_clamped(top, left, side))
}

/// What to do when a crop window leaves the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPolicy {
    #[default]
    Strict,
    /// Replicate edge pixels outside the image.
    ClampPad,
}

/// Square crop centred at `center` (row, col) with side
/// `round(diameter·(1+2·margin_frac))`. Returns the crop pixels; identity
/// fields of the resulting ROI are left to the caller.
pub fn crop_roi(
    image: &GrayImage,
    center: (f64, f64),
    diameter_px: f64,
    margin_frac: f64,
    policy: BoundaryPolicy,
) -> Result<GrayImage> {
    if !(diameter_px.is_finite() && diameter_px > 0.0) {
        return Err(Error::validation(format!("diameter must be positive, got {diameter_px}")));
    }
    if !(0.0..=1.0).contains(&margin_frac) {
        return Err(Error::validation(format!("margin_frac must be in [0,1], got {margin_frac}")));
    }
    let side = window_side(diameter_px * (1.0 + 2.0 * margin_frac));
    crop_window(image, center, side, policy)
}

pub(crate) fn crop_window(
    image: &GrayImage,
    center: (f64, f64),
    side: usize,
    policy: BoundaryPolicy,
) -> Result<GrayImage> {
    let half = (side as f64 - 1.0) / 2.0;
    let top = (center.0 - half).round() as isize;
    let left = (center.1 - half).round() as isize;
    let fits = top >= 0
        && left >= 0
        && top as usize + side <= image.height()
        && left as usize + side <= image.width();
    if !fits && policy == BoundaryPolicy::Strict {
        return Err(Error::Crop(format!(
            "window of side {side} at ({:.1},{:.1}) exceeds the {}x{} image",
            center.0,
            center.1,
            image.height(),
            image.width()
        )));
    }
    Ok(image.window_clamped(top, left, side))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub items: Vec<LesionRoi>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, items: Vec<LesionRoi>) -> Self {
        Self {
            name: name.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Counts indexed by `LesionClass::index`.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for item in &self.items {
            counts[item.label.index()] += 1;
        }
        counts
    }

    pub fn of_class(&self, class: LesionClass) -> Dataset {
        Dataset::new(
            format!("{}-{}", self.name, class),
            self.items.iter().filter(|r| r.label == class).cloned().collect(),
        )
    }

    pub fn patients(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            map.entry(item.patient_id.as_str()).or_default().push(i);
        }
        map
    }

    /// Checks per-item invariants and sample-key uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.items.len());
        for item in &self.items {
            item.validate()?;
            if !seen.insert(item.sample_key()) {
                return Err(Error::validation(format!(
                    "dataset {}: duplicate sample {}",
                    self.name,
                    item.sample_key()
                )));
            }
        }
        Ok(())
    }
}
