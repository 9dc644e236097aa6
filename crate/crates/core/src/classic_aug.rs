//! Geometric augmentation of a single lesion ROI.
//!
//! Each ROI is rotated `n_rot` times; every rotated copy is emitted as is and
//! additionally flipped `n_flip` times, translated `n_trans` times within
//! `±min(4, 0.1·d)` pixels and re-cropped with `n_scale` context margins
//! `s ∈ [0.1·d, 0.4·d]`. All outputs are `ROI_SIZE`×`ROI_SIZE`.
//!
//! Transforms are drawn first (`plan_transforms`) and rendered separately
//! (`render`), so a subset of a lesion's augmentations can be materialized
//! without rendering the rest.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    canonical_view, center_crop, resize_bicubic, sample_bicubic, window_side, Dataset, GrayImage,
    LesionRoi, Provenance, ROI_SIZE,
};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub n_rot: usize,
    pub n_flip: usize,
    pub n_trans: usize,
    pub n_scale: usize,
}

impl AugmentationPlan {
    pub const fn new(n_rot: usize, n_flip: usize, n_trans: usize, n_scale: usize) -> Self {
        Self {
            n_rot,
            n_flip,
            n_trans,
            n_scale,
        }
    }

    /// 30 rotations, 3 flips, 7 translations and 5 rescales: 480 per lesion.
    pub const fn standard() -> Self {
        Self::new(30, 3, 7, 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_flip > 3 {
            return Err(Error::validation(format!(
                "n_flip must be at most 3 (UD, LR, UDLR), got {}",
                self.n_flip
            )));
        }
        Ok(())
    }
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        Self::standard()
    }
}

/// Number of samples produced by `augment` for `plan`.
pub fn plan_size(plan: &AugmentationPlan) -> usize {
    plan.n_rot * (1 + plan.n_flip + plan.n_trans + plan.n_scale)
}

/// Maximum translation magnitude for a lesion of the given diameter.
pub fn translation_bound(diameter_px: f64) -> Result<f64> {
    if !(diameter_px.is_finite() && diameter_px > 0.0) {
        return Err(Error::validation(format!(
            "diameter must be positive, got {diameter_px}"
        )));
    }
    Ok((0.1 * diameter_px).min(4.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlipMode {
    /// Rows reversed.
    UD,
    /// Columns reversed.
    LR,
    /// Both.
    UDLR,
}

impl FlipMode {
    pub const ALL: [FlipMode; 3] = [FlipMode::UD, FlipMode::LR, FlipMode::UDLR];
}

/// Operation applied on top of a rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Variant {
    Base,
    Flip { mode: FlipMode },
    Translate { dx: f64, dy: f64 },
    Rescale { s: f64 },
}

/// Full description of one augmented sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub index: usize,
    pub theta_deg: f64,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub pixels: GrayImage,
    pub source_lesion_id: String,
    pub transform: TransformRecord,
}

impl AugmentedSample {
    /// Wraps the sample as a dataset item derived from `source`.
    pub fn into_roi(self, source: &LesionRoi) -> LesionRoi {
        let scale = ROI_SIZE as f64 / source.height() as f64;
        LesionRoi {
            pixels: self.pixels,
            diameter_px: source.diameter_px * scale,
            label: source.label,
            patient_id: source.patient_id.clone(),
            lesion_id: source.lesion_id.clone(),
            provenance: Provenance::ClassicAug {
                source_lesion_id: self.source_lesion_id,
                index: self.transform.index,
            },
        }
    }
}

fn check_square(roi: &LesionRoi) -> Result<()> {
    if !roi.pixels.is_square() {
        return Err(Error::shape(format!(
            "lesion {}: ROI must be square, got {}x{}",
            roi.lesion_id,
            roi.height(),
            roi.width()
        )));
    }
    Ok(())
}

fn with_pixels(roi: &LesionRoi, pixels: GrayImage) -> LesionRoi {
    LesionRoi {
        pixels,
        diameter_px: roi.diameter_px,
        label: roi.label,
        patient_id: roi.patient_id.clone(),
        lesion_id: roi.lesion_id.clone(),
        provenance: roi.provenance.clone(),
    }
}

/// Counter-clockwise rotation (as displayed, rows pointing down) about the
/// image centre with bicubic resampling and edge replication. Multiples of
/// 90° are exact index permutations.
pub fn rotate(roi: &LesionRoi, theta_deg: f64) -> Result<LesionRoi> {
    if !(0.0..=180.0).contains(&theta_deg) {
        return Err(Error::validation(format!(
            "rotation angle must be in [0,180], got {theta_deg}"
        )));
    }
    check_square(roi)?;
    Ok(with_pixels(roi, rotate_pixels(&roi.pixels, theta_deg)))
}

pub(crate) fn rotate_pixels(img: &GrayImage, theta_deg: f64) -> GrayImage {
    let n = img.height();
    if theta_deg == 0.0 {
        return img.clone();
    }
    if theta_deg == 90.0 && img.is_square() {
        return GrayImage::from_fn(n, n, |r, c| img.get(c, n - 1 - r));
    }
    if theta_deg == 180.0 {
        return flip_pixels(img, FlipMode::UDLR);
    }
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    GrayImage::from_fn(img.height(), img.width(), |r, c| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let sx = dx * cos - dy * sin + cx;
        let sy = dx * sin + dy * cos + cy;
        sample_bicubic(img, sy, sx).clamp(0.0, 1.0)
    })
}

pub fn flip(roi: &LesionRoi, mode: FlipMode) -> LesionRoi {
    with_pixels(roi, flip_pixels(&roi.pixels, mode))
}

pub(crate) fn flip_pixels(img: &GrayImage, mode: FlipMode) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    match mode {
        FlipMode::UD => GrayImage::from_fn(h, w, |r, c| img.get(h - 1 - r, c)),
        FlipMode::LR => GrayImage::from_fn(h, w, |r, c| img.get(r, w - 1 - c)),
        FlipMode::UDLR => GrayImage::from_fn(h, w, |r, c| img.get(h - 1 - r, w - 1 - c)),
    }
}

/// Shifts content by `dx` columns and `dy` rows; fractional shifts use
/// bicubic resampling, exposed borders replicate the edge.
pub fn translate(roi: &LesionRoi, dx: f64, dy: f64) -> Result<LesionRoi> {
    let bound = translation_bound(roi.diameter_px)?;
    if !(dx.is_finite() && dy.is_finite()) || dx.abs() > bound || dy.abs() > bound {
        return Err(Error::validation(format!(
            "shift ({dx},{dy}) exceeds bound {bound} for diameter {}",
            roi.diameter_px
        )));
    }
    Ok(with_pixels(roi, translate_pixels(&roi.pixels, dx, dy)))
}

pub(crate) fn translate_pixels(img: &GrayImage, dx: f64, dy: f64) -> GrayImage {
    if dx == 0.0 && dy == 0.0 {
        return img.clone();
    }
    if dx.fract() == 0.0 && dy.fract() == 0.0 {
        let (dx, dy) = (dx as isize, dy as isize);
        return GrayImage::from_fn(img.height(), img.width(), |r, c| {
            img.get_clamped(r as isize - dy, c as isize - dx)
        });
    }
    GrayImage::from_fn(img.height(), img.width(), |r, c| {
        sample_bicubic(img, r as f64 - dy, c as f64 - dx).clamp(0.0, 1.0)
    })
}

/// Side of the context window for margin `s`.
pub fn context_window_side(diameter_px: f64, s: f64) -> usize {
    window_side(diameter_px + 2.0 * s)
}

/// Re-crops `roi_source` with a context margin of `s` pixels per side
/// (window side `d + 2s`) and resizes to `ROI_SIZE`.
pub fn rescale_context(roi_source: &LesionRoi, s: f64) -> Result<LesionRoi> {
    let d = roi_source.diameter_px;
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::validation(format!("diameter must be positive, got {d}")));
    }
    if !(s >= 0.1 * d && s <= 0.4 * d) {
        return Err(Error::validation(format!(
            "context margin {s} outside [{}, {}]",
            0.1 * d,
            0.4 * d
        )));
    }
    check_square(roi_source)?;
    let crop = center_crop(&roi_source.pixels, context_window_side(d, s))?;
    let pixels = resize_bicubic(&crop, ROI_SIZE)?;
    let mut out = with_pixels(roi_source, pixels);
    out.diameter_px = d * ROI_SIZE as f64 / crop.height() as f64;
    Ok(out)
}

/// Draws the `plan_size(plan)` transform records for one lesion.
pub fn plan_transforms(
    diameter_px: f64,
    plan: &AugmentationPlan,
    seed: u64,
) -> Result<Vec<TransformRecord>> {
    plan.validate()?;
    let p = translation_bound(diameter_px)?;
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(plan_size(plan));
    for _ in 0..plan.n_rot {
        let theta_deg = rng.random_range(0.0..=180.0);
        let mut push = |variant| {
            out.push(TransformRecord {
                index: out.len(),
                theta_deg,
                variant,
            })
        };
        push(Variant::Base);
        let mut modes = FlipMode::ALL;
        modes.shuffle(&mut rng);
        for &mode in modes.iter().take(plan.n_flip) {
            push(Variant::Flip { mode });
        }
        for _ in 0..plan.n_trans {
            let (dx, dy) = loop {
                let dx = rng.random_range(-p..p);
                let dy = rng.random_range(-p..p);
                if dx != 0.0 || dy != 0.0 {
                    break (dx, dy);
                }
            };
            push(Variant::Translate { dx, dy });
        }
        for _ in 0..plan.n_scale {
            let s = rng.random_range(0.1 * diameter_px..=0.4 * diameter_px);
            push(Variant::Rescale { s });
        }
    }
    Ok(out)
}

/// Renders the given records for `roi`. Records sharing a rotation angle
/// reuse one rotated image.
pub fn render(
    roi: &LesionRoi,
    records: &[TransformRecord],
    margin_frac: f64,
) -> Result<Vec<AugmentedSample>> {
    check_square(roi)?;
    let d = roi.diameter_px;
    let mut out = Vec::with_capacity(records.len());
    let mut cached: Option<(f64, GrayImage, GrayImage)> = None;
    for rec in records {
        let fresh = !matches!(&cached, Some((theta, _, _)) if *theta == rec.theta_deg);
        if fresh {
            let rotated = rotate_pixels(&roi.pixels, rec.theta_deg);
            let base = canonical_view(&rotated, d, margin_frac)?;
            cached = Some((rec.theta_deg, rotated, base));
        }
        let (_, rotated, base) = cached.as_ref().expect("populated above");
        let pixels = match rec.variant {
            Variant::Base => base.clone(),
            Variant::Flip { mode } => flip_pixels(base, mode),
            Variant::Translate { dx, dy } => {
                let shifted = translate_pixels(rotated, dx, dy);
                canonical_view(&shifted, d, margin_frac)?
            }
            Variant::Rescale { s } => {
                // stored extent caps the window; ROIs ingested without
                // enough context get a central re-crop instead
                let side = context_window_side(d, s).min(rotated.height());
                resize_bicubic(&center_crop(rotated, side)?, ROI_SIZE)?
            }
        };
        out.push(AugmentedSample {
            pixels,
            source_lesion_id: roi.lesion_id.clone(),
            transform: *rec,
        });
    }
    Ok(out)
}

/// Expands one ROI into `plan_size(plan)` augmented samples.
pub fn augment(
    roi: &LesionRoi,
    plan: &AugmentationPlan,
    seed: u64,
    margin_frac: f64,
) -> Result<Vec<AugmentedSample>> {
    roi.validate()?;
    let records = plan_transforms(roi.diameter_px, plan, seed)?;
    render(roi, &records, margin_frac)
}

/// Per-lesion augmentation seed: derived from the root seed and lesion id.
pub fn lesion_seed(root_seed: u64, lesion_id: &str) -> u64 {
    derive_seed(root_seed, &["classic_aug", lesion_id])
}

/// One manifest row of a materialized augmentation set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentedRow {
    pub image_path: String,
    pub label: String,
    pub patient_id: String,
    pub source_lesion_id: String,
    pub index: usize,
    pub theta_deg: f64,
    pub op: String,
    pub flip: String,
    pub dx: f64,
    pub dy: f64,
    pub s: f64,
}

impl AugmentedRow {
    fn new(image_path: String, roi: &LesionRoi, t: &TransformRecord) -> Self {
        let (op, flip, dx, dy, s) = match t.variant {
            Variant::Base => ("base", String::new(), 0.0, 0.0, 0.0),
            Variant::Flip { mode } => ("flip", format!("{mode:?}"), 0.0, 0.0, 0.0),
            Variant::Translate { dx, dy } => ("translate", String::new(), dx, dy, 0.0),
            Variant::Rescale { s } => ("rescale", String::new(), 0.0, 0.0, s),
        };
        Self {
            image_path,
            label: roi.label.name().to_string(),
            patient_id: roi.patient_id.clone(),
            source_lesion_id: roi.lesion_id.clone(),
            index: t.index,
            theta_deg: t.theta_deg,
            op: op.to_string(),
            flip,
            dx,
            dy,
            s,
        }
    }

    /// Parses the transform back out of the row.
    pub fn transform(&self) -> Result<TransformRecord> {
        let variant = match self.op.as_str() {
            "base" => Variant::Base,
            "flip" => Variant::Flip {
                mode: match self.flip.as_str() {
                    "UD" => FlipMode::UD,
                    "LR" => FlipMode::LR,
                    "UDLR" => FlipMode::UDLR,
                    other => return Err(Error::validation(format!("unknown flip mode {other:?}"))),
                },
            },
            "translate" => Variant::Translate {
                dx: self.dx,
                dy: self.dy,
            },
            "rescale" => Variant::Rescale { s: self.s },
            other => return Err(Error::validation(format!("unknown transform {other:?}"))),
        };
        Ok(TransformRecord {
            index: self.index,
            theta_deg: self.theta_deg,
            variant,
        })
    }
}

/// Augments every real lesion of `dataset` and writes 16-bit PNGs plus
/// `manifest.csv` (one row per sample, with its transform record) under
/// `dir`. Returns the number of rows written. The files hold exactly the
/// samples `augment` streams in memory, quantized to 16 bits.
pub fn materialize(
    dataset: &Dataset,
    plan: &AugmentationPlan,
    root_seed: u64,
    margin_frac: f64,
    dir: &Path,
) -> Result<usize> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest)?;
    let mut rows = 0;
    for roi in &dataset.items {
        let samples = augment(roi, plan, lesion_seed(root_seed, &roi.lesion_id), margin_frac)?;
        for sample in samples {
            let file = format!(
                "{}_{:04}.png",
                crate::data_model::sanitize(&roi.lesion_id),
                sample.transform.index
            );
            sample.pixels.write_png(&images.join(&file))?;
            writer.serialize(AugmentedRow::new(format!("images/{file}"), roi, &sample.transform))?;
            rows += 1;
        }
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::LesionClass;

    fn roi(pixels: GrayImage, d: f64) -> LesionRoi {
        LesionRoi {
            pixels,
            diameter_px: d,
            label: LesionClass::Metastasis,
            patient_id: "p1".into(),
            lesion_id: "L1".into(),
            provenance: Provenance::Real,
        }
    }

    fn textured(n: usize) -> GrayImage {
        GrayImage::from_fn(n, n, |r, c| {
            (0.5 + 0.3 * ((r as f64) * 0.37).sin() * ((c as f64) * 0.23).cos()).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn plan_size_examples() {
        assert_eq!(plan_size(&AugmentationPlan::new(30, 3, 7, 5)), 480);
        assert_eq!(plan_size(&AugmentationPlan::new(1, 0, 0, 0)), 1);
        assert_eq!(plan_size(&AugmentationPlan::new(2, 3, 7, 5)), 32);
        assert_eq!(plan_size(&AugmentationPlan::new(0, 3, 7, 5)), 0);
    }

    #[test]
    fn translation_bound_examples() {
        assert_eq!(translation_bound(20.0).unwrap(), 2.0);
        assert_eq!(translation_bound(100.0).unwrap(), 4.0);
        assert_eq!(translation_bound(40.0).unwrap(), 4.0);
        assert!(translation_bound(0.0).is_err());
        assert!(translation_bound(-3.0).is_err());
    }

    #[test]
    fn too_many_flips_is_invalid() {
        assert!(AugmentationPlan::new(1, 4, 0, 0).validate().is_err());
    }

    #[test]
    fn rotation_range_is_enforced() {
        let r = roi(textured(16), 8.0);
        assert!(rotate(&r, -1.0).is_err());
        assert!(rotate(&r, 180.5).is_err());
        assert_eq!(rotate(&r, 0.0).unwrap(), r);
    }

    #[test]
    fn rot180_equals_double_flip() {
        let mut img = GrayImage::filled(9, 9, 0.1);
        for (r, c) in [(1, 1), (1, 2), (2, 1), (2, 2), (6, 3)] {
            img.set(r, c, 0.9);
        }
        let r = roi(img, 4.0);
        let rot = rotate(&r, 180.0).unwrap();
        let ff = flip(&flip(&r, FlipMode::UD), FlipMode::LR);
        assert_eq!(rot.pixels, ff.pixels);
    }

    #[test]
    fn flip_laws() {
        let r = roi(textured(12), 5.0);
        assert_eq!(flip(&flip(&r, FlipMode::UD), FlipMode::UD), r);
        assert_eq!(flip(&flip(&r, FlipMode::LR), FlipMode::LR), r);
        assert_eq!(flip(&r, FlipMode::UDLR), flip(&flip(&r, FlipMode::UD), FlipMode::LR));

        let mut img = GrayImage::filled(64, 64, 0.0);
        img.set(0, 5, 1.0);
        let f = flip(&roi(img, 20.0), FlipMode::UD);
        assert_eq!(f.pixels.get(63, 5), 1.0);
    }

    #[test]
    fn translation_checks_bound_and_moves_pixels() {
        let mut img = GrayImage::filled(32, 32, 0.0);
        img.set(10, 10, 1.0);
        let r = roi(img, 30.0);
        assert_eq!(translate(&r, 0.0, 0.0).unwrap(), r);
        let t = translate(&r, 2.0, 0.0).unwrap();
        assert_eq!(t.pixels.get(10, 12), 1.0);
        assert_eq!(t.pixels.get(10, 10), 0.0);
        assert!(translate(&r, 3.5, 0.0).is_err());
    }

    #[test]
    fn rescale_context_window_sides() {
        assert_eq!(context_window_side(50.0, 5.0), 60);
        assert_eq!(context_window_side(50.0, 20.0), 90);
        let r = roi(textured(90), 50.0);
        assert!(rescale_context(&r, 2.5).is_err());
        let out = rescale_context(&r, 20.0).unwrap();
        assert_eq!(out.height(), ROI_SIZE);
        let small = roi(textured(70), 50.0);
        assert!(matches!(rescale_context(&small, 20.0), Err(Error::Crop(_))));
    }

    #[test]
    fn augment_counts_and_determinism() {
        let r = roi(textured(48), 26.0);
        let plan = AugmentationPlan::new(2, 3, 7, 5);
        let a = augment(&r, &plan, 11, 0.25).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, augment(&r, &plan, 11, 0.25).unwrap());
        assert_ne!(a, augment(&r, &plan, 12, 0.25).unwrap());
        for s in &a {
            assert_eq!((s.pixels.height(), s.pixels.width()), (ROI_SIZE, ROI_SIZE));
            assert!(s.pixels.all_in_unit_range());
        }
        let p = translation_bound(26.0).unwrap();
        for s in &a {
            match s.transform.variant {
                Variant::Translate { dx, dy } => {
                    assert!(dx.abs() < p && dy.abs() < p);
                    assert!(dx != 0.0 || dy != 0.0);
                }
                Variant::Rescale { s } => assert!((2.6..=10.4).contains(&s)),
                _ => {}
            }
            assert!((0.0..=180.0).contains(&s.transform.theta_deg));
        }
    }

    #[test]
    fn fewer_flips_draw_distinct_modes() {
        let recs = plan_transforms(20.0, &AugmentationPlan::new(50, 2, 0, 0), 3).unwrap();
        for chunk in recs.chunks(3) {
            let modes: Vec<_> = chunk
                .iter()
                .filter_map(|t| match t.variant {
                    Variant::Flip { mode } => Some(mode),
                    _ => None,
                })
                .collect();
            assert_eq!(modes.len(), 2);
            assert_ne!(modes[0], modes[1]);
        }
    }

    #[test]
    fn render_subset_matches_full_render() {
        let r = roi(textured(40), 22.0);
        let plan = AugmentationPlan::new(3, 3, 2, 2);
        let full = augment(&r, &plan, 5, 0.25).unwrap();
        let recs = plan_transforms(22.0, &plan, 5).unwrap();
        let picked = [recs[17], recs[2], recs[9]];
        let sub = render(&r, &picked, 0.25).unwrap();
        assert_eq!(sub[0], full[17]);
        assert_eq!(sub[1], full[2]);
        assert_eq!(sub[2], full[9]);
    }
}
