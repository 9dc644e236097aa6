//! CSV manifest ingestion and export.
//!
//! Header: `image_path,label,patient_id,lesion_id,diameter_px,center_row,center_col`.
//! Image paths are relative to the image root.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    crop_window, window_side, BoundaryPolicy, Dataset, GrayImage, LesionClass, LesionRoi, Provenance,
    CONTEXT_MARGIN_FRAC,
};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 7] = [
    "image_path",
    "label",
    "patient_id",
    "lesion_id",
    "diameter_px",
    "center_row",
    "center_col",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_path: String,
    pub label: String,
    pub patient_id: String,
    pub lesion_id: String,
    pub diameter_px: f64,
    pub center_row: f64,
    pub center_col: f64,
}

/// Loads one real `LesionRoi` per manifest row. Each ROI keeps a lesion
/// centred context window of side `round(d·(1+2·0.4))`, shrunk to the largest
/// centred square that fits the image; a window smaller than the lesion is
/// an ingestion error.
pub fn load_dataset(manifest_path: &Path, image_root: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(manifest_path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::validation(format!(
            "{}: manifest header must be {}",
            manifest_path.display(),
            MANIFEST_HEADER.join(",")
        )));
    }
    let name = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut items = Vec::new();
    for (i, record) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = record.map_err(|e| Error::Ingestion {
            row: row_no,
            message: e.to_string(),
        })?;
        let label: LesionClass = row
            .label
            .parse()
            .map_err(|e: Error| Error::validation(format!("manifest row {row_no}: {e}")))?;
        if !(row.diameter_px.is_finite() && row.diameter_px > 0.0) {
            return Err(Error::validation(format!(
                "manifest row {row_no}: diameter_px must be positive"
            )));
        }
        let path = image_root.join(&row.image_path);
        if !path.is_file() {
            return Err(Error::Ingestion {
                row: row_no,
                message: format!("image file {} not found", path.display()),
            });
        }
        let image = GrayImage::read_png(&path).map_err(|e| match e {
            Error::Validation(m) => Error::validation(format!("manifest row {row_no}: {m}")),
            other => Error::Ingestion {
                row: row_no,
                message: other.to_string(),
            },
        })?;
        let pixels = context_window(&image, (row.center_row, row.center_col), row.diameter_px)
            .map_err(|e| Error::Ingestion {
                row: row_no,
                message: e.to_string(),
            })?;
        items.push(LesionRoi {
            pixels,
            diameter_px: row.diameter_px,
            label,
            patient_id: row.patient_id,
            lesion_id: row.lesion_id,
            provenance: Provenance::Real,
        });
    }
    let dataset = Dataset::new(name, items);
    dataset.validate()?;
    Ok(dataset)
}

fn context_window(image: &GrayImage, center: (f64, f64), diameter: f64) -> Result<GrayImage> {
    let wanted = window_side(diameter * (1.0 + 2.0 * CONTEXT_MARGIN_FRAC));
    let minimum = window_side(diameter);
    for side in (minimum..=wanted).rev() {
        if let Ok(w) = crop_window(image, center, side, BoundaryPolicy::Strict) {
            return Ok(w);
        }
    }
    Err(Error::Crop(format!(
        "lesion window of side {minimum} at ({:.1},{:.1}) does not fit the {}x{} image",
        center.0,
        center.1,
        image.height(),
        image.width()
    )))
}

/// Writes every item as a 16-bit PNG plus `manifest.csv` under `dir`. The
/// recorded centre is the middle of each stored ROI, so reloading recovers
/// the same windows.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest)?;
    for (i, item) in dataset.items.iter().enumerate() {
        let file = format!("{:05}_{}.png", i, sanitize(&item.sample_key()));
        item.pixels.write_png(&images.join(&file))?;
        writer.serialize(ManifestRow {
            image_path: format!("images/{file}"),
            label: item.label.name().to_string(),
            patient_id: item.patient_id.clone(),
            lesion_id: item.lesion_id.clone(),
            diameter_px: item.diameter_px,
            center_row: (item.height() as f64 - 1.0) / 2.0,
            center_col: (item.width() as f64 - 1.0) / 2.0,
        })?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(())
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_manifest(dir: &Path, rows: &[&str]) -> std::path::PathBuf {
        let path = dir.join("manifest.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "{}", MANIFEST_HEADER.join(",")).unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        path
    }

    #[test]
    fn empty_manifest_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), &[]);
        let ds = load_dataset(&m, dir.path()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn unknown_class_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::filled(40, 40, 0.5).write_png(&dir.path().join("a.png")).unwrap();
        let m = write_manifest(dir.path(), &["a.png,Adenoma,p1,L1,10,20,20"]);
        assert!(matches!(load_dataset(&m, dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_file_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::filled(40, 40, 0.5).write_png(&dir.path().join("a.png")).unwrap();
        let m = write_manifest(
            dir.path(),
            &["a.png,cyst,p1,L1,10,20,20", "missing.png,cyst,p1,L2,10,20,20"],
        );
        match load_dataset(&m, dir.path()) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn eight_bit_png_is_rescaled_by_255() {
        let dir = tempfile::tempdir().unwrap();
        image::GrayImage::from_pixel(30, 30, image::Luma([51u8]))
            .save(dir.path().join("a.png"))
            .unwrap();
        let m = write_manifest(dir.path(), &["a.png,hem,p1,L1,10,14.5,14.5"]);
        let ds = load_dataset(&m, dir.path()).unwrap();
        assert_eq!(ds.items[0].pixels.height(), 18);
        assert!(ds.items[0].pixels.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn context_window_shrinks_to_fit() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::filled(30, 30, 0.5).write_png(&dir.path().join("a.png")).unwrap();
        // desired context side is 36 but only 30 fit around the centre
        let m = write_manifest(dir.path(), &["a.png,cyst,p1,L1,20,14.5,14.5"]);
        let ds = load_dataset(&m, dir.path()).unwrap();
        assert_eq!(ds.items[0].pixels.height(), 30);
    }
}
