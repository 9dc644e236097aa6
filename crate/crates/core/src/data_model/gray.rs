//! Grayscale image buffer, Catmull-Rom bicubic sampling and PNG I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Catmull-Rom parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

/// Row-major single-channel image with `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("image dims must be positive, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "image buffer has {} samples, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dims must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dims must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Pixel read with edge replication for out-of-range indices.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn all_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Square window of `side` pixels with top-left corner `(top, left)`;
    /// out-of-range reads replicate the nearest edge pixel.
    pub fn window_clamped(&self, top: isize, left: isize, side: usize) -> GrayImage {
        GrayImage::from_fn(side, side, |r, c| {
            self.get_clamped(top + r as isize, left + c as isize)
        })
    }

    /// Samples are quantized to the 16-bit grid used by the PNG writer.
    pub fn quantized_u16(&self) -> GrayImage {
        let data = self
            .data
            .iter()
            .map(|v| quantize_u16(*v) as f64 / u16::MAX as f64)
            .collect();
        GrayImage {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Reads an 8- or 16-bit grayscale PNG (any format `image` decodes as Luma)
    /// and rescales to [0,1] by the format's maximum value.
    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f64> = match img {
            DynamicImage::ImageLuma8(buf) => buf
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / u8::MAX as f64)
                .collect(),
            DynamicImage::ImageLuma16(buf) => buf
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / u16::MAX as f64)
                .collect(),
            other => {
                return Err(Error::validation(format!(
                    "{} is not a single-channel grayscale image (color type {:?})",
                    path.display(),
                    other.color()
                )))
            }
        };
        GrayImage::new(h, w, data)
    }

    /// Writes a 16-bit grayscale PNG. Values are clamped to [0,1] first.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u16> = self.data.iter().map(|v| quantize_u16(*v)).collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                .expect("buffer length matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub(crate) fn quantize_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16
}

/// Cubic convolution kernel weight at distance `t`.
#[inline]
pub fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((CUBIC_A + 2.0) * t - (CUBIC_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((CUBIC_A * t - 5.0 * CUBIC_A) * t + 8.0 * CUBIC_A) * t - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Tap weights for the four samples around fractional offset `t` in [0,1).
#[inline]
fn tap_weights(t: f64) -> [f64; 4] {
    [
        cubic_weight(t + 1.0),
        cubic_weight(t),
        cubic_weight(1.0 - t),
        cubic_weight(2.0 - t),
    ]
}

/// Blends four taps relative to the second one, so constant inputs and
/// zero offsets reproduce the sample exactly.
#[inline]
fn blend(w: &[f64; 4], p: [f64; 4]) -> f64 {
    p[1] + w[0] * (p[0] - p[1]) + w[2] * (p[2] - p[1]) + w[3] * (p[3] - p[1])
}

/// Bicubic sample at fractional `(row, col)` with edge replication.
pub fn sample_bicubic(img: &GrayImage, row: f64, col: f64) -> f64 {
    let r0 = row.floor();
    let c0 = col.floor();
    let wr = tap_weights(row - r0);
    let wc = tap_weights(col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let mut rows = [0.0; 4];
    for (i, slot) in rows.iter_mut().enumerate() {
        let r = r0 - 1 + i as isize;
        let p = [
            img.get_clamped(r, c0 - 1),
            img.get_clamped(r, c0),
            img.get_clamped(r, c0 + 1),
            img.get_clamped(r, c0 + 2),
        ];
        *slot = blend(&wc, p);
    }
    blend(&wr, rows)
}

struct AxisTaps {
    index: Vec<[usize; 4]>,
    weight: Vec<[f64; 4]>,
}

fn axis_taps(input: usize, output: usize) -> AxisTaps {
    let scale = input as f64 / output as f64;
    let last = input as isize - 1;
    let mut index = Vec::with_capacity(output);
    let mut weight = Vec::with_capacity(output);
    for o in 0..output {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let base = src.floor();
        weight.push(tap_weights(src - base));
        let b = base as isize;
        index.push([
            (b - 1).clamp(0, last) as usize,
            b.clamp(0, last) as usize,
            (b + 1).clamp(0, last) as usize,
            (b + 2).clamp(0, last) as usize,
        ]);
    }
    AxisTaps { index, weight }
}

/// Resizes a square image to `target`×`target` with separable Catmull-Rom
/// interpolation (half-pixel-centre alignment, edge replication), then
/// clamps to [0,1].
pub fn resize_bicubic(roi: &GrayImage, target: usize) -> Result<GrayImage> {
    resize_bicubic_to(roi, target, target)
}

/// Rectangular variant of [`resize_bicubic`].
pub fn resize_bicubic_to(roi: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if roi.height() < 2 || roi.width() < 2 {
        return Err(Error::Resize(format!(
            "input must be at least 2x2, got {}x{}",
            roi.height(),
            roi.width()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Resize("target size must be positive".into()));
    }
    let cols = axis_taps(roi.width(), out_w);
    let rows = axis_taps(roi.height(), out_h);

    // horizontal pass: in_h x out_w
    let mut tmp = vec![0.0; roi.height() * out_w];
    for r in 0..roi.height() {
        let src = &roi.data()[r * roi.width()..(r + 1) * roi.width()];
        let dst = &mut tmp[r * out_w..(r + 1) * out_w];
        for (c, d) in dst.iter_mut().enumerate() {
            let ix = cols.index[c];
            *d = blend(&cols.weight[c], [src[ix[0]], src[ix[1]], src[ix[2]], src[ix[3]]]);
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        let ix = rows.index[r];
        let w = &rows.weight[r];
        for c in 0..out_w {
            let p = [
                tmp[ix[0] * out_w + c],
                tmp[ix[1] * out_w + c],
                tmp[ix[2] * out_w + c],
                tmp[ix[3] * out_w + c],
            ];
            out[r * out_w + c] = blend(w, p).clamp(0.0, 1.0);
        }
    }
    GrayImage::new(out_h, out_w, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_interpolating_and_partition_of_unity() {
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
        for i in 0..100 {
            let t = i as f64 / 100.0;
            let s: f64 = tap_weights(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = GrayImage::from_fn(64, 64, |r, c| ((r * 7 + c * 13) % 64) as f64 / 63.0);
        assert_eq!(resize_bicubic(&img, 64).unwrap(), img);
    }

    #[test]
    fn constant_is_preserved_exactly() {
        let img = GrayImage::filled(100, 100, 0.3137);
        let out = resize_bicubic(&img, 64).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.3137));
        let up = resize_bicubic(&GrayImage::filled(5, 5, 0.7), 64).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn degenerate_input_is_rejected() {
        let img = GrayImage::filled(1, 1, 0.5);
        assert!(matches!(resize_bicubic(&img, 64), Err(Error::Resize(_))));
    }

    #[test]
    fn output_is_clamped() {
        // a hard step overshoots with Catmull-Rom; clamping must hold it in range
        let img = GrayImage::from_fn(8, 8, |_, c| if c < 4 { 0.0 } else { 1.0 });
        let out = resize_bicubic(&img, 31).unwrap();
        assert!(out.all_in_unit_range());
    }

    #[test]
    fn png_round_trip_of_quantized_image_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(9, 11, |r, c| (r * 11 + c) as f64 / 98.0).quantized_u16();
        let path = dir.path().join("x.png");
        img.write_png(&path).unwrap();
        assert_eq!(GrayImage::read_png(&path).unwrap(), img);
    }

    #[test]
    fn color_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        image::RgbImage::new(4, 4).save(&path).unwrap();
        assert!(matches!(GrayImage::read_png(&path), Err(Error::Validation(_))));
    }
}
