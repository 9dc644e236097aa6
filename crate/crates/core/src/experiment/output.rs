//! Report files: `curve.csv`, `confusion_<series>_<size>.json`,
//! `report.json` and `curve.png`.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::run::{CurvePoint, ExperimentReport, Series};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct CurveRow<'a> {
    series: &'a str,
    group_index: usize,
    group_size: usize,
    fold: usize,
    train_size: usize,
    accuracy: f64,
}

fn nominal_size(report: &ExperimentReport, series: Series, index: usize) -> usize {
    let points = match series {
        Series::Classic => &report.classic,
        Series::Gan => &report.gan,
    };
    points[index].train_size_per_fold
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes every report artifact under `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curve = dir.join("curve.csv");
    let mut w = csv::Writer::from_path(&curve)?;
    for r in &report.runs {
        w.serialize(CurveRow {
            series: r.series.name(),
            group_index: r.group_index + 1,
            group_size: nominal_size(report, r.series, r.group_index),
            fold: r.fold,
            train_size: r.train_size,
            accuracy: r.accuracy,
        })?;
    }
    w.flush().map_err(|e| Error::io(&curve, e))?;
    for p in report.classic.iter().chain(&report.gan) {
        let name = format!("confusion_{}_{}.json", p.series.name(), p.train_size_per_fold);
        write_json(&p.confusion, &dir.join(name))?;
    }
    write_json(report, &dir.join("report.json"))?;
    plot_curves(&report.classic, &report.gan, &dir.join("curve.png"))
}

const W: u32 = 800;
const H: u32 = 500;
const PAD: f64 = 50.0;

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>, thick: i64) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = ((x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64);
        for dy in -thick / 2..=thick / 2 {
            for dx in -thick / 2..=thick / 2 {
                put(img, x + dx, y + dy, c);
            }
        }
    }
}

/// Accuracy against training-set size on a log axis: classic points red,
/// synthetic add-ons blue. Decade and 10%-accuracy grid lines in grey.
pub fn plot_curves(classic: &[CurvePoint], gan: &[CurvePoint], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let sizes: Vec<f64> = classic
        .iter()
        .chain(gan)
        .map(|p| (p.train_size_per_fold.max(1) as f64).log10())
        .collect();
    let lo = sizes.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = sizes.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil().max(lo + 1.0);
    let (x0, x1, y0, y1) = (PAD, W as f64 - PAD, H as f64 - PAD, PAD);
    let px = |size: usize| x0 + ((size.max(1) as f64).log10() - lo) / (hi - lo) * (x1 - x0);
    let py = |acc: f64| y0 + acc.clamp(0.0, 1.0) * (y1 - y0);
    let grey = Rgb([215, 215, 215]);
    for d in 0..=((hi - lo) as usize) {
        let x = x0 + d as f64 / (hi - lo) * (x1 - x0);
        line(&mut img, (x, y0), (x, y1), grey, 1);
    }
    for k in 0..=10 {
        let y = py(k as f64 / 10.0);
        line(&mut img, (x0, y), (x1, y), grey, 1);
    }
    let black = Rgb([0, 0, 0]);
    line(&mut img, (x0, y0), (x1, y0), black, 1);
    line(&mut img, (x0, y0), (x0, y1), black, 1);
    for (points, colour) in [(classic, Rgb([220, 30, 30])), (gan, Rgb([30, 60, 220]))] {
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (px(p.train_size_per_fold), py(p.mean_accuracy))).collect();
        for pair in xy.windows(2) {
            line(&mut img, pair[0], pair[1], colour, 3);
        }
        for &(x, y) in &xy {
            line(&mut img, (x - 4.0, y), (x + 4.0, y), colour, 9);
        }
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
