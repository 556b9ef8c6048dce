//! Evaluation-return curves across seeds with Student-t confidence bands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::trainer::{read_metrics, RecordKind};

pub const CONFIDENCE: f64 = 0.90;

/// Mean and half-width of the two-sided Student-t interval. A single value
/// has no interval (half-width 0).
pub fn t_interval(values: &[f64], confidence: f64) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + confidence / 2.0);
    (mean, t * (var / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub step: u64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub points: Vec<BandPoint>,
}

/// `(step, eval return)` pairs of one run directory.
pub fn eval_returns(run_dir: &Path) -> Result<Vec<(u64, f64)>> {
    Ok(read_metrics(run_dir.join("metrics.jsonl"))?
        .into_iter()
        .filter(|r| r.kind == RecordKind::Eval)
        .filter_map(|r| r.eval_return.map(|v| (r.step, v)))
        .collect())
}

/// Groups runs by label and builds one band per label over the evaluation
/// steps that every run of the group reached.
pub fn curves(runs: &[(String, PathBuf)]) -> Result<Vec<Curve>> {
    let mut groups: BTreeMap<&str, Vec<Vec<(u64, f64)>>> = BTreeMap::new();
    let mut order = Vec::new();
    for (label, dir) in runs {
        if !groups.contains_key(label.as_str()) {
            order.push(label.as_str());
        }
        groups.entry(label).or_default().push(eval_returns(dir)?);
    }
    let mut out = Vec::new();
    for label in order {
        let seeds = &groups[label];
        let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for run in seeds {
            for &(s, v) in run {
                by_step.entry(s).or_default().push(v);
            }
        }
        let points: Vec<BandPoint> = by_step
            .into_iter()
            .filter(|(_, v)| v.len() == seeds.len())
            .map(|(step, v)| {
                let (mean, half) = t_interval(&v, CONFIDENCE);
                BandPoint {
                    step,
                    mean,
                    lo: mean - half,
                    hi: mean + half,
                    seeds: v.len(),
                }
            })
            .collect();
        out.push(Curve {
            label: label.to_string(),
            points,
        });
    }
    if out.iter().all(|c| c.points.is_empty()) {
        return Err(Error::Data("no evaluation records to plot".into()));
    }
    Ok(out)
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
];

const W: u32 = 960;
const H: u32 = 600;
const LEFT: u32 = 80;
const RIGHT: u32 = 20;
const TOP: u32 = 40;
const BOTTOM: u32 = 60;

/// Draws mean curves with shaded bands into a PNG.
pub fn render_png(curves: &[Curve], title: &str, path: impl AsRef<Path>) -> Result<()> {
    let img = render(curves, title)?;
    img.save(path.as_ref())
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn render(curves: &[Curve], title: &str) -> Result<RgbImage> {
    let pts: Vec<&BandPoint> = curves.iter().flat_map(|c| &c.points).collect();
    if pts.is_empty() {
        return Err(Error::Data("no evaluation records to plot".into()));
    }
    let x_max = pts.iter().map(|p| p.step).max().unwrap_or(1).max(1) as f64;
    let mut y_min = pts
        .iter()
        .map(|p| p.lo)
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let mut y_max = pts.iter().map(|p| p.hi).fold(f64::NEG_INFINITY, f64::max);
    if y_max - y_min < 1e-9 {
        y_max += 1.0;
        y_min -= 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let (pw, ph) = ((W - LEFT - RIGHT) as f64, (H - TOP - BOTTOM) as f64);
    let px = |step: f64| LEFT as f64 + step / x_max * pw;
    let py = |v: f64| TOP as f64 + (y_max - v) / (y_max - y_min) * ph;

    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let grey = Rgb([200, 200, 200]);
    let black = Rgb([0, 0, 0]);
    for k in 0..=5 {
        let v = y_min + (y_max - y_min) * k as f64 / 5.0;
        let y = py(v) as i64;
        hline(&mut img, LEFT as i64, (W - RIGHT) as i64, y, grey);
        text(&mut img, 4, y - 4, &format!("{v:.1}"), black);
        let s = x_max * k as f64 / 5.0;
        let x = px(s) as i64;
        vline(&mut img, x, TOP as i64, (H - BOTTOM) as i64, grey);
        text(
            &mut img,
            x - 16,
            (H - BOTTOM + 8) as i64,
            &format!("{:.0}k", s / 1000.0),
            black,
        );
    }
    hline(
        &mut img,
        LEFT as i64,
        (W - RIGHT) as i64,
        (H - BOTTOM) as i64,
        black,
    );
    vline(
        &mut img,
        LEFT as i64,
        TOP as i64,
        (H - BOTTOM) as i64,
        black,
    );
    text(
        &mut img,
        (W / 2 - 80) as i64,
        (H - 24) as i64,
        "environment steps",
        black,
    );
    text(&mut img, LEFT as i64, 12, title, black);

    for (ci, c) in curves.iter().enumerate() {
        let col = PALETTE[ci % PALETTE.len()];
        // Band: fill between interpolated lo/hi columnwise.
        for w in c.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (x0, x1) = (px(a.step as f64) as i64, px(b.step as f64) as i64);
            for x in x0..=x1 {
                let t = if x1 > x0 {
                    (x - x0) as f64 / (x1 - x0) as f64
                } else {
                    0.0
                };
                let lo = a.lo + t * (b.lo - a.lo);
                let hi = a.hi + t * (b.hi - a.hi);
                for y in py(hi) as i64..=py(lo) as i64 {
                    blend(&mut img, x, y, col, 0.2);
                }
            }
        }
        for w in c.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            line(
                &mut img,
                (px(a.step as f64), py(a.mean)),
                (px(b.step as f64), py(b.mean)),
                Rgb(col),
            );
        }
        for p in &c.points {
            let (x, y) = (px(p.step as f64) as i64, py(p.mean) as i64);
            for dx in -2..=2 {
                for dy in -2..=2 {
                    put(&mut img, x + dx, y + dy, Rgb(col));
                }
            }
        }
        // Legend.
        let ly = (TOP + 10 + 14 * ci as u32) as i64;
        let lx = (W - RIGHT - 200) as i64;
        for dx in 0..18 {
            for dy in 0..3 {
                put(&mut img, lx + dx, ly + 3 + dy, Rgb(col));
            }
        }
        let seeds = c.points.first().map_or(0, |p| p.seeds);
        text(
            &mut img,
            lx + 24,
            ly,
            &format!("{} (n={seeds})", c.label),
            black,
        );
    }
    Ok(img)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn blend(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3], a: f64) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        let p = img.get_pixel_mut(x as u32, y as u32);
        for (v, c) in p.0.iter_mut().zip(c) {
            *v = (*v as f64 * (1.0 - a) + c as f64 * a).round() as u8;
        }
    }
}

fn hline(img: &mut RgbImage, x0: i64, x1: i64, y: i64, c: Rgb<u8>) {
    for x in x0..=x1 {
        put(img, x, y, c);
    }
}

fn vline(img: &mut RgbImage, x: i64, y0: i64, y1: i64, c: Rgb<u8>) {
    for y in y0..=y1 {
        put(img, x, y, c);
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        put(img, x.round() as i64, y.round() as i64, c);
        put(img, x.round() as i64, y.round() as i64 + 1, c);
    }
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: Rgb<u8>) {
    for (i, ch) in s.chars().enumerate() {
        let Some(glyph) = font8x8::BASIC_FONTS.get(ch) else {
            continue;
        };
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 1 {
                    put(img, x + 8 * i as i64 + col, y + row as i64, c);
                }
            }
        }
    }
}
