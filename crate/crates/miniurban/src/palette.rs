//! Render palettes. Each one stands in for a weather/time-of-day condition:
//! it changes colors and background clutter but never the driving task.

use crate::error::{EnvError, Result};

pub type Rgb = [u8; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Palette {
    pub name: &'static str,
    pub ground: Rgb,
    pub ground_alt: Rgb,
    pub sidewalk: Rgb,
    pub road: Rgb,
    pub marking: Rgb,
    pub decor: [Rgb; 2],
    /// Fraction of background cells that carry a decor blob.
    pub decor_density: f64,
    /// Dark wet patches on the road surface, in [0, 1].
    pub puddles: f64,
    /// Diagonal rain streak intensity, in [0, 1].
    pub rain: f64,
    /// Multiplicative tint applied to every static pixel.
    pub tint: [f32; 3],
    pub vehicle: Rgb,
    pub pedestrian: Rgb,
    pub ego: Rgb,
}

const NOON: [f32; 3] = [1.0, 1.0, 1.0];
const SUNSET: [f32; 3] = [1.08, 0.82, 0.70];

pub const CLEAR_NOON: Palette = Palette {
    name: "clear-noon",
    ground: [88, 128, 70],
    ground_alt: [104, 146, 80],
    sidewalk: [170, 168, 160],
    road: [72, 72, 76],
    marking: [235, 235, 225],
    decor: [[150, 90, 70], [60, 96, 52]],
    decor_density: 0.35,
    puddles: 0.0,
    rain: 0.0,
    tint: NOON,
    vehicle: [40, 90, 200],
    pedestrian: [230, 150, 30],
    ego: [240, 240, 240],
};

pub const WET_NOON: Palette = Palette {
    name: "wet-noon",
    ground: [70, 108, 62],
    ground_alt: [84, 122, 70],
    sidewalk: [140, 140, 136],
    road: [56, 58, 64],
    puddles: 0.6,
    ..CLEAR_NOON
};

pub const HARD_RAIN_NOON: Palette = Palette {
    name: "hard-rain-noon",
    ground: [66, 96, 64],
    ground_alt: [74, 104, 72],
    sidewalk: [126, 128, 130],
    road: [52, 54, 60],
    puddles: 0.8,
    rain: 0.7,
    decor_density: 0.25,
    ..CLEAR_NOON
};

pub const CLEAR_SUNSET: Palette = Palette {
    name: "clear-sunset",
    decor: [[170, 80, 60], [80, 90, 50]],
    decor_density: 0.45,
    tint: SUNSET,
    ..CLEAR_NOON
};

pub const SOFT_RAIN_SUNSET: Palette = Palette {
    name: "soft-rain-sunset",
    puddles: 0.4,
    rain: 0.35,
    tint: SUNSET,
    ..WET_NOON
};

pub const WET_SUNSET: Palette = Palette {
    name: "wet-sunset",
    decor: [[120, 70, 90], [70, 80, 60]],
    decor_density: 0.5,
    tint: SUNSET,
    ..WET_NOON
};

pub const TRAIN_PALETTES: [Palette; 4] = [CLEAR_NOON, WET_NOON, HARD_RAIN_NOON, CLEAR_SUNSET];
pub const TEST_PALETTES: [Palette; 2] = [SOFT_RAIN_SUNSET, WET_SUNSET];

impl Palette {
    pub fn by_name(name: &str) -> Result<Palette> {
        TRAIN_PALETTES
            .iter()
            .chain(TEST_PALETTES.iter())
            .find(|p| p.name == name)
            .copied()
            .ok_or_else(|| {
                let known: Vec<_> = TRAIN_PALETTES
                    .iter()
                    .chain(TEST_PALETTES.iter())
                    .map(|p| p.name)
                    .collect();
                EnvError::Config(format!(
                    "unknown palette '{name}' (known: {})",
                    known.join(", ")
                ))
            })
    }

    pub fn apply_tint(&self, c: Rgb) -> Rgb {
        let mut out = [0u8; 3];
        for k in 0..3 {
            out[k] = (c[k] as f32 * self.tint[k]).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}
