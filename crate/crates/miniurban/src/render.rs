//! Ego-centric top-down rasterizer.
//!
//! Static layers (ground, clutter, sidewalks, road, markings) are baked once
//! per map and palette into a world-aligned raster at the output pixel
//! pitch. Each frame samples that raster through the ego transform and then
//! draws lights, pedestrians, vehicles and the ego on top.

use std::path::Path;
use std::sync::Arc;

use crate::agents::{LightPhase, LightState, Pedestrian, Vehicle};
use crate::dynamics::EgoState;
use crate::error::Result;
use crate::geom::{OrientedBox, Pose, Vec2};
use crate::map::Map;
use crate::palette::{Palette, Rgb};

/// Fraction of the image height in front of the ego.
pub const EGO_ROW_FRACTION: f64 = 0.75;
const SIDEWALK_WIDTH: f64 = 1.5;
const LIGHT_RADIUS: f64 = 1.0;

fn hash2(x: i64, y: i64, salt: u64) -> u64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ salt;
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^ (h >> 33)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in [0, 1] with lattice spacing `scale` meters.
fn value_noise(p: Vec2, scale: f64, salt: u64) -> f64 {
    let (x, y) = (p.x / scale, p.y / scale);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v = |dx, dy| unit(hash2(ix + dx, iy + dy, salt));
    let top = v(0, 0) + (v(1, 0) - v(0, 0)) * sx;
    let bottom = v(0, 1) + (v(1, 1) - v(0, 1)) * sx;
    top + (bottom - top) * sy
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = (a[k] as f64 + (b[k] as f64 - a[k] as f64) * t).round() as u8;
    }
    out
}

fn scale(c: Rgb, f: f64) -> Rgb {
    [0, 1, 2].map(|k| (c[k] as f64 * f).round().clamp(0.0, 255.0) as u8)
}

struct StaticRaster {
    origin: Vec2,
    pitch: f64,
    width: usize,
    height: usize,
    rgb: Vec<u8>,
    fallback: Rgb,
}

impl StaticRaster {
    fn build(map: &Map, palette: &Palette, pitch: f64, margin: f64) -> Self {
        let (lo, hi) = map.bounds();
        let origin = lo - Vec2::new(margin, margin);
        let width = ((hi.x - lo.x + 2.0 * margin) / pitch).ceil() as usize;
        let height = ((hi.y - lo.y + 2.0 * margin) / pitch).ceil() as usize;
        let mut rgb = vec![0u8; width * height * 3];
        for row in 0..height {
            for col in 0..width {
                let p = origin + Vec2::new((col as f64 + 0.5) * pitch, (row as f64 + 0.5) * pitch);
                let c = palette.apply_tint(static_color(map, palette, p));
                rgb[(row * width + col) * 3..][..3].copy_from_slice(&c);
            }
        }
        Self {
            origin,
            pitch,
            width,
            height,
            rgb,
            fallback: palette.apply_tint(palette.ground),
        }
    }

    fn sample(&self, p: Vec2) -> Rgb {
        let col = ((p.x - self.origin.x) / self.pitch).floor();
        let row = ((p.y - self.origin.y) / self.pitch).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return self.fallback;
        }
        let i = (row as usize * self.width + col as usize) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

fn static_color(map: &Map, pal: &Palette, p: Vec2) -> Rgb {
    let on_road = map.is_drivable(p);
    let near_road = !on_road
        && (map.roads.iter().any(|r| {
            let (along, lat) = r.local(p);
            along >= -SIDEWALK_WIDTH
                && along <= r.length() + SIDEWALK_WIDTH
                && lat.abs() <= r.half_width + SIDEWALK_WIDTH
        }) || map.junctions.iter().any(|j| {
            (p.x - j.center.x).abs() <= j.half_size + SIDEWALK_WIDTH
                && (p.y - j.center.y).abs() <= j.half_size + SIDEWALK_WIDTH
        }));
    let mut c = if on_road {
        let mut c = pal.road;
        if pal.puddles > 0.0 {
            let n = value_noise(p, 2.5, 11);
            if n > 1.0 - 0.35 * pal.puddles {
                c = scale(c, 0.72);
            }
        }
        if let Some(m) = marking(map, p) {
            c = mix(c, pal.marking, m);
        }
        c
    } else if near_road {
        let tile = hash2(p.x.floor() as i64, p.y.floor() as i64, 5);
        scale(pal.sidewalk, 0.94 + 0.1 * unit(tile))
    } else {
        let mut c = mix(pal.ground, pal.ground_alt, value_noise(p, 4.0, 1));
        // Clutter: one optional blob or block per 7 m cell.
        let cell = ((p.x / 7.0).floor() as i64, (p.y / 7.0).floor() as i64);
        let h = hash2(cell.0, cell.1, 23);
        if unit(h) < pal.decor_density {
            let h2 = hash2(cell.0, cell.1, 29);
            let center = Vec2::new(
                (cell.0 as f64 + 0.2 + 0.6 * unit(h2)) * 7.0,
                (cell.1 as f64 + 0.2 + 0.6 * unit(h2 >> 7)) * 7.0,
            );
            let size = 1.0 + 1.5 * unit(h2 >> 13);
            let color = pal.decor[(h2 >> 40) as usize % 2];
            let inside = if h2.is_multiple_of(2) {
                center.dist(p) < size
            } else {
                (p.x - center.x).abs() < size && (p.y - center.y).abs() < size * 0.7
            };
            if inside {
                c = color;
            }
        }
        c
    };
    if pal.rain > 0.0 {
        let k = ((p.x * 1.7 + p.y * 0.6) / 0.45).floor() as i64;
        let seg = (p.y / 2.3).floor() as i64;
        if unit(hash2(k, seg, 41)) < 0.12 * pal.rain {
            c = mix(c, [200, 205, 215], 0.35 + 0.3 * pal.rain);
        }
    }
    c
}

/// Marking coverage at `p` in [0, 1], if any.
fn marking(map: &Map, p: Vec2) -> Option<f64> {
    let in_junction = map.junctions.iter().any(|j| j.contains(p));
    if !in_junction {
        for r in &map.roads {
            let (along, lat) = r.local(p);
            if along < 0.0 || along > r.length() || lat.abs() > r.half_width {
                continue;
            }
            if lat.abs() < 0.2 && along.rem_euclid(4.0) < 2.0 {
                return Some(0.9);
            }
            if lat.abs() > r.half_width - 0.4 && lat.abs() < r.half_width - 0.15 {
                return Some(0.7);
            }
        }
    }
    for light in &map.lights {
        for &l in &light.lanes {
            let lane = map.lane(l);
            let stop = lane.polyline.end();
            let dir = crate::geom::Vec2::from_heading(lane.polyline.heading_at(lane.length()));
            let d = p - stop;
            let along = d.dot(dir);
            if (-0.4..=0.0).contains(&along) && d.dot(dir.perp()).abs() <= map.lane_width / 2.0 {
                return Some(1.0);
            }
        }
    }
    for cw in &map.crosswalks {
        let axis = (cw.b - cw.a).normalized();
        let d = p - cw.a;
        let t = d.dot(axis);
        if t >= 0.0
            && t <= cw.a.dist(cw.b)
            && d.dot(axis.perp()).abs() < 1.2
            && (t / 0.6).floor() as i64 % 2 == 0
        {
            return Some(0.85);
        }
    }
    None
}

/// A rendered RGB frame, channel-major (`3 x H x W`).
pub type Frame = Arc<[u8]>;

pub fn light_color(phase: LightPhase) -> Rgb {
    match phase {
        LightPhase::Green => [40, 210, 70],
        LightPhase::Yellow => [235, 205, 40],
        LightPhase::Red => [225, 35, 35],
    }
}

/// Everything dynamic the renderer needs for one frame.
pub struct Scene<'a> {
    pub ego: &'a EgoState,
    pub ego_half_length: f64,
    pub ego_half_width: f64,
    pub lights: &'a [LightState],
    pub vehicles: &'a [Vehicle],
    pub pedestrians: &'a [Pedestrian],
}

pub struct Renderer {
    pub resolution: usize,
    pub view_meters: f64,
    pub palette: Palette,
    raster: StaticRaster,
}

impl Renderer {
    pub fn new(map: &Map, palette: Palette, resolution: usize, view_meters: f64) -> Self {
        let pitch = view_meters / resolution as f64;
        let raster = StaticRaster::build(map, &palette, pitch, view_meters + 5.0);
        Self {
            resolution,
            view_meters,
            palette,
            raster,
        }
    }

    fn pitch(&self) -> f64 {
        self.view_meters / self.resolution as f64
    }

    /// Pixel center `(row, col)` to world coordinates.
    fn pixel_to_world(&self, ego: &Pose, row: usize, col: usize) -> Vec2 {
        let n = self.resolution as f64;
        let m = self.pitch();
        let forward = (EGO_ROW_FRACTION * n - (row as f64 + 0.5)) * m;
        let left = (0.5 * n - (col as f64 + 0.5)) * m;
        ego.to_world(Vec2::new(forward, left))
    }

    /// World point to fractional `(row, col)`.
    fn world_to_pixel(&self, ego: &Pose, p: Vec2) -> (f64, f64) {
        let n = self.resolution as f64;
        let q = ego.to_local(p);
        (
            EGO_ROW_FRACTION * n - q.x / self.pitch(),
            0.5 * n - q.y / self.pitch(),
        )
    }

    /// Renders one frame. `map` must be the map the renderer was built for.
    pub fn render(&self, map: &Map, scene: &Scene) -> Frame {
        let n = self.resolution;
        let plane = n * n;
        let ego = scene.ego.pose;
        let mut out = vec![0u8; 3 * plane];
        let left = Vec2::from_heading(ego.heading).perp();
        for row in 0..n {
            let row_start = self.pixel_to_world(&ego, row, 0);
            for col in 0..n {
                let p = row_start - left * (col as f64 * self.pitch());
                let c = self.raster.sample(p);
                for (k, v) in c.iter().enumerate() {
                    out[k * plane + row * n + col] = *v;
                }
            }
        }
        let mut canvas = Canvas {
            r: self,
            ego,
            out: &mut out,
        };
        for l in scene.lights {
            canvas.fill_disc(
                map.lights[l.id].position,
                LIGHT_RADIUS,
                light_color(l.phase),
            );
        }
        for p in scene.pedestrians {
            canvas.fill_disc(p.pos, p.radius, self.palette.pedestrian);
        }
        for v in scene.vehicles {
            canvas.fill_box(&v.bbox(), self.palette.vehicle);
            canvas.fill_windshield(&v.bbox(), scale(self.palette.vehicle, 0.55));
        }
        let ego_box = OrientedBox {
            pose: ego,
            half_length: scene.ego_half_length,
            half_width: scene.ego_half_width,
        };
        canvas.fill_box(&ego_box, self.palette.ego);
        canvas.fill_windshield(&ego_box, scale(self.palette.ego, 0.55));
        out.into()
    }
}

struct Canvas<'a> {
    r: &'a Renderer,
    ego: Pose,
    out: &'a mut [u8],
}

impl Canvas<'_> {
    /// Paints pixels within `radius` meters of `center` for which `inside` holds.
    fn for_pixels_near(
        &mut self,
        center: Vec2,
        radius: f64,
        color: Rgb,
        inside: impl Fn(Vec2) -> bool,
    ) {
        let n = self.r.resolution;
        let plane = n * n;
        let (rc, cc) = self.r.world_to_pixel(&self.ego, center);
        let rad = radius / self.r.pitch() + 1.0;
        let r0 = (rc - rad).floor().max(0.0) as usize;
        let c0 = (cc - rad).floor().max(0.0) as usize;
        let r1 = (rc + rad).ceil().min(n as f64);
        let c1 = (cc + rad).ceil().min(n as f64);
        if r1 <= 0.0 || c1 <= 0.0 {
            return;
        }
        for row in r0..r1 as usize {
            for col in c0..c1 as usize {
                if inside(self.r.pixel_to_world(&self.ego, row, col)) {
                    for (k, v) in color.iter().enumerate() {
                        self.out[k * plane + row * n + col] = *v;
                    }
                }
            }
        }
    }

    fn fill_disc(&mut self, center: Vec2, radius: f64, color: Rgb) {
        self.for_pixels_near(center, radius, color, |p| p.dist(center) <= radius);
    }

    fn fill_box(&mut self, b: &OrientedBox, color: Rgb) {
        let radius = b.half_length.hypot(b.half_width);
        self.for_pixels_near(b.pose.pos, radius, color, |p| b.contains(p));
    }

    fn fill_windshield(&mut self, b: &OrientedBox, color: Rgb) {
        let shield = OrientedBox {
            pose: Pose {
                pos: b.pose.to_world(Vec2::new(b.half_length * 0.45, 0.0)),
                heading: b.pose.heading,
            },
            half_length: b.half_length * 0.15,
            half_width: b.half_width * 0.8,
        };
        self.fill_box(&shield, color);
    }
}

/// Writes a channel-major frame as a PNG file.
pub fn save_png(frame: &[u8], resolution: usize, path: impl AsRef<Path>) -> Result<()> {
    let plane = resolution * resolution;
    let mut img = image::RgbImage::new(resolution as u32, resolution as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        *px = image::Rgb([frame[i], frame[plane + i], frame[2 * plane + i]]);
    }
    img.save(path)
        .map_err(|e| crate::error::EnvError::Io(std::io::Error::other(e)))
}
