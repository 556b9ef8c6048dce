//! Planar geometry in world meters (x east, y north, heading CCW from +x).

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_heading(h: f64) -> Self {
        Self::new(h.cos(), h.sin())
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Self) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    /// Left-hand perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub pos: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            pos: Vec2::new(x, y),
            heading,
        }
    }

    /// Expresses a world point in this pose's frame (x forward, y left).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.pos).rotate(-self.heading)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        self.pos + p.rotate(self.heading)
    }
}

/// Oriented rectangle centred on `pose`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub pose: Pose,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn corners(&self) -> [Vec2; 4] {
        let (l, w) = (self.half_length, self.half_width);
        [
            self.pose.to_world(Vec2::new(l, w)),
            self.pose.to_world(Vec2::new(l, -w)),
            self.pose.to_world(Vec2::new(-l, -w)),
            self.pose.to_world(Vec2::new(-l, w)),
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let q = self.pose.to_local(p);
        q.x.abs() <= self.half_length && q.y.abs() <= self.half_width
    }

    /// Separating-axis overlap test.
    pub fn intersects(&self, other: &OrientedBox) -> bool {
        let a = self.corners();
        let b = other.corners();
        let axes = [
            Vec2::from_heading(self.pose.heading),
            Vec2::from_heading(self.pose.heading).perp(),
            Vec2::from_heading(other.pose.heading),
            Vec2::from_heading(other.pose.heading).perp(),
        ];
        axes.iter().all(|axis| {
            let (amin, amax) = project(&a, *axis);
            let (bmin, bmax) = project(&b, *axis);
            amax >= bmin && bmax >= amin
        })
    }

    /// Distance from `p` to the box (zero inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let q = self.pose.to_local(p);
        let dx = (q.x.abs() - self.half_length).max(0.0);
        let dy = (q.y.abs() - self.half_width).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

fn project(points: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let d = p.dot(axis);
            (lo.min(d), hi.max(d))
        })
}

/// Result of projecting a point onto a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc-length of the closest point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel.
    pub lateral: f64,
    pub distance: f64,
    /// Tangent heading at the closest point.
    pub heading: f64,
}

/// Polyline with cumulative arc-lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(!points.is_empty(), "polyline needs at least one point");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].dist(w[1]);
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        if self.points.len() < 2 {
            return 0;
        }
        let idx = self.cumulative.partition_point(|c| *c <= s);
        idx.clamp(1, self.points.len() - 1) - 1
    }

    /// Point and tangent heading at arc-length `s` (clamped to the ends).
    pub fn sample(&self, s: f64) -> (Vec2, f64) {
        if self.points.len() < 2 {
            return (self.points[0], 0.0);
        }
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 0.0 {
            (s - self.cumulative[i]) / seg
        } else {
            0.0
        };
        (a + (b - a) * t, (b - a).heading())
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.sample(s).1
    }

    /// Closest point restricted to arc-lengths in `[s_lo, s_hi]`.
    pub fn project_window(&self, p: Vec2, s_lo: f64, s_hi: f64) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
            heading: 0.0,
        };
        if self.points.len() < 2 {
            let d = p.dist(self.points[0]);
            best.distance = d;
            return best;
        }
        for i in 0..self.points.len() - 1 {
            let (c0, c1) = (self.cumulative[i], self.cumulative[i + 1]);
            if c1 < s_lo || c0 > s_hi {
                continue;
            }
            let (a, b) = (self.points[i], self.points[i + 1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let mut t = if len2 > 0.0 {
                (p - a).dot(ab) / len2
            } else {
                0.0
            };
            let seg = c1 - c0;
            let t_lo = if seg > 0.0 {
                ((s_lo - c0) / seg).max(0.0)
            } else {
                0.0
            };
            let t_hi = if seg > 0.0 {
                ((s_hi - c0) / seg).min(1.0)
            } else {
                1.0
            };
            t = t.clamp(t_lo, t_hi.max(t_lo));
            let q = a + ab * t;
            let d = p.dist(q);
            if d < best.distance {
                let dir = ab.normalized();
                best = Projection {
                    s: c0 + seg * t,
                    lateral: dir.cross(p - q),
                    distance: d,
                    heading: ab.heading(),
                };
            }
        }
        best
    }

    pub fn project(&self, p: Vec2) -> Projection {
        self.project_window(p, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Points at arc-lengths `spacing, 2·spacing, …` up to the end, plus the
    /// end point itself when the length is not a multiple of `spacing`.
    pub fn resample(&self, spacing: f64) -> Vec<(f64, Vec2)> {
        let len = self.length();
        let mut out = Vec::new();
        let mut k = 1usize;
        loop {
            let s = k as f64 * spacing;
            if s > len + 1e-9 {
                break;
            }
            out.push((s.min(len), self.sample(s.min(len)).0));
            k += 1;
        }
        let covered = out.last().map_or(0.0, |(s, _)| *s);
        if len - covered > 1e-6 {
            out.push((len, self.end()));
        }
        out
    }

    /// Sub-polyline between arc-lengths `a <= b`.
    pub fn slice(&self, a: f64, b: f64) -> Polyline {
        let a = a.clamp(0.0, self.length());
        let b = b.clamp(a, self.length());
        let mut pts = vec![self.sample(a).0];
        for (i, c) in self.cumulative.iter().enumerate() {
            if *c > a && *c < b {
                pts.push(self.points[i]);
            }
        }
        let end = self.sample(b).0;
        if end.dist(*pts.last().unwrap()) > 1e-9 || pts.len() == 1 {
            pts.push(end);
        }
        Polyline::new(pts)
    }

    /// Appends `other`, dropping its first point when it duplicates our end.
    pub fn extend(&mut self, other: &Polyline) {
        let mut pts = std::mem::take(&mut self.points);
        let skip = usize::from(pts.last().is_some_and(|e| e.dist(other.start()) < 1e-6));
        pts.extend_from_slice(&other.points[skip..]);
        *self = Polyline::new(pts);
    }
}
