//! Lane-graph map layouts and their declarative text format.
//!
//! A map is a directed graph whose nodes are lane endpoints and whose edges
//! are lanes (polyline centerlines). Road lanes connect junctions; junction
//! lanes are the turning/straight connectors inside a junction. Traffic lights
//! sit at the end of the road lanes they control, so a lane's end point is its
//! stop line.
//!
//! File format, one record per line (`#` starts a comment):
//!
//! ```text
//! miniurban-map 1
//! name <name>
//! lane_width <meters>
//! signal_timing <green s> <yellow s> <all-red s>
//! node <id> <x> <y>
//! lane <id> <road|junction> <from-node> <to-node> <light-id|-> <x,y> <x,y> ...
//! road <ax> <ay> <bx> <by> <half-width>
//! junction <id> <x> <y> <pad half-size>
//! light <id> <junction-id> <group 0|1> <x> <y> <lane>[,<lane>...]
//! crosswalk <id> <ax> <ay> <bx> <by>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EnvError, Result};
use crate::geom::{Polyline, Vec2};

pub type NodeId = usize;
pub type LaneId = usize;
pub type LightId = usize;
pub type JunctionId = usize;

const FORMAT_HEADER: &str = "miniurban-map 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaneKind {
    Road,
    Junction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub kind: LaneKind,
    pub from: NodeId,
    pub to: NodeId,
    pub light: Option<LightId>,
    pub polyline: Polyline,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.polyline.length()
    }
}

/// Drivable strip around a road centerline segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoadStrip {
    pub a: Vec2,
    pub b: Vec2,
    pub half_width: f64,
}

impl RoadStrip {
    /// `(along, lateral)` of `p` relative to the strip; along ∈ [0, len] inside.
    pub fn local(&self, p: Vec2) -> (f64, f64) {
        let d = (self.b - self.a).normalized();
        let q = p - self.a;
        (q.dot(d), d.cross(q))
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (along, lat) = self.local(p);
        along >= 0.0 && along <= self.length() && lat.abs() <= self.half_width
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Junction {
    pub id: JunctionId,
    pub center: Vec2,
    pub half_size: f64,
}

impl Junction {
    pub fn contains(&self, p: Vec2) -> bool {
        (p.x - self.center.x).abs() <= self.half_size
            && (p.y - self.center.y).abs() <= self.half_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightSpec {
    pub id: LightId,
    pub junction: JunctionId,
    pub group: u8,
    pub position: Vec2,
    pub lanes: Vec<LaneId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crosswalk {
    pub id: usize,
    pub a: Vec2,
    pub b: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalTiming {
    pub green: f64,
    pub yellow: f64,
    pub all_red: f64,
}

impl SignalTiming {
    pub fn cycle(&self) -> f64 {
        2.0 * (self.green + self.yellow + self.all_red)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub name: String,
    pub lane_width: f64,
    pub timing: SignalTiming,
    pub nodes: Vec<Vec2>,
    pub lanes: Vec<Lane>,
    pub roads: Vec<RoadStrip>,
    pub junctions: Vec<Junction>,
    pub lights: Vec<LightSpec>,
    pub crosswalks: Vec<Crosswalk>,
    outgoing: Vec<Vec<LaneId>>,
}

impl Map {
    fn finish(mut self) -> Result<Self> {
        self.outgoing = vec![Vec::new(); self.nodes.len()];
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.id != i {
                return Err(EnvError::InvalidMap(format!(
                    "lane ids must be dense, found {} at {}",
                    lane.id, i
                )));
            }
            if lane.from >= self.nodes.len() || lane.to >= self.nodes.len() {
                return Err(EnvError::InvalidMap(format!(
                    "lane {} references a missing node",
                    lane.id
                )));
            }
            if lane.polyline.points().len() < 2 {
                return Err(EnvError::InvalidMap(format!(
                    "lane {} needs at least two points",
                    lane.id
                )));
            }
            self.outgoing[lane.from].push(lane.id);
        }
        for (i, light) in self.lights.iter().enumerate() {
            if light.id != i || light.lanes.is_empty() {
                return Err(EnvError::InvalidMap(format!(
                    "light {} must be dense and control a lane",
                    light.id
                )));
            }
            if light.junction >= self.junctions.len() {
                return Err(EnvError::InvalidMap(format!(
                    "light {} references a missing junction",
                    light.id
                )));
            }
            for l in &light.lanes {
                if self.lanes.get(*l).and_then(|lane| lane.light) != Some(light.id) {
                    return Err(EnvError::InvalidMap(format!(
                        "light {} and lane {} disagree",
                        light.id, l
                    )));
                }
            }
        }
        for lane in &self.lanes {
            if let Some(l) = lane.light {
                if !self
                    .lights
                    .get(l)
                    .is_some_and(|spec| spec.lanes.contains(&lane.id))
                {
                    return Err(EnvError::InvalidMap(format!(
                        "lane {} names light {} which does not list it",
                        lane.id, l
                    )));
                }
            }
        }
        Ok(self)
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id]
    }

    /// Lanes leaving `node`.
    pub fn outgoing(&self, node: NodeId) -> &[LaneId] {
        &self.outgoing[node]
    }

    pub fn successors(&self, lane: LaneId) -> &[LaneId] {
        self.outgoing(self.lanes[lane].to)
    }

    pub fn road_lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.iter().filter(|l| l.kind == LaneKind::Road)
    }

    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.roads.iter().any(|r| r.contains(p)) || self.junctions.iter().any(|j| j.contains(p))
    }

    /// World-space bounding box `(min, max)` of every drawable element.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut grow = |p: Vec2, pad: f64| {
            lo = Vec2::new(lo.x.min(p.x - pad), lo.y.min(p.y - pad));
            hi = Vec2::new(hi.x.max(p.x + pad), hi.y.max(p.y + pad));
        };
        for r in &self.roads {
            grow(r.a, r.half_width);
            grow(r.b, r.half_width);
        }
        for j in &self.junctions {
            grow(j.center, j.half_size);
        }
        (lo, hi)
    }

    /// Loads a built-in layout by name or a map file by path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(text) = builtin_source(name_or_path) {
            return Self::parse(text);
        }
        let path = Path::new(name_or_path);
        if path.extension().is_some_and(|e| e == "map") && path.exists() {
            return Self::parse(&std::fs::read_to_string(path)?);
        }
        Err(EnvError::Config(format!(
            "unknown map '{name_or_path}' (built-in: {})",
            BUILTIN_MAPS
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Map {
            name: String::new(),
            lane_width: 3.5,
            timing: SignalTiming {
                green: 12.0,
                yellow: 3.0,
                all_red: 1.0,
            },
            nodes: Vec::new(),
            lanes: Vec::new(),
            roads: Vec::new(),
            junctions: Vec::new(),
            lights: Vec::new(),
            crosswalks: Vec::new(),
            outgoing: Vec::new(),
        };
        let mut saw_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| EnvError::MapParse {
                line: line_no,
                message,
            };
            if !saw_header {
                if line != FORMAT_HEADER {
                    return Err(err(format!("expected header '{FORMAT_HEADER}'")));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<f64>()
                    .map_err(|e| err(format!("field {i}: {e}")))
            };
            let int = |i: usize| -> Result<usize> {
                fields
                    .get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<usize>()
                    .map_err(|e| err(format!("field {i}: {e}")))
            };
            match fields[0] {
                "name" => {
                    map.name = fields
                        .get(1)
                        .ok_or_else(|| err("missing name".into()))?
                        .to_string()
                }
                "lane_width" => map.lane_width = num(1)?,
                "signal_timing" => {
                    map.timing = SignalTiming {
                        green: num(1)?,
                        yellow: num(2)?,
                        all_red: num(3)?,
                    }
                }
                "node" => {
                    if int(1)? != map.nodes.len() {
                        return Err(err("node ids must be dense and ordered".into()));
                    }
                    map.nodes.push(Vec2::new(num(2)?, num(3)?));
                }
                "lane" => {
                    let kind = match fields.get(2) {
                        Some(&"road") => LaneKind::Road,
                        Some(&"junction") => LaneKind::Junction,
                        other => return Err(err(format!("unknown lane kind {other:?}"))),
                    };
                    let light = match fields.get(5) {
                        Some(&"-") => None,
                        Some(s) => {
                            Some(s.parse::<usize>().map_err(|e| err(format!("light: {e}")))?)
                        }
                        None => return Err(err("missing light field".into())),
                    };
                    let points = fields[6..]
                        .iter()
                        .map(|p| {
                            let (x, y) = p
                                .split_once(',')
                                .ok_or_else(|| err(format!("bad point '{p}'")))?;
                            Ok(Vec2::new(
                                x.parse().map_err(|e| err(format!("point x: {e}")))?,
                                y.parse().map_err(|e| err(format!("point y: {e}")))?,
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if points.len() < 2 {
                        return Err(err("a lane needs at least two points".into()));
                    }
                    map.lanes.push(Lane {
                        id: int(1)?,
                        kind,
                        from: int(3)?,
                        to: int(4)?,
                        light,
                        polyline: Polyline::new(points),
                    });
                }
                "road" => map.roads.push(RoadStrip {
                    a: Vec2::new(num(1)?, num(2)?),
                    b: Vec2::new(num(3)?, num(4)?),
                    half_width: num(5)?,
                }),
                "junction" => map.junctions.push(Junction {
                    id: int(1)?,
                    center: Vec2::new(num(2)?, num(3)?),
                    half_size: num(4)?,
                }),
                "light" => {
                    let lanes = fields
                        .get(6)
                        .ok_or_else(|| err("missing lane list".into()))?
                        .split(',')
                        .map(|s| {
                            s.parse::<usize>()
                                .map_err(|e| err(format!("lane list: {e}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let group = int(3)?;
                    if group > 1 {
                        return Err(err("signal group must be 0 or 1".into()));
                    }
                    map.lights.push(LightSpec {
                        id: int(1)?,
                        junction: int(2)?,
                        group: group as u8,
                        position: Vec2::new(num(4)?, num(5)?),
                        lanes,
                    });
                }
                "crosswalk" => map.crosswalks.push(Crosswalk {
                    id: int(1)?,
                    a: Vec2::new(num(2)?, num(3)?),
                    b: Vec2::new(num(4)?, num(5)?),
                }),
                other => return Err(err(format!("unknown record '{other}'"))),
            }
        }
        if !saw_header {
            return Err(EnvError::MapParse {
                line: 0,
                message: "empty map file".into(),
            });
        }
        map.finish()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let f = |v: f64| format!("{v:.4}");
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "name {}", self.name).unwrap();
        writeln!(out, "lane_width {}", f(self.lane_width)).unwrap();
        writeln!(
            out,
            "signal_timing {} {} {}",
            f(self.timing.green),
            f(self.timing.yellow),
            f(self.timing.all_red)
        )
        .unwrap();
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(out, "node {i} {} {}", f(n.x), f(n.y)).unwrap();
        }
        for l in &self.lanes {
            let kind = match l.kind {
                LaneKind::Road => "road",
                LaneKind::Junction => "junction",
            };
            let light = l.light.map_or("-".to_string(), |v| v.to_string());
            write!(out, "lane {} {kind} {} {} {light}", l.id, l.from, l.to).unwrap();
            for p in l.polyline.points() {
                write!(out, " {},{}", f(p.x), f(p.y)).unwrap();
            }
            out.push('\n');
        }
        for r in &self.roads {
            writeln!(
                out,
                "road {} {} {} {} {}",
                f(r.a.x),
                f(r.a.y),
                f(r.b.x),
                f(r.b.y),
                f(r.half_width)
            )
            .unwrap();
        }
        for j in &self.junctions {
            writeln!(
                out,
                "junction {} {} {} {}",
                j.id,
                f(j.center.x),
                f(j.center.y),
                f(j.half_size)
            )
            .unwrap();
        }
        for l in &self.lights {
            let lanes: Vec<String> = l.lanes.iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "light {} {} {} {} {} {}",
                l.id,
                l.junction,
                l.group,
                f(l.position.x),
                f(l.position.y),
                lanes.join(",")
            )
            .unwrap();
        }
        for c in &self.crosswalks {
            writeln!(
                out,
                "crosswalk {} {} {} {} {}",
                c.id,
                f(c.a.x),
                f(c.a.y),
                f(c.b.x),
                f(c.b.y)
            )
            .unwrap();
        }
        out
    }
}

pub const BUILTIN_MAPS: &[(&str, &str)] = &[
    ("town-a", include_str!("../maps/town-a.map")),
    ("town-b", include_str!("../maps/town-b.map")),
];

fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN_MAPS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
}

/// Parameters of a rectilinear street grid. Junction `(i, j)` sits at
/// `(xs[i], ys[j])`; every pair of neighbouring junctions is joined by a
/// two-lane road unless listed in `removed`.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub removed: Vec<((usize, usize), (usize, usize))>,
    pub lane_width: f64,
    /// Distance from a junction centre to its stop lines.
    pub stop_offset: f64,
    pub pad_half_size: f64,
    pub timing: SignalTiming,
}

impl GridSpec {
    pub fn town_a() -> Self {
        Self {
            name: "town-a".into(),
            xs: vec![0.0, 60.0, 120.0],
            ys: vec![0.0, 60.0, 120.0],
            removed: Vec::new(),
            ..Self::base()
        }
    }

    pub fn town_b() -> Self {
        Self {
            name: "town-b".into(),
            xs: vec![0.0, 55.0, 120.0, 170.0],
            ys: vec![0.0, 65.0, 125.0],
            removed: vec![((1, 0), (1, 1))],
            ..Self::base()
        }
    }

    fn base() -> Self {
        Self {
            name: String::new(),
            xs: Vec::new(),
            ys: Vec::new(),
            removed: Vec::new(),
            lane_width: 3.5,
            stop_offset: 6.0,
            pad_half_size: 5.5,
            timing: SignalTiming {
                green: 12.0,
                yellow: 3.0,
                all_red: 1.0,
            },
        }
    }

    pub fn build(&self) -> Result<Map> {
        GridBuilder::new(self).build()
    }
}

/// Arm directions in the order E, N, W, S.
const ARMS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

struct ArmLanes {
    incoming: Option<LaneId>,
    outgoing: Option<LaneId>,
}

struct GridBuilder<'a> {
    spec: &'a GridSpec,
    nodes: Vec<Vec2>,
    lanes: Vec<Lane>,
}

impl<'a> GridBuilder<'a> {
    fn new(spec: &'a GridSpec) -> Self {
        Self {
            spec,
            nodes: Vec::new(),
            lanes: Vec::new(),
        }
    }

    fn has_segment(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        !self
            .spec
            .removed
            .iter()
            .any(|&(p, q)| (p == a && q == b) || (p == b && q == a))
    }

    fn neighbour(&self, j: (usize, usize), arm: (i64, i64)) -> Option<(usize, usize)> {
        let ni = j.0 as i64 + arm.0;
        let nj = j.1 as i64 + arm.1;
        if ni < 0
            || nj < 0
            || ni as usize >= self.spec.xs.len()
            || nj as usize >= self.spec.ys.len()
        {
            return None;
        }
        let n = (ni as usize, nj as usize);
        self.has_segment(j, n).then_some(n)
    }

    fn center(&self, j: (usize, usize)) -> Vec2 {
        Vec2::new(self.spec.xs[j.0], self.spec.ys[j.1])
    }

    fn node(&mut self, p: Vec2) -> NodeId {
        if let Some(i) = self.nodes.iter().position(|n| n.dist(p) < 1e-6) {
            return i;
        }
        self.nodes.push(p);
        self.nodes.len() - 1
    }

    fn add_lane(&mut self, kind: LaneKind, points: Vec<Vec2>) -> LaneId {
        let from = self.node(points[0]);
        let to = self.node(*points.last().unwrap());
        let id = self.lanes.len();
        self.lanes.push(Lane {
            id,
            kind,
            from,
            to,
            light: None,
            polyline: Polyline::new(points),
        });
        id
    }

    fn build(mut self) -> Result<Map> {
        let spec = self.spec;
        let (nx, ny) = (spec.xs.len(), spec.ys.len());
        let half_lane = spec.lane_width / 2.0;
        let mut arms: Vec<Vec<ArmLanes>> = (0..nx * ny)
            .map(|_| {
                (0..4)
                    .map(|_| ArmLanes {
                        incoming: None,
                        outgoing: None,
                    })
                    .collect()
            })
            .collect();
        let jidx = |j: (usize, usize)| j.1 * nx + j.0;
        let mut roads = Vec::new();
        for jy in 0..ny {
            for jx in 0..nx {
                let a = (jx, jy);
                for (arm_idx, arm) in ARMS.iter().enumerate().take(2) {
                    let Some(b) = self.neighbour(a, *arm) else {
                        continue;
                    };
                    let (pa, pb) = (self.center(a), self.center(b));
                    roads.push(RoadStrip {
                        a: pa,
                        b: pb,
                        half_width: spec.lane_width,
                    });
                    for (from, to, from_arm, to_arm) in
                        [(a, b, arm_idx, arm_idx + 2), (b, a, arm_idx + 2, arm_idx)]
                    {
                        let (p0, p1) = (self.center(from), self.center(to));
                        let u = (p1 - p0).normalized();
                        let right = Vec2::new(u.y, -u.x);
                        let start = p0 + u * spec.stop_offset + right * half_lane;
                        let end = p1 - u * spec.stop_offset + right * half_lane;
                        let id = self.add_lane(LaneKind::Road, vec![start, end]);
                        arms[jidx(from)][from_arm].outgoing = Some(id);
                        arms[jidx(to)][to_arm].incoming = Some(id);
                    }
                }
            }
        }
        let mut junctions = Vec::new();
        let mut lights = Vec::new();
        let mut crosswalks = Vec::new();
        for jy in 0..ny {
            for jx in 0..nx {
                let j = (jx, jy);
                let center = self.center(j);
                let present: Vec<usize> = (0..4)
                    .filter(|a| arms[jidx(j)][*a].incoming.is_some())
                    .collect();
                if present.is_empty() {
                    continue;
                }
                let junction_id = junctions.len();
                junctions.push(Junction {
                    id: junction_id,
                    center,
                    half_size: spec.pad_half_size,
                });
                for &a in &present {
                    let incoming = arms[jidx(j)][a].incoming.unwrap();
                    for &b in &present {
                        if a == b {
                            continue;
                        }
                        let outgoing = arms[jidx(j)][b].outgoing.unwrap();
                        let p = self.lanes[incoming].polyline.end();
                        let q = self.lanes[outgoing].polyline.start();
                        let u_in = Vec2::new(-ARMS[a].0 as f64, -ARMS[a].1 as f64);
                        let u_out = Vec2::new(ARMS[b].0 as f64, ARMS[b].1 as f64);
                        let pts = connector(p, u_in, q, u_out);
                        self.add_lane(LaneKind::Junction, pts);
                    }
                }
                if present.len() >= 3 {
                    for &a in &present {
                        let incoming = arms[jidx(j)][a].incoming.unwrap();
                        let u_in = Vec2::new(-ARMS[a].0 as f64, -ARMS[a].1 as f64);
                        let right = Vec2::new(u_in.y, -u_in.x);
                        let stop = self.lanes[incoming].polyline.end();
                        let light_id = lights.len();
                        lights.push(LightSpec {
                            id: light_id,
                            junction: junction_id,
                            group: if ARMS[a].1 == 0 { 0 } else { 1 },
                            position: stop + right * (half_lane + 1.5),
                            lanes: vec![incoming],
                        });
                        self.lanes[incoming].light = Some(light_id);
                        let arm_dir = Vec2::new(ARMS[a].0 as f64, ARMS[a].1 as f64);
                        let mid = center + arm_dir * ((spec.lane_width + spec.stop_offset) / 2.0);
                        let across = arm_dir.perp() * (spec.lane_width + 1.25);
                        crosswalks.push(Crosswalk {
                            id: crosswalks.len(),
                            a: mid - across,
                            b: mid + across,
                        });
                    }
                }
            }
        }
        let map = Map {
            name: spec.name.clone(),
            lane_width: spec.lane_width,
            timing: spec.timing,
            nodes: self.nodes,
            lanes: self.lanes,
            roads,
            junctions,
            lights,
            crosswalks,
            outgoing: Vec::new(),
        };
        // Round-trip through the text form so generated and loaded maps agree
        // to the file's precision.
        Map::parse(&map.to_text())
    }
}

/// Centerline of a junction connector from `p` (heading `u_in`) to `q`
/// (heading `u_out`): a straight segment or a circular arc.
fn connector(p: Vec2, u_in: Vec2, q: Vec2, u_out: Vec2) -> Vec<Vec2> {
    let turn = u_in.cross(u_out);
    if turn.abs() < 1e-9 {
        return vec![p, q];
    }
    // Arc centre: intersection of the normals through p and q.
    let (n1, n2) = (u_in.perp(), u_out.perp());
    let denom = n1.cross(n2);
    let t = (q - p).cross(n2) / denom;
    let c = p + n1 * t;
    let radius = 0.5 * (p.dist(c) + q.dist(c));
    let a0 = (p - c).heading();
    let sweep = crate::geom::wrap_angle((q - c).heading() - a0);
    let steps = ((sweep.abs() * radius) / 0.5).ceil().max(2.0) as usize;
    let mut pts: Vec<Vec2> = (0..=steps)
        .map(|k| c + Vec2::from_heading(a0 + sweep * k as f64 / steps as f64) * radius)
        .collect();
    pts[0] = p;
    *pts.last_mut().unwrap() = q;
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_files_match_generator() {
        for (spec, (name, text)) in [GridSpec::town_a(), GridSpec::town_b()]
            .iter()
            .zip(BUILTIN_MAPS)
        {
            assert_eq!(&spec.name, name);
            let generated = spec.build().unwrap().to_text();
            assert_eq!(&generated, text, "maps/{name}.map is stale; regenerate it");
        }
    }

    #[test]
    fn text_roundtrip() {
        let map = Map::load("town-a").unwrap();
        assert_eq!(Map::parse(&map.to_text()).unwrap(), map);
    }

    #[test]
    fn every_light_controls_a_road_lane_ending_at_its_stop_line() {
        for (name, _) in BUILTIN_MAPS {
            let map = Map::load(name).unwrap();
            assert!(!map.lights.is_empty());
            for light in &map.lights {
                for l in &light.lanes {
                    let lane = map.lane(*l);
                    assert_eq!(lane.kind, LaneKind::Road);
                    assert!(lane.polyline.end().dist(light.position) < 4.0);
                }
            }
        }
    }

    #[test]
    fn connectors_stay_drivable() {
        let map = Map::load("town-a").unwrap();
        for lane in &map.lanes {
            for k in 0..=20 {
                let s = lane.length() * k as f64 / 20.0;
                assert!(
                    map.is_drivable(lane.polyline.sample(s).0),
                    "lane {} leaves the road",
                    lane.id
                );
            }
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "miniurban-map 1\nname x\nnode 0 1.0\n";
        match Map::parse(bad) {
            Err(EnvError::MapParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
        assert!(matches!(
            Map::load("no-such-town"),
            Err(EnvError::Config(_))
        ));
    }

    #[test]
    fn right_turn_arc_has_expected_radius() {
        let pts = connector(
            Vec2::new(-6.0, -1.75),
            Vec2::new(1.0, 0.0),
            Vec2::new(-1.75, -6.0),
            Vec2::new(0.0, -1.0),
        );
        let c = Vec2::new(-6.0, -6.0);
        for p in pts {
            assert!((p.dist(c) - 4.25).abs() < 1e-9);
        }
    }
}
