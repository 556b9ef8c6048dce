//! Traffic lights, scripted vehicles and pedestrians.

use rand::Rng;

use crate::dynamics::DT;
use crate::geom::{wrap_angle, OrientedBox, Pose, Vec2};
use crate::map::{LaneId, LightId, Map};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LightPhase {
    Green,
    Yellow,
    Red,
}

/// Fixed-time two-group signal plan in whole simulation ticks.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalPlan {
    pub green: u64,
    pub yellow: u64,
    pub all_red: u64,
    /// Per-junction cycle offset in ticks.
    pub offsets: Vec<u64>,
}

impl SignalPlan {
    pub fn new(map: &Map, rng: &mut impl Rng) -> Self {
        let ticks = |s: f64| (s / DT).round() as u64;
        let mut plan = Self {
            green: ticks(map.timing.green),
            yellow: ticks(map.timing.yellow),
            all_red: ticks(map.timing.all_red),
            offsets: Vec::new(),
        };
        let cycle = plan.cycle();
        plan.offsets = map
            .junctions
            .iter()
            .map(|_| rng.random_range(0..cycle))
            .collect();
        plan
    }

    pub fn cycle(&self) -> u64 {
        2 * (self.green + self.yellow + self.all_red)
    }

    /// Phase of signal group `group` at `junction`, with seconds spent in
    /// the phase and the phase's total duration.
    pub fn phase(&self, junction: usize, group: u8, tick: u64) -> (LightPhase, f64, f64) {
        let half = self.green + self.yellow + self.all_red;
        let t = (tick + self.offsets[junction] + group as u64 * half) % self.cycle();
        let (phase, start, len) = if t < self.green {
            (LightPhase::Green, 0, self.green)
        } else if t < self.green + self.yellow {
            (LightPhase::Yellow, self.green, self.yellow)
        } else {
            let start = self.green + self.yellow;
            (LightPhase::Red, start, self.cycle() - start)
        };
        (phase, (t - start) as f64 * DT, len as f64 * DT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightState {
    pub id: LightId,
    pub phase: LightPhase,
    /// Seconds since the phase began.
    pub timer: f64,
    pub duration: f64,
}

pub fn light_states(map: &Map, plan: &SignalPlan, tick: u64) -> Vec<LightState> {
    map.lights
        .iter()
        .map(|l| {
            let (phase, timer, duration) = plan.phase(l.junction, l.group, tick);
            LightState {
                id: l.id,
                phase,
                timer,
                duration,
            }
        })
        .collect()
}

pub const VEHICLE_HALF_LENGTH: f64 = 2.25;
pub const VEHICLE_HALF_WIDTH: f64 = 1.0;
const LOOKAHEAD: usize = 25;
const CORRIDOR: f64 = 1.2;
const TIME_GAP: f64 = 1.5;
const STANDSTILL_GAP: f64 = 2.0;
const COMFORT_DECEL: f64 = 4.0;

/// Scripted lane-following vehicle with constant-time-gap car following.
#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub lane: LaneId,
    pub s: f64,
    pub speed: f64,
    pub cruise: f64,
    pub next: Option<LaneId>,
    pub pose: Pose,
}

impl Vehicle {
    pub fn new(map: &Map, lane: LaneId, s: f64, cruise: f64, rng: &mut impl Rng) -> Self {
        let mut v = Self {
            lane,
            s,
            speed: 0.0,
            cruise,
            next: pick_successor(map, lane, rng),
            pose: Pose::new(0.0, 0.0, 0.0),
        };
        v.update_pose(map);
        v
    }

    pub fn bbox(&self) -> OrientedBox {
        OrientedBox {
            pose: self.pose,
            half_length: VEHICLE_HALF_LENGTH,
            half_width: VEHICLE_HALF_WIDTH,
        }
    }

    fn update_pose(&mut self, map: &Map) {
        let (pos, heading) = map.lane(self.lane).polyline.sample(self.s);
        self.pose = Pose { pos, heading };
    }

    /// Point and heading `d` meters ahead along the planned lanes.
    fn ahead(&self, map: &Map, d: f64) -> Option<(Vec2, f64)> {
        let lane = map.lane(self.lane);
        let s = self.s + d;
        if s <= lane.length() {
            return Some(lane.polyline.sample(s));
        }
        let next = map.lane(self.next?);
        let s = s - lane.length();
        (s <= next.length()).then(|| next.polyline.sample(s))
    }
}

fn pick_successor(map: &Map, lane: LaneId, rng: &mut impl Rng) -> Option<LaneId> {
    let succ = map.successors(lane);
    (!succ.is_empty()).then(|| succ[rng.random_range(0..succ.len())])
}

/// A pedestrian walking back and forth over one crosswalk on a fixed
/// schedule: cross, wait at the far curb, cross back.
#[derive(Clone, Debug, PartialEq)]
pub struct Pedestrian {
    pub crosswalk: usize,
    pub speed: f64,
    pub radius: f64,
    pub period: u64,
    pub offset: u64,
    pub pos: Vec2,
    pub heading: f64,
}

impl Pedestrian {
    pub fn update(&mut self, map: &Map, tick: u64) {
        let cw = &map.crosswalks[self.crosswalk];
        let t = tick + self.offset;
        let (from, to) = if (t / self.period).is_multiple_of(2) {
            (cw.a, cw.b)
        } else {
            (cw.b, cw.a)
        };
        let len = from.dist(to);
        let walked = ((t % self.period) as f64 * DT * self.speed).min(len);
        self.pos = from + (to - from) * (walked / len);
        self.heading = (to - from).heading();
    }

    pub fn is_walking(&self, map: &Map) -> bool {
        let cw = &map.crosswalks[self.crosswalk];
        self.pos.dist(cw.a) > 1e-9 && self.pos.dist(cw.b) > 1e-9
    }
}

/// Everything a scripted vehicle must not drive into.
pub struct Obstacles<'a> {
    pub vehicles: &'a [Vehicle],
    pub pedestrians: &'a [Pedestrian],
    pub ego: OrientedBox,
}

/// Advances every vehicle by one step. Decisions use the state at the start
/// of the step so the update order does not matter.
pub fn step_vehicles(
    map: &Map,
    vehicles: &mut [Vehicle],
    pedestrians: &[Pedestrian],
    ego: OrientedBox,
    lights: &[LightState],
    rng: &mut impl Rng,
) {
    let snapshot = vehicles.to_vec();
    let obstacles = Obstacles {
        vehicles: &snapshot,
        pedestrians,
        ego,
    };
    let accels: Vec<f64> = snapshot
        .iter()
        .enumerate()
        .map(|(i, v)| desired_accel(map, v, i, &obstacles, lights))
        .collect();
    for (v, a) in vehicles.iter_mut().zip(accels) {
        v.speed = (v.speed + a * DT).max(0.0);
        v.s += v.speed * DT;
        loop {
            let len = map.lane(v.lane).length();
            if v.s < len {
                break;
            }
            match v.next {
                Some(next) => {
                    v.s -= len;
                    v.lane = next;
                    v.next = pick_successor(map, next, rng);
                }
                None => {
                    v.s = len;
                    v.speed = 0.0;
                    break;
                }
            }
        }
        v.update_pose(map);
    }
}

fn desired_accel(map: &Map, v: &Vehicle, me: usize, obs: &Obstacles, lights: &[LightState]) -> f64 {
    let mut gap = f64::INFINITY;
    'scan: for k in 1..=LOOKAHEAD {
        let d = k as f64;
        let Some((p, heading)) = v.ahead(map, d) else {
            break;
        };
        let hit_vehicle = obs.vehicles.iter().enumerate().any(|(j, o)| {
            j != me
                && wrap_angle(o.pose.heading - heading).abs() < std::f64::consts::FRAC_PI_3
                && o.bbox().distance_to(p) < CORRIDOR
        });
        let hit_ped = obs
            .pedestrians
            .iter()
            .any(|o| o.pos.dist(p) < CORRIDOR + o.radius);
        if hit_vehicle || hit_ped || obs.ego.distance_to(p) < CORRIDOR {
            gap = d - VEHICLE_HALF_LENGTH;
            break 'scan;
        }
    }
    let mut target = v.cruise.min(((gap - STANDSTILL_GAP) / TIME_GAP).max(0.0));
    let lane = map.lane(v.lane);
    if let Some(light) = lane.light {
        let to_line = lane.length() - v.s - VEHICLE_HALF_LENGTH - 0.5;
        let must_stop = match lights[light].phase {
            LightPhase::Red => true,
            LightPhase::Yellow => to_line > v.speed * v.speed / (2.0 * COMFORT_DECEL),
            LightPhase::Green => false,
        };
        if must_stop && to_line > -VEHICLE_HALF_LENGTH {
            target = target.min((to_line / TIME_GAP).max(0.0));
        }
    }
    (2.0 * (target - v.speed)).clamp(-6.0, 3.0)
}
