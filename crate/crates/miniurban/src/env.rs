//! The driving environment: reset/step, termination and observations.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{
    light_states, step_vehicles, LightPhase, LightState, Pedestrian, SignalPlan, Vehicle,
};
use crate::dynamics::{BicycleParams, EgoState, VehicleCommand, DT};
use crate::error::{EnvError, Result};
use crate::geom::{wrap_angle, Pose, Vec2};
use crate::map::{LaneId, LaneKind, LightId, Map, NodeId};
use crate::palette::Palette;
use crate::planner::{shortest_lanes, Route};
use crate::render::{Frame, Renderer, Scene};
use crate::reward::{reward, RewardComponents, DESIRED_SPEED, STOP_DISTANCE};
use crate::scenario::{RouteSpec, ScenarioConfig};

/// Frames and measurements kept in each observation.
pub const FRAME_STACK: usize = 3;
/// Route waypoints in each observation.
pub const NUM_WAYPOINTS: usize = 10;
/// Along-lane distance within which a light counts as "near".
pub const LIGHT_LOOKAHEAD: f64 = 15.0;
/// Below this speed the ego counts as stopped, m/s.
pub const STOPPED_SPEED: f64 = 0.1;

const LOCALIZE_DISTANCE: f64 = 2.5;
const LOCALIZE_HEADING: f64 = std::f64::consts::FRAC_PI_4;
const PROGRESS_LATERAL: f64 = 4.0;
const TARGET_TOLERANCE: f64 = 2.0;
const SPAWN_SPACING: f64 = 10.0;
const SPAWN_CLEARANCE: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionLayout,
    RedLight,
    Blocked,
    Timeout,
}

impl Termination {
    pub const ALL: [Termination; 6] = [
        Termination::CollisionPedestrian,
        Termination::CollisionVehicle,
        Termination::CollisionLayout,
        Termination::RedLight,
        Termination::Blocked,
        Termination::Timeout,
    ];

    /// Everything but the timeout; failures cut bootstrapping.
    pub fn is_failure(self) -> bool {
        self != Termination::Timeout
    }

    pub fn is_collision(self) -> bool {
        matches!(
            self,
            Termination::CollisionPedestrian
                | Termination::CollisionVehicle
                | Termination::CollisionLayout
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Termination::CollisionPedestrian => "collision_pedestrian",
            Termination::CollisionVehicle => "collision_vehicle",
            Termination::CollisionLayout => "collision_layout",
            Termination::RedLight => "red_light",
            Termination::Blocked => "blocked",
            Termination::Timeout => "timeout",
        }
    }
}

/// Class of the light governing the ego's lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrafficLightLabel {
    None = 0,
    Red = 1,
    Green = 2,
}

impl TrafficLightLabel {
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_phase(phase: Option<LightPhase>) -> Self {
        match phase {
            None => TrafficLightLabel::None,
            Some(LightPhase::Green) => TrafficLightLabel::Green,
            Some(LightPhase::Red | LightPhase::Yellow) => TrafficLightLabel::Red,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub resolution: usize,
    /// Oldest to newest, each `3 x H x W` channel-major.
    pub frames: [Frame; FRAME_STACK],
    /// Ego frame (x forward, y left), meters, in route order.
    pub waypoints: [[f32; 2]; NUM_WAYPOINTS],
    /// `(speed m/s, steering command)`, oldest to newest.
    pub measurements: [[f32; 2]; FRAME_STACK],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub reward: RewardComponents,
    pub termination: Option<Termination>,
    pub light_label: TrafficLightLabel,
    /// Meters driven this step.
    pub distance: f64,
    /// Fraction of the current route segment completed, in [0, 1].
    pub route_completion: f64,
    /// The current target was reached this step.
    pub target_reached: bool,
    pub target_speed: f64,
}

impl StepInfo {
    pub fn flag(&self, t: Termination) -> bool {
        self.termination == Some(t)
    }
}

/// Progress of the ego along its route.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteTracker {
    pub route: Route,
    /// Route arc-length reached so far.
    pub s: f64,
    /// Arc-length at which the current target segment began.
    pub segment_start: f64,
    /// Route lanes with the route arc-length at which each begins.
    pub lanes: Vec<(LaneId, f64)>,
}

impl RouteTracker {
    fn new(map: &Map, lane: LaneId, s0: f64, target: NodeId) -> Result<Self> {
        let l = map.lane(lane);
        let mut polyline = l.polyline.slice(s0, l.length());
        let mut lanes = vec![(lane, -s0)];
        let rest = shortest_lanes(map, l.to, target)?;
        for id in &rest {
            lanes.push((*id, polyline.length()));
            polyline.extend(&map.lane(*id).polyline);
        }
        let mut all = vec![lane];
        all.extend(rest);
        Ok(Self {
            route: Route::from_polyline(l.from, target, all, polyline),
            s: 0.0,
            segment_start: 0.0,
            lanes,
        })
    }

    pub fn completion(&self) -> f64 {
        let len = self.route.length() - self.segment_start;
        if len <= 0.0 {
            return 1.0;
        }
        ((self.s - self.segment_start) / len).clamp(0.0, 1.0)
    }

    fn reached(&self) -> bool {
        self.s >= self.route.length() - TARGET_TOLERANCE
    }

    /// Replaces the finished segment with a path to `target`, keeping a short
    /// tail of the old route behind the ego.
    fn renew(&mut self, map: &Map, target: NodeId) -> Result<()> {
        let cut = (self.s - 10.0).max(0.0);
        let old = &self.route.polyline;
        let mut polyline = old.slice(cut, old.length());
        let mut lanes: Vec<(LaneId, f64)> = self
            .lanes
            .iter()
            .filter(|(id, start)| start + map.lane(*id).length() > cut)
            .map(|&(id, start)| (id, start - cut))
            .collect();
        let next = shortest_lanes(map, self.route.target, target)?;
        for id in &next {
            lanes.push((*id, polyline.length()));
            polyline.extend(&map.lane(*id).polyline);
        }
        let ids = lanes.iter().map(|(id, _)| *id).collect();
        self.route = Route::from_polyline(self.route.start, target, ids, polyline);
        self.s -= cut;
        self.segment_start = self.s;
        self.lanes = lanes;
        Ok(())
    }
}

/// Ground-truth simulator state. The agent only ever sees [`Observation`].
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub ego: EgoState,
    pub lights: Vec<LightState>,
    pub vehicles: Vec<Vehicle>,
    pub pedestrians: Vec<Pedestrian>,
    pub route: RouteTracker,
    /// Lane the ego was last localized on.
    pub ego_lane: Option<LaneId>,
    /// Controlled stop line the ego is approaching: light, stop point, lane direction.
    pub approach: Option<(LightId, Vec2, Vec2)>,
    /// Consecutive stopped steps, excluding time waiting at a red light.
    pub stopped_steps: u32,
    pub done: bool,
}

impl WorldState {
    pub fn clock(&self) -> f64 {
        self.tick as f64 * DT
    }
}

struct Streams {
    traffic: ChaCha8Rng,
    route: ChaCha8Rng,
}

/// Pseudo-random streams for one episode, split by purpose so that e.g. the
/// ego's behavior never perturbs background traffic.
fn streams(seed: u64) -> (ChaCha8Rng, Streams) {
    let make = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    (
        make(0),
        Streams {
            traffic: make(1),
            route: make(2),
        },
    )
}

pub struct MiniUrban {
    config: ScenarioConfig,
    map: Arc<Map>,
    renderer: Arc<Renderer>,
    params: BicycleParams,
    signals: SignalPlan,
    rng: Option<Streams>,
    state: Option<WorldState>,
    frames: VecDeque<Frame>,
    measurements: VecDeque<[f32; 2]>,
}

impl MiniUrban {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let map = Arc::new(Map::load(&config.map)?);
        let palette = Palette::by_name(&config.palette)?;
        let renderer = Arc::new(Renderer::new(
            &map,
            palette,
            config.resolution,
            config.view_meters,
        ));
        Ok(Self {
            config,
            map,
            renderer,
            params: BicycleParams::default(),
            signals: SignalPlan {
                green: 1,
                yellow: 1,
                all_red: 1,
                offsets: Vec::new(),
            },
            rng: None,
            state: None,
            frames: VecDeque::new(),
            measurements: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn map(&self) -> &Map {
        &self.map
    }

    pub fn params(&self) -> &BicycleParams {
        &self.params
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    /// Mutable access for scripted situations (tests, demos). Lights are
    /// recomputed from the signal plan on the next step, so set `tick`
    /// rather than light phases.
    pub fn world_mut(&mut self) -> Option<&mut WorldState> {
        self.state.as_mut()
    }

    pub fn signal_plan(&self) -> &SignalPlan {
        &self.signals
    }

    /// Starts an episode under `scenario`, reusing cached map and raster
    /// when they are unchanged.
    pub fn reset_with(&mut self, seed: u64, scenario: &ScenarioConfig) -> Result<Observation> {
        if *scenario != self.config {
            scenario.validate()?;
            let same_art = scenario.map == self.config.map
                && scenario.palette == self.config.palette
                && scenario.resolution == self.config.resolution
                && scenario.view_meters == self.config.view_meters;
            if !same_art {
                *self = Self::new(scenario.clone())?;
            } else {
                self.config = scenario.clone();
            }
        }
        self.reset(seed)
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let counts = self.config.agent_counts()?;
        let map = Arc::clone(&self.map);
        let (mut rng, mut streams) = streams(seed);
        let (lane, s0, target) = match self.config.route {
            Some(spec) => self.check_route(spec)?,
            None => self.random_route(&mut rng)?,
        };
        let route = RouteTracker::new(&map, lane, s0, target)?;
        let (pos, heading) = map.lane(lane).polyline.sample(s0);
        let ego = EgoState {
            pose: Pose { pos, heading },
            speed: 0.0,
            steering: 0.0,
        };
        self.signals = SignalPlan::new(&map, &mut rng);

        let mut slots = Vec::new();
        for l in map.road_lanes() {
            let mut s = 6.0;
            while s <= l.length() - 6.0 {
                let (p, _) = l.polyline.sample(s);
                if p.dist(pos) > SPAWN_CLEARANCE {
                    slots.push((l.id, s));
                }
                s += SPAWN_SPACING;
            }
        }
        if slots.len() < counts.vehicles {
            return Err(EnvError::Config(format!(
                "map '{}' has {} spawn slots, {} vehicles requested",
                map.name,
                slots.len(),
                counts.vehicles
            )));
        }
        slots.shuffle(&mut rng);
        let vehicles: Vec<Vehicle> = slots[..counts.vehicles]
            .iter()
            .map(|&(l, s)| {
                let cruise = rng.random_range(4.0..6.0);
                Vehicle::new(&map, l, s, cruise, &mut streams.traffic)
            })
            .collect();

        if counts.pedestrians > 0 && map.crosswalks.is_empty() {
            return Err(EnvError::Config(format!(
                "map '{}' has no crosswalks for pedestrians",
                map.name
            )));
        }
        let mut crossings: Vec<usize> = (0..map.crosswalks.len()).collect();
        crossings.shuffle(&mut rng);
        let pedestrians: Vec<Pedestrian> = (0..counts.pedestrians)
            .map(|i| {
                let period = rng.random_range(250..450);
                let mut p = Pedestrian {
                    crosswalk: crossings[i % crossings.len()],
                    speed: rng.random_range(1.2..1.5),
                    radius: rng.random_range(0.35..0.5),
                    period,
                    offset: rng.random_range(0..2 * period),
                    pos: Vec2::default(),
                    heading: 0.0,
                };
                p.update(&map, 0);
                p
            })
            .collect();

        let mut state = WorldState {
            tick: 0,
            ego,
            lights: light_states(&map, &self.signals, 0),
            vehicles,
            pedestrians,
            route,
            ego_lane: None,
            approach: None,
            stopped_steps: 0,
            done: false,
        };
        self.localize(&mut state);
        self.rng = Some(streams);
        let frame = self.render_world(&state);
        let m = [0.0f32, 0.0];
        self.frames = std::iter::repeat_n(frame, FRAME_STACK).collect();
        self.measurements = std::iter::repeat_n(m, FRAME_STACK).collect();
        self.state = Some(state);
        Ok(self.observation())
    }

    fn check_route(&self, spec: RouteSpec) -> Result<(LaneId, f64, NodeId)> {
        let lane =
            self.map.lanes.get(spec.lane).ok_or_else(|| {
                EnvError::Config(format!("route lane {} does not exist", spec.lane))
            })?;
        if !(0.0..lane.length()).contains(&spec.s) {
            return Err(EnvError::Config(format!(
                "route start s={} outside lane {}",
                spec.s, spec.lane
            )));
        }
        if spec.target >= self.map.nodes.len() {
            return Err(EnvError::Config(format!(
                "route target node {} does not exist",
                spec.target
            )));
        }
        Ok((spec.lane, spec.s, spec.target))
    }

    fn random_route(&self, rng: &mut impl Rng) -> Result<(LaneId, f64, NodeId)> {
        let road: Vec<LaneId> = self.map.road_lanes().map(|l| l.id).collect();
        if road.is_empty() {
            return Err(EnvError::InvalidMap("map has no road lanes".into()));
        }
        let lane = road[rng.random_range(0..road.len())];
        let len = self.map.lane(lane).length();
        let s0 = if len > 30.0 {
            rng.random_range(10.0..len - 20.0)
        } else {
            len / 2.0
        };
        let target = Self::random_target(
            &self.map,
            rng,
            self.map.lane(lane).to,
            self.config.min_route_m - (len - s0),
        )?;
        Ok((lane, s0, target))
    }

    /// Target node among road-lane ends at least `min_len` away from `from`;
    /// falls back to the farthest of the candidates tried.
    fn random_target(map: &Map, rng: &mut impl Rng, from: NodeId, min_len: f64) -> Result<NodeId> {
        let ends: Vec<NodeId> = map.road_lanes().map(|l| l.to).collect();
        let mut best = None;
        for _ in 0..32 {
            let t = ends[rng.random_range(0..ends.len())];
            if t == from {
                continue;
            }
            let Ok(lanes) = shortest_lanes(map, from, t) else {
                continue;
            };
            let len: f64 = lanes.iter().map(|l| map.lane(*l).length()).sum();
            if len >= min_len {
                return Ok(t);
            }
            if best.is_none_or(|(_, b)| len > b) {
                best = Some((t, len));
            }
        }
        best.map(|(t, _)| t)
            .ok_or_else(|| EnvError::Planning(format!("no reachable target from node {from}")))
    }

    pub fn step(&mut self, cmd: VehicleCommand) -> Result<(Observation, f64, bool, StepInfo)> {
        cmd.validate()?;
        let mut state = self
            .state
            .take()
            .ok_or_else(|| EnvError::Usage("step called before reset".into()))?;
        if state.done {
            self.state = Some(state);
            return Err(EnvError::Usage(
                "step called after the episode terminated".into(),
            ));
        }
        let info = self.advance(&mut state, cmd);
        let info = match info {
            Ok(info) => info,
            Err(e) => {
                self.state = Some(state);
                return Err(e);
            }
        };
        let frame = self.render_world(&state);
        self.frames.pop_front();
        self.frames.push_back(frame);
        self.measurements.pop_front();
        self.measurements
            .push_back([state.ego.speed as f32, state.ego.steering as f32]);
        let done = state.done;
        self.state = Some(state);
        Ok((self.observation(), info.reward.total(), done, info))
    }

    fn advance(&mut self, state: &mut WorldState, cmd: VehicleCommand) -> Result<StepInfo> {
        let map = Arc::clone(&self.map);
        let prev = state.ego;
        state.ego = self.params.step(&prev, &cmd, DT);
        state.tick += 1;
        state.lights = light_states(&map, &self.signals, state.tick);
        for p in &mut state.pedestrians {
            p.update(&map, state.tick);
        }
        let streams = self.rng.as_mut().expect("seeded on reset");
        let ego_box = state.ego.bbox(&self.params);
        step_vehicles(
            &map,
            &mut state.vehicles,
            &state.pedestrians,
            ego_box,
            &state.lights,
            &mut streams.traffic,
        );

        // Red-light crossing against the stop line approached last step.
        let mut ran_red = false;
        if let Some((light, stop, dir)) = state.approach {
            let before = (prev.pose.pos - stop).dot(dir);
            let after = (state.ego.pose.pos - stop).dot(dir);
            let lateral = (state.ego.pose.pos - stop).dot(dir.perp()).abs();
            if before < 0.0 && after >= 0.0 && lateral < map.lane_width {
                ran_red = state.lights[light].phase == LightPhase::Red;
                state.approach = None;
            }
        }
        let (light_phase, _) = self.localize(state);
        let label = TrafficLightLabel::from_phase(light_phase);

        // Route progress.
        let tracker = &mut state.route;
        let proj = tracker.route.polyline.project_window(
            state.ego.pose.pos,
            tracker.s - 2.0,
            tracker.s + 10.0,
        );
        if proj.distance < PROGRESS_LATERAL {
            tracker.s = tracker.s.max(proj.s);
        }
        let heading_error = wrap_angle(state.ego.pose.heading - proj.heading);
        let target_reached = tracker.reached();

        let collision_ped = state
            .pedestrians
            .iter()
            .any(|p| ego_box.distance_to(p.pos) < p.radius);
        let collision_veh = state.vehicles.iter().any(|v| ego_box.intersects(&v.bbox()));
        let collision_layout = ego_box.corners().iter().any(|c| !map.is_drivable(*c));
        if state.ego.speed < STOPPED_SPEED {
            if label != TrafficLightLabel::Red {
                state.stopped_steps += 1;
            }
        } else {
            state.stopped_steps = 0;
        }
        let blocked_steps = (self.config.blocked_seconds / DT).round() as u32;
        let termination = [
            (collision_ped, Termination::CollisionPedestrian),
            (collision_veh, Termination::CollisionVehicle),
            (collision_layout, Termination::CollisionLayout),
            (ran_red, Termination::RedLight),
            (state.stopped_steps >= blocked_steps, Termination::Blocked),
            (
                state.tick >= self.config.timeout_steps as u64,
                Termination::Timeout,
            ),
        ]
        .into_iter()
        .find_map(|(hit, t)| hit.then_some(t));

        let target_speed = if self.must_stop(state, light_phase) {
            0.0
        } else {
            DESIRED_SPEED
        };
        let components = reward(
            state.ego.speed,
            target_speed,
            proj.lateral,
            heading_error,
            termination,
        );
        let route_completion = state.route.completion();
        if target_reached && self.config.renew_targets && termination.is_none() {
            let streams = self.rng.as_mut().expect("seeded on reset");
            let from = state.route.route.target;
            let target =
                Self::random_target(&map, &mut streams.route, from, self.config.min_route_m)?;
            state.route.renew(&map, target)?;
        }
        state.done = termination.is_some();
        Ok(StepInfo {
            reward: components,
            termination,
            light_label: label,
            distance: state.ego.pose.pos.dist(prev.pose.pos),
            route_completion,
            target_reached,
            target_speed,
        })
    }

    /// Red/yellow stop line or an agent within the stopping distance ahead.
    fn must_stop(&self, state: &WorldState, light_phase: Option<LightPhase>) -> bool {
        if let (Some(phase), Some(lane)) = (light_phase, state.ego_lane) {
            if phase != LightPhase::Green {
                let l = self.map.lane(lane);
                let remaining = l.length() - l.polyline.project(state.ego.pose.pos).s;
                if remaining <= STOP_DISTANCE {
                    return true;
                }
            }
        }
        let poly = &state.route.route.polyline;
        let front = state.route.s + self.params.half_length;
        let mut d = 0.0;
        while d <= STOP_DISTANCE {
            let s = front + d;
            if s > poly.length() {
                break;
            }
            let (p, _) = poly.sample(s);
            let hit = state.vehicles.iter().any(|v| v.bbox().distance_to(p) < 1.2)
                || state
                    .pedestrians
                    .iter()
                    .any(|q| q.pos.dist(p) < 1.2 + q.radius);
            if hit {
                return true;
            }
            d += 1.0;
        }
        false
    }

    /// Updates the ego's lane and approached stop line. Returns the phase of
    /// the light governing the ego's lane within the lookahead, if any.
    fn localize(&self, state: &mut WorldState) -> (Option<LightPhase>, Option<LaneId>) {
        let lane = locate_lane(&self.map, &state.ego.pose, &state.route);
        state.ego_lane = lane;
        let mut phase = None;
        if let Some(id) = lane {
            let l = self.map.lane(id);
            if let Some(light) = l.light {
                let stop = l.polyline.end();
                let dir = Vec2::from_heading(l.polyline.heading_at(l.length()));
                state.approach = Some((light, stop, dir));
                let remaining = l.length() - l.polyline.project(state.ego.pose.pos).s;
                if (0.0..=LIGHT_LOOKAHEAD).contains(&remaining) {
                    phase = Some(state.lights[light].phase);
                }
            }
        }
        (phase, lane)
    }

    pub fn render_world(&self, state: &WorldState) -> Frame {
        self.renderer.render(
            &self.map,
            &Scene {
                ego: &state.ego,
                ego_half_length: self.params.half_length,
                ego_half_width: self.params.half_width,
                lights: &state.lights,
                vehicles: &state.vehicles,
                pedestrians: &state.pedestrians,
            },
        )
    }

    fn observation(&self) -> Observation {
        let state = self.state.as_ref().expect("observation after reset");
        let frames: [Frame; FRAME_STACK] = std::array::from_fn(|i| Arc::clone(&self.frames[i]));
        let measurements: [[f32; 2]; FRAME_STACK] = std::array::from_fn(|i| self.measurements[i]);
        Observation {
            resolution: self.config.resolution,
            frames,
            waypoints: ego_waypoints(&state.ego.pose, &state.route),
            measurements,
        }
    }

    /// Light label for the current state without advancing it.
    pub fn traffic_light_label(&self) -> TrafficLightLabel {
        let Some(state) = self.state.as_ref() else {
            return TrafficLightLabel::None;
        };
        let mut probe = state.clone();
        TrafficLightLabel::from_phase(self.localize(&mut probe).0)
    }
}

/// Lane the pose is driving on: close to the centerline and roughly aligned,
/// preferring lanes of the route around the current progress.
pub fn locate_lane(map: &Map, pose: &Pose, route: &RouteTracker) -> Option<LaneId> {
    let fits = |id: LaneId| {
        let p = map.lane(id).polyline.project(pose.pos);
        let ok = p.distance < LOCALIZE_DISTANCE
            && wrap_angle(pose.heading - p.heading).abs() < LOCALIZE_HEADING;
        ok.then_some(p.distance)
    };
    for &(id, start) in &route.lanes {
        let end = start + map.lane(id).length();
        if route.s >= start - 1.0 && route.s <= end + 1.0 && fits(id).is_some() {
            return Some(id);
        }
    }
    let mut best: Option<(LaneId, f64, bool)> = None;
    for lane in &map.lanes {
        if let Some(d) = fits(lane.id) {
            let road = lane.kind == LaneKind::Road;
            let better = match best {
                None => true,
                Some((_, bd, broad)) => (road && !broad) || (road == broad && d < bd),
            };
            if better {
                best = Some((lane.id, d, road));
            }
        }
    }
    best.map(|(id, _, _)| id)
}

/// The next waypoints beyond the ego's progress, in the ego frame, padded by
/// repeating the last one.
pub fn ego_waypoints(pose: &Pose, route: &RouteTracker) -> [[f32; 2]; NUM_WAYPOINTS] {
    let ahead: Vec<Vec2> = route
        .route
        .waypoints
        .iter()
        .filter(|(s, _)| *s > route.s)
        .take(NUM_WAYPOINTS)
        .map(|(_, p)| *p)
        .collect();
    let last = ahead
        .last()
        .copied()
        .unwrap_or_else(|| route.route.polyline.end());
    std::array::from_fn(|i| {
        let p = pose.to_local(ahead.get(i).copied().unwrap_or(last));
        [p.x as f32, p.y as f32]
    })
}
