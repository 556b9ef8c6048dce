//! Route-suite benchmark at three traffic densities, with the usual driving
//! metrics: success rate, route completion and infractions per km.

use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use miniurban::{MiniUrban, RouteSpec, ScenarioConfig, Termination, DT};

use crate::agent::Agent;
use crate::control::{policy_to_command, Pid, PidGains};
use crate::error::{Error, Result};

/// Outcome of one driven episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task: String,
    pub seed: u64,
    pub palette: String,
    /// Target reached with no collision.
    pub success: bool,
    pub route_completion: f64,
    pub distance_km: f64,
    pub episode_return: f64,
    pub steps: u64,
    pub termination: Option<String>,
    pub collision_pedestrian: u32,
    pub collision_vehicle: u32,
    pub collision_layout: u32,
    pub red_light: u32,
    pub blocked: u32,
}

impl EpisodeResult {
    pub fn collisions(&self) -> u32 {
        self.collision_pedestrian + self.collision_vehicle + self.collision_layout
    }
}

/// Episode settings shared by evaluation and benchmarking.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeSettings {
    pub action_repeat: usize,
    pub pid: PidGains,
    /// End the episode once the route target is reached.
    pub stop_at_target: bool,
}

/// Drives one episode with the deterministic policy.
pub fn run_episode(
    agent: &Agent,
    env: &mut MiniUrban,
    scenario: &ScenarioConfig,
    seed: u64,
    task: &str,
    settings: EpisodeSettings,
    rng: &mut dyn RngCore,
) -> Result<EpisodeResult> {
    let mut obs = env.reset_with(seed, scenario)?;
    let mut pid = Pid::new(settings.pid);
    let mut result = EpisodeResult {
        task: task.to_string(),
        seed,
        palette: scenario.palette.clone(),
        success: false,
        route_completion: 0.0,
        distance_km: 0.0,
        episode_return: 0.0,
        steps: 0,
        termination: None,
        collision_pedestrian: 0,
        collision_vehicle: 0,
        collision_layout: 0,
        red_light: 0,
        blocked: 0,
    };
    let mut reached_any = false;
    'episode: loop {
        let action = agent.act(&obs, true, rng)?;
        for _ in 0..settings.action_repeat.max(1) {
            let speed = env.world().map_or(0.0, |w| w.ego.speed);
            let cmd = policy_to_command(action, speed, DT, &mut pid);
            let (next, reward, done, info) = env.step(cmd)?;
            obs = next;
            result.steps += 1;
            result.episode_return += reward;
            result.distance_km += info.distance / 1000.0;
            result.route_completion = info.route_completion;
            reached_any |= info.target_reached;
            if let Some(t) = info.termination {
                result.termination = Some(t.name().to_string());
                match t {
                    Termination::CollisionPedestrian => result.collision_pedestrian += 1,
                    Termination::CollisionVehicle => result.collision_vehicle += 1,
                    Termination::CollisionLayout => result.collision_layout += 1,
                    Termination::RedLight => result.red_light += 1,
                    Termination::Blocked => result.blocked += 1,
                    Termination::Timeout => {}
                }
            }
            if info.target_reached && settings.stop_at_target {
                result.route_completion = 1.0;
                break 'episode;
            }
            if done {
                break 'episode;
            }
        }
    }
    result.success = reached_any && result.collisions() == 0;
    if settings.stop_at_target {
        // A benchmark route is finished only by reaching its target.
        result.success &= result.termination.is_none();
    }
    Ok(result)
}

/// One suite entry: a map, a density, palettes and a set of routes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub name: String,
    pub map: String,
    pub density: String,
    /// Cycled over the episodes.
    pub palettes: Vec<String>,
    /// Episode seeds; each seed fixes traffic and, unless `routes` is given,
    /// the route.
    pub seeds: Vec<u64>,
    /// Explicit routes, paired with `seeds` by position.
    #[serde(default)]
    pub routes: Vec<RouteSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub name: String,
    #[serde(default = "default_timeout")]
    pub timeout_steps: u32,
    #[serde(default = "default_min_route")]
    pub min_route_m: f64,
    pub tasks: Vec<Task>,
}

fn default_timeout() -> u32 {
    3000
}

fn default_min_route() -> f64 {
    150.0
}

pub const TRAIN_PALETTES: [&str; 4] = ["clear-noon", "wet-noon", "hard-rain-noon", "clear-sunset"];
pub const TEST_PALETTES: [&str; 2] = ["soft-rain-sunset", "wet-sunset"];

impl Suite {
    /// Training layout with training palettes and the second layout with the
    /// held-out palettes, each at the three densities.
    pub fn standard(routes_per_task: usize) -> Self {
        let mut tasks = Vec::new();
        for (split, map, palettes) in [
            ("train", "town-a", &TRAIN_PALETTES[..]),
            ("test", "town-b", &TEST_PALETTES[..]),
        ] {
            for (k, density) in ["empty", "regular", "dense"].into_iter().enumerate() {
                tasks.push(Task {
                    name: format!("{split}-{density}"),
                    map: map.into(),
                    density: density.into(),
                    palettes: palettes.iter().map(|p| p.to_string()).collect(),
                    seeds: (0..routes_per_task as u64)
                        .map(|i| 1000 * (k as u64 + 1) + i)
                        .collect(),
                    routes: Vec::new(),
                });
            }
        }
        Self {
            name: format!("standard-{routes_per_task}"),
            timeout_steps: default_timeout(),
            min_route_m: default_min_route(),
            tasks,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(format!("suite: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("suite serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config(format!("suite `{}` has no tasks", self.name)));
        }
        for t in &self.tasks {
            if t.palettes.is_empty() || t.seeds.is_empty() {
                return Err(Error::Config(format!(
                    "task `{}` needs palettes and seeds",
                    t.name
                )));
            }
            if !t.routes.is_empty() && t.routes.len() != t.seeds.len() {
                return Err(Error::Config(format!(
                    "task `{}` has {} routes for {} seeds",
                    t.name,
                    t.routes.len(),
                    t.seeds.len()
                )));
            }
        }
        Ok(())
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    /// Scenario for episode `i` of `task` at the given resolution.
    pub fn scenario(&self, task: &Task, i: usize, resolution: usize) -> ScenarioConfig {
        ScenarioConfig {
            map: task.map.clone(),
            density: task.density.clone(),
            palette: task.palettes[i % task.palettes.len()].clone(),
            resolution,
            timeout_steps: self.timeout_steps,
            renew_targets: false,
            min_route_m: self.min_route_m,
            route: task.routes.get(i).copied(),
            ..ScenarioConfig::default()
        }
    }
}

/// Aggregated metrics of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub episodes: usize,
    /// Percent.
    pub success_rate: f64,
    /// Percent.
    pub route_completion: f64,
    pub distance_km: f64,
    /// Infractions per km driven; `None` when nothing was driven.
    pub collision_pedestrian: Option<f64>,
    pub collision_vehicle: Option<f64>,
    pub collision_layout: Option<f64>,
    pub red_light: Option<f64>,
    pub blocked: Option<f64>,
}

impl TaskReport {
    pub fn from_results(task: &str, results: &[&EpisodeResult]) -> Self {
        let n = results.len();
        let km: f64 = results.iter().map(|r| r.distance_km).sum();
        let per_km = |f: fn(&EpisodeResult) -> u32| {
            let count: u32 = results.iter().map(|r| f(r)).sum();
            (km > 0.0).then(|| count as f64 / km)
        };
        let mean = |v: f64| if n == 0 { 0.0 } else { 100.0 * v / n as f64 };
        Self {
            task: task.to_string(),
            episodes: n,
            success_rate: mean(results.iter().filter(|r| r.success).count() as f64),
            route_completion: mean(results.iter().map(|r| r.route_completion).sum()),
            distance_km: km,
            collision_pedestrian: per_km(|r| r.collision_pedestrian),
            collision_vehicle: per_km(|r| r.collision_vehicle),
            collision_layout: per_km(|r| r.collision_layout),
            red_light: per_km(|r| r.red_light),
            blocked: per_km(|r| r.blocked),
        }
    }

    /// `(column, value, higher is better)`.
    pub fn columns(&self) -> [(&'static str, Option<f64>, bool); 7] {
        [
            ("success_rate", Some(self.success_rate), true),
            ("route_completion", Some(self.route_completion), true),
            (
                "collision_pedestrian_per_km",
                self.collision_pedestrian,
                false,
            ),
            ("collision_vehicle_per_km", self.collision_vehicle, false),
            ("collision_layout_per_km", self.collision_layout, false),
            ("red_light_per_km", self.red_light, false),
            ("blocked_per_km", self.blocked, false),
        ]
    }
}

pub const COLUMN_HEADERS: [&str; 7] = [
    "success %",
    "route %",
    "ped/km",
    "veh/km",
    "layout/km",
    "red/km",
    "blocked/km",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub suite: String,
    pub tasks: Vec<TaskReport>,
    pub episodes: Vec<EpisodeResult>,
    /// False when the suite stopped early; `error` says why.
    pub complete: bool,
    pub error: Option<String>,
}

impl BenchmarkReport {
    /// Pure aggregation of stored episode results, in suite task order.
    pub fn from_results(suite: &str, task_names: &[String], episodes: Vec<EpisodeResult>) -> Self {
        let tasks = task_names
            .iter()
            .map(|t| {
                let rs: Vec<_> = episodes.iter().filter(|r| &r.task == t).collect();
                TaskReport::from_results(t, &rs)
            })
            .collect();
        Self {
            suite: suite.to_string(),
            tasks,
            episodes,
            complete: true,
            error: None,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "task");
        for h in COLUMN_HEADERS {
            let _ = write!(out, "{h:>12}");
        }
        out.push('\n');
        for t in &self.tasks {
            let _ = write!(out, "{:<16}", t.task);
            for (_, v, _) in t.columns() {
                let _ = write!(out, "{:>12}", fmt_value(v));
            }
            out.push('\n');
        }
        if !self.complete {
            let _ = writeln!(
                out,
                "INCOMPLETE: {}",
                self.error.as_deref().unwrap_or("unknown error")
            );
        }
        out
    }
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.2}"))
}

/// Runs every route of the suite. An environment or policy failure stops the
/// run and returns the partial report marked incomplete.
pub fn run_benchmark(
    agent: &Agent,
    suite: &Suite,
    settings: EpisodeSettings,
    rng: &mut dyn RngCore,
) -> Result<BenchmarkReport> {
    suite.validate()?;
    let res = agent.config.resolution;
    let mut episodes = Vec::new();
    let mut failure = None;
    'tasks: for task in &suite.tasks {
        let mut env = MiniUrban::new(suite.scenario(task, 0, res))?;
        for (i, &seed) in task.seeds.iter().enumerate() {
            let scenario = suite.scenario(task, i, res);
            match run_episode(agent, &mut env, &scenario, seed, &task.name, settings, rng) {
                Ok(r) => {
                    log::debug!(
                        "{} seed {seed}: success={} termination={:?}",
                        task.name,
                        r.success,
                        r.termination
                    );
                    episodes.push(r);
                }
                Err(e) => {
                    failure = Some(format!("task {} seed {seed}: {e}", task.name));
                    break 'tasks;
                }
            }
        }
    }
    let mut report = BenchmarkReport::from_results(&suite.name, &suite.task_names(), episodes);
    if let Some(e) = failure {
        report.complete = false;
        report.error = Some(e);
    }
    Ok(report)
}

/// Side-by-side reports with the best value per task and column marked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub tasks: Vec<String>,
    /// `values[task][report][column]`.
    pub values: Vec<Vec<Vec<Option<f64>>>>,
    /// `best[task][report][column]`; ties are all marked.
    pub best: Vec<Vec<Vec<bool>>>,
}

pub fn compare_reports(reports: &[(String, BenchmarkReport)]) -> Result<Comparison> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::Data("nothing to compare".into()));
    };
    let tasks: Vec<String> = first.tasks.iter().map(|t| t.task.clone()).collect();
    for (label, r) in reports {
        let names: Vec<_> = r.tasks.iter().map(|t| t.task.clone()).collect();
        if r.suite != first.suite || names != tasks {
            return Err(Error::Data(format!(
                "report `{label}` was produced on suite `{}`, not `{}`",
                r.suite, first.suite
            )));
        }
    }
    let mut values = Vec::new();
    let mut best = Vec::new();
    for ti in 0..tasks.len() {
        let rows: Vec<Vec<Option<f64>>> = reports
            .iter()
            .map(|(_, r)| r.tasks[ti].columns().iter().map(|c| c.1).collect())
            .collect();
        let higher: Vec<bool> = first.tasks[ti].columns().iter().map(|c| c.2).collect();
        let mut marks = vec![vec![false; higher.len()]; rows.len()];
        for (c, &hi) in higher.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            let Some(target) = vals
                .iter()
                .copied()
                .reduce(if hi { f64::max } else { f64::min })
            else {
                continue;
            };
            for (r, row) in rows.iter().enumerate() {
                marks[r][c] = row[c] == Some(target);
            }
        }
        values.push(rows);
        best.push(marks);
    }
    Ok(Comparison {
        labels: reports.iter().map(|(l, _)| l.clone()).collect(),
        tasks,
        values,
        best,
    })
}

impl Comparison {
    /// Text table; `*` marks the best value of each column within a task.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .max()
            .unwrap_or(0)
            .max(8)
            + 2;
        for (ti, task) in self.tasks.iter().enumerate() {
            let _ = writeln!(out, "[{task}]");
            let _ = write!(out, "{:<width$}", "variant");
            for h in COLUMN_HEADERS {
                let _ = write!(out, "{h:>13}");
            }
            out.push('\n');
            for (ri, label) in self.labels.iter().enumerate() {
                let _ = write!(out, "{label:<width$}");
                for (c, v) in self.values[ti][ri].iter().enumerate() {
                    let mark = if self.best[ti][ri][c] { "*" } else { " " };
                    let _ = write!(out, "{:>12}{mark}", fmt_value(*v));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}
