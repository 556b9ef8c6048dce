//! Scenario configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EnvError, Result};
use crate::map::{LaneId, NodeId};

/// Traffic density level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Empty,
    Regular,
    Dense,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::Empty, Density::Regular, Density::Dense];

    pub fn name(self) -> &'static str {
        match self {
            Density::Empty => "empty",
            Density::Regular => "regular",
            Density::Dense => "dense",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == name)
            .ok_or_else(|| {
                EnvError::Config(format!(
                    "unknown density '{name}' (expected empty, regular or dense)"
                ))
            })
    }
}

/// Vehicle and pedestrian counts for one density level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCounts {
    pub vehicles: usize,
    pub pedestrians: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityTable {
    pub empty: AgentCounts,
    pub regular: AgentCounts,
    pub dense: AgentCounts,
}

impl Default for DensityTable {
    fn default() -> Self {
        Self {
            empty: AgentCounts {
                vehicles: 0,
                pedestrians: 0,
            },
            regular: AgentCounts {
                vehicles: 8,
                pedestrians: 4,
            },
            dense: AgentCounts {
                vehicles: 20,
                pedestrians: 10,
            },
        }
    }
}

impl DensityTable {
    pub fn counts(&self, density: Density) -> AgentCounts {
        match density {
            Density::Empty => self.empty,
            Density::Regular => self.regular,
            Density::Dense => self.dense,
        }
    }
}

/// A fixed route: start on `lane` at arc-length `s`, drive to `target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub lane: LaneId,
    pub s: f64,
    pub target: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Built-in layout name or path to a `.map` file.
    pub map: String,
    pub density: String,
    pub palette: String,
    /// Square image side in pixels.
    pub resolution: usize,
    /// Side of the rendered view in meters.
    pub view_meters: f64,
    pub timeout_steps: u32,
    pub blocked_seconds: f64,
    /// Pick a new random target whenever the current one is reached.
    pub renew_targets: bool,
    /// Minimum length of randomly drawn routes, meters.
    pub min_route_m: f64,
    /// Fixed route instead of a random one.
    pub route: Option<RouteSpec>,
    /// Seeds used by tools that iterate over episodes (benchmark, eval).
    pub seeds: Vec<u64>,
    pub density_table: DensityTable,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            map: "town-a".into(),
            density: "empty".into(),
            palette: "clear-noon".into(),
            resolution: 128,
            view_meters: 32.0,
            timeout_steps: 3000,
            blocked_seconds: 90.0,
            renew_targets: true,
            min_route_m: 60.0,
            route: None,
            seeds: Vec::new(),
            density_table: DensityTable::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn density_level(&self) -> Result<Density> {
        Density::parse(&self.density)
    }

    pub fn agent_counts(&self) -> Result<AgentCounts> {
        Ok(self.density_table.counts(self.density_level()?))
    }

    /// Checks everything that can be checked without loading the map.
    pub fn validate(&self) -> Result<()> {
        self.density_level()?;
        crate::palette::Palette::by_name(&self.palette)?;
        if self.resolution < 16 {
            return Err(EnvError::Config(format!(
                "resolution {} is too small",
                self.resolution
            )));
        }
        if !(self.view_meters > 0.0) || !(self.blocked_seconds > 0.0) || self.timeout_steps == 0 {
            return Err(EnvError::Config(
                "view_meters, blocked_seconds and timeout_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let cfg = ScenarioConfig::from_toml("map = \"town-b\"\ndensity = \"dense\"\n").unwrap();
        assert_eq!(cfg.map, "town-b");
        assert_eq!(cfg.resolution, 128);
        assert_eq!(
            cfg.agent_counts().unwrap(),
            AgentCounts {
                vehicles: 20,
                pedestrians: 10
            }
        );
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_names_are_config_errors() {
        assert!(matches!(
            ScenarioConfig::from_toml("mapp = \"x\""),
            Err(EnvError::Config(_))
        ));
        let cfg = ScenarioConfig {
            density: "rush-hour".into(),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(EnvError::Config(_))));
        let cfg = ScenarioConfig {
            palette: "fog".into(),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(EnvError::Config(_))));
    }
}
