//! Scenario configuration: the unit of reproducibility.
//!
//! A `ScenarioConfig` fully determines a simulation run — map, obstacles,
//! agents, formation, weights, limits, and seed — and serializes to JSON.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostWeights, PenaltyParams};
use crate::grid::Primitive;
use crate::planner::PlannerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapConfig {
    pub origin: Vector3<f64>,
    /// Extent in meters per axis.
    pub size: Vector3<f64>,
    pub resolution: f64,
}

impl MapConfig {
    pub fn dims(&self) -> [usize; 3] {
        [
            (self.size.x / self.resolution).round().max(1.0) as usize,
            (self.size.y / self.resolution).round().max(1.0) as usize,
            (self.size.z / self.resolution).round().max(1.0) as usize,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub start: Vector3<f64>,
    /// Formation vertex index; must be unique per swarm.
    pub vertex: usize,
}

/// Simulation timing and safety parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Base step; physics and collision checks run at this cadence.
    pub base_step: f64,
    /// Planner ticks of consecutive agents are offset by this many base
    /// steps to emulate distributed asynchrony deterministically.
    pub stagger_steps: usize,
    /// Physical agent radius for ground-truth obstacle collision checks and
    /// map inflation.
    pub agent_radius: f64,
    /// Extra inflation added on top of the agent radius when rasterizing
    /// local maps; absorbs distance-field discretization error.
    pub map_margin: f64,
    /// Hard agent-agent collision distance (distinct from the soft planning
    /// clearance).
    pub collision_clearance: f64,
    pub sensing_radius: f64,
    pub goal_tolerance: f64,
    pub time_limit: f64,
    /// Broadcast delivery delay, seconds.
    pub bus_delay: f64,
    /// Broadcast drop probability.
    pub bus_drop: f64,
    /// Trace sampling stride in base steps.
    pub trace_stride: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            base_step: 0.01,
            stagger_steps: 1,
            agent_radius: 0.15,
            map_margin: 0.1,
            collision_clearance: 0.2,
            sensing_radius: 5.0,
            goal_tolerance: 0.5,
            time_limit: 180.0,
            bus_delay: 0.0,
            bus_drop: 0.0,
            trace_stride: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub map: MapConfig,
    pub obstacles: Vec<Primitive>,
    pub agents: Vec<AgentConfig>,
    /// Desired formation positions, indexed by vertex.
    pub formation: Vec<Vector3<f64>>,
    /// Swarm goal centroid; each agent's goal adds its desired-formation
    /// offset.
    pub goal_centroid: Vector3<f64>,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub penalty: PenaltyParams,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub sim: SimParams,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agents.is_empty() {
            return Err(ConfigError::Invalid("no agents".into()));
        }
        if self.agents.len() != self.formation.len() {
            return Err(ConfigError::Invalid(format!(
                "{} agents but {} formation vertices",
                self.agents.len(),
                self.formation.len()
            )));
        }
        let mut seen = vec![false; self.formation.len()];
        for a in &self.agents {
            if a.vertex >= self.formation.len() {
                return Err(ConfigError::Invalid(format!(
                    "vertex {} out of range",
                    a.vertex
                )));
            }
            if seen[a.vertex] {
                return Err(ConfigError::Invalid(format!(
                    "duplicate vertex {}",
                    a.vertex
                )));
            }
            seen[a.vertex] = true;
        }
        if self.map.resolution <= 0.0 {
            return Err(ConfigError::Invalid("resolution must be > 0".into()));
        }
        Ok(())
    }

    /// Desired-formation centroid.
    pub fn formation_centroid(&self) -> Vector3<f64> {
        self.formation.iter().sum::<Vector3<f64>>() / self.formation.len() as f64
    }

    /// Per-agent global goal: goal centroid plus the agent's desired offset
    /// from the formation centroid.
    pub fn agent_goal(&self, agent_idx: usize) -> Vector3<f64> {
        let vertex = self.agents[agent_idx].vertex;
        self.goal_centroid + (self.formation[vertex] - self.formation_centroid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioConfig {
        ScenarioConfig {
            name: "t".into(),
            map: MapConfig {
                origin: Vector3::zeros(),
                size: Vector3::new(10.0, 5.0, 1.0),
                resolution: 0.1,
            },
            obstacles: Vec::new(),
            agents: vec![
                AgentConfig {
                    start: Vector3::new(1.0, 1.0, 0.5),
                    vertex: 0,
                },
                AgentConfig {
                    start: Vector3::new(1.0, 2.0, 0.5),
                    vertex: 1,
                },
            ],
            formation: vec![Vector3::new(0.0, -0.5, 0.0), Vector3::new(0.0, 0.5, 0.0)],
            goal_centroid: Vector3::new(9.0, 1.5, 0.5),
            weights: CostWeights::default(),
            penalty: PenaltyParams::default(),
            planner: PlannerConfig::default(),
            sim: SimParams::default(),
            seed: 1,
        }
    }

    #[test]
    fn round_trip() {
        let cfg = minimal();
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back.agents.len(), 2);
        assert_eq!(back.seed, 1);
    }

    #[test]
    fn duplicate_vertex_rejected() {
        let mut cfg = minimal();
        cfg.agents[1].vertex = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn agent_goals_keep_formation_offsets() {
        let cfg = minimal();
        let g0 = cfg.agent_goal(0);
        let g1 = cfg.agent_goal(1);
        assert!((g1 - g0 - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }
}
