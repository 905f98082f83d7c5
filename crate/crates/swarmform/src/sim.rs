//! Deterministic discrete-time swarm simulation.
//!
//! Agents execute their committed trajectories exactly (ideal tracking),
//! reveal ground-truth obstacles within sensing range into per-agent local
//! maps, exchange trajectories over a broadcast bus with configurable delay
//! and drop, replan on a staggered one-second cadence, and are collision
//! checked against ground truth at every base step. Identical configs
//! (including seeds) produce bit-identical results.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig, SimParams};
use crate::cost::NeighborTrajectory;
use crate::formation::FormationSpec;
use crate::grid::{build_esdf, rasterize, Esdf, GridMap, ObstacleSet, DEFAULT_D_FREE_MAX};
use crate::minco::{Trajectory, TrajectoryRecord};
use crate::planner::{CycleLog, Planner};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("map error: {0}")]
    Map(#[from] crate::grid::MapError),
    #[error("formation error: {0}")]
    Formation(#[from] crate::formation::FormationError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ViolationKind {
    AgentObstacle { agent: usize },
    AgentAgent { a: usize, b: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// Full outcome of a scenario run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub success: bool,
    pub completion_time: Option<f64>,
    pub violations: Vec<Violation>,
    pub first_violation_time: Option<f64>,
    /// Per-agent kinematic traces, sampled every `trace_stride` base steps.
    pub traces: Vec<Vec<TracePoint>>,
    /// Wall time of every optimize() call, milliseconds.
    pub solve_times_ms: Vec<f64>,
    pub cycle_logs: Vec<CycleLog>,
    pub sim_time: f64,
}

impl RunResult {
    /// Deterministic metrics summary (no wall-clock content).
    pub fn metrics_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            success: bool,
            completion_time: Option<f64>,
            violation_count: usize,
            first_violation_time: Option<f64>,
            sim_time: f64,
            violations: &'a [Violation],
        }
        serde_json::to_string_pretty(&Summary {
            success: self.success,
            completion_time: self.completion_time,
            violation_count: self.violations.len(),
            first_violation_time: self.first_violation_time,
            sim_time: self.sim_time,
            violations: &self.violations,
        })
        .unwrap()
    }

    /// Per-agent trajectory trace CSV: `t,x,y,z,vx,vy,vz`.
    pub fn trace_csv(&self, agent: usize) -> String {
        let mut s = String::from("t,x,y,z,vx,vy,vz\n");
        for p in &self.traces[agent] {
            s.push_str(&format!(
                "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                p.t,
                p.position.x,
                p.position.y,
                p.position.z,
                p.velocity.x,
                p.velocity.y,
                p.velocity.z
            ));
        }
        s
    }

    pub fn violations_csv(&self) -> String {
        let mut s = String::from("time,kind,a,b\n");
        for v in &self.violations {
            match v.kind {
                ViolationKind::AgentObstacle { agent } => {
                    s.push_str(&format!("{:.4},obstacle,{},\n", v.time, agent))
                }
                ViolationKind::AgentAgent { a, b } => {
                    s.push_str(&format!("{:.4},agent,{},{}\n", v.time, a, b))
                }
            }
        }
        s
    }
}

struct BusMessage {
    deliver_step: u64,
    seq: u64,
    sender: usize,
    record: TrajectoryRecord,
}

/// Broadcast bus: messages become visible to all other agents after the
/// configured delay (at least one base step), in deterministic order.
struct BroadcastBus {
    queue: Vec<BusMessage>,
    rng: ChaCha8Rng,
    delay_steps: u64,
    drop_probability: f64,
    seq: u64,
}

impl BroadcastBus {
    fn new(params: &SimParams, seed: u64) -> Self {
        Self {
            queue: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            delay_steps: (params.bus_delay / params.base_step).round() as u64,
            drop_probability: params.bus_drop,
            seq: 0,
        }
    }

    fn publish(&mut self, step: u64, sender: usize, record: TrajectoryRecord) {
        self.seq += 1;
        if self.drop_probability > 0.0 && self.rng.gen::<f64>() < self.drop_probability {
            return;
        }
        self.queue.push(BusMessage {
            deliver_step: step + 1 + self.delay_steps,
            seq: self.seq,
            sender,
            record,
        });
    }

    fn deliver_due(&mut self, step: u64) -> Vec<BusMessage> {
        let mut due: Vec<BusMessage> = Vec::new();
        let mut rest = Vec::with_capacity(self.queue.len());
        for msg in self.queue.drain(..) {
            if msg.deliver_step <= step {
                due.push(msg);
            } else {
                rest.push(msg);
            }
        }
        self.queue = rest;
        due.sort_by_key(|m| (m.deliver_step, m.sender, m.seq));
        due
    }
}

struct AgentSim {
    planner: Planner,
    start: Vector3<f64>,
    goal: Vector3<f64>,
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    /// Per-agent local occupancy built from revealed ground truth.
    local_map: GridMap,
    esdf: Option<Esdf>,
    map_dirty: bool,
    /// Latest received trajectory per sender.
    inbox: Vec<Option<(usize, f64, Trajectory)>>,
}

/// The simulation world.
pub struct World {
    config: ScenarioConfig,
    ground_truth: ObstacleSet,
    /// Ground-truth occupancy inflated by the agent radius; sensing reveals
    /// these cells into local maps.
    gt_map: GridMap,
    formation: FormationSpec,
    agents: Vec<AgentSim>,
    bus: BroadcastBus,
    step: u64,
    period_steps: u64,
    pub violations: Vec<Violation>,
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let ground_truth = ObstacleSet {
            primitives: config.obstacles.clone(),
        };
        let dims = config.map.dims();
        let gt_map = rasterize(
            &ground_truth,
            config.map.origin,
            config.map.resolution,
            dims,
            config.sim.agent_radius + config.sim.map_margin,
        )?;
        let formation = FormationSpec::new(config.formation.clone())?;
        let n = config.agents.len();
        let agents = (0..n)
            .map(|k| {
                let a = &config.agents[k];
                let goal = config.agent_goal(k);
                let planner = Planner::new(
                    k,
                    a.vertex,
                    a.start,
                    goal,
                    config.planner,
                    config.weights,
                    config.penalty,
                    config
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(k as u64),
                );
                Ok(AgentSim {
                    planner,
                    start: a.start,
                    goal,
                    position: a.start,
                    velocity: Vector3::zeros(),
                    local_map: GridMap::new(config.map.origin, config.map.resolution, dims)?,
                    esdf: None,
                    map_dirty: true,
                    inbox: vec![None; n],
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        let period_steps = (config.planner.replan_period / config.sim.base_step).round() as u64;
        let bus = BroadcastBus::new(&config.sim, config.seed ^ 0xB5AD_4ECE_DA1C_E2A9);
        Ok(Self {
            config,
            ground_truth,
            gt_map,
            formation,
            agents,
            bus,
            step: 0,
            period_steps: period_steps.max(1),
            violations: Vec::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.sim.base_step
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.agents.iter().map(|a| a.position).collect()
    }

    fn sense(&mut self, agent_idx: usize) {
        let radius = self.config.sim.sensing_radius;
        let res = self.config.map.resolution;
        let pos = self.agents[agent_idx].position;
        let dims = self.gt_map.dims;
        let origin = self.gt_map.origin;
        let lo = |p: f64, o: f64, d: usize| {
            (((p - radius - o) / res).floor().max(0.0) as usize).min(d - 1)
        };
        let hi = |p: f64, o: f64, d: usize| {
            (((p + radius - o) / res).ceil().max(0.0) as usize).min(d - 1)
        };
        let (x0, x1) = (lo(pos.x, origin.x, dims[0]), hi(pos.x, origin.x, dims[0]));
        let (y0, y1) = (lo(pos.y, origin.y, dims[1]), hi(pos.y, origin.y, dims[1]));
        let (z0, z1) = (lo(pos.z, origin.z, dims[2]), hi(pos.z, origin.z, dims[2]));
        let r2 = radius * radius;
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let c = [x, y, z];
                    if self.gt_map.is_occupied(c) && !self.agents[agent_idx].local_map.is_occupied(c)
                    {
                        let center = self.gt_map.cell_center(c);
                        if (center - pos).norm_squared() <= r2 {
                            self.agents[agent_idx].local_map.set_occupied(c, true);
                            self.agents[agent_idx].map_dirty = true;
                        }
                    }
                }
            }
        }
    }

    fn plan_agent(&mut self, agent_idx: usize, logs: &mut Vec<CycleLog>) {
        self.sense(agent_idx);
        if self.agents[agent_idx].map_dirty || self.agents[agent_idx].esdf.is_none() {
            let esdf = build_esdf(&self.agents[agent_idx].local_map, DEFAULT_D_FREE_MAX);
            self.agents[agent_idx].esdf = Some(esdf);
            self.agents[agent_idx].map_dirty = false;
        }
        let now = self.time();
        let neighbors: Vec<NeighborTrajectory> = self.agents[agent_idx]
            .inbox
            .iter()
            .flatten()
            .map(|(vertex, stamp, traj)| NeighborTrajectory {
                vertex: *vertex,
                start_stamp: *stamp,
                traj: traj.clone(),
            })
            .collect();
        // Only plan with the formation term once every neighbor is known.
        let formation = if neighbors.len() + 1 == self.formation.agent_count() {
            Some(&self.formation)
        } else {
            None
        };
        let agent = &mut self.agents[agent_idx];
        let (traj, stamp, log) =
            agent
                .planner
                .replan_cycle(now, agent.esdf.as_ref(), &neighbors, formation);
        logs.push(log);
        let record = TrajectoryRecord {
            agent: agent_idx,
            stamp,
            start: crate::minco::Boundary::rest(traj.state_clamped(0.0).0),
            end: crate::minco::Boundary::rest(traj.terminal_position()),
            waypoints: Vec::new(),
            durations: traj.durations().to_vec(),
            coeffs: traj.coeffs().to_vec(),
        };
        self.bus.publish(self.step, agent_idx, record);
    }

    fn check_collisions(&mut self) {
        let t = self.time();
        let radius = self.config.sim.agent_radius;
        let clearance = self.config.sim.collision_clearance;
        let positions = self.positions();
        for (i, p) in positions.iter().enumerate() {
            // Ground truth, never the agent's partial map.
            if self.ground_truth.signed_distance(p) < radius {
                self.violations.push(Violation {
                    time: t,
                    kind: ViolationKind::AgentObstacle { agent: i },
                });
            }
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if (positions[i] - positions[j]).norm() < clearance {
                    self.violations.push(Violation {
                        time: t,
                        kind: ViolationKind::AgentAgent { a: i, b: j },
                    });
                }
            }
        }
    }

    /// Advance one base step; returns the cycle logs of any replans that
    /// fired.
    pub fn advance(&mut self) -> Vec<CycleLog> {
        let mut logs = Vec::new();
        // Deliver due bus messages.
        for msg in self.bus.deliver_due(self.step) {
            let vertex = self.config.agents[msg.sender].vertex;
            if let Ok(traj) = msg.record.to_trajectory() {
                for (k, agent) in self.agents.iter_mut().enumerate() {
                    if k != msg.sender {
                        agent.inbox[msg.sender] = Some((vertex, msg.record.stamp, traj.clone()));
                    }
                }
            }
        }
        // Staggered planner ticks.
        let stagger = self.config.sim.stagger_steps as u64;
        for k in 0..self.agents.len() {
            let offset = k as u64 * stagger;
            if self.step >= offset && (self.step - offset) % self.period_steps == 0 {
                self.plan_agent(k, &mut logs);
            }
        }
        // Ideal tracking along the committed trajectory.
        let t = self.time();
        for agent in self.agents.iter_mut() {
            let state = agent.planner.state_at(t, agent.start);
            agent.position = state.position;
            agent.velocity = state.velocity;
        }
        self.check_collisions();
        self.step += 1;
        logs
    }

    pub fn all_at_goal(&self) -> bool {
        let tol = self.config.sim.goal_tolerance;
        self.agents
            .iter()
            .all(|a| (a.position - a.goal).norm() <= tol)
    }
}

/// Execute a full scenario to success or timeout.
pub fn run_scenario(config: ScenarioConfig) -> Result<RunResult, SimError> {
    let sim = config.sim;
    let mut world = World::new(config)?;
    let n = world.agents.len();
    let mut traces: Vec<Vec<TracePoint>> = vec![Vec::new(); n];
    let mut cycle_logs = Vec::new();
    let max_steps = (sim.time_limit / sim.base_step).ceil() as u64;
    let mut completion_time = None;

    for step in 0..max_steps {
        let logs = world.advance();
        cycle_logs.extend(logs);
        if step % sim.trace_stride as u64 == 0 {
            let t = (world.step - 1) as f64 * sim.base_step;
            for (k, agent) in world.agents.iter().enumerate() {
                traces[k].push(TracePoint {
                    t,
                    position: agent.position,
                    velocity: agent.velocity,
                });
            }
        }
        if world.all_at_goal() {
            completion_time = Some((world.step - 1) as f64 * sim.base_step);
            break;
        }
    }

    let first_violation_time = world.violations.first().map(|v| v.time);
    let success = completion_time.is_some() && world.violations.is_empty();
    let solve_times_ms = cycle_logs
        .iter()
        .filter(|l| !l.fell_back)
        .map(|l| l.wall_ms)
        .collect();
    Ok(RunResult {
        success,
        completion_time,
        violations: world.violations.clone(),
        first_violation_time,
        traces,
        solve_times_ms,
        cycle_logs,
        sim_time: world.time(),
    })
}
