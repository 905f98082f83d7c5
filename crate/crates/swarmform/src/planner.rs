//! Per-agent receding-horizon local planner.
//!
//! Each cycle builds an initial guess (straight-line subdivision, warm-started
//! from the previous plan's tail when one exists), reparameterizes the piece
//! durations for positivity, and minimizes the joint objective with the
//! limited-memory quasi-Newton solver.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{self, CostReport, CostWeights, NeighborTrajectory, PenaltyParams, SwarmContext};
use crate::formation::FormationSpec;
use crate::grid::Esdf;
use crate::lbfgs::{self, LbfgsParams, SolverError};
use crate::minco::{construct, Boundary, MincoTrajectory, Trajectory};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("optimizer produced a non-finite cost")]
    NonFiniteCost,
    #[error("trajectory construction failed: {0}")]
    Minco(#[from] crate::minco::MincoError),
    #[error("cost evaluation failed: {0}")]
    Cost(#[from] crate::cost::CostError),
}

impl From<SolverError> for PlannerError {
    fn from(_: SolverError) -> Self {
        PlannerError::NonFiniteCost
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Replanning cadence, seconds.
    pub replan_period: f64,
    /// Planning horizon radius, meters.
    pub horizon: f64,
    /// Trajectory piece count per plan.
    pub pieces: usize,
    /// Smallest admissible piece duration, seconds.
    pub duration_floor: f64,
    /// Magnitude of the waypoint jitter applied to initial guesses.
    pub jitter: f64,
    pub memory: usize,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            replan_period: 1.0,
            horizon: 7.5,
            pieces: 5,
            duration_floor: 0.01,
            jitter: 1e-9,
            memory: 16,
            max_iterations: 160,
            grad_tolerance: 1e-5,
        }
    }
}

impl PlannerConfig {
    fn lbfgs(&self) -> LbfgsParams {
        LbfgsParams {
            memory: self.memory,
            max_iterations: self.max_iterations,
            grad_tolerance: self.grad_tolerance,
            ..Default::default()
        }
    }
}

/// Current kinematic state of an agent.
#[derive(Debug, Clone, Copy)]
pub struct AgentState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl AgentState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }

    pub fn boundary(&self) -> Boundary {
        Boundary {
            position: self.position,
            velocity: self.velocity,
            acceleration: self.acceleration,
        }
    }
}

/// Immutable snapshots the optimizer plans against.
pub struct PlanContext<'a> {
    pub esdf: Option<&'a Esdf>,
    pub neighbors: &'a [NeighborTrajectory],
    pub formation: Option<&'a FormationSpec>,
    pub own_vertex: usize,
    /// Global time at which the new trajectory starts.
    pub now: f64,
}

/// Initial decision variables for one optimization cycle.
#[derive(Debug, Clone)]
pub struct InitialGuess {
    pub waypoints: Vec<Vector3<f64>>,
    pub durations: Vec<f64>,
    pub start: Boundary,
    pub end: Boundary,
}

/// Trapezoidal-profile travel time for a straight distance at the given
/// velocity and acceleration limits.
pub fn trapezoid_time(distance: f64, v_max: f64, a_max: f64) -> f64 {
    if distance <= 0.0 {
        return 0.0;
    }
    let ramp = v_max * v_max / a_max;
    if distance > ramp {
        2.0 * v_max / a_max + (distance - ramp) / v_max
    } else {
        2.0 * (distance / a_max).sqrt()
    }
}

/// Resample a polyline into `segments` equal-arclength parts; returns the
/// interior points.
fn resample_polyline(points: &[Vector3<f64>], segments: usize) -> Vec<Vector3<f64>> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(segments.saturating_sub(1));
    for k in 1..segments {
        let target = total * k as f64 / segments as f64;
        let mut i = cum.partition_point(|&c| c <= target).min(cum.len() - 1);
        if i == 0 {
            i = 1;
        }
        let seg = cum[i] - cum[i - 1];
        let alpha = if seg > 1e-12 {
            (target - cum[i - 1]) / seg
        } else {
            0.0
        };
        out.push(points[i - 1] + alpha * (points[i] - points[i - 1]));
    }
    out
}

/// Build the initial `(q, T)` guess for a cycle.
///
/// The local goal is the global goal projected onto the horizon sphere. The
/// guess follows the previous plan's time-shifted tail when one exists,
/// extended toward the new local goal, and falls back to a straight segment
/// otherwise. Durations come from a trapezoidal velocity profile.
pub fn initial_guess(
    state: &AgentState,
    goal: Vector3<f64>,
    config: &PlannerConfig,
    params: &PenaltyParams,
    previous: Option<(&Trajectory, f64)>,
    now: f64,
    rng: &mut ChaCha8Rng,
) -> InitialGuess {
    let to_goal = goal - state.position;
    let dist = to_goal.norm();
    let local_goal = if dist <= config.horizon {
        goal
    } else {
        state.position + to_goal * (config.horizon / dist)
    };

    let span = (local_goal - state.position).norm();
    if span < 1e-6 {
        // Degenerate input: hover on a single floor-length piece.
        return InitialGuess {
            waypoints: Vec::new(),
            durations: vec![config.duration_floor.max(0.05)],
            start: state.boundary(),
            end: Boundary::rest(local_goal),
        };
    }

    let m = config.pieces.max(1);
    // Path polyline: previous tail (when available) extended to the local
    // goal, else the straight segment.
    let mut path = vec![state.position];
    if let Some((traj, stamp)) = previous {
        let remain = stamp + traj.total_time() - now;
        if remain > 0.2 {
            let samples = 8;
            for k in 1..=samples {
                let t = now - stamp + remain * k as f64 / samples as f64;
                path.push(traj.state_clamped(t).0);
            }
        }
    }
    path.push(local_goal);

    let mut waypoints = resample_polyline(&path, m);
    for q in waypoints.iter_mut() {
        *q += Vector3::new(
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        ) * 2.0
            * config.jitter;
    }

    let length: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let total = trapezoid_time(length, params.v_max, params.a_max).max(0.2);
    let per_piece = (total / m as f64).max(config.duration_floor * 2.0);

    InitialGuess {
        waypoints,
        durations: vec![per_piece; m],
        start: state.boundary(),
        end: Boundary::rest(local_goal),
    }
}

/// Statistics of one optimization run.
#[derive(Debug, Clone)]
pub struct OptimizeStats {
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub report: CostReport,
}

/// Minimize the joint objective over `(q, τ)` with `T_i = floor + e^{τ_i}`.
pub fn optimize(
    guess: &InitialGuess,
    ctx: &PlanContext,
    weights: &CostWeights,
    params: &PenaltyParams,
    config: &PlannerConfig,
) -> Result<(MincoTrajectory, OptimizeStats), PlannerError> {
    let m = guess.durations.len();
    let nq = 3 * (m - 1);
    let floor = config.duration_floor;

    let mut x0 = vec![0.0; nq + m];
    for (k, q) in guess.waypoints.iter().enumerate() {
        for axis in 0..3 {
            x0[3 * k + axis] = q[axis];
        }
    }
    for i in 0..m {
        x0[nq + i] = (guess.durations[i] - floor).max(1e-6).ln();
    }

    let unpack = |x: &[f64]| -> (Vec<Vector3<f64>>, Vec<f64>) {
        let q: Vec<Vector3<f64>> = (0..m - 1)
            .map(|k| Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]))
            .collect();
        let t: Vec<f64> = (0..m).map(|i| floor + x[nq + i].exp()).collect();
        (q, t)
    };

    let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
        let (q, t) = unpack(x);
        let minco = match construct(&q, &t, &guess.start, &guess.end) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        let swarm = SwarmContext {
            esdf: ctx.esdf,
            neighbors: ctx.neighbors,
            formation: ctx.formation,
            own_vertex: ctx.own_vertex,
            start_stamp: ctx.now,
        };
        let report = match cost::total_cost(minco.trajectory(), &swarm, weights, params) {
            Ok(r) => r,
            Err(_) => return f64::INFINITY,
        };
        let (dq, dt) = minco.propagate_gradient(&report.d_coeffs, &report.d_durations);
        for (k, g) in dq.iter().enumerate() {
            for axis in 0..3 {
                grad[3 * k + axis] = g[axis];
            }
        }
        for i in 0..m {
            grad[nq + i] = dt[i] * (t[i] - floor);
        }
        report.total
    };

    let result = lbfgs::minimize(objective, &x0, &config.lbfgs())?;
    let (q, t) = unpack(&result.x);
    let minco = construct(&q, &t, &guess.start, &guess.end)?;
    let swarm = SwarmContext {
        esdf: ctx.esdf,
        neighbors: ctx.neighbors,
        formation: ctx.formation,
        own_vertex: ctx.own_vertex,
        start_stamp: ctx.now,
    };
    let report = cost::total_cost(minco.trajectory(), &swarm, weights, params)?;
    if !report.total.is_finite() {
        return Err(PlannerError::NonFiniteCost);
    }

    // Initial cost for the monotone-acceptance contract.
    let initial = {
        let minco0 = construct(
            &guess.waypoints,
            &guess.durations,
            &guess.start,
            &guess.end,
        )?;
        cost::total_cost(minco0.trajectory(), &swarm, weights, params)?.total
    };

    Ok((
        minco,
        OptimizeStats {
            iterations: result.iterations,
            evaluations: result.evaluations,
            initial_cost: initial,
            final_cost: report.total,
            report,
        },
    ))
}

/// Per-cycle log line content.
#[derive(Debug, Clone)]
pub struct CycleLog {
    pub agent: usize,
    pub cycle: usize,
    pub iterations: usize,
    pub report: Option<CostReport>,
    pub wall_ms: f64,
    pub fell_back: bool,
}

/// Stateful planner for one agent.
pub struct Planner {
    pub agent: usize,
    pub vertex: usize,
    /// Initial position; the tracking fallback before the first commitment.
    pub home: Vector3<f64>,
    pub goal: Vector3<f64>,
    pub config: PlannerConfig,
    pub weights: CostWeights,
    pub params: PenaltyParams,
    rng: ChaCha8Rng,
    committed: Option<(Trajectory, f64)>,
    cycle: usize,
}

impl Planner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        agent: usize,
        vertex: usize,
        home: Vector3<f64>,
        goal: Vector3<f64>,
        config: PlannerConfig,
        weights: CostWeights,
        params: PenaltyParams,
        seed: u64,
    ) -> Self {
        Self {
            agent,
            vertex,
            home,
            goal,
            config,
            weights,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            committed: None,
            cycle: 0,
        }
    }

    pub fn committed(&self) -> Option<&(Trajectory, f64)> {
        self.committed.as_ref()
    }

    /// Kinematic state on the committed trajectory at global time `t`
    /// (ideal tracking).
    pub fn state_at(&self, t: f64, fallback: Vector3<f64>) -> AgentState {
        match &self.committed {
            None => AgentState::at_rest(fallback),
            Some((traj, stamp)) => {
                let local = t - stamp;
                if local <= 0.0 {
                    AgentState::at_rest(traj.state_clamped(0.0).0)
                } else if local >= traj.total_time() {
                    AgentState::at_rest(traj.terminal_position())
                } else {
                    let (piece, lt) = traj.locate(local).unwrap();
                    AgentState {
                        position: traj.evaluate_piece(piece, lt, 0),
                        velocity: traj.evaluate_piece(piece, lt, 1),
                        acceleration: traj.evaluate_piece(piece, lt, 2),
                    }
                }
            }
        }
    }

    /// Run one replanning cycle and return the trajectory to broadcast.
    /// Optimizer failures fall back to the previous commitment.
    pub fn replan_cycle(
        &mut self,
        now: f64,
        esdf: Option<&Esdf>,
        neighbors: &[NeighborTrajectory],
        formation: Option<&FormationSpec>,
    ) -> (Trajectory, f64, CycleLog) {
        let started = std::time::Instant::now();
        self.cycle += 1;
        let state = self.state_at(now, self.home);
        let previous = self.committed.as_ref().map(|(t, s)| (t, *s));
        let warm_started = previous.is_some();
        let guess = initial_guess(
            &state,
            self.goal,
            &self.config,
            &self.params,
            previous,
            now,
            &mut self.rng,
        );
        let ctx = PlanContext {
            esdf,
            neighbors,
            formation,
            own_vertex: self.vertex,
            now,
        };
        let mut attempt = optimize(&guess, &ctx, &self.weights, &self.params, &self.config);
        // A warm start threading a newly discovered obstacle can trap the
        // solver in a penetrating local minimum. When the obstacle residual
        // stays material, retry from the straight-line cold guess and keep
        // whichever plan clears obstacles better.
        if warm_started {
            let stuck = match &attempt {
                Ok((_, stats)) => stats.report.obstacle > 1e-3,
                Err(_) => true,
            };
            if stuck {
                let cold = initial_guess(
                    &state,
                    self.goal,
                    &self.config,
                    &self.params,
                    None,
                    now,
                    &mut self.rng,
                );
                if let Ok((minco, stats)) =
                    optimize(&cold, &ctx, &self.weights, &self.params, &self.config)
                {
                    let better = match &attempt {
                        Ok((_, warm_stats)) => {
                            stats.report.obstacle < warm_stats.report.obstacle
                        }
                        Err(_) => true,
                    };
                    if better {
                        attempt = Ok((minco, stats));
                    }
                }
            }
        }
        match attempt {
            Ok((minco, stats)) => {
                let traj = minco.into_trajectory();
                self.committed = Some((traj.clone(), now));
                let log = CycleLog {
                    agent: self.agent,
                    cycle: self.cycle,
                    iterations: stats.iterations,
                    report: Some(stats.report),
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    fell_back: false,
                };
                (traj, now, log)
            }
            Err(_) => {
                // Republish the previous trajectory's remainder; if none
                // exists, hover in place.
                let (traj, stamp) = match &self.committed {
                    Some((t, s)) => (t.clone(), *s),
                    None => {
                        let hover = construct(
                            &[],
                            &[self.config.duration_floor.max(0.05)],
                            &state.boundary(),
                            &Boundary::rest(state.position),
                        )
                        .expect("hover trajectory is always constructible")
                        .into_trajectory();
                        self.committed = Some((hover.clone(), now));
                        (hover, now)
                    }
                };
                let log = CycleLog {
                    agent: self.agent,
                    cycle: self.cycle,
                    iterations: 0,
                    report: None,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    fell_back: true,
                };
                (traj, stamp, log)
            }
        }
    }
}

use rand::SeedableRng;
