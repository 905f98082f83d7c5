//! Benchmark scenario generation and run evaluation.
//!
//! Metrics mirror the swarm-formation literature: `e_sim` is the normalized
//! Laplacian similarity value of the instantaneous shape, and `e_dist` is the
//! residual of the best similarity transform mapping the desired formation
//! onto the instantaneous positions (closed-form Umeyama alignment).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::config::{AgentConfig, MapConfig, ScenarioConfig, SimParams};
use crate::cost::{CostWeights, PenaltyParams};
use crate::formation::{self, FormationError, FormationSpec};
use crate::grid::Primitive;
use crate::planner::PlannerConfig;
use crate::sim::RunResult;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("could not generate a connected scenario after {0} attempts")]
    GenerationFailure(usize),
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error("trace is empty")]
    EmptyTrace,
}

/// Best similarity transform `y ≈ s·R·x + t` between point sets.
#[derive(Debug, Clone)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Set when the source set is rank deficient (collinear or coincident),
    /// in which case the rotation is not uniquely determined.
    pub degenerate: bool,
}

impl Sim3 {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }
}

/// Closed-form least-squares similarity alignment (Umeyama).
///
/// Minimizes `Σᵢ ‖s·R·xᵢ + t − yᵢ‖²` over rotation, translation, and a
/// single positive scale.
pub fn sim3_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Sim3 {
    assert_eq!(source.len(), target.len());
    assert!(!source.is_empty());
    let n = source.len() as f64;
    let mu_x: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n;
    let mu_y: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n;

    let mut sigma = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in source.iter().zip(target) {
        let cx = x - mu_x;
        let cy = y - mu_y;
        sigma += cy * cx.transpose() / n;
        var_x += cx.norm_squared() / n;
    }

    let svd = sigma.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let d = svd.singular_values;
    let degenerate = d[1] <= 1e-12 * d[0].max(1e-300) || var_x <= 1e-24;
    let trace_ds = d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)];
    let scale = if var_x > 1e-24 { trace_ds / var_x } else { 1.0 };
    let translation = mu_y - scale * (rotation * mu_x);
    Sim3 {
        scale,
        rotation,
        translation,
        degenerate,
    }
}

/// Residual of the optimal alignment: `Σᵢ ‖s·R·xᵢ + t − yᵢ‖²`.
pub fn alignment_error(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
    let sim = sim3_align(source, target);
    source
        .iter()
        .zip(target)
        .map(|(x, y)| (sim.apply(x) - y).norm_squared())
        .sum()
}

#[derive(Debug, Clone)]
pub struct MetricPoint {
    pub t: f64,
    /// Summed squared alignment residual across agents.
    pub e_dist_sum: f64,
    /// Root mean per-agent alignment residual.
    pub e_dist_rms: f64,
    pub e_sim: f64,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub points: Vec<MetricPoint>,
    pub mean_e_dist_sum: f64,
    pub mean_e_dist_rms: f64,
    pub mean_e_sim: f64,
    pub success: bool,
    pub completion_time: Option<f64>,
}

impl RunMetrics {
    pub fn csv(&self) -> String {
        let mut s = String::from("t,e_dist_sum,e_dist_rms,e_sim\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:.4},{:.9},{:.9},{:.9}\n",
                p.t, p.e_dist_sum, p.e_dist_rms, p.e_sim
            ));
        }
        s
    }

    /// Deterministic one-line summary (fixed formatting, no wall times).
    pub fn summary_line(&self) -> String {
        format!(
            "success={} completion={} mean_e_dist_sum={:.9} mean_e_dist_rms={:.9} mean_e_sim={:.9}",
            self.success,
            self.completion_time
                .map_or_else(|| "none".into(), |t| format!("{t:.2}")),
            self.mean_e_dist_sum,
            self.mean_e_dist_rms,
            self.mean_e_sim,
        )
    }
}

/// Compute formation metrics along a finished run's traces.
pub fn evaluate_run(
    result: &RunResult,
    config: &ScenarioConfig,
) -> Result<RunMetrics, EvalError> {
    let spec = FormationSpec::new(config.formation.clone())?;
    let n = config.agents.len();
    if result.traces.iter().any(|t| t.is_empty()) {
        return Err(EvalError::EmptyTrace);
    }
    let steps = result.traces.iter().map(Vec::len).min().unwrap();
    let mut points = Vec::with_capacity(steps);
    for k in 0..steps {
        // Positions ordered by formation vertex.
        let mut current = vec![Vector3::zeros(); n];
        for (agent, trace) in result.traces.iter().enumerate() {
            current[config.agents[agent].vertex] = trace[k].position;
        }
        let e_dist_sum = alignment_error(&config.formation, &current);
        let e_sim = formation::similarity(&current, &spec)?;
        points.push(MetricPoint {
            t: result.traces[0][k].t,
            e_dist_sum,
            e_dist_rms: (e_dist_sum / n as f64).sqrt(),
            e_sim,
        });
    }
    let m = points.len() as f64;
    Ok(RunMetrics {
        mean_e_dist_sum: points.iter().map(|p| p.e_dist_sum).sum::<f64>() / m,
        mean_e_dist_rms: points.iter().map(|p| p.e_dist_rms).sum::<f64>() / m,
        mean_e_sim: points.iter().map(|p| p.e_sim).sum::<f64>() / m,
        success: result.success,
        completion_time: result.completion_time,
        points,
    })
}

/// Obstacle density regimes of the benchmark field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Density {
    Sparse,
    Medium,
    Dense,
}

impl Density {
    pub fn obstacle_count(self) -> usize {
        match self {
            Density::Sparse => 25,
            Density::Medium => 45,
            Density::Dense => 70,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Density::Sparse => "sparse",
            Density::Medium => "medium",
            Density::Dense => "dense",
        }
    }
}

/// Regular hexagon formation: one center vertex plus six at `radius`.
pub fn hexagon_formation(radius: f64) -> Vec<Vector3<f64>> {
    let mut v = vec![Vector3::zeros()];
    for k in 0..6 {
        let a = std::f64::consts::PI / 3.0 * k as f64;
        v.push(Vector3::new(radius * a.cos(), radius * a.sin(), 0.0));
    }
    v
}

/// Regular tetrahedron formation with the given edge length, centroid at the
/// origin.
pub fn tetrahedron_formation(edge: f64) -> Vec<Vector3<f64>> {
    let s = edge / (2.0 * 2.0_f64.sqrt());
    [
        (1.0, 1.0, 1.0),
        (1.0, -1.0, -1.0),
        (-1.0, 1.0, -1.0),
        (-1.0, -1.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x * s, y * s, z * s))
    .collect()
}

const FIELD_LENGTH: f64 = 30.0;
const FIELD_WIDTH: f64 = 15.0;
const FIELD_HEIGHT: f64 = 1.0;
const OBSTACLE_RADIUS: f64 = 0.15;
/// Clear margins at both field ends for starts and goals.
const CLEAR_MARGIN: f64 = 4.5;
/// Minimum guaranteed corridor width between start and goal.
const CORRIDOR_WIDTH: f64 = 0.8;
const MAX_ATTEMPTS: usize = 200;

/// Check that a disc of radius `CORRIDOR_WIDTH / 2` can travel from start to
/// goal: 2D flood fill over the obstacle layout inflated by that radius.
fn corridor_exists(
    cylinders: &[(f64, f64)],
    start: (f64, f64),
    goal: (f64, f64),
) -> bool {
    let res = 0.1;
    let nx = (FIELD_LENGTH / res) as usize;
    let ny = (FIELD_WIDTH / res) as usize;
    let inflate = OBSTACLE_RADIUS + CORRIDOR_WIDTH / 2.0;
    let r2 = inflate * inflate;
    let mut blocked = vec![false; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let px = (x as f64 + 0.5) * res;
            let py = (y as f64 + 0.5) * res;
            if cylinders
                .iter()
                .any(|&(cx, cy)| (px - cx).powi(2) + (py - cy).powi(2) <= r2)
            {
                blocked[y * nx + x] = true;
            }
        }
    }
    let cell = |p: (f64, f64)| ((p.0 / res) as usize, (p.1 / res) as usize);
    let (sx, sy) = cell(start);
    let (gx, gy) = cell(goal);
    if blocked[sy * nx + sx] || blocked[gy * nx + gx] {
        return false;
    }
    let mut seen = vec![false; nx * ny];
    let mut queue = std::collections::VecDeque::new();
    seen[sy * nx + sx] = true;
    queue.push_back((sx, sy));
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == (gx, gy) {
            return true;
        }
        let push = |x: usize, y: usize, seen: &mut Vec<bool>, queue: &mut std::collections::VecDeque<(usize, usize)>| {
            let i = y * nx + x;
            if !seen[i] && !blocked[i] {
                seen[i] = true;
                queue.push_back((x, y));
            }
        };
        if x > 0 {
            push(x - 1, y, &mut seen, &mut queue);
        }
        if x + 1 < nx {
            push(x + 1, y, &mut seen, &mut queue);
        }
        if y > 0 {
            push(x, y - 1, &mut seen, &mut queue);
        }
        if y + 1 < ny {
            push(x, y + 1, &mut seen, &mut queue);
        }
    }
    false
}

/// Generate a benchmark scenario: a 30 × 15 m forest of vertical cylinders
/// with clear start and goal margins and a guaranteed corridor, traversed
/// left to right by a seven-agent hexagon swarm.
pub fn generate_scenario(
    density: Density,
    seed: u64,
) -> Result<ScenarioConfig, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = density.obstacle_count();
    let start_centroid = Vector3::new(1.8, FIELD_WIDTH / 2.0, 0.5);
    let goal_centroid = Vector3::new(FIELD_LENGTH - 1.8, FIELD_WIDTH / 2.0, 0.5);

    let mut cylinders = Vec::new();
    for attempt in 0..MAX_ATTEMPTS {
        cylinders.clear();
        while cylinders.len() < count {
            let x = CLEAR_MARGIN + rng.gen::<f64>() * (FIELD_LENGTH - 2.0 * CLEAR_MARGIN);
            let y = 0.8 + rng.gen::<f64>() * (FIELD_WIDTH - 1.6);
            cylinders.push((x, y));
        }
        if corridor_exists(
            &cylinders,
            (start_centroid.x, start_centroid.y),
            (goal_centroid.x, goal_centroid.y),
        ) {
            break;
        }
        if attempt + 1 == MAX_ATTEMPTS {
            return Err(EvalError::GenerationFailure(MAX_ATTEMPTS));
        }
    }

    let obstacles = cylinders
        .iter()
        .map(|&(x, y)| Primitive::Cylinder {
            center: Vector3::new(x, y, FIELD_HEIGHT / 2.0),
            radius: OBSTACLE_RADIUS,
            height: FIELD_HEIGHT + 2.0,
        })
        .collect();

    let formation = hexagon_formation(1.0);
    let agents = formation
        .iter()
        .enumerate()
        .map(|(vertex, offset)| AgentConfig {
            start: start_centroid + offset,
            vertex,
        })
        .collect();

    Ok(ScenarioConfig {
        name: format!("{}-{}", density.name(), seed),
        map: MapConfig {
            origin: Vector3::zeros(),
            size: Vector3::new(FIELD_LENGTH, FIELD_WIDTH, FIELD_HEIGHT),
            // Coarse enough to keep per-agent field rebuilds cheap, fine
            // enough to resolve the inflated 0.3 m obstacle radius.
            resolution: 0.15,
        },
        obstacles,
        agents,
        formation,
        goal_centroid,
        weights: CostWeights::default(),
        penalty: PenaltyParams::default(),
        planner: PlannerConfig::default(),
        sim: SimParams::default(),
        seed,
    })
}

/// Per-sample `(t, centroid, aligned scale)` along a run's traces: the scale
/// of the best similarity transform mapping the desired formation onto the
/// instantaneous agent positions.
pub fn aligned_scales(
    result: &RunResult,
    config: &ScenarioConfig,
) -> Result<Vec<(f64, Vector3<f64>, f64)>, EvalError> {
    let n = config.agents.len();
    if result.traces.iter().any(|t| t.is_empty()) {
        return Err(EvalError::EmptyTrace);
    }
    let steps = result.traces.iter().map(Vec::len).min().unwrap();
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut current = vec![Vector3::zeros(); n];
        for (agent, trace) in result.traces.iter().enumerate() {
            current[config.agents[agent].vertex] = trace[k].position;
        }
        let centroid: Vector3<f64> = current.iter().sum::<Vector3<f64>>() / n as f64;
        let sim = sim3_align(&config.formation, &current);
        out.push((result.traces[0][k].t, centroid, sim.scale));
    }
    Ok(out)
}

/// Corridor-crossing scenario: a four-agent tetrahedron must pass a wall gap
/// narrower than its nominal extent, forcing the formation to rotate and
/// compress, then recover on the far side.
///
/// Returns the scenario together with the corridor's x-interval for
/// windowing the aligned-scale trace.
pub fn corridor_scenario(seed: u64) -> (ScenarioConfig, (f64, f64)) {
    let length = 22.0;
    let width = 8.0;
    let height = 3.0;
    let wall_x = (9.0, 10.0);
    let gap = (width / 2.0 - 0.6, width / 2.0 + 0.6);

    let obstacles = vec![
        Primitive::Aabb {
            min: Vector3::new(wall_x.0, -1.0, -1.0),
            max: Vector3::new(wall_x.1, gap.0, height + 1.0),
        },
        Primitive::Aabb {
            min: Vector3::new(wall_x.0, gap.1, -1.0),
            max: Vector3::new(wall_x.1, width + 1.0, height + 1.0),
        },
    ];

    let formation = tetrahedron_formation(1.6);
    let start_centroid = Vector3::new(2.0, width / 2.0, 1.5);
    let goal_centroid = Vector3::new(length - 2.0, width / 2.0, 1.5);
    let agents = formation
        .iter()
        .enumerate()
        .map(|(vertex, offset)| AgentConfig {
            start: start_centroid + offset,
            vertex,
        })
        .collect();

    let config = ScenarioConfig {
        name: format!("corridor-{seed}"),
        map: MapConfig {
            origin: Vector3::zeros(),
            size: Vector3::new(length, width, height),
            resolution: 0.15,
        },
        obstacles,
        agents,
        formation,
        goal_centroid,
        weights: CostWeights::default(),
        penalty: PenaltyParams::default(),
        planner: PlannerConfig::default(),
        sim: SimParams {
            // Tight arrival tolerance so the run only completes once the
            // formation has re-expanded to its nominal scale.
            goal_tolerance: 0.1,
            ..SimParams::default()
        },
        seed,
    };
    (config, wall_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        // QR of a random matrix gives a uniform-ish orthogonal factor; force
        // a proper rotation.
        let m = Matrix3::from_fn(|_, _| rng.gen::<f64>() - 0.5);
        let qr = m.qr();
        let mut q = qr.q();
        if q.determinant() < 0.0 {
            q.column_mut(2).neg_mut();
        }
        q
    }

    #[test]
    fn umeyama_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 4 + rng.gen_range(0..5usize);
            let source: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::from_fn(|_, _| rng.gen::<f64>() * 4.0 - 2.0))
                .collect();
            let r = random_rotation(&mut rng);
            let s = 0.3 + rng.gen::<f64>() * 3.0;
            let t = Vector3::from_fn(|_, _| rng.gen::<f64>() * 10.0 - 5.0);
            let target: Vec<Vector3<f64>> = source.iter().map(|x| s * (r * x) + t).collect();
            let sim = sim3_align(&source, &target);
            assert!(!sim.degenerate);
            assert_relative_eq!(sim.scale, s, epsilon = 1e-10);
            assert!(alignment_error(&source, &target) < 1e-20);
        }
    }

    #[test]
    fn umeyama_flags_collinear_source() {
        let source: Vec<Vector3<f64>> = (0..4)
            .map(|k| Vector3::new(k as f64, 0.0, 0.0))
            .collect();
        let target = source.clone();
        assert!(sim3_align(&source, &target).degenerate);
    }

    #[test]
    fn alignment_error_zero_under_similarity() {
        let source = hexagon_formation(1.0);
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let target: Vec<Vector3<f64>> = source
            .iter()
            .map(|x| 2.5 * (r * x) + Vector3::new(7.0, -3.0, 1.0))
            .collect();
        assert!(alignment_error(&source, &target) < 1e-24);
    }

    #[test]
    fn alignment_error_positive_when_shape_differs() {
        let source = hexagon_formation(1.0);
        let mut target = source.clone();
        target[3] += Vector3::new(0.4, 0.0, 0.0);
        assert!(alignment_error(&source, &target) > 1e-3);
    }

    #[test]
    fn tetrahedron_edges_uniform() {
        let v = tetrahedron_formation(0.9);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_relative_eq!((v[i] - v[j]).norm(), 0.9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scenario_generation_is_deterministic_and_clear() {
        let a = generate_scenario(Density::Medium, 7).unwrap();
        let b = generate_scenario(Density::Medium, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.obstacles.len(), 45);
        // Start and goal margins stay free of obstacles.
        for p in &a.obstacles {
            if let Primitive::Cylinder { center, .. } = p {
                assert!(center.x > CLEAR_MARGIN - 1e-9);
                assert!(center.x < FIELD_LENGTH - CLEAR_MARGIN + 1e-9);
            }
        }
        a.validate().unwrap();
    }

    #[test]
    fn densities_are_ordered() {
        assert!(Density::Sparse.obstacle_count() < Density::Medium.obstacle_count());
        assert!(Density::Medium.obstacle_count() < Density::Dense.obstacle_count());
    }
}
