//! Randomized finite-difference validation of every analytic gradient.
//!
//! Each objective term is checked end to end in `(q, T)` space: the analytic
//! gradient flows through the trajectory construction adjoint, the numeric
//! one perturbs waypoints and durations directly and rebuilds the trajectory.
//! Coordinates where two central-difference step sizes disagree (nonsmooth
//! points of the piecewise-trilinear distance field) are skipped; everywhere
//! else the comparison is strict.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::cost::{
    control_effort, feasibility_penalty, formation_penalty, obstacle_penalty, reciprocal_penalty,
    total_time, uniformity_penalty, NeighborTrajectory, PenaltyParams, SwarmContext, TermGrad,
};
use crate::formation::{self, FormationSpec};
use crate::grid::{build_esdf, Esdf, GridMap, DEFAULT_D_FREE_MAX};
use crate::minco::{construct, Boundary, MincoTrajectory};

/// Aggregated outcome of one term's randomized check.
#[derive(Debug, Clone)]
pub struct TermResult {
    pub name: &'static str,
    pub instances: usize,
    /// Gradient coordinates compared (after nonsmooth-point skips).
    pub coordinates: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl TermResult {
    pub fn csv_header() -> &'static str {
        "term,instances,coordinates,skipped,max_rel_error"
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.3e}",
            self.name, self.instances, self.coordinates, self.skipped, self.max_rel_error
        )
    }
}

const FD_STEP: f64 = 1e-6;
/// Two central differences at h and h/2 must agree this closely for the
/// coordinate to count; otherwise the point is treated as nonsmooth.
const FD_CONSISTENCY: f64 = 5e-3;

struct Instance {
    waypoints: Vec<Vector3<f64>>,
    durations: Vec<f64>,
    start: Boundary,
    end: Boundary,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng, pieces: usize) -> Self {
        let rv = |rng: &mut ChaCha8Rng, s: f64| {
            Vector3::new(
                (rng.gen::<f64>() - 0.5) * s,
                (rng.gen::<f64>() - 0.5) * s,
                (rng.gen::<f64>() - 0.5) * s,
            )
        };
        let waypoints = (0..pieces - 1).map(|_| rv(rng, 3.0)).collect();
        let durations = (0..pieces).map(|_| 0.6 + rng.gen::<f64>()).collect();
        Self {
            waypoints,
            durations,
            start: Boundary {
                position: rv(rng, 3.0),
                velocity: rv(rng, 0.6),
                acceleration: rv(rng, 0.6),
            },
            end: Boundary {
                position: rv(rng, 3.0),
                velocity: rv(rng, 0.3),
                acceleration: Vector3::zeros(),
            },
        }
    }

    fn build(&self) -> MincoTrajectory {
        construct(&self.waypoints, &self.durations, &self.start, &self.end)
            .expect("random instance is constructible")
    }
}

/// Check one term against finite differences for a single instance.
/// Returns `(coordinates_compared, skipped, max_rel_error)`.
fn check_instance<F>(inst: &Instance, term: &mut F) -> (usize, usize, f64)
where
    F: FnMut(&MincoTrajectory) -> TermGrad,
{
    let minco = inst.build();
    let grad = term(&minco);
    let (dq, dt) = minco.propagate_gradient(&grad.d_coeffs, &grad.d_durations);

    let m = inst.durations.len();
    let dim = 3 * (m - 1) + m;
    let analytic: Vec<f64> = (0..dim)
        .map(|k| {
            if k < 3 * (m - 1) {
                dq[k / 3][k % 3]
            } else {
                dt[k - 3 * (m - 1)]
            }
        })
        .collect();

    // Absolute finite-difference noise scales with the term's magnitude
    // (ulp(J)/h), not with the individual coordinate, so each coordinate is
    // compared against the gradient's overall scale.
    let grad_scale = analytic
        .iter()
        .fold(0.0f64, |m, g| m.max(g.abs()))
        .max(1e-4);
    let mut compared = 0;
    let mut skipped = 0;
    let mut max_rel = 0.0f64;
    for k in 0..dim {
        let mut central = |h: f64| {
            let vp = term(&clone_shifted(inst, k, h).build()).value;
            let vm = term(&clone_shifted(inst, k, -h).build()).value;
            (vp - vm) / (2.0 * h)
        };
        let fd1 = central(FD_STEP);
        let fd2 = central(FD_STEP / 2.0);
        let scale = fd1.abs().max(fd2.abs()).max(1.0);
        if (fd1 - fd2).abs() > FD_CONSISTENCY * scale {
            skipped += 1;
            continue;
        }
        compared += 1;
        let denom = fd2.abs().max(analytic[k].abs()).max(grad_scale);
        max_rel = max_rel.max((analytic[k] - fd2).abs() / denom);
    }
    (compared, skipped, max_rel)
}

fn clone_shifted(inst: &Instance, k: usize, h: f64) -> Instance {
    let mut out = Instance {
        waypoints: inst.waypoints.clone(),
        durations: inst.durations.clone(),
        start: inst.start,
        end: inst.end,
    };
    let nq = 3 * (inst.waypoints.len());
    if k < nq {
        out.waypoints[k / 3][k % 3] += h;
    } else {
        out.durations[k - nq] += h;
    }
    out
}

fn random_esdf(rng: &mut ChaCha8Rng) -> Esdf {
    let mut map = GridMap::new(
        Vector3::new(-5.0, -5.0, -5.0),
        0.5,
        [20, 20, 20],
    )
    .unwrap();
    for _ in 0..60 {
        let c = [
            rng.gen_range(0..20usize),
            rng.gen_range(0..20usize),
            rng.gen_range(0..20usize),
        ];
        map.set_occupied(c, true);
    }
    build_esdf(&map, DEFAULT_D_FREE_MAX)
}

fn random_neighbors(rng: &mut ChaCha8Rng, count: usize) -> Vec<NeighborTrajectory> {
    (0..count)
        .map(|k| {
            let inst = Instance::random(rng, 2);
            NeighborTrajectory {
                vertex: k + 1,
                start_stamp: (rng.gen::<f64>() - 0.5) * 0.4,
                traj: inst.build().into_trajectory(),
            }
        })
        .collect()
}

fn summarize<G>(name: &'static str, instances: usize, seed: u64, mut make: G) -> TermResult
where
    G: FnMut(&mut ChaCha8Rng, &Instance) -> (usize, usize, f64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = 0;
    let mut skipped = 0;
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let pieces = 2 + rng.gen_range(0..2usize);
        let inst = Instance::random(&mut rng, pieces);
        let (c, s, e) = make(&mut rng, &inst);
        coords += c;
        skipped += s;
        max_rel = max_rel.max(e);
    }
    TermResult {
        name,
        instances,
        coordinates: coords,
        skipped,
        max_rel_error: max_rel,
    }
}

/// Check the formation similarity metric gradient in position space.
pub fn check_similarity_metric(instances: usize, seed: u64) -> TermResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = 0;
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let n = 3 + rng.gen_range(0..5usize);
        let rand_pos = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen::<f64>() * 4.0,
                        rng.gen::<f64>() * 4.0,
                        rng.gen::<f64>() * 4.0,
                    )
                })
                .collect::<Vec<_>>()
        };
        let desired = rand_pos(&mut rng);
        let mut current = rand_pos(&mut rng);
        let Ok(spec) = FormationSpec::new(desired) else {
            continue;
        };
        if formation::similarity(&current, &spec).is_err() {
            continue;
        }
        let (_, grads) = formation::similarity_gradients(&current, &spec).unwrap();
        for i in 0..n {
            for axis in 0..3 {
                let h = 1e-6;
                let orig = current[i][axis];
                current[i][axis] = orig + h;
                let fp = formation::similarity(&current, &spec).unwrap();
                current[i][axis] = orig - h;
                let fm = formation::similarity(&current, &spec).unwrap();
                current[i][axis] = orig;
                let fd = (fp - fm) / (2.0 * h);
                coords += 1;
                let denom = fd.abs().max(grads[i][axis].abs()).max(1e-6);
                max_rel = max_rel.max((grads[i][axis] - fd).abs() / denom);
            }
        }
    }
    TermResult {
        name: "similarity_metric",
        instances,
        coordinates: coords,
        skipped: 0,
        max_rel_error: max_rel,
    }
}

/// Run the full suite: the similarity metric plus all trajectory cost terms.
pub fn run_suite(instances: usize, seed: u64) -> Vec<TermResult> {
    let params = PenaltyParams {
        // Tightened thresholds keep the hinge terms active on random
        // instances so their gradients are actually exercised.
        d_thr: 1.2,
        clearance: 1.5,
        v_max: 0.4,
        a_max: 1.0,
        j_max: 6.0,
        ..Default::default()
    };

    let mut results = vec![check_similarity_metric(instances, seed)];

    results.push(summarize("control_effort", instances, seed + 1, |_, inst| {
        check_instance(inst, &mut |m| control_effort(m.trajectory()))
    }));

    results.push(summarize("total_time", instances, seed + 2, |_, inst| {
        check_instance(inst, &mut |m| total_time(m.trajectory()))
    }));

    results.push(summarize("obstacle", instances, seed + 3, |rng, inst| {
        let esdf = random_esdf(rng);
        check_instance(inst, &mut |m| {
            obstacle_penalty(m.trajectory(), &esdf, &params)
        })
    }));

    results.push(summarize("formation", instances, seed + 4, |rng, inst| {
        let n = 3 + rng.gen_range(0..2usize);
        let desired: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen::<f64>() * 3.0,
                    rng.gen::<f64>() * 3.0,
                    rng.gen::<f64>() * 3.0,
                )
            })
            .collect();
        let spec = FormationSpec::new(desired).unwrap();
        let neighbors = random_neighbors(rng, n - 1);
        let ctx = SwarmContext {
            esdf: None,
            neighbors: &neighbors,
            formation: Some(&spec),
            own_vertex: 0,
            start_stamp: 0.0,
        };
        check_instance(inst, &mut |m| {
            formation_penalty(m.trajectory(), &ctx, &params).unwrap()
        })
    }));

    results.push(summarize("reciprocal", instances, seed + 5, |rng, inst| {
        let neighbors = random_neighbors(rng, 2);
        let ctx = SwarmContext {
            esdf: None,
            neighbors: &neighbors,
            formation: None,
            own_vertex: 0,
            start_stamp: 0.0,
        };
        check_instance(inst, &mut |m| {
            reciprocal_penalty(m.trajectory(), &ctx, &params)
        })
    }));

    results.push(summarize("feasibility", instances, seed + 6, |_, inst| {
        check_instance(inst, &mut |m| feasibility_penalty(m.trajectory(), &params))
    }));

    results.push(summarize("uniformity", instances, seed + 7, |_, inst| {
        check_instance(inst, &mut |m| uniformity_penalty(m.trajectory(), &params))
    }));

    results
}
