//! End-to-end acceptance suite.
//!
//! Each numbered criterion prints one PASS/FAIL line; the test asserts that
//! every criterion passed after all of them have run, so a single failure
//! still reports the full picture.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swarmform::cost::{control_effort, CostWeights};
use swarmform::eval::{
    aligned_scales, alignment_error, corridor_scenario, evaluate_run, generate_scenario,
    hexagon_formation, sim3_align, Density,
};
use swarmform::formation::{self, FormationSpec};
use swarmform::gradcheck;
use swarmform::grid::{brute_force_esdf, build_esdf, GridMap};
use swarmform::minco::{construct, Boundary};
use swarmform::sim::run_scenario;

struct Gate {
    outcomes: Vec<(usize, bool, String)>,
}

impl Gate {
    fn new() -> Self {
        Self {
            outcomes: Vec::new(),
        }
    }

    fn record(&mut self, criterion: usize, pass: bool, detail: String) {
        println!(
            "criterion {}: {} — {}",
            criterion,
            if pass { "PASS" } else { "FAIL" },
            detail
        );
        self.outcomes.push((criterion, pass, detail));
    }

    fn finish(self) {
        let failed: Vec<String> = self
            .outcomes
            .iter()
            .filter(|(_, pass, _)| !pass)
            .map(|(k, _, d)| format!("criterion {k}: {d}"))
            .collect();
        assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let m = Matrix3::from_fn(|_, _| rng.gen::<f64>() - 0.5);
    let qr = m.qr();
    let mut q = qr.q();
    if q.determinant() < 0.0 {
        q.column_mut(2).neg_mut();
    }
    q
}

fn random_sim3(rng: &mut ChaCha8Rng) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let s = 0.2 + rng.gen::<f64>() * 5.0;
    let r = random_rotation(rng);
    let t = Vector3::from_fn(|_, _| rng.gen::<f64>() * 20.0 - 10.0);
    (s, r, t)
}

/// Criterion 1: every analytic gradient matches central finite differences
/// on randomized instances.
fn criterion_gradients(gate: &mut Gate) {
    let started = std::time::Instant::now();
    let results = gradcheck::run_suite(100, 2024);
    let elapsed = started.elapsed().as_secs_f64();
    let mut pass = elapsed < 60.0;
    let mut worst = ("", 0.0f64);
    for r in &results {
        let tol = if r.name == "similarity" { 1e-5 } else { 1e-4 };
        if r.instances < 100 || !(r.max_rel_error < tol) {
            pass = false;
        }
        if r.max_rel_error > worst.1 {
            worst = (r.name, r.max_rel_error);
        }
    }
    gate.record(
        1,
        pass,
        format!(
            "max rel error {:.2e} ({}) over {} terms × 100 instances in {elapsed:.1} s",
            worst.1,
            worst.0,
            results.len()
        ),
    );
}

/// Criterion 2: formation similarity and the alignment metric are invariant
/// under similarity transforms.
fn criterion_invariance(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = FormationSpec::new(hexagon_formation(1.0)).unwrap();
    let base: Vec<Vector3<f64>> = hexagon_formation(1.0)
        .iter()
        .map(|p| p + Vector3::from_fn(|_, _| rng.gen::<f64>() * 0.3))
        .collect();
    let f0 = formation::similarity(&base, &spec).unwrap();
    let mut max_df = 0.0f64;
    for _ in 0..1000 {
        let (s, r, t) = random_sim3(&mut rng);
        let moved: Vec<Vector3<f64>> = base.iter().map(|p| s * (r * p) + t).collect();
        let f = formation::similarity(&moved, &spec).unwrap();
        max_df = max_df.max((f - f0).abs());
    }

    let target: Vec<Vector3<f64>> = base
        .iter()
        .map(|p| p + Vector3::from_fn(|_, _| rng.gen::<f64>() * 0.2))
        .collect();
    let e0 = alignment_error(&base, &target);
    let mut max_de = 0.0f64;
    for _ in 0..200 {
        let (s, r, t) = random_sim3(&mut rng);
        let a: Vec<Vector3<f64>> = base.iter().map(|p| s * (r * p) + t).collect();
        let b: Vec<Vector3<f64>> = target.iter().map(|p| s * (r * p) + t).collect();
        // The residual scales with s²; compare in the source frame.
        max_de = max_de.max((alignment_error(&a, &b) / (s * s) - e0).abs());
    }
    let pass = max_df < 1e-9 && max_de < 1e-9;
    gate.record(
        2,
        pass,
        format!("|Δf| ≤ {max_df:.2e} over 1000 transforms, |Δe_dist| ≤ {max_de:.2e}"),
    );
}

/// Criterion 3: closed-form oracles — the rest-to-rest min-jerk quintic, its
/// effort value, and exhaustive distance-transform agreement.
fn criterion_oracles(gate: &mut Gate) {
    // Rest-to-rest unit displacement over T: p(t) = 10σ³ − 15σ⁴ + 6σ⁵.
    let mut max_shape = 0.0f64;
    let mut max_effort = 0.0f64;
    for &t_total in &[0.5, 1.0, 2.0, 3.7] {
        let start = Boundary::rest(Vector3::zeros());
        let end = Boundary::rest(Vector3::new(1.0, 0.0, 0.0));
        let minco = construct(&[], &[t_total], &start, &end).unwrap();
        let traj = minco.trajectory();
        for k in 0..=200 {
            let t = t_total * k as f64 / 200.0;
            let s = t / t_total;
            let expect = 10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5);
            let got = traj.evaluate(t, 0).unwrap().x;
            max_shape = max_shape.max((got - expect).abs());
        }
        let effort = control_effort(traj).value;
        let expect = 720.0 / t_total.powi(5);
        max_effort = max_effort.max((effort - expect).abs() / expect);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut max_dt = 0.0f64;
    for _ in 0..6 {
        let dims = [
            2 + rng.gen_range(0..31usize),
            2 + rng.gen_range(0..31usize),
            2 + rng.gen_range(0..31usize),
        ];
        let mut map = GridMap::new(Vector3::zeros(), 0.25, dims).unwrap();
        let fill = 0.02 + rng.gen::<f64>() * 0.3;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    if rng.gen::<f64>() < fill {
                        map.set_occupied([x, y, z], true);
                    }
                }
            }
        }
        let esdf = build_esdf(&map, 50.0);
        let brute = brute_force_esdf(&map, 50.0);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = (z * dims[1] + y) * dims[0] + x;
                    max_dt = max_dt.max((esdf.cell_distance([x, y, z]) - brute[i]).abs());
                }
            }
        }
    }
    let pass = max_shape < 1e-8 && max_effort < 1e-6 && max_dt < 1e-9;
    gate.record(
        3,
        pass,
        format!(
            "min-jerk shape err {max_shape:.2e}, effort rel err {max_effort:.2e}, \
             distance-transform err {max_dt:.2e}"
        ),
    );
}

/// Numeric polish of a similarity transform by coordinate-wise descent over
/// (log-scale, rotation increment, translation); the oracle for criterion 4.
fn polish_residual(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    init: &swarmform::eval::Sim3,
) -> f64 {
    let residual = |s: f64, r: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
        source
            .iter()
            .zip(target)
            .map(|(x, y)| (s * (r * x) + t - y).norm_squared())
            .sum()
    };
    let mut s = init.scale;
    let mut r = init.rotation;
    let mut t = init.translation;
    let mut best = residual(s, &r, &t);
    let mut step = 1e-2;
    for _ in 0..200 {
        let mut improved = false;
        // Scale and translation moves.
        for d in [-step, step] {
            let cand = residual(s * (1.0 + d), &r, &t);
            if cand < best {
                s *= 1.0 + d;
                best = cand;
                improved = true;
            }
            for axis in 0..3 {
                let mut tc = t;
                tc[axis] += d;
                let cand = residual(s, &r, &tc);
                if cand < best {
                    t = tc;
                    best = cand;
                    improved = true;
                }
            }
            // Rotation increments about each axis.
            for axis in 0..3 {
                let mut w = Vector3::zeros();
                w[axis] = d;
                let rc = nalgebra::Rotation3::from_scaled_axis(w).into_inner() * r;
                let cand = residual(s, &rc, &t);
                if cand < best {
                    r = rc;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
    }
    best
}

/// Criterion 4: exact alignment recovery and optimality of the closed form
/// against a nonlinear polish.
fn criterion_alignment(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut max_exact = 0.0f64;
    let mut max_gap = f64::NEG_INFINITY;
    for trial in 0..20 {
        let n = 4 + rng.gen_range(0..5usize);
        let source: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.gen::<f64>() * 4.0 - 2.0))
            .collect();
        let (s, r, t) = random_sim3(&mut rng);
        let noise = if trial < 10 { 0.0 } else { 0.15 };
        let target: Vec<Vector3<f64>> = source
            .iter()
            .map(|x| {
                s * (r * x) + t + Vector3::from_fn(|_, _| (rng.gen::<f64>() - 0.5) * noise)
            })
            .collect();
        let closed = alignment_error(&source, &target);
        if noise == 0.0 {
            max_exact = max_exact.max(closed);
        }
        let polished = polish_residual(&source, &target, &sim3_align(&source, &target));
        max_gap = max_gap.max(closed - polished);
    }
    let pass = max_exact < 1e-12 && max_gap <= 1e-8;
    gate.record(
        4,
        pass,
        format!("exact residual ≤ {max_exact:.2e}, closed-form vs polish gap ≤ {max_gap:.2e}"),
    );
}

struct RegimeStats {
    successes: usize,
    runs: usize,
    mean_e_dist: f64,
    mean_e_sim: f64,
}

fn run_regime(density: Density, seeds: std::ops::Range<u64>) -> RegimeStats {
    let mut successes = 0;
    let mut runs = 0;
    let mut e_dist = 0.0;
    let mut e_sim = 0.0;
    for seed in seeds {
        let config = generate_scenario(density, seed).unwrap();
        let result = run_scenario(config.clone()).unwrap();
        let metrics = evaluate_run(&result, &config).unwrap();
        runs += 1;
        if metrics.success {
            successes += 1;
        }
        e_dist += metrics.mean_e_dist_rms;
        e_sim += metrics.mean_e_sim;
    }
    RegimeStats {
        successes,
        runs,
        mean_e_dist: e_dist / runs as f64,
        mean_e_sim: e_sim / runs as f64,
    }
}

/// Criterion 5: the three-regime benchmark — success rates, metric
/// monotonicity, and order-of-magnitude similarity error.
fn criterion_benchmark(gate: &mut Gate) {
    let started = std::time::Instant::now();
    let sparse = run_regime(Density::Sparse, 10..30);
    let medium = run_regime(Density::Medium, 10..30);
    let dense = run_regime(Density::Dense, 10..30);
    let elapsed = started.elapsed().as_secs_f64();

    let rates_ok = sparse.successes * 100 >= 90 * sparse.runs
        && medium.successes * 100 >= 85 * medium.runs
        && dense.successes * 100 >= 75 * dense.runs;
    let monotone = sparse.mean_e_dist <= medium.mean_e_dist
        && medium.mean_e_dist <= dense.mean_e_dist
        && sparse.mean_e_sim <= medium.mean_e_sim
        && medium.mean_e_sim <= dense.mean_e_sim;
    let magnitude = sparse.mean_e_sim <= 5.0 * 0.0032
        && medium.mean_e_sim <= 5.0 * 0.0045
        && dense.mean_e_sim <= 5.0 * 0.0107;
    let pass = rates_ok && monotone && magnitude && elapsed < 900.0;
    gate.record(
        5,
        pass,
        format!(
            "success {}/{} | {}/{} | {}/{}, e_dist {:.3}/{:.3}/{:.3}, \
             e_sim {:.4}/{:.4}/{:.4}, {elapsed:.0} s",
            sparse.successes,
            sparse.runs,
            medium.successes,
            medium.runs,
            dense.successes,
            dense.runs,
            sparse.mean_e_dist,
            medium.mean_e_dist,
            dense.mean_e_dist,
            sparse.mean_e_sim,
            medium.mean_e_sim,
            dense.mean_e_sim,
        ),
    );
}

/// Criterion 6: removing the formation weight degrades similarity at least
/// twofold on the medium regime.
fn criterion_ablation(gate: &mut Gate) {
    let mut with = 0.0;
    let mut without = 0.0;
    let runs = 4;
    for seed in 40..40 + runs {
        let config = generate_scenario(Density::Medium, seed).unwrap();
        let result = run_scenario(config.clone()).unwrap();
        with += evaluate_run(&result, &config).unwrap().mean_e_sim;

        let mut ablated = config.clone();
        ablated.weights = CostWeights {
            formation: 0.0,
            ..config.weights
        };
        let result = run_scenario(ablated.clone()).unwrap();
        without += evaluate_run(&result, &ablated).unwrap().mean_e_sim;
    }
    let ratio = without / with;
    gate.record(
        6,
        ratio >= 2.0,
        format!(
            "mean e_sim {:.4} ablated vs {:.4} default (ratio {ratio:.1}×)",
            without / runs as f64,
            with / runs as f64
        ),
    );
}

/// Criterion 7: the tetrahedron compresses through the corridor and
/// re-expands cleanly on the far side.
fn criterion_corridor(gate: &mut Gate) {
    let (config, wall_x) = corridor_scenario(3);
    let result = run_scenario(config.clone()).unwrap();
    let scales = aligned_scales(&result, &config).unwrap();
    let mut min_inside = f64::INFINITY;
    let mut last_after = f64::NAN;
    for &(_, centroid, s) in &scales {
        if centroid.x >= wall_x.0 - 0.5 && centroid.x <= wall_x.1 + 0.5 {
            min_inside = min_inside.min(s);
        }
        if centroid.x > wall_x.1 + 2.0 {
            last_after = s;
        }
    }
    let pass =
        result.success && result.violations.is_empty() && min_inside < 0.9 && last_after > 0.95;
    gate.record(
        7,
        pass,
        format!(
            "success {}, violations {}, scale {min_inside:.3} inside → {last_after:.3} after",
            result.success,
            result.violations.len()
        ),
    );
}

/// Criterion 8: the per-cycle solve stays within the desk-scale budget.
fn criterion_solve_time(gate: &mut Gate) {
    let config = generate_scenario(Density::Medium, 10).unwrap();
    let result = run_scenario(config).unwrap();
    let mut times = result.solve_times_ms.clone();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    gate.record(
        8,
        median < 50.0,
        format!("median optimize {median:.1} ms over {} cycles", times.len()),
    );
}

/// Criterion 9: seeded runs are bitwise reproducible.
fn criterion_determinism(gate: &mut Gate) {
    let config = generate_scenario(Density::Medium, 11).unwrap();
    let a = run_scenario(config.clone()).unwrap();
    let b = run_scenario(config.clone()).unwrap();
    let ma = evaluate_run(&a, &config).unwrap();
    let mb = evaluate_run(&b, &config).unwrap();
    let pass = a.metrics_json() == b.metrics_json() && ma.summary_line() == mb.summary_line();
    gate.record(
        9,
        pass,
        "metric summaries byte-identical across two executions".into(),
    );
}

#[test]
fn acceptance() {
    let mut gate = Gate::new();
    criterion_gradients(&mut gate);
    criterion_invariance(&mut gate);
    criterion_oracles(&mut gate);
    criterion_alignment(&mut gate);
    criterion_benchmark(&mut gate);
    criterion_ablation(&mut gate);
    criterion_corridor(&mut gate);
    criterion_solve_time(&mut gate);
    criterion_determinism(&mut gate);
    gate.finish();
}
