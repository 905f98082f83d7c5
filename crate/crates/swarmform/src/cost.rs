//! The seven-term trajectory objective and its gradients.
//!
//! Every time-integral penalty is evaluated by trapezoidal quadrature over
//! constraint points sampled at fixed fractions of each piece, using the
//! twice-differentiable hinge `max{ψ,0}³`. Gradients are accumulated in
//! coefficient space (`∂J/∂c_i`, 6×3 per piece) and duration space
//! (`∂J/∂T`), including the coupling of early durations into the global
//! timestamps at which neighbor trajectories are sampled.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{self, FormationError, FormationSpec};
use crate::grid::Esdf;
use crate::minco::{basis, CoeffMatrix, Trajectory};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("formation term: {0}")]
    Formation(#[from] FormationError),
    #[error("vertex index {0} out of range for formation of {1} agents")]
    BadVertex(usize, usize),
}

/// Weights `λ` of the joint objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostWeights {
    pub effort: f64,
    pub time: f64,
    pub obstacle: f64,
    pub formation: f64,
    pub reciprocal: f64,
    pub feasibility: f64,
    pub uniformity: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            effort: 1.0,
            time: 40.0,
            obstacle: 100_000.0,
            formation: 1.0e7,
            reciprocal: 20_000.0,
            feasibility: 100_000.0,
            uniformity: 500.0,
        }
    }
}

/// Penalty thresholds and sampling parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyParams {
    /// Obstacle clearance threshold, meters.
    pub d_thr: f64,
    /// Inter-agent clearance, meters.
    pub clearance: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
    /// Constraint-point samples per piece.
    pub kappa: usize,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            d_thr: 0.7,
            clearance: 0.6,
            v_max: 0.5,
            a_max: 6.0,
            j_max: 30.0,
            kappa: 8,
        }
    }
}

/// Trapezoidal quadrature weight for sample `j` of `κ+1`.
#[inline]
fn quad_weight(j: usize, kappa: usize) -> f64 {
    if j == 0 || j == kappa {
        0.5
    } else {
        1.0
    }
}

/// A neighbor's committed trajectory, evaluable at global timestamps.
#[derive(Debug, Clone)]
pub struct NeighborTrajectory {
    /// Vertex index of this neighbor in the formation graph.
    pub vertex: usize,
    /// Global start time of the trajectory.
    pub start_stamp: f64,
    pub traj: Trajectory,
}

impl NeighborTrajectory {
    /// Position and velocity at global time `t`, holding the terminal
    /// position (zero velocity) outside the trajectory span.
    pub fn state_at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        self.traj.state_clamped(t - self.start_stamp)
    }
}

/// Everything the swarm terms need besides the agent's own trajectory.
pub struct SwarmContext<'a> {
    pub esdf: Option<&'a Esdf>,
    pub neighbors: &'a [NeighborTrajectory],
    pub formation: Option<&'a FormationSpec>,
    /// Own vertex index in the formation graph.
    pub own_vertex: usize,
    /// Global start time of the own trajectory being optimized.
    pub start_stamp: f64,
}

impl<'a> SwarmContext<'a> {
    pub fn solo(esdf: Option<&'a Esdf>) -> Self {
        Self {
            esdf,
            neighbors: &[],
            formation: None,
            own_vertex: 0,
            start_stamp: 0.0,
        }
    }
}

/// Value and gradients of one cost term.
#[derive(Debug, Clone)]
pub struct TermGrad {
    pub value: f64,
    pub d_coeffs: Vec<CoeffMatrix>,
    pub d_durations: Vec<f64>,
}

impl TermGrad {
    fn zeros(pieces: usize) -> Self {
        Self {
            value: 0.0,
            d_coeffs: vec![CoeffMatrix::zeros(); pieces],
            d_durations: vec![0.0; pieces],
        }
    }
}

/// Per-term values and total gradients of the weighted objective.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub effort: f64,
    pub time: f64,
    pub obstacle: f64,
    pub formation: f64,
    pub reciprocal: f64,
    pub feasibility: f64,
    pub uniformity: f64,
    pub total: f64,
    pub d_coeffs: Vec<CoeffMatrix>,
    pub d_durations: Vec<f64>,
}

impl CostReport {
    pub fn csv_header() -> &'static str {
        "iteration,effort,time,obstacle,formation,reciprocal,feasibility,uniformity,total,grad_norm"
    }

    pub fn csv_line(&self, iteration: usize) -> String {
        let gnorm: f64 = self
            .d_coeffs
            .iter()
            .map(|c| c.norm_squared())
            .chain(self.d_durations.iter().map(|d| d * d))
            .sum::<f64>()
            .sqrt();
        format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            iteration,
            self.effort,
            self.time,
            self.obstacle,
            self.formation,
            self.reciprocal,
            self.feasibility,
            self.uniformity,
            self.total,
            gnorm
        )
    }
}

/// Closed-form jerk energy `Σ_i ∫‖p_i‴‖² dt` with gradients.
pub fn control_effort(traj: &Trajectory) -> TermGrad {
    let m = traj.piece_count();
    let mut out = TermGrad::zeros(m);
    for i in 0..m {
        let t = traj.durations()[i];
        let c = &traj.coeffs()[i];
        // Gram matrix of β‴ over [0, T]; only rows/cols 3..5 are nonzero.
        let mut gram = nalgebra::SMatrix::<f64, 6, 6>::zeros();
        gram[(3, 3)] = 36.0 * t;
        gram[(3, 4)] = 72.0 * t * t;
        gram[(4, 3)] = gram[(3, 4)];
        gram[(3, 5)] = 120.0 * t.powi(3);
        gram[(5, 3)] = gram[(3, 5)];
        gram[(4, 4)] = 192.0 * t.powi(3);
        gram[(4, 5)] = 360.0 * t.powi(4);
        gram[(5, 4)] = gram[(4, 5)];
        gram[(5, 5)] = 720.0 * t.powi(5);
        out.value += (c.transpose() * gram * c).trace();
        out.d_coeffs[i] = 2.0 * gram * c;
        let jerk_end: Vector3<f64> = c.transpose() * basis(t, 3);
        out.d_durations[i] = jerk_end.norm_squared();
    }
    out
}

/// Total trajectory time with unit duration gradients.
pub fn total_time(traj: &Trajectory) -> TermGrad {
    let m = traj.piece_count();
    TermGrad {
        value: traj.durations().iter().sum(),
        d_coeffs: vec![CoeffMatrix::zeros(); m],
        d_durations: vec![1.0; m],
    }
}

/// Shared accumulation for a hinge penalty evaluated at one constraint point.
///
/// `d_psi_d_tau` couples into every preceding duration (the sample's global
/// timestamp advances with each of them); `d_psi_d_t` and the `j/κ` factor
/// act on the sampled piece only.
struct HingeAccum<'a> {
    piece: usize,
    j: usize,
    kappa: usize,
    duration: f64,
    out: &'a mut TermGrad,
}

impl HingeAccum<'_> {
    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        psi: f64,
        d_psi_d_c: &CoeffMatrix,
        d_psi_d_t: f64,
        d_psi_d_tau: f64,
    ) {
        if psi <= 0.0 {
            return;
        }
        let w = quad_weight(self.j, self.kappa);
        let scale = self.duration / self.kappa as f64;
        let value = w * scale * psi.powi(3);
        self.out.value += value;
        let chain = w * scale * 3.0 * psi * psi;
        self.out.d_coeffs[self.piece] += chain * d_psi_d_c;
        let frac = self.j as f64 / self.kappa as f64;
        // d/dT_i: quadrature prefactor plus time-flow of both clocks.
        self.out.d_durations[self.piece] +=
            value / self.duration + chain * (d_psi_d_t + d_psi_d_tau) * frac;
        // Earlier durations shift the global timestamp one-for-one.
        for l in 0..self.piece {
            self.out.d_durations[l] += chain * d_psi_d_tau;
        }
    }
}

/// Obstacle clearance penalty from the signed distance field.
pub fn obstacle_penalty(traj: &Trajectory, esdf: &Esdf, params: &PenaltyParams) -> TermGrad {
    let m = traj.piece_count();
    let kappa = params.kappa;
    let mut out = TermGrad::zeros(m);
    for i in 0..m {
        let ti = traj.durations()[i];
        for j in 0..=kappa {
            let t = ti * j as f64 / kappa as f64;
            let pos = traj.evaluate_piece(i, t, 0);
            let (d, grad_d) = esdf.query(&pos);
            let psi = params.d_thr - d;
            if psi <= 0.0 {
                continue;
            }
            let b = basis(t, 0);
            let d_psi_d_c: CoeffMatrix = -(b * grad_d.transpose());
            let vel = traj.evaluate_piece(i, t, 1);
            let d_psi_d_t = -grad_d.dot(&vel);
            HingeAccum {
                piece: i,
                j,
                kappa,
                duration: ti,
                out: &mut out,
            }
            .add(psi, &d_psi_d_c, d_psi_d_t, 0.0);
        }
    }
    out
}

/// Formation similarity penalty against neighbors sampled at global
/// timestamps.
pub fn formation_penalty(
    traj: &Trajectory,
    ctx: &SwarmContext,
    params: &PenaltyParams,
) -> Result<TermGrad, CostError> {
    let m = traj.piece_count();
    let mut out = TermGrad::zeros(m);
    let Some(spec) = ctx.formation else {
        return Ok(out);
    };
    let n = spec.agent_count();
    if ctx.own_vertex >= n {
        return Err(CostError::BadVertex(ctx.own_vertex, n));
    }
    if ctx.neighbors.len() + 1 != n {
        return Err(FormationError::DimensionMismatch {
            expected: n,
            got: ctx.neighbors.len() + 1,
        }
        .into());
    }
    let kappa = params.kappa;
    let mut positions = vec![Vector3::zeros(); n];
    let mut neighbor_vels = vec![Vector3::zeros(); ctx.neighbors.len()];
    let mut tau_base = 0.0;
    for i in 0..m {
        let ti = traj.durations()[i];
        for j in 0..=kappa {
            let t = ti * j as f64 / kappa as f64;
            let tau = ctx.start_stamp + tau_base + t;
            let own_pos = traj.evaluate_piece(i, t, 0);
            positions[ctx.own_vertex] = own_pos;
            for (k, nb) in ctx.neighbors.iter().enumerate() {
                if nb.vertex >= n {
                    return Err(CostError::BadVertex(nb.vertex, n));
                }
                let (p, v) = nb.state_at(tau);
                positions[nb.vertex] = p;
                neighbor_vels[k] = v;
            }
            let (f, grads) = formation::similarity_gradients(&positions, spec)?;
            if f <= 0.0 {
                continue;
            }
            let b = basis(t, 0);
            let own_grad = grads[ctx.own_vertex];
            let d_psi_d_c: CoeffMatrix = b * own_grad.transpose();
            let vel = traj.evaluate_piece(i, t, 1);
            let d_psi_d_t = own_grad.dot(&vel);
            let d_psi_d_tau: f64 = ctx
                .neighbors
                .iter()
                .zip(&neighbor_vels)
                .map(|(nb, v)| grads[nb.vertex].dot(v))
                .sum();
            HingeAccum {
                piece: i,
                j,
                kappa,
                duration: ti,
                out: &mut out,
            }
            .add(f, &d_psi_d_c, d_psi_d_t, d_psi_d_tau);
        }
        tau_base += ti;
    }
    Ok(out)
}

/// Reciprocal clearance penalty against each neighbor trajectory.
pub fn reciprocal_penalty(
    traj: &Trajectory,
    ctx: &SwarmContext,
    params: &PenaltyParams,
) -> TermGrad {
    let m = traj.piece_count();
    let kappa = params.kappa;
    let mut out = TermGrad::zeros(m);
    let dr2 = params.clearance * params.clearance;
    let mut tau_base = 0.0;
    for i in 0..m {
        let ti = traj.durations()[i];
        for j in 0..=kappa {
            let t = ti * j as f64 / kappa as f64;
            let tau = ctx.start_stamp + tau_base + t;
            let own_pos = traj.evaluate_piece(i, t, 0);
            let vel = traj.evaluate_piece(i, t, 1);
            for nb in ctx.neighbors {
                let (np, nv) = nb.state_at(tau);
                let rel = own_pos - np;
                let psi = dr2 - rel.norm_squared();
                if psi <= 0.0 {
                    continue;
                }
                let b = basis(t, 0);
                let d_psi_d_c: CoeffMatrix = -2.0 * (b * rel.transpose());
                let d_psi_d_t = -2.0 * rel.dot(&vel);
                let d_psi_d_tau = 2.0 * rel.dot(&nv);
                HingeAccum {
                    piece: i,
                    j,
                    kappa,
                    duration: ti,
                    out: &mut out,
                }
                .add(psi, &d_psi_d_c, d_psi_d_t, d_psi_d_tau);
            }
        }
        tau_base += ti;
    }
    out
}

/// Velocity/acceleration/jerk limit penalty.
pub fn feasibility_penalty(traj: &Trajectory, params: &PenaltyParams) -> TermGrad {
    let m = traj.piece_count();
    let kappa = params.kappa;
    let mut out = TermGrad::zeros(m);
    for i in 0..m {
        let ti = traj.durations()[i];
        for j in 0..=kappa {
            let t = ti * j as f64 / kappa as f64;
            let c = &traj.coeffs()[i];
            let vel: Vector3<f64> = c.transpose() * basis(t, 1);
            let acc: Vector3<f64> = c.transpose() * basis(t, 2);
            let jerk: Vector3<f64> = c.transpose() * basis(t, 3);
            let snap: Vector3<f64> = c.transpose() * basis(t, 4);

            let mut accum = HingeAccum {
                piece: i,
                j,
                kappa,
                duration: ti,
                out: &mut out,
            };
            let psi_v = vel.norm_squared() - params.v_max * params.v_max;
            if psi_v > 0.0 {
                let d_c: CoeffMatrix = 2.0 * (basis(t, 1) * vel.transpose());
                accum.add(psi_v, &d_c, 2.0 * acc.dot(&vel), 0.0);
            }
            let psi_a = acc.norm_squared() - params.a_max * params.a_max;
            if psi_a > 0.0 {
                let d_c: CoeffMatrix = 2.0 * (basis(t, 2) * acc.transpose());
                accum.add(psi_a, &d_c, 2.0 * jerk.dot(&acc), 0.0);
            }
            let psi_j = jerk.norm_squared() - params.j_max * params.j_max;
            if psi_j > 0.0 {
                let d_c: CoeffMatrix = 2.0 * (basis(t, 3) * jerk.transpose());
                accum.add(psi_j, &d_c, 2.0 * snap.dot(&jerk), 0.0);
            }
        }
    }
    out
}

/// Spacing-uniformity penalty on the concatenated constraint-point sequence:
/// squared differences of consecutive squared gap lengths.
pub fn uniformity_penalty(traj: &Trajectory, params: &PenaltyParams) -> TermGrad {
    let m = traj.piece_count();
    let kappa = params.kappa;
    let mut out = TermGrad::zeros(m);

    // Unique constraint points: j = 0..κ-1 per piece plus the final endpoint.
    struct Point {
        piece: usize,
        frac: f64,
        pos: Vector3<f64>,
        vel: Vector3<f64>,
        rel_time: f64,
    }
    let mut pts = Vec::with_capacity(m * kappa + 1);
    for i in 0..m {
        let ti = traj.durations()[i];
        let last = if i == m - 1 { kappa } else { kappa - 1 };
        for j in 0..=last {
            let frac = j as f64 / kappa as f64;
            let t = ti * frac;
            pts.push(Point {
                piece: i,
                frac,
                pos: traj.evaluate_piece(i, t, 0),
                vel: traj.evaluate_piece(i, t, 1),
                rel_time: t,
            });
        }
    }
    let count = pts.len();
    if count < 3 {
        return out;
    }

    let gaps: Vec<f64> = (0..count - 1)
        .map(|k| (pts[k + 1].pos - pts[k].pos).norm_squared())
        .collect();
    let mut d_gap = vec![0.0; gaps.len()];
    for k in 1..gaps.len() {
        let diff = gaps[k] - gaps[k - 1];
        out.value += diff * diff;
        d_gap[k] += 2.0 * diff;
        d_gap[k - 1] -= 2.0 * diff;
    }
    // Back-propagate through gap -> point positions -> (c, T).
    let mut d_pos = vec![Vector3::zeros(); count];
    for k in 0..gaps.len() {
        let delta = pts[k + 1].pos - pts[k].pos;
        d_pos[k + 1] += d_gap[k] * 2.0 * delta;
        d_pos[k] -= d_gap[k] * 2.0 * delta;
    }
    for (k, pt) in pts.iter().enumerate() {
        let b = basis(pt.rel_time, 0);
        out.d_coeffs[pt.piece] += b * d_pos[k].transpose();
        out.d_durations[pt.piece] += d_pos[k].dot(&pt.vel) * pt.frac;
    }
    out
}

/// Weighted total cost with accumulated gradients in `(c, T)` space, ready
/// for [`crate::minco::MincoTrajectory::propagate_gradient`].
pub fn total_cost(
    traj: &Trajectory,
    ctx: &SwarmContext,
    weights: &CostWeights,
    params: &PenaltyParams,
) -> Result<CostReport, CostError> {
    let m = traj.piece_count();
    let effort = control_effort(traj);
    let time = total_time(traj);
    let obstacle = match ctx.esdf {
        Some(esdf) if weights.obstacle > 0.0 => obstacle_penalty(traj, esdf, params),
        _ => TermGrad::zeros(m),
    };
    let formation_term = if weights.formation > 0.0 {
        formation_penalty(traj, ctx, params)?
    } else {
        TermGrad::zeros(m)
    };
    let reciprocal = if weights.reciprocal > 0.0 && !ctx.neighbors.is_empty() {
        reciprocal_penalty(traj, ctx, params)
    } else {
        TermGrad::zeros(m)
    };
    let feasibility = feasibility_penalty(traj, params);
    let uniformity = uniformity_penalty(traj, params);

    let mut d_coeffs = vec![CoeffMatrix::zeros(); m];
    let mut d_durations = vec![0.0; m];
    let mut total = 0.0;
    for (w, term) in [
        (weights.effort, &effort),
        (weights.time, &time),
        (weights.obstacle, &obstacle),
        (weights.formation, &formation_term),
        (weights.reciprocal, &reciprocal),
        (weights.feasibility, &feasibility),
        (weights.uniformity, &uniformity),
    ] {
        total += w * term.value;
        for i in 0..m {
            d_coeffs[i] += w * term.d_coeffs[i];
            d_durations[i] += w * term.d_durations[i];
        }
    }
    Ok(CostReport {
        effort: effort.value,
        time: time.value,
        obstacle: obstacle.value,
        formation: formation_term.value,
        reciprocal: reciprocal.value,
        feasibility: feasibility.value,
        uniformity: uniformity.value,
        total,
        d_coeffs,
        d_durations,
    })
}
