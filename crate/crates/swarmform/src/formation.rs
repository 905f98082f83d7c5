//! Formation graphs and the normalized-Laplacian similarity metric.
//!
//! A formation of `N` agents is modeled as a complete weighted graph whose
//! edge weights are squared inter-agent distances. The symmetric normalized
//! Laplacian of that graph is invariant to translation, rotation, and uniform
//! scaling of the agent positions, so the squared Frobenius distance between
//! the current and desired normalized Laplacians measures shape difference
//! only. The metric is smooth and its gradient with respect to every agent
//! position is available in closed form.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Degrees below this threshold (in m²) are degenerate: the vertex is
/// coincident with every other vertex and `D^{-1/2}` is undefined.
pub const DEGENERATE_DEGREE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FormationError {
    #[error("vertex {0} has near-zero degree (agent coincides with all others)")]
    DegenerateDegree(usize),
    #[error("non-finite position for agent {0}")]
    NonFinite(usize),
    #[error("agent count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("a formation needs at least two agents, got {0}")]
    TooFewAgents(usize),
}

/// Complete weighted graph over agent positions.
#[derive(Debug, Clone)]
pub struct FormationGraph {
    /// Squared-distance edge weights with zero diagonal. For a complete
    /// graph this is also the weighted adjacency matrix.
    pub weights: DMatrix<f64>,
    /// Vertex degrees `D_ii = Σ_j w_ij`.
    pub degrees: Vec<f64>,
    /// `L̂ = I − D^{-1/2} W D^{-1/2}`.
    pub normalized_laplacian: DMatrix<f64>,
}

impl FormationGraph {
    pub fn agent_count(&self) -> usize {
        self.degrees.len()
    }

    /// Unnormalized Laplacian `L = D − A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.agent_count();
        let mut l = -self.weights.clone();
        for i in 0..n {
            l[(i, i)] = self.degrees[i];
        }
        l
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.degrees.clone()))
    }
}

/// Desired formation shape: reference positions plus their precomputed
/// normalized Laplacian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormationSpec {
    pub desired_positions: Vec<Vector3<f64>>,
    #[serde(skip, default)]
    desired_laplacian: Option<DMatrix<f64>>,
}

impl FormationSpec {
    pub fn new(desired_positions: Vec<Vector3<f64>>) -> Result<Self, FormationError> {
        let graph = build_graph(&desired_positions)?;
        Ok(Self {
            desired_positions,
            desired_laplacian: Some(graph.normalized_laplacian),
        })
    }

    pub fn agent_count(&self) -> usize {
        self.desired_positions.len()
    }

    /// Desired normalized Laplacian, computed lazily after deserialization.
    pub fn desired_laplacian(&self) -> DMatrix<f64> {
        match &self.desired_laplacian {
            Some(l) => l.clone(),
            None => {
                build_graph(&self.desired_positions)
                    .expect("formation spec positions must be non-degenerate")
                    .normalized_laplacian
            }
        }
    }

    /// Re-derive the cached Laplacian (call after deserialization to avoid
    /// recomputation on every query).
    pub fn rebuild_cache(&mut self) -> Result<(), FormationError> {
        self.desired_laplacian = Some(build_graph(&self.desired_positions)?.normalized_laplacian);
        Ok(())
    }
}

fn check_positions(positions: &[Vector3<f64>]) -> Result<(), FormationError> {
    if positions.len() < 2 {
        return Err(FormationError::TooFewAgents(positions.len()));
    }
    for (i, p) in positions.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(FormationError::NonFinite(i));
        }
    }
    Ok(())
}

/// Build the complete weighted graph over `positions`.
pub fn build_graph(positions: &[Vector3<f64>]) -> Result<FormationGraph, FormationError> {
    check_positions(positions)?;
    let n = positions.len();
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = (positions[i] - positions[j]).norm_squared();
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }
    let degrees: Vec<f64> = (0..n).map(|i| weights.row(i).sum()).collect();
    for (i, &d) in degrees.iter().enumerate() {
        if d < DEGENERATE_DEGREE_EPS {
            return Err(FormationError::DegenerateDegree(i));
        }
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut lap = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lap[(i, j)] = -weights[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    Ok(FormationGraph {
        weights,
        degrees,
        normalized_laplacian: lap,
    })
}

fn check_match(current: &[Vector3<f64>], spec: &FormationSpec) -> Result<(), FormationError> {
    if current.len() != spec.agent_count() {
        return Err(FormationError::DimensionMismatch {
            expected: spec.agent_count(),
            got: current.len(),
        });
    }
    Ok(())
}

/// Similarity distance `f = ‖L̂ − L̂_des‖²_F` between the current
/// configuration and the desired shape.
pub fn similarity(current: &[Vector3<f64>], spec: &FormationSpec) -> Result<f64, FormationError> {
    check_match(current, spec)?;
    let graph = build_graph(current)?;
    let diff = graph.normalized_laplacian - spec.desired_laplacian();
    Ok(diff.norm_squared())
}

/// Similarity value together with its gradient with respect to every agent
/// position.
///
/// The chain runs through the edge weights: `∂f/∂p_i = Σ_j g_ij · 2(p_i −
/// p_j)` where `g_ij = ∂f/∂w_ij` accounts for the adjacency entry and for
/// both affected degrees inside `D^{-1/2}`.
pub fn similarity_gradients(
    current: &[Vector3<f64>],
    spec: &FormationSpec,
) -> Result<(f64, Vec<Vector3<f64>>), FormationError> {
    check_match(current, spec)?;
    let graph = build_graph(current)?;
    let n = current.len();
    let lap = &graph.normalized_laplacian;
    let diff = lap - spec.desired_laplacian();
    let f = diff.norm_squared();

    let inv_sqrt: Vec<f64> = graph.degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    // h_a = (1/D_a) Σ_{b≠a} E_ab w_ab S_a S_b, the degree-coupling term of
    // ∂f/∂w_ij shared by every edge incident to vertex a.
    let mut h = vec![0.0; n];
    for a in 0..n {
        let mut acc = 0.0;
        for b in 0..n {
            if b != a {
                acc += diff[(a, b)] * graph.weights[(a, b)] * inv_sqrt[a] * inv_sqrt[b];
            }
        }
        h[a] = acc / graph.degrees[a];
    }

    let mut grads = vec![Vector3::zeros(); n];
    for i in 0..n {
        let mut g = Vector3::zeros();
        for j in 0..n {
            if j == i {
                continue;
            }
            let df_dw = -4.0 * diff[(i, j)] * inv_sqrt[i] * inv_sqrt[j] + 2.0 * (h[i] + h[j]);
            g += df_dw * 2.0 * (current[i] - current[j]);
        }
        grads[i] = g;
    }
    Ok((f, grads))
}

/// Gradient of the similarity metric with respect to a single agent.
pub fn similarity_gradient(
    current: &[Vector3<f64>],
    spec: &FormationSpec,
    agent: usize,
) -> Result<Vector3<f64>, FormationError> {
    let (_, grads) = similarity_gradients(current, spec)?;
    Ok(grads[agent])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ]
    }

    fn random_positions(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0))
            .collect()
    }

    /// Independent finite-difference oracle for ∂f/∂p_i.
    pub(crate) fn fd_gradient(
        positions: &[Vector3<f64>],
        spec: &FormationSpec,
        agent: usize,
        step: f64,
    ) -> Vector3<f64> {
        let mut g = Vector3::zeros();
        for axis in 0..3 {
            let mut plus = positions.to_vec();
            let mut minus = positions.to_vec();
            plus[agent][axis] += step;
            minus[agent][axis] -= step;
            g[axis] = (similarity(&plus, spec).unwrap() - similarity(&minus, spec).unwrap())
                / (2.0 * step);
        }
        g
    }

    #[test]
    fn unit_square_laplacian_structure() {
        // Side weights 1, diagonal weights 2, every degree 1 + 1 + 2 = 4.
        let graph = build_graph(&unit_square()).unwrap();
        let lap = &graph.normalized_laplacian;
        for i in 0..4 {
            assert_relative_eq!(lap[(i, i)], 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(lap[(0, 1)], -0.25, epsilon = 1e-12);
        assert_relative_eq!(lap[(1, 2)], -0.25, epsilon = 1e-12);
        assert_relative_eq!(lap[(0, 2)], -0.5, epsilon = 1e-12);
        assert_relative_eq!(lap[(1, 3)], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn equilateral_triangle_scale_free() {
        for s in [0.5, 1.0, 7.3] {
            let h = s * 3.0_f64.sqrt() / 2.0;
            let tri = vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(s, 0.0, 0.0),
                Vector3::new(s / 2.0, h, 0.0),
            ];
            let lap = build_graph(&tri).unwrap().normalized_laplacian;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        assert_relative_eq!(lap[(i, j)], -0.5, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn coincident_pair_is_degenerate() {
        let p = vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(1.0, 2.0, 3.0)];
        assert!(matches!(
            build_graph(&p),
            Err(FormationError::DegenerateDegree(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let p = vec![Vector3::new(f64::NAN, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        assert!(matches!(build_graph(&p), Err(FormationError::NonFinite(0))));
    }

    #[test]
    fn similarity_zero_at_desired() {
        let spec = FormationSpec::new(unit_square()).unwrap();
        assert_relative_eq!(similarity(&unit_square(), &spec).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn similarity_invariant_under_sim3() {
        let spec = FormationSpec::new(unit_square()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let axis =
                nalgebra::Unit::new_normalize(Vector3::new(rng.gen(), rng.gen(), rng.gen()));
            let rot = nalgebra::Rotation3::from_axis_angle(&axis, rng.gen::<f64>() * 6.0);
            let t = Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 10.0;
            let s = 0.1 + rng.gen::<f64>() * 5.0;
            let moved: Vec<_> = unit_square().iter().map(|p| s * (rot * p) + t).collect();
            assert!(similarity(&moved, &spec).unwrap() < 1e-9);
        }
    }

    #[test]
    fn square_vs_collinear_positive() {
        let spec = FormationSpec::new(unit_square()).unwrap();
        let line: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let f = similarity(&line, &spec).unwrap();
        // Independent brute-force evaluation of the metric matrices.
        let lap_line = build_graph(&line).unwrap().normalized_laplacian;
        let expect = (lap_line - spec.desired_laplacian()).norm_squared();
        assert!(f > 0.1);
        assert_relative_eq!(f, expect, epsilon = 1e-14);
    }

    #[test]
    fn gradient_zero_at_minimum() {
        let spec = FormationSpec::new(unit_square()).unwrap();
        let (f, grads) = similarity_gradients(&unit_square(), &spec).unwrap();
        assert!(f < 1e-12);
        for g in grads {
            assert!(g.norm() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..120 {
            let n = 3 + trial % 6;
            let desired = random_positions(&mut rng, n);
            let current = random_positions(&mut rng, n);
            let spec = match FormationSpec::new(desired) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let (_, grads) = similarity_gradients(&current, &spec).unwrap();
            for i in 0..n {
                let fd = fd_gradient(&current, &spec, i, 1e-6);
                let denom = fd.norm().max(1e-6);
                assert!(
                    (grads[i] - fd).norm() / denom < 1e-5,
                    "trial {trial} agent {i}: analytic {:?} fd {:?}",
                    grads[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn displaced_vertex_gradient_on_symmetry_axis() {
        // Move vertex 0 of the square along its diagonal (the symmetry axis
        // through vertices 0 and 2); the gradient must stay on that axis.
        let spec = FormationSpec::new(unit_square()).unwrap();
        let mut current = unit_square();
        let axis = Vector3::new(1.0, 1.0, 0.0).normalize();
        current[0] -= 0.2 * axis;
        let g = similarity_gradient(&current, &spec, 0).unwrap();
        let off_axis = g - g.dot(&axis) * axis;
        assert!(off_axis.norm() < 1e-10 * g.norm().max(1.0));
    }

    #[test]
    fn permutation_sensitive() {
        // Vertex identities are fixed: swapping two non-symmetric agents
        // changes the metric.
        let desired = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(3.0, 0.5, 0.0),
            Vector3::new(0.0, 2.0, 1.0),
        ];
        let spec = FormationSpec::new(desired.clone()).unwrap();
        let mut swapped = desired;
        swapped.swap(0, 2);
        assert!(similarity(&swapped, &spec).unwrap() > 1e-3);
    }
}
