//! Limited-memory quasi-Newton minimizer for smooth unconstrained problems.
//!
//! Two-loop recursion over a bounded history of curvature pairs, with a weak
//! Wolfe line search (bracketing + bisection). Returns the best iterate seen,
//! so the reported final value never exceeds the initial one.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("objective returned a non-finite value at the initial point")]
    NonFiniteCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    /// Step or decrease fell below machine-scale progress.
    Stalled,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsParams {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Relative gradient tolerance: stop when `‖g‖ ≤ tol·max(1, ‖x‖)`.
    pub grad_tolerance: f64,
    /// Armijo parameter of the weak Wolfe conditions.
    pub c1: f64,
    /// Curvature parameter of the weak Wolfe conditions.
    pub c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 16,
            max_iterations: 60,
            grad_tolerance: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_steps: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimize `f`, which writes the gradient into its second argument and
/// returns the objective value.
pub fn minimize<F>(mut f: F, x0: &[f64], params: &LbfgsParams) -> Result<LbfgsResult, SolverError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad);
    let mut evaluations = 1;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SolverError::NonFiniteCost);
    }

    let mut best_x = x.clone();
    let mut best_value = value;

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut reason = StopReason::MaxIterations;
    let mut iterations = 0;

    for iter in 0..params.max_iterations {
        iterations = iter + 1;
        let gnorm = norm(&grad);
        if gnorm <= params.grad_tolerance * norm(&x).max(1.0) {
            reason = StopReason::GradientTolerance;
            iterations = iter;
            break;
        }

        // Two-loop recursion.
        let mut direction = grad.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &direction);
            for j in 0..n {
                direction[j] -= alpha[i] * y_hist[i][j];
            }
        }
        if k > 0 {
            let last = k - 1;
            let scale = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            if scale.is_finite() && scale > 0.0 {
                for d in direction.iter_mut() {
                    *d *= scale;
                }
            }
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &direction);
            for j in 0..n {
                direction[j] += (alpha[i] - beta) * s_hist[i][j];
            }
        }
        for d in direction.iter_mut() {
            *d = -*d;
        }

        let mut dg = dot(&direction, &grad);
        if dg >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for j in 0..n {
                direction[j] = -grad[j];
            }
            dg = -dot(&grad, &grad);
        }

        // Weak Wolfe line search via bracketing and bisection.
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut step = if iter == 0 {
            (1.0 / norm(&direction).max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let mut trial_x = vec![0.0; n];
        let mut trial_grad = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..params.max_line_search_steps {
            for j in 0..n {
                trial_x[j] = x[j] + step * direction[j];
            }
            let trial_value = f(&trial_x, &mut trial_grad);
            evaluations += 1;
            let finite = trial_value.is_finite() && trial_grad.iter().all(|g| g.is_finite());
            if !finite || trial_value > value + params.c1 * step * dg {
                hi = step;
            } else if dot(&trial_grad, &direction) < params.c2 * dg {
                lo = step;
            } else {
                accepted = true;
            }
            if accepted {
                let s: Vec<f64> = (0..n).map(|j| trial_x[j] - x[j]).collect();
                let y: Vec<f64> = (0..n).map(|j| trial_grad[j] - grad[j]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    if s_hist.len() == params.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    rho_hist.push(1.0 / sy);
                    s_hist.push(s);
                    y_hist.push(y);
                }
                x.copy_from_slice(&trial_x);
                grad.copy_from_slice(&trial_grad);
                value = trial_value;
                if value < best_value {
                    best_value = value;
                    best_x.copy_from_slice(&x);
                }
                break;
            }
            step = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * step
            };
            if hi.is_finite() && (hi - lo) < 1e-16 * hi.max(1.0) {
                break;
            }
        }
        if !accepted {
            reason = StopReason::LineSearchFailed;
            break;
        }
        if (value - best_value).abs() < f64::EPSILON && norm(&grad) < 1e-14 {
            reason = StopReason::Stalled;
            break;
        }
    }

    let gradient_norm = norm(&grad);
    Ok(LbfgsResult {
        x: best_x,
        value: best_value,
        gradient_norm,
        iterations,
        evaluations,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                let w = (i + 1) as f64;
                v += w * x[i] * x[i];
                g[i] = 2.0 * w * x[i];
            }
            v
        };
        let params = LbfgsParams {
            max_iterations: 200,
            grad_tolerance: 1e-10,
            ..Default::default()
        };
        let res = minimize(f, &[3.0, -2.0, 5.0, 1.0], &params).unwrap();
        assert!(res.value < 1e-14, "value {}", res.value);
        assert_eq!(res.reason, StopReason::GradientTolerance);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -400.0 * a * (b - a * a) - 2.0 * (1.0 - a);
            g[1] = 200.0 * (b - a * a);
            100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
        };
        let params = LbfgsParams {
            max_iterations: 500,
            grad_tolerance: 1e-9,
            ..Default::default()
        };
        let res = minimize(f, &[-1.2, 1.0], &params).unwrap();
        assert_relative_eq!(res.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(res.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn never_worse_than_start() {
        // Noisy-ish nonconvex function: the returned best iterate must not
        // exceed the initial value even if the search struggles.
        let f = |x: &[f64], g: &mut [f64]| {
            let v = x[0].sin() * 5.0 + x[0] * x[0] * 0.1;
            g[0] = x[0].cos() * 5.0 + 0.2 * x[0];
            v
        };
        let start = [2.0];
        let mut g0 = [0.0];
        let v0 = f(&start, &mut g0);
        let res = minimize(f, &start, &LbfgsParams::default()).unwrap();
        assert!(res.value <= v0);
    }

    #[test]
    fn non_finite_initial_point_rejected() {
        let f = |_: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        };
        assert!(matches!(
            minimize(f, &[0.0], &LbfgsParams::default()),
            Err(SolverError::NonFiniteCost)
        ));
    }
}
