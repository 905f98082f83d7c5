//! Minimum-jerk piecewise-quintic trajectories parameterized by intermediate
//! waypoints and piece durations.
//!
//! An `M`-piece trajectory is determined by the boundary states at both ends,
//! the `M−1` interior waypoints `q`, and the `M` positive durations `T`. The
//! quintic coefficients solve a banded 6M×6M linear system encoding boundary
//! conditions, waypoint interpolation, and derivative continuity of orders
//! 1..4 at every junction; the solve and the adjoint gradient propagation are
//! linear in `M`.

use nalgebra::{DMatrix, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-piece quintic coefficient matrix: rows are powers `t^0..t^5`, columns
/// the spatial axes.
pub type CoeffMatrix = SMatrix<f64, 6, 3>;

/// Tolerance for the global-time piece lookup at junctions.
const TIME_LOOKUP_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MincoError {
    #[error("piece duration {0} is not positive")]
    NonPositiveDuration(f64),
    #[error("time {t} outside trajectory span [0, {total}]")]
    OutOfRange { t: f64, total: f64 },
    #[error("banded system is numerically singular at column {0}")]
    SingularSystem(usize),
    #[error("boundary states must be finite")]
    NonFiniteBoundary,
}

/// Position, velocity, and acceleration at a trajectory endpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Boundary {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl Boundary {
    pub fn rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.acceleration.iter().all(|v| v.is_finite())
    }
}

/// Basis vector `β^{(order)}(t)` of the quintic monomial basis.
pub fn basis(t: f64, order: usize) -> Vector6<f64> {
    let mut b = Vector6::zeros();
    for k in order..6 {
        let mut coeff = 1.0;
        for d in 0..order {
            coeff *= (k - d) as f64;
        }
        b[k] = coeff * t.powi((k - order) as i32);
    }
    b
}

/// An immutable piecewise-quintic trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    durations: Vec<f64>,
    coeffs: Vec<CoeffMatrix>,
    /// Cumulative start times of each piece plus the total at the end.
    cum: Vec<f64>,
}

impl Trajectory {
    pub fn from_parts(durations: Vec<f64>, coeffs: Vec<CoeffMatrix>) -> Result<Self, MincoError> {
        assert_eq!(durations.len(), coeffs.len());
        for &t in &durations {
            if !(t > 0.0) {
                return Err(MincoError::NonPositiveDuration(t));
            }
        }
        let mut cum = Vec::with_capacity(durations.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for &t in &durations {
            acc += t;
            cum.push(acc);
        }
        Ok(Self {
            durations,
            coeffs,
            cum,
        })
    }

    pub fn piece_count(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn coeffs(&self) -> &[CoeffMatrix] {
        &self.coeffs
    }

    pub fn total_time(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Locate the piece containing global time `t` and return `(piece,
    /// local_time)`. The interval is right-closed at the total time.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), MincoError> {
        let total = self.total_time();
        if t < -TIME_LOOKUP_EPS || t > total + TIME_LOOKUP_EPS {
            return Err(MincoError::OutOfRange { t, total });
        }
        let t = t.clamp(0.0, total);
        let m = self.piece_count();
        // partition_point: first piece whose end time exceeds t.
        let mut i = self.cum[1..].partition_point(|&end| end <= t);
        if i >= m {
            i = m - 1;
        }
        Ok((i, t - self.cum[i]))
    }

    /// Evaluate the `order`-th derivative (0..=3) at global time `t`.
    pub fn evaluate(&self, t: f64, order: usize) -> Result<Vector3<f64>, MincoError> {
        let (piece, local) = self.locate(t)?;
        Ok(self.evaluate_piece(piece, local, order))
    }

    /// Evaluate on a given piece at local time `local`.
    pub fn evaluate_piece(&self, piece: usize, local: f64, order: usize) -> Vector3<f64> {
        let b = basis(local, order);
        self.coeffs[piece].transpose() * b
    }

    /// State at the trajectory end; used for hover extrapolation past the
    /// horizon.
    pub fn terminal_position(&self) -> Vector3<f64> {
        let m = self.piece_count() - 1;
        self.evaluate_piece(m, self.durations[m], 0)
    }

    /// Position and velocity at global time `t`, with constant-position
    /// extrapolation outside the span.
    pub fn state_clamped(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        if t <= 0.0 {
            (self.evaluate_piece(0, 0.0, 0), Vector3::zeros())
        } else if t >= self.total_time() {
            (self.terminal_position(), Vector3::zeros())
        } else {
            let (piece, local) = self.locate(t).unwrap();
            (
                self.evaluate_piece(piece, local, 0),
                self.evaluate_piece(piece, local, 1),
            )
        }
    }
}

/// Sampled states at fixed fractions of each piece.
#[derive(Debug, Clone)]
pub struct ConstraintPoints {
    /// Sample counts per piece.
    pub kappa: Vec<usize>,
    /// `points[i][j]` is the state at relative time `j·T_i/κ_i`, for
    /// `j = 0..=κ_i`.
    pub points: Vec<Vec<SampledState>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SampledState {
    pub rel_time: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
}

/// Sample `κ_i + 1` constraint points per piece, endpoints included.
pub fn sample_constraint_points(traj: &Trajectory, kappa: &[usize]) -> ConstraintPoints {
    assert_eq!(kappa.len(), traj.piece_count());
    let mut points = Vec::with_capacity(kappa.len());
    for (i, &k) in kappa.iter().enumerate() {
        assert!(k >= 2, "need at least two samples per piece");
        let ti = traj.durations()[i];
        let mut piece = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let t = ti * j as f64 / k as f64;
            piece.push(SampledState {
                rel_time: t,
                position: traj.evaluate_piece(i, t, 0),
                velocity: traj.evaluate_piece(i, t, 1),
                acceleration: traj.evaluate_piece(i, t, 2),
                jerk: traj.evaluate_piece(i, t, 3),
            });
        }
        points.push(piece);
    }
    ConstraintPoints {
        kappa: kappa.to_vec(),
        points,
    }
}

/// Banded matrix with an LU factorization using partial pivoting confined to
/// the band. Storage follows the usual band layout with `kl` extra upper
/// diagonals reserved for pivoting fill-in.
struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
    factored: bool,
}

impl BandedLu {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            piv: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    fn factorize(&mut self) -> Result<(), MincoError> {
        let n = self.n;
        for k in 0..n {
            let imax = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in (k + 1)..=imax {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-300 {
                return Err(MincoError::SingularSystem(k));
            }
            self.piv[k] = p;
            let jmax = (k + self.kl + self.ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    self.set(k, j, b);
                    self.set(p, j, a);
                }
            }
            let pivot = self.get(k, k);
            for i in (k + 1)..=imax {
                let l = self.get(i, k) / pivot;
                self.set(i, k, l);
                if l != 0.0 {
                    for j in (k + 1)..=jmax {
                        let v = self.get(i, j) - l * self.get(k, j);
                        self.set(i, j, v);
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `A X = B` in place for a dense right-hand side.
    fn solve_in_place(&self, rhs: &mut DMatrix<f64>) {
        debug_assert!(self.factored);
        let n = self.n;
        let m = rhs.ncols();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                rhs.swap_rows(k, p);
            }
            let imax = (k + self.kl).min(n - 1);
            for i in (k + 1)..=imax {
                let l = self.get(i, k);
                if l != 0.0 {
                    for c in 0..m {
                        rhs[(i, c)] -= l * rhs[(k, c)];
                    }
                }
            }
        }
        for k in (0..n).rev() {
            let pivot = self.get(k, k);
            let jmax = (k + self.kl + self.ku).min(n - 1);
            for c in 0..m {
                let mut v = rhs[(k, c)];
                for j in (k + 1)..=jmax {
                    v -= self.get(k, j) * rhs[(j, c)];
                }
                rhs[(k, c)] = v / pivot;
            }
        }
    }
}

/// A constructed minimum-jerk trajectory together with the cached
/// factorizations needed for gradient propagation.
pub struct MincoTrajectory {
    traj: Trajectory,
    waypoints: Vec<Vector3<f64>>,
    lu: BandedLu,
    lu_t: BandedLu,
}

/// Band widths of the 6M×6M construction system.
const BAND: usize = 8;

/// Construct the minimum-jerk trajectory through `waypoints` with the given
/// piece `durations` and boundary states.
pub fn construct(
    waypoints: &[Vector3<f64>],
    durations: &[f64],
    start: &Boundary,
    end: &Boundary,
) -> Result<MincoTrajectory, MincoError> {
    let m = durations.len();
    assert!(m >= 1, "need at least one piece");
    assert_eq!(waypoints.len(), m - 1, "waypoint count must be M-1");
    if !start.is_finite() || !end.is_finite() {
        return Err(MincoError::NonFiniteBoundary);
    }
    for &t in durations {
        if !(t > 0.0) || !t.is_finite() {
            return Err(MincoError::NonPositiveDuration(t));
        }
    }

    let n = 6 * m;
    let mut a = BandedLu::new(n, BAND, BAND);
    let mut b = DMatrix::zeros(n, 3);

    let put_row = |a: &mut BandedLu, row: usize, piece: usize, vec: &Vector6<f64>, sign: f64| {
        for k in 0..6 {
            if vec[k] != 0.0 {
                let col = 6 * piece + k;
                let old = a.get(row, col);
                a.set(row, col, old + sign * vec[k]);
            }
        }
    };

    // Start boundary: position, velocity, acceleration of piece 0 at t = 0.
    for order in 0..3 {
        put_row(&mut a, order, 0, &basis(0.0, order), 1.0);
    }
    b.row_mut(0).copy_from(&start.position.transpose());
    b.row_mut(1).copy_from(&start.velocity.transpose());
    b.row_mut(2).copy_from(&start.acceleration.transpose());

    // Junctions: waypoint interpolation plus C^0..C^4 continuity.
    for i in 0..m.saturating_sub(1) {
        let base = 3 + 6 * i;
        let ti = durations[i];
        put_row(&mut a, base, i, &basis(ti, 0), 1.0);
        b.row_mut(base).copy_from(&waypoints[i].transpose());
        for order in 0..5 {
            let row = base + 1 + order;
            put_row(&mut a, row, i, &basis(ti, order), 1.0);
            put_row(&mut a, row, i + 1, &basis(0.0, order), -1.0);
        }
    }

    // End boundary on the last piece.
    let base = n - 3;
    let tm = durations[m - 1];
    for order in 0..3 {
        put_row(&mut a, base + order, m - 1, &basis(tm, order), 1.0);
    }
    b.row_mut(base).copy_from(&end.position.transpose());
    b.row_mut(base + 1).copy_from(&end.velocity.transpose());
    b.row_mut(base + 2).copy_from(&end.acceleration.transpose());

    // Factor A and Aᵀ; the transpose is needed for the adjoint solve.
    let mut a_t = BandedLu::new(n, BAND, BAND);
    for i in 0..n {
        let jmin = i.saturating_sub(BAND);
        let jmax = (i + BAND).min(n - 1);
        for j in jmin..=jmax {
            a_t.set(j, i, a.get(i, j));
        }
    }
    a.factorize()?;
    a_t.factorize()?;
    a.solve_in_place(&mut b);

    let coeffs: Vec<CoeffMatrix> = (0..m)
        .map(|p| {
            let mut c = CoeffMatrix::zeros();
            for r in 0..6 {
                for axis in 0..3 {
                    c[(r, axis)] = b[(6 * p + r, axis)];
                }
            }
            c
        })
        .collect();

    Ok(MincoTrajectory {
        traj: Trajectory::from_parts(durations.to_vec(), coeffs)?,
        waypoints: waypoints.to_vec(),
        lu: a,
        lu_t: a_t,
    })
}

impl MincoTrajectory {
    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    pub fn waypoints(&self) -> &[Vector3<f64>] {
        &self.waypoints
    }

    /// Re-solve the construction system for a perturbed right-hand side;
    /// used by tests.
    #[doc(hidden)]
    pub fn solve_rhs(&self, rhs: &mut DMatrix<f64>) {
        self.lu.solve_in_place(rhs);
    }

    /// Back-propagate cost gradients from coefficient space to waypoint and
    /// duration space.
    ///
    /// Given `∂J/∂c` per piece and the explicit part of `∂J/∂T`, solve the
    /// adjoint system `Aᵀ G = ∂J/∂c` and assemble `∂J/∂q` from the waypoint
    /// rows of `G` and `∂J/∂T_i = ∂J/∂T_i|explicit − Gᵀ (∂A/∂T_i) c`.
    pub fn propagate_gradient(
        &self,
        d_coeffs: &[CoeffMatrix],
        d_durations_partial: &[f64],
    ) -> (Vec<Vector3<f64>>, Vec<f64>) {
        let m = self.traj.piece_count();
        assert_eq!(d_coeffs.len(), m);
        assert_eq!(d_durations_partial.len(), m);
        let n = 6 * m;

        let mut g = DMatrix::zeros(n, 3);
        for p in 0..m {
            for r in 0..6 {
                for axis in 0..3 {
                    g[(6 * p + r, axis)] = d_coeffs[p][(r, axis)];
                }
            }
        }
        self.lu_t.solve_in_place(&mut g);

        let grow = |row: usize| Vector3::new(g[(row, 0)], g[(row, 1)], g[(row, 2)]);

        let mut d_q = Vec::with_capacity(m.saturating_sub(1));
        for i in 0..m.saturating_sub(1) {
            d_q.push(grow(3 + 6 * i));
        }

        let coeffs = self.traj.coeffs();
        let durations = self.traj.durations();
        let mut d_t = d_durations_partial.to_vec();
        for p in 0..m {
            let tp = durations[p];
            let cp = &coeffs[p];
            if p + 1 < m {
                let base = 3 + 6 * p;
                // Waypoint row differentiates to the end-of-piece velocity.
                let deriv: Vector3<f64> = cp.transpose() * basis(tp, 1);
                d_t[p] -= grow(base).dot(&deriv);
                for order in 0..5 {
                    let deriv: Vector3<f64> = cp.transpose() * basis(tp, order + 1);
                    d_t[p] -= grow(base + 1 + order).dot(&deriv);
                }
            } else {
                let base = n - 3;
                for order in 0..3 {
                    let deriv: Vector3<f64> = cp.transpose() * basis(tp, order + 1);
                    d_t[p] -= grow(base + order).dot(&deriv);
                }
            }
        }
        (d_q, d_t)
    }
}

/// Serialized trajectory record for the broadcast bus and logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub agent: usize,
    /// Global start time of the trajectory, seconds.
    pub stamp: f64,
    pub start: Boundary,
    pub end: Boundary,
    pub waypoints: Vec<Vector3<f64>>,
    pub durations: Vec<f64>,
    pub coeffs: Vec<CoeffMatrix>,
}

impl TrajectoryRecord {
    pub fn from_minco(agent: usize, stamp: f64, minco: &MincoTrajectory) -> Self {
        let traj = minco.trajectory();
        let m = traj.piece_count();
        let b = |piece: usize, t: f64| Boundary {
            position: traj.evaluate_piece(piece, t, 0),
            velocity: traj.evaluate_piece(piece, t, 1),
            acceleration: traj.evaluate_piece(piece, t, 2),
        };
        Self {
            agent,
            stamp,
            start: b(0, 0.0),
            end: b(m - 1, traj.durations()[m - 1]),
            waypoints: minco.waypoints().to_vec(),
            durations: traj.durations().to_vec(),
            coeffs: traj.coeffs().to_vec(),
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory, MincoError> {
        Trajectory::from_parts(self.durations.clone(), self.coeffs.clone())
    }
}
