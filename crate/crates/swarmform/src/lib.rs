//! Formation-preserving, collision-free trajectory optimization for
//! decentralized swarms.
//!
//! The library plans piecewise-quintic spatial-temporal trajectories for a
//! multi-agent swarm by minimizing a joint differentiable cost: control
//! effort, total time, obstacle clearance (via a signed distance field),
//! graph-Laplacian formation similarity, reciprocal inter-agent clearance,
//! dynamic feasibility, and constraint-point uniformity. A deterministic
//! discrete-time simulator, a benchmark harness, and a CLI are included.
//!
//! Module map:
//! - [`formation`]: weighted complete graphs, normalized Laplacians, the
//!   similarity metric `f` and its analytic gradient.
//! - [`minco`]: minimum-jerk quintic splines parameterized by waypoints and
//!   piece durations, with adjoint gradient propagation.
//! - [`grid`]: voxel occupancy maps, Euclidean signed distance fields, and
//!   trilinear distance/gradient queries.
//! - [`cost`]: the seven-term objective and its gradients in coefficient and
//!   duration space.
//! - [`lbfgs`]: limited-memory quasi-Newton minimizer with a weak Wolfe line
//!   search.
//! - [`planner`]: per-agent receding-horizon planner.
//! - [`sim`]: deterministic swarm simulation with a broadcast trajectory bus.
//! - [`eval`]: Sim(3)-aligned position error, similarity error, scenario
//!   generation, and sweep aggregation.

pub mod config;
pub mod cost;
pub mod eval;
pub mod formation;
pub mod gradcheck;
pub mod grid;
pub mod lbfgs;
pub mod minco;
pub mod planner;
pub mod sim;
