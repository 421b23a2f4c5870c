//! As-rigid-as-possible solver over a [`DeformGraph`].
//!
//! Alternates a per-node rotation fit (local step) with a sparse linear
//! solve for positions (global step). Each half-step exactly minimizes the
//! energy in its own block of variables, so the energy never increases.
//! The system matrix does not depend on the rotations: it is factored once
//! and only the right-hand sides change between iterations.

mod global;
mod local;
pub mod sparse;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use global::{solve_positions, GlobalSystem};
pub use local::{closest_rotation, edge_covariance, fit_rotations};

use crate::neighborhood::{DeformGraph, WeightMode};

pub const DEFAULT_MAX_ITERS: usize = 16;
pub const DEFAULT_REL_ENERGY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("graph component of {size} nodes starting at node {lowest_node} has no constraint")]
    UnconstrainedComponent { lowest_node: usize, size: usize },
    #[error("reduced system is singular in the component containing node {lowest_node}: {reason}")]
    Singular { lowest_node: usize, reason: String },
    #[error("max_iters must be at least 1")]
    ZeroIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArapConfig {
    pub max_iters: usize,
    /// Stop once `(E_prev - E) / E_prev` drops below this.
    pub rel_energy_tol: f64,
    pub weight_mode: WeightMode,
}

impl Default for ArapConfig {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            rel_energy_tol: DEFAULT_REL_ENERGY_TOL,
            weight_mode: WeightMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArapState {
    pub positions: Vec<Vector3<f64>>,
    pub deformed: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
    pub energy: f64,
    pub iterations: usize,
    /// Energy at initialization followed by the energy after each iteration.
    pub energy_trace: Vec<f64>,
}

/// `sum_i w_i sum_{j in N(i)} w_ij |(p'_i - p'_j) - R_i (p_i - p_j)|^2`.
pub fn energy(graph: &DeformGraph, p: &[Vector3<f64>], p_prime: &[Vector3<f64>], rotations: &[Matrix3<f64>]) -> f64 {
    (0..graph.len())
        .map(|i| {
            let inner: f64 = graph.neighbors[i]
                .iter()
                .zip(&graph.edge_weights[i])
                .map(|(&j, &w)| w * ((p_prime[i] - p_prime[j]) - rotations[i] * (p[i] - p[j])).norm_squared())
                .sum();
            graph.cell_weights[i] * inner
        })
        .sum()
}

/// Runs local/global iterations from `p' = p` (constrained nodes clamped to
/// their targets) and `R = I`. A start that already has zero energy is returned
/// as is.
pub fn arap_solve(graph: &DeformGraph, config: &ArapConfig) -> Result<ArapState, SolveError> {
    arap_solve_with_progress(graph, config, |_, _| {})
}

/// Like [`arap_solve`], reporting `(iteration, energy)` after every iteration.
pub fn arap_solve_with_progress(
    graph: &DeformGraph,
    config: &ArapConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<ArapState, SolveError> {
    if config.max_iters == 0 {
        return Err(SolveError::ZeroIterations);
    }
    let system = GlobalSystem::new(graph)?;
    let p = graph.positions.clone();
    let mut p_prime = p.clone();
    for (&node, target) in &graph.constraints {
        p_prime[node] = *target;
    }
    let mut rotations = vec![Matrix3::identity(); graph.len()];
    let mut current = energy(graph, &p, &p_prime, &rotations);
    let mut trace = vec![current];
    let mut iterations = 0;
    while iterations < config.max_iters && current > 0.0 {
        rotations = fit_rotations(graph, &p, &p_prime);
        p_prime = system.solve(graph, &rotations);
        let next = energy(graph, &p, &p_prime, &rotations);
        iterations += 1;
        trace.push(next);
        progress(iterations, next);
        let decrease = current - next;
        let converged = next == 0.0 || decrease <= config.rel_energy_tol * current;
        current = next;
        if converged {
            break;
        }
    }
    Ok(ArapState {
        positions: p,
        deformed: p_prime,
        rotations,
        energy: current,
        iterations,
        energy_trace: trace,
    })
}
