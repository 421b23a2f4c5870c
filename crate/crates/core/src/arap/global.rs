//! Global step: positions from fixed rotations under hard constraints.

use nalgebra::{Matrix3, Vector3};

use super::sparse::{FactorError, SpdFactor};
use super::SolveError;
use crate::neighborhood::DeformGraph;

/// Reduced Laplacian over the free nodes, factored once per graph.
///
/// The system is the stationarity condition of the ARAP energy in `p'`:
/// `sum_j c_ij (p'_i - p'_j) = sum_j w_ij/2 (w_i R_i + w_j R_j)(p_i - p_j)`
/// with `c_ij = w_ij (w_i + w_j) / 2`. For unit cell weights this is the
/// classic `sum_j w_ij (p'_i - p'_j) = sum_j w_ij/2 (R_i + R_j)(p_i - p_j)`.
/// Constrained nodes are eliminated and moved to the right-hand side.
#[derive(Debug)]
pub struct GlobalSystem {
    /// Compact index of each node among the free nodes, `None` if constrained.
    free_index: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
    factor: SpdFactor,
}

fn coupling(graph: &DeformGraph, i: usize, k: usize) -> f64 {
    let j = graph.neighbors[i][k];
    graph.edge_weights[i][k] * 0.5 * (graph.cell_weights[i] + graph.cell_weights[j])
}

impl GlobalSystem {
    pub fn new(graph: &DeformGraph) -> Result<Self, SolveError> {
        for component in graph.components() {
            if !component.iter().any(|n| graph.is_constrained(*n)) {
                return Err(SolveError::UnconstrainedComponent {
                    lowest_node: component[0],
                    size: component.len(),
                });
            }
        }
        let mut free_index = vec![None; graph.len()];
        let mut free_nodes = Vec::new();
        for node in 0..graph.len() {
            if !graph.is_constrained(node) {
                free_index[node] = Some(free_nodes.len());
                free_nodes.push(node);
            }
        }
        let lower = Self::lower_entries(graph, &free_index, &free_nodes, None);
        let factor = match SpdFactor::new(free_nodes.len(), &lower) {
            Ok(f) => f,
            Err(err) => return Err(Self::diagnose(graph, &free_nodes, err)),
        };
        Ok(Self {
            free_index,
            free_nodes,
            factor,
        })
    }

    fn lower_entries(
        graph: &DeformGraph,
        free_index: &[Option<usize>],
        free_nodes: &[usize],
        only: Option<&[bool]>,
    ) -> Vec<(usize, usize, f64)> {
        let mut lower = Vec::new();
        for (row, &i) in free_nodes.iter().enumerate() {
            if only.is_some_and(|mask| !mask[i]) {
                continue;
            }
            let mut diag = 0.0;
            for k in 0..graph.neighbors[i].len() {
                let c = coupling(graph, i, k);
                diag += c;
                if let Some(col) = free_index[graph.neighbors[i][k]] {
                    if col < row {
                        lower.push((row, col, -c));
                    }
                }
            }
            lower.push((row, row, diag));
        }
        lower
    }

    /// Refactors component by component to name the one that breaks.
    fn diagnose(graph: &DeformGraph, free_nodes: &[usize], err: FactorError) -> SolveError {
        for component in graph.components() {
            let mut mask = vec![false; graph.len()];
            component.iter().for_each(|&n| mask[n] = true);
            let local_nodes: Vec<usize> = free_nodes.iter().copied().filter(|&n| mask[n]).collect();
            let mut local_index = vec![None; graph.len()];
            for (k, &n) in local_nodes.iter().enumerate() {
                local_index[n] = Some(k);
            }
            let lower = Self::lower_entries(graph, &local_index, &local_nodes, Some(&mask));
            if SpdFactor::new(local_nodes.len(), &lower).is_err() {
                return SolveError::Singular {
                    lowest_node: component[0],
                    reason: err.to_string(),
                };
            }
        }
        SolveError::Singular {
            lowest_node: usize::MAX,
            reason: err.to_string(),
        }
    }

    pub fn free_count(&self) -> usize {
        self.free_nodes.len()
    }

    /// New deformed positions for the given rotations. Constrained nodes are
    /// copied from their targets bit for bit.
    pub fn solve(&self, graph: &DeformGraph, rotations: &[Matrix3<f64>]) -> Vec<Vector3<f64>> {
        let p = &graph.positions;
        let m = self.free_nodes.len();
        let mut rhs = vec![0.0f64; 3 * m];
        for (row, &i) in self.free_nodes.iter().enumerate() {
            let mut b = Vector3::zeros();
            for k in 0..graph.neighbors[i].len() {
                let j = graph.neighbors[i][k];
                let w = graph.edge_weights[i][k];
                let rot = graph.cell_weights[i] * rotations[i] + graph.cell_weights[j] * rotations[j];
                b += 0.5 * w * (rot * (p[i] - p[j]));
                if self.free_index[j].is_none() {
                    b += coupling(graph, i, k) * graph.constraints[&j];
                }
            }
            for axis in 0..3 {
                rhs[axis * m + row] = b[axis];
            }
        }
        self.factor.solve_in_place(&mut rhs, 3);

        let mut out = vec![Vector3::zeros(); graph.len()];
        for (row, &i) in self.free_nodes.iter().enumerate() {
            out[i] = Vector3::new(rhs[row], rhs[m + row], rhs[2 * m + row]);
        }
        for (&node, target) in &graph.constraints {
            out[node] = *target;
        }
        out
    }
}

/// One-shot global solve; builds and factors the system each call.
pub fn solve_positions(graph: &DeformGraph, rotations: &[Matrix3<f64>]) -> Result<Vec<Vector3<f64>>, SolveError> {
    Ok(GlobalSystem::new(graph)?.solve(graph, rotations))
}
