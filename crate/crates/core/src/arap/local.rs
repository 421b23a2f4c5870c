//! Local step: best-fit rotation per node.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::neighborhood::DeformGraph;

/// Weighted edge covariance `S_i = sum_j w_ij (p_i - p_j)(p'_i - p'_j)^T`.
pub fn edge_covariance(graph: &DeformGraph, p: &[Vector3<f64>], p_prime: &[Vector3<f64>], node: usize) -> Matrix3<f64> {
    let mut s = Matrix3::zeros();
    for (&j, &w) in graph.neighbors[node].iter().zip(&graph.edge_weights[node]) {
        let e = p[node] - p[j];
        let e_prime = p_prime[node] - p_prime[j];
        s += w * e * e_prime.transpose();
    }
    s
}

/// Proper rotation `R` maximizing `tr(R S)`, i.e. the rotation that best maps
/// the undeformed edges onto the deformed ones.
///
/// With `S = U Σ V^T`, `R = V U^T`; when that is a reflection the column of
/// `V` paired with the smallest singular value is negated.
pub fn closest_rotation(s: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = s.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v_t").transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let smallest = svd.singular_values.imin();
        let mut v = v;
        v.column_mut(smallest).neg_mut();
        r = v * u.transpose();
    }
    r
}

/// Rotations for every node given the current deformed positions.
pub fn fit_rotations(graph: &DeformGraph, p: &[Vector3<f64>], p_prime: &[Vector3<f64>]) -> Vec<Matrix3<f64>> {
    (0..graph.len())
        .into_par_iter()
        .map(|i| closest_rotation(&edge_covariance(graph, p, p_prime, i)))
        .collect()
}
