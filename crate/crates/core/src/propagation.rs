//! Transfer of the subset deformation to every Gaussian in the scene.
//!
//! Each Gaussian blends the displacements and rotations of its nearest
//! subset nodes with softmax weights over distance. Scales, opacities and
//! SH coefficients pass through untouched; higher-order SH are not rotated.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arap::ArapState;
use crate::drag::Region;
use crate::knn::KdTree;
use crate::neighborhood::DeformGraph;
use crate::scene::GaussianScene;

pub const DEFAULT_INTERP_NEIGHBORS: usize = 8;

/// Which positions enter the center blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionBlend {
    /// `p'_l = p_l + sum_i w_il (p'_i - p_i)`.
    #[default]
    Displacement,
    /// `p'_l = p_l + sum_i w_il p'_i`, kept for comparison with the literal formula.
    Absolute,
}

/// Where interpolation distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDistance {
    /// `|p_i - p_l|`, both undeformed.
    #[default]
    Undeformed,
    /// `|p'_i - p_l|`.
    Deformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub k: usize,
    /// Softmax temperature in scene units. `None` uses the mean kNN spacing
    /// of the subset; `Some(1.0)` gives plain `exp(-d)` weights.
    pub temperature: Option<f64>,
    pub position_blend: PositionBlend,
    pub weight_distance: WeightDistance,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_INTERP_NEIGHBORS,
            temperature: None,
            position_blend: PositionBlend::Displacement,
            weight_distance: WeightDistance::Undeformed,
        }
    }
}

/// Solved motion of the subset nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetTransform {
    /// Gaussian index of each node.
    pub indices: Vec<usize>,
    pub p: Vec<Vector3<f64>>,
    pub p_prime: Vec<Vector3<f64>>,
    pub q_prime: Vec<UnitQuaternion<f64>>,
    /// Mean kNN spacing of `p`, the default softmax temperature.
    pub spacing: f64,
}

impl SubsetTransform {
    pub fn from_solution(graph: &DeformGraph, state: &ArapState) -> Self {
        Self {
            indices: graph.subset.clone(),
            p: state.positions.clone(),
            p_prime: state.deformed.clone(),
            q_prime: state.rotations.iter().map(rotation_to_quaternion).collect(),
            spacing: graph.mean_knn_distance,
        }
    }

    /// Nodes at the given Gaussians, unmoved.
    pub fn identity(scene: &GaussianScene, indices: Vec<usize>, spacing: f64) -> Self {
        let p: Vec<_> = indices.iter().map(|&i| scene.center(i)).collect();
        Self {
            q_prime: vec![UnitQuaternion::identity(); p.len()],
            p_prime: p.clone(),
            p,
            indices,
            spacing,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PropagationError {
    #[error("subset transform arrays disagree in length")]
    Incongruent,
    #[error("subset transform is empty")]
    Empty,
    #[error("subset index {0} is out of range")]
    IndexOutOfRange(usize),
    #[error("interpolation needs k >= 1")]
    ZeroNeighbors,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PropagationStats {
    pub moved: usize,
    pub untouched: usize,
    /// Gaussians whose blended rotation cancelled out.
    pub antipodal_fallbacks: usize,
}

/// Rotation matrix to a unit quaternion with `w >= 0`.
pub fn rotation_to_quaternion(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Softmax of `-d / tau` over the given distances.
pub fn softmax_weights(distances: &[f64], tau: f64) -> Vec<f64> {
    let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = distances.iter().map(|d| (-(d - d_min) / tau).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `k` nearest subset positions to `query` and their softmax weights.
pub fn interp_weights(query: &Vector3<f64>, positions: &[Vector3<f64>], k: usize, tau: f64) -> (Vec<usize>, Vec<f64>) {
    let tree = KdTree::new(positions.iter().map(|p| [p.x, p.y, p.z]).collect());
    weights_from_tree(&tree, query, k, tau)
}

fn weights_from_tree(tree: &KdTree, query: &Vector3<f64>, k: usize, tau: f64) -> (Vec<usize>, Vec<f64>) {
    let hits = tree.nearest(&[query.x, query.y, query.z], k, None);
    let distances: Vec<f64> = hits.iter().map(|h| h.1).collect();
    (hits.into_iter().map(|h| h.0).collect(), softmax_weights(&distances, tau))
}

/// Weighted quaternion sum with each term flipped into the hemisphere of the
/// running blend. `None` when the sum cancels.
pub fn blend_quaternions(quats: &[UnitQuaternion<f64>], weights: &[f64]) -> Option<UnitQuaternion<f64>> {
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (q, &w) in quats.iter().zip(weights) {
        let q = q.into_inner();
        let signed = if acc.coords.dot(&q.coords) < 0.0 { -q } else { q };
        acc += signed * w;
    }
    if acc.norm() < 1e-8 {
        None
    } else {
        Some(UnitQuaternion::from_quaternion(acc))
    }
}

fn is_identity(q: &UnitQuaternion<f64>) -> bool {
    q.i == 0.0 && q.j == 0.0 && q.k == 0.0
}

/// `normalize(q' * q)` in wxyz; a pure-identity `q'` leaves `q` bit for bit.
fn compose(q_prime: &UnitQuaternion<f64>, q: [f32; 4]) -> [f32; 4] {
    if is_identity(q_prime) {
        return q;
    }
    let raw = Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
    let out = (q_prime.into_inner() * raw).normalize();
    [out.w as f32, out.i as f32, out.j as f32, out.k as f32]
}

fn offset(c: [f32; 3], d: &Vector3<f64>) -> [f32; 3] {
    std::array::from_fn(|k| if d[k] == 0.0 { c[k] } else { (c[k] as f64 + d[k]) as f32 })
}

/// Applies `transform` to every Gaussian inside `region` (all when `None`).
pub fn propagate(
    scene: &GaussianScene,
    transform: &SubsetTransform,
    region: Option<&Region>,
    config: &PropagationConfig,
) -> Result<(GaussianScene, PropagationStats), PropagationError> {
    let m = transform.len();
    if transform.p.len() != m || transform.p_prime.len() != m || transform.q_prime.len() != m {
        return Err(PropagationError::Incongruent);
    }
    if m == 0 {
        return Err(PropagationError::Empty);
    }
    if config.k == 0 {
        return Err(PropagationError::ZeroNeighbors);
    }
    if let Some(&bad) = transform.indices.iter().find(|&&i| i >= scene.len()) {
        return Err(PropagationError::IndexOutOfRange(bad));
    }
    let tau = match config.temperature {
        Some(t) if t > 0.0 => t,
        _ if transform.spacing > 0.0 => transform.spacing,
        _ => 1.0,
    };
    let k = config.k.min(m);
    let sites = match config.weight_distance {
        WeightDistance::Undeformed => &transform.p,
        WeightDistance::Deformed => &transform.p_prime,
    };
    let tree = KdTree::new(sites.iter().map(|p| [p.x, p.y, p.z]).collect());
    let mut node_of = vec![usize::MAX; scene.len()];
    for (node, &g) in transform.indices.iter().enumerate() {
        node_of[g] = node;
    }
    let displacement: Vec<Vector3<f64>> = match config.position_blend {
        PositionBlend::Displacement => transform.p_prime.iter().zip(&transform.p).map(|(a, b)| a - b).collect(),
        PositionBlend::Absolute => transform.p_prime.clone(),
    };

    enum Outcome {
        Untouched,
        Moved([f32; 3], [f32; 4], bool),
    }
    let outcomes: Vec<Outcome> = (0..scene.len())
        .into_par_iter()
        .map(|l| {
            let p = scene.center(l);
            if region.is_some_and(|r| !r.contains(&p)) {
                return Outcome::Untouched;
            }
            let node = node_of[l];
            if node != usize::MAX && config.position_blend == PositionBlend::Displacement {
                let q_prime = &transform.q_prime[node];
                let c = transform.p_prime[node];
                return Outcome::Moved([c.x as f32, c.y as f32, c.z as f32], compose(q_prime, scene.rotations[l]), false);
            }
            let (nodes, weights) = weights_from_tree(&tree, &p, k, tau);
            // blend as an offset from the heaviest neighbor so equal inputs blend exactly
            let lead = weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let base = displacement[nodes[lead]];
            let mut d = base;
            for (&n, &w) in nodes.iter().zip(&weights) {
                d += w * (displacement[n] - base);
            }
            let quats: Vec<_> = nodes.iter().map(|&n| transform.q_prime[n]).collect();
            let (q_prime, fallback) = match blend_quaternions(&quats, &weights) {
                Some(q) => (q, false),
                None => (quats[lead], true),
            };
            Outcome::Moved(offset(scene.centers[l], &d), compose(&q_prime, scene.rotations[l]), fallback)
        })
        .collect();

    let mut out = scene.clone();
    let mut stats = PropagationStats::default();
    for (l, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Untouched => stats.untouched += 1,
            Outcome::Moved(c, q, fallback) => {
                out.centers[l] = c;
                out.rotations[l] = q;
                stats.moved += 1;
                if fallback {
                    stats.antipodal_fallbacks += 1;
                }
            }
        }
    }
    if stats.antipodal_fallbacks > 0 {
        log::warn!(
            "{} Gaussians had cancelling rotation blends; used their heaviest neighbor's rotation",
            stats.antipodal_fallbacks
        );
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_scene(n: usize) -> GaussianScene {
        let mut s = GaussianScene::default();
        for i in 0..n {
            let c = [(i % 7) as f32 * 0.125, (i / 7 % 5) as f32 * 0.25, (i / 35) as f32 * 0.5];
            let q = [0.9, 0.1 * (i % 3) as f32, -0.2, 0.3];
            s.push(c, q, [-1.0; 3], 0.3, [0.1, 0.2, 0.3], &[]);
        }
        s
    }

    #[test]
    fn closed_form_softmax() {
        let w = softmax_weights(&[0.0, 3f64.ln()], 1.0);
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert_eq!(softmax_weights(&[2.0, 2.0], 0.7), vec![0.5, 0.5]);
    }

    #[test]
    fn coincident_query_dominates() {
        let pos = vec![Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0), Vector3::new(0.0, 10.0, 0.0)];
        let (idx, w) = interp_weights(&Vector3::zeros(), &pos, 3, 1.0);
        assert_eq!(idx[0], 0);
        assert!(w[0] > 0.9999);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_is_bitwise() {
        let mut scene = grid_scene(100);
        scene.centers[3][1] = -0.0;
        let t = SubsetTransform::identity(&scene, (0..100).step_by(3).collect(), 0.2);
        let (out, stats) = propagate(&scene, &t, None, &PropagationConfig::default()).unwrap();
        assert!(out.bitwise_eq(&scene));
        assert_eq!(stats.moved, 100);
    }

    #[test]
    fn pure_translation() {
        let scene = grid_scene(140);
        let shift = Vector3::new(0.25, -0.5, 1.0);
        let mut t = SubsetTransform::identity(&scene, (0..140).step_by(5).collect(), 0.2);
        t.p_prime.iter_mut().for_each(|p| *p += shift);
        let (out, _) = propagate(&scene, &t, None, &PropagationConfig::default()).unwrap();
        for l in 0..scene.len() {
            for k in 0..3 {
                assert_eq!(out.centers[l][k], scene.centers[l][k] + shift[k] as f32);
            }
            assert_eq!(out.rotations[l], scene.rotations[l]);
        }
    }

    #[test]
    fn displacement_blend_by_hand() {
        let mut scene = GaussianScene::default();
        for c in [[0.0, 0.0, 0.0], [3f32.ln(), 0.0, 0.0], [0.0, 0.0, 0.0]] {
            scene.push(c, [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, [0.0; 3], &[]);
        }
        // query is Gaussian 2, coincident with node 0 and ln 3 from node 1
        let mut t = SubsetTransform::identity(&scene, vec![0, 1], 1.0);
        t.p_prime[0] += Vector3::new(1.0, 0.0, 0.0);
        let config = PropagationConfig {
            k: 2,
            temperature: Some(1.0),
            ..Default::default()
        };
        let (out, _) = propagate(&scene, &t, None, &config).unwrap();
        assert!((out.centers[2][0] - 0.75).abs() < 1e-6);
        assert_eq!(out.centers[2][1], 0.0);
    }

    #[test]
    fn region_outside_untouched_and_quats_unit() {
        let scene = grid_scene(140);
        let mut t = SubsetTransform::identity(&scene, (0..140).step_by(4).collect(), 0.2);
        for (n, q) in t.q_prime.iter_mut().enumerate() {
            *q = UnitQuaternion::from_euler_angles(0.1 * n as f64, 0.3, -0.2);
        }
        let region = Region::Box {
            min: Vector3::new(-1.0, -1.0, -1.0),
            max: Vector3::new(10.0, 10.0, 0.75),
        };
        let (out, stats) = propagate(&scene, &t, Some(&region), &PropagationConfig::default()).unwrap();
        assert!(stats.untouched > 0 && stats.moved > 0);
        for l in 0..scene.len() {
            if region.contains(&scene.center(l)) {
                let n: f32 = out.rotations[l].iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            } else {
                assert_eq!(out.rotations[l], scene.rotations[l]);
                assert_eq!(out.centers[l], scene.centers[l]);
            }
        }
    }

    #[test]
    fn antipodal_inputs_align() {
        let q = UnitQuaternion::from_euler_angles(0.2, 0.0, 0.0);
        let flipped = UnitQuaternion::new_unchecked(-q.into_inner());
        let b = blend_quaternions(&[q, flipped], &[0.5, 0.5]).unwrap();
        assert!(b.angle_to(&q) < 1e-12);
    }

    #[test]
    fn quaternion_from_rotation_is_canonical() {
        let r = Rotation3::from_euler_angles(0.0, 0.0, 3.0).into_inner();
        let q = rotation_to_quaternion(&r);
        assert!(q.w >= 0.0);
        assert!((q.to_rotation_matrix().into_inner() - r).abs().max() < 1e-12);
        assert_eq!(rotation_to_quaternion(&Matrix3::identity()), UnitQuaternion::identity());
    }
}
