//! Deformation graph over a random subset of Gaussian centers.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drag::{DragSpec, Region};
use crate::knn::KdTree;
use crate::scene::GaussianScene;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("no Gaussian lies inside the edit region")]
    EmptySelection,
    #[error("graph needs more than k={k} nodes, got {nodes}")]
    TooFewNodes { nodes: usize, k: usize },
    #[error("handles {first} and {second} snap to node {node} with different targets")]
    ConflictingConstraint { node: usize, first: String, second: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_ij = 1`.
    #[default]
    Uniform,
    /// `w_ij = exp(-|p_i - p_j|^2 / sigma^2)` with sigma the mean kNN distance.
    GaussianKernel,
}

/// Result of subset sampling, with every handle and anchor mapped to a node.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSample {
    /// Gaussian indices, ascending.
    pub indices: Vec<usize>,
    /// Node (position in `indices`) carrying each handle.
    pub handle_nodes: Vec<usize>,
    pub handle_snap_distances: Vec<f64>,
    /// Node carrying each explicit anchor.
    pub anchor_nodes: Vec<usize>,
    pub anchor_snap_distances: Vec<f64>,
}

/// Gaussian indices whose centers fall inside `region`.
pub fn region_indices(scene: &GaussianScene, region: Option<&Region>) -> Vec<usize> {
    (0..scene.len())
        .filter(|&i| region.is_none_or(|r| r.contains(&scene.center(i))))
        .collect()
}

/// Uniform sample without replacement of `min(n_sub, available)` indices
/// among `available`, ascending. Deterministic for a given seed.
pub fn sample_indices(available: &[usize], n_sub: usize, seed: u64) -> Vec<usize> {
    let m = n_sub.min(available.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, available.len(), m)
        .into_iter()
        .map(|k| available[k])
        .collect();
    picked.sort_unstable();
    picked
}

/// Nearest Gaussian to `p` among `candidates`, ties to the lower index.
fn snap(scene: &GaussianScene, candidates: &[usize], p: &Vector3<f64>) -> (usize, f64) {
    candidates
        .par_iter()
        .map(|&i| ((scene.center(i) - p).norm_squared(), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(d2, i)| (i, d2.sqrt()))
        .expect("candidates non-empty")
}

/// Samples the representative subset and force-includes the Gaussian
/// nearest to every handle source and anchor point.
pub fn sample_subset(scene: &GaussianScene, drag: &DragSpec, n_sub: usize, seed: u64) -> Result<SubsetSample, GraphError> {
    let available = region_indices(scene, drag.region.as_ref());
    if available.is_empty() {
        return Err(GraphError::EmptySelection);
    }
    let mut indices = sample_indices(&available, n_sub.max(1), seed);

    let points: Vec<Vector3<f64>> = drag
        .handles
        .iter()
        .map(|h| h.source)
        .chain(drag.anchors.iter().copied())
        .collect();
    let snaps: Vec<(usize, f64)> = points.iter().map(|p| snap(scene, &available, p)).collect();
    let forced: std::collections::BTreeSet<usize> = snaps.iter().map(|s| s.0).collect();

    let missing: Vec<usize> = forced.iter().copied().filter(|g| indices.binary_search(g).is_err()).collect();
    if !missing.is_empty() {
        let room = n_sub.max(1).saturating_sub(indices.len());
        let (append, replace) = missing.split_at(room.min(missing.len()));
        indices.extend_from_slice(append);
        if !replace.is_empty() {
            // evict the non-forced points farthest from every constraint point
            let mut evictable: Vec<(f64, usize)> = indices
                .iter()
                .copied()
                .filter(|g| !forced.contains(g))
                .map(|g| {
                    let c = scene.center(g);
                    let d = points.iter().map(|p| (c - p).norm_squared()).fold(f64::INFINITY, f64::min);
                    (d, g)
                })
                .collect();
            evictable.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
            let evict: std::collections::BTreeSet<usize> = evictable.iter().take(replace.len()).map(|e| e.1).collect();
            indices.retain(|g| !evict.contains(g));
            // more forced points than n_sub: keep them all
            indices.extend_from_slice(replace);
        }
        indices.sort_unstable();
    }

    let node_of = |g: usize| indices.binary_search(&g).expect("forced index included");
    let nh = drag.handles.len();
    Ok(SubsetSample {
        handle_nodes: snaps[..nh].iter().map(|s| node_of(s.0)).collect(),
        handle_snap_distances: snaps[..nh].iter().map(|s| s.1).collect(),
        anchor_nodes: snaps[nh..].iter().map(|s| node_of(s.0)).collect(),
        anchor_snap_distances: snaps[nh..].iter().map(|s| s.1).collect(),
        indices,
    })
}

/// Symmetric neighborhood graph over subset positions plus hard constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformGraph {
    /// Gaussian index of each node.
    pub subset: Vec<usize>,
    /// Undeformed node positions.
    pub positions: Vec<Vector3<f64>>,
    /// Ascending neighbor lists; `j` in `neighbors[i]` iff `i` in `neighbors[j]`.
    pub neighbors: Vec<Vec<usize>>,
    /// Parallel to `neighbors`.
    pub edge_weights: Vec<Vec<f64>>,
    pub cell_weights: Vec<f64>,
    /// Node -> target position.
    pub constraints: BTreeMap<usize, Vector3<f64>>,
    /// Mean distance over all directed kNN edges.
    pub mean_knn_distance: f64,
}

impl DeformGraph {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_constrained(&self, node: usize) -> bool {
        self.constraints.contains_key(&node)
    }

    /// Weight of edge `(i, j)`, if present.
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.neighbors[i].binary_search(&j).ok().map(|k| self.edge_weights[i][k])
    }

    /// Connected components as ascending node lists, ordered by their lowest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let i = members[head];
                head += 1;
                for &j in &self.neighbors[i] {
                    if label[j] == usize::MAX {
                        label[j] = id;
                        members.push(j);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

/// Builds the union-symmetrized kNN graph. Constraints start empty.
pub fn build_graph(
    subset: Vec<usize>,
    positions: Vec<Vector3<f64>>,
    k: usize,
    weight_mode: WeightMode,
) -> Result<DeformGraph, GraphError> {
    let n = positions.len();
    assert_eq!(subset.len(), n, "subset and positions must align");
    if n <= k {
        return Err(GraphError::TooFewNodes { nodes: n, k });
    }
    let tree = KdTree::new(positions.iter().map(|p| [p.x, p.y, p.z]).collect());
    let knn: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| tree.nearest(&tree.point(i), k, Some(i)))
        .collect();

    let total: f64 = knn.iter().flatten().map(|(_, d)| d).sum();
    let mean_knn_distance = total / (n * k) as f64;

    let mut neighbors: Vec<Vec<usize>> = vec![Vec::with_capacity(k + k / 2); n];
    for (i, list) in knn.iter().enumerate() {
        for &(j, _) in list {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }

    let sigma2 = mean_knn_distance * mean_knn_distance;
    let edge_weights: Vec<Vec<f64>> = neighbors
        .iter()
        .enumerate()
        .map(|(i, list)| {
            list.iter()
                .map(|&j| match weight_mode {
                    WeightMode::Uniform => 1.0,
                    WeightMode::GaussianKernel if sigma2 > 0.0 => {
                        (-(positions[i] - positions[j]).norm_squared() / sigma2).exp()
                    }
                    WeightMode::GaussianKernel => 1.0,
                })
                .collect()
        })
        .collect();

    Ok(DeformGraph {
        subset,
        cell_weights: vec![1.0; n],
        positions,
        neighbors,
        edge_weights,
        constraints: BTreeMap::new(),
        mean_knn_distance,
    })
}

/// How constraints were assigned, for reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConstraintSummary {
    pub handle_nodes: usize,
    pub anchor_nodes: usize,
    pub radius_anchors: usize,
    /// Lowest node of each component that had no constraint and got one.
    pub component_anchors: Vec<usize>,
}

/// Installs handle and anchor constraints and auto-anchors so that every
/// connected component carries at least one constrained node.
///
/// A handle node is constrained to its own position plus the handle's
/// displacement, so snapping never introduces a spurious offset.
pub fn assign_constraints(
    graph: &mut DeformGraph,
    sample: &SubsetSample,
    drag: &DragSpec,
) -> Result<ConstraintSummary, GraphError> {
    let mut constraints: BTreeMap<usize, (Vector3<f64>, String)> = BTreeMap::new();
    let mut insert = |node: usize, target: Vector3<f64>, label: String| -> Result<(), GraphError> {
        match constraints.get(&node) {
            Some((existing, first)) if *existing != target => Err(GraphError::ConflictingConstraint {
                node,
                first: first.clone(),
                second: label,
            }),
            Some(_) => Ok(()),
            None => {
                constraints.insert(node, (target, label));
                Ok(())
            }
        }
    };
    for (h, (&node, handle)) in sample.handle_nodes.iter().zip(&drag.handles).enumerate() {
        insert(node, graph.positions[node] + handle.displacement(), format!("handle {h}"))?;
    }
    for (a, &node) in sample.anchor_nodes.iter().enumerate() {
        insert(node, graph.positions[node], format!("anchor {a}"))?;
    }
    let mut summary = ConstraintSummary {
        handle_nodes: sample.handle_nodes.iter().collect::<std::collections::BTreeSet<_>>().len(),
        anchor_nodes: constraints.len(),
        ..Default::default()
    };
    summary.anchor_nodes -= summary.handle_nodes;

    if let Some(r) = drag.auto_anchor_radius {
        let r2 = r * r;
        for node in 0..graph.len() {
            if constraints.contains_key(&node) {
                continue;
            }
            let p = graph.positions[node];
            if drag.handles.iter().all(|h| (p - h.source).norm_squared() > r2) {
                constraints.insert(node, (p, "radius anchor".into()));
                summary.radius_anchors += 1;
            }
        }
    }

    graph.constraints = constraints.into_iter().map(|(node, (t, _))| (node, t)).collect();
    for component in graph.components() {
        if !component.iter().any(|n| graph.constraints.contains_key(n)) {
            let node = component[0];
            log::warn!(
                "graph component of {} nodes has no constraint; anchoring node {node}",
                component.len()
            );
            graph.constraints.insert(node, graph.positions[node]);
            summary.component_anchors.push(node);
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drag::Handle;

    fn scene_from(points: &[[f32; 3]]) -> GaussianScene {
        let mut s = GaussianScene::default();
        for p in points {
            s.push(*p, [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, [0.0; 3], &[]);
        }
        s
    }

    fn handle_at(p: Vector3<f64>, t: Vector3<f64>) -> DragSpec {
        DragSpec {
            handles: vec![Handle { source: p, target: t }],
            ..Default::default()
        }
    }

    #[test]
    fn clamps_to_available() {
        let pts: Vec<[f32; 3]> = (0..10).map(|i| [i as f32, 0.0, 0.0]).collect();
        let scene = scene_from(&pts);
        let drag = handle_at(Vector3::zeros(), Vector3::zeros());
        let s = sample_subset(&scene, &drag, 16384, 1).unwrap();
        assert_eq!(s.indices, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_deterministic() {
        let available: Vec<usize> = (0..1000).collect();
        assert_eq!(sample_indices(&available, 50, 9), sample_indices(&available, 50, 9));
        assert_ne!(sample_indices(&available, 50, 9), sample_indices(&available, 50, 10));
    }

    #[test]
    fn handle_carrier_is_forced_in() {
        let pts: Vec<[f32; 3]> = (0..200).map(|i| [(i % 10) as f32, (i / 10) as f32, 0.0]).collect();
        let scene = scene_from(&pts);
        let drag = handle_at(scene.center(7), scene.center(7) + Vector3::x());
        let s = sample_subset(&scene, &drag, 20, 5).unwrap();
        assert_eq!(s.indices.len(), 20);
        assert_eq!(s.indices[s.handle_nodes[0]], 7);
        assert_eq!(s.handle_snap_distances[0], 0.0);
    }

    #[test]
    fn region_filter_respected() {
        let pts: Vec<[f32; 3]> = (0..100).map(|i| [i as f32, 0.0, 0.0]).collect();
        let scene = scene_from(&pts);
        let mut drag = handle_at(Vector3::new(10.0, 0.0, 0.0), Vector3::new(11.0, 0.0, 0.0));
        drag.region = Some(Region::Box {
            min: Vector3::new(5.0, -1.0, -1.0),
            max: Vector3::new(30.0, 1.0, 1.0),
        });
        let s = sample_subset(&scene, &drag, 10, 3).unwrap();
        assert!(s.indices.iter().all(|&i| (5..=30).contains(&i)));
        drag.region = Some(Region::Sphere {
            center: Vector3::new(0.0, 50.0, 0.0),
            radius: 1.0,
        });
        assert_eq!(sample_subset(&scene, &drag, 10, 3), Err(GraphError::EmptySelection));
    }

    fn square() -> DeformGraph {
        let pos = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        build_graph((0..4).collect(), pos, 2, WeightMode::Uniform).unwrap()
    }

    #[test]
    fn unit_square_neighbors() {
        let g = square();
        assert_eq!(g.neighbors, vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![0, 2]]);
        assert!(g.edge_weights.iter().flatten().all(|&w| w == 1.0));
        assert_eq!(g.cell_weights, vec![1.0; 4]);
    }

    #[test]
    fn union_symmetrization() {
        // node 3 is far away: it lists 2 as a neighbor but 2 does not list 3
        let pos = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(10.0, 0.0, 0.0),
        ];
        let g = build_graph((0..4).collect(), pos, 1, WeightMode::Uniform).unwrap();
        assert!(g.neighbors[3].contains(&2));
        assert!(g.neighbors[2].contains(&3));
        for i in 0..4 {
            for &j in &g.neighbors[i] {
                assert!(g.neighbors[j].contains(&i));
                assert_eq!(g.weight(i, j), g.weight(j, i));
            }
        }
    }

    #[test]
    fn too_few_nodes() {
        let pos = vec![Vector3::zeros(); 3];
        assert_eq!(
            build_graph(vec![0, 1, 2], pos, 3, WeightMode::Uniform),
            Err(GraphError::TooFewNodes { nodes: 3, k: 3 })
        );
    }

    #[test]
    fn gaussian_kernel_weights() {
        let g = {
            let pos = vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ];
            build_graph((0..4).collect(), pos, 2, WeightMode::GaussianKernel).unwrap()
        };
        assert_eq!(g.mean_knn_distance, 1.0);
        assert!((g.weight(0, 1).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn unconstrained_component_gets_one_anchor() {
        let mut pos = Vec::new();
        for c in [0.0, 100.0] {
            for i in 0..5 {
                pos.push(Vector3::new(c + i as f64, 0.0, 0.0));
            }
        }
        let mut g = build_graph((0..10).collect(), pos, 2, WeightMode::Uniform).unwrap();
        assert_eq!(g.components().len(), 2);
        let drag = handle_at(Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0));
        let sample = SubsetSample {
            indices: (0..10).collect(),
            handle_nodes: vec![0],
            handle_snap_distances: vec![0.0],
            anchor_nodes: vec![],
            anchor_snap_distances: vec![],
        };
        let summary = assign_constraints(&mut g, &sample, &drag).unwrap();
        assert_eq!(summary.component_anchors, vec![5]);
        assert_eq!(g.constraints.len(), 2);
        assert_eq!(g.constraints[&0], Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(g.constraints[&5], g.positions[5]);
    }

    #[test]
    fn conflicting_handles_rejected() {
        let mut g = square();
        let drag = DragSpec {
            handles: vec![
                Handle {
                    source: Vector3::zeros(),
                    target: Vector3::x(),
                },
                Handle {
                    source: Vector3::new(0.01, 0.0, 0.0),
                    target: Vector3::y(),
                },
            ],
            ..Default::default()
        };
        let sample = SubsetSample {
            indices: (0..4).collect(),
            handle_nodes: vec![0, 0],
            handle_snap_distances: vec![0.0, 0.01],
            anchor_nodes: vec![],
            anchor_snap_distances: vec![],
        };
        assert!(matches!(
            assign_constraints(&mut g, &sample, &drag),
            Err(GraphError::ConflictingConstraint { node: 0, .. })
        ));
    }

    #[test]
    fn identity_handle_constrains_to_own_position() {
        let mut g = square();
        let drag = handle_at(Vector3::new(0.1, 0.1, 0.0), Vector3::new(0.1, 0.1, 0.0));
        let sample = SubsetSample {
            indices: (0..4).collect(),
            handle_nodes: vec![0],
            handle_snap_distances: vec![0.1f64.hypot(0.1)],
            anchor_nodes: vec![],
            anchor_snap_distances: vec![],
        };
        assign_constraints(&mut g, &sample, &drag).unwrap();
        assert_eq!(g.constraints[&0], g.positions[0]);
    }
}
