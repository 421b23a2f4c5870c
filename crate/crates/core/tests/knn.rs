use arapgs_core::knn::KdTree;
use arapgs_core::neighborhood::{build_graph, WeightMode};
use nalgebra::Vector3;
use proptest::prelude::*;

fn brute(points: &[[f64; 3]], q: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| (i, ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    // a coarse lattice makes distance ties common
    prop::array::uniform3((-8i32..8).prop_map(|v| v as f64 / 4.0))
}

proptest! {
    #[test]
    fn matches_brute_force(points in prop::collection::vec(point(), 1..120), q in point(), k in 1usize..20) {
        let tree = KdTree::new(points.clone());
        let got = tree.nearest(&q, k, None);
        let want = brute(&points, &q, k, None);
        prop_assert_eq!(got.iter().map(|h| h.0).collect::<Vec<_>>(), want.iter().map(|h| h.0).collect::<Vec<_>>());
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn exclusion_matches_brute_force(points in prop::collection::vec(point(), 2..80), k in 1usize..10) {
        let tree = KdTree::new(points.clone());
        for i in 0..points.len() {
            let got: Vec<usize> = tree.nearest(&points[i], k, Some(i)).into_iter().map(|h| h.0).collect();
            let want: Vec<usize> = brute(&points, &points[i], k, Some(i)).into_iter().map(|h| h.0).collect();
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn graph_is_symmetric_union_of_knn() {
    let pts: Vec<Vector3<f64>> = (0..300)
        .map(|i| {
            let t = i as f64 * 0.7;
            Vector3::new(t.sin() * 3.0, (t * 1.3).cos(), (i % 17) as f64 * 0.2)
        })
        .collect();
    let raw: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
    let g = build_graph((0..300).collect(), pts, 6, WeightMode::Uniform).unwrap();
    for i in 0..300 {
        let mut want: Vec<usize> = brute(&raw, &raw[i], 6, Some(i)).into_iter().map(|h| h.0).collect();
        for j in 0..300 {
            if j != i && brute(&raw, &raw[j], 6, Some(j)).iter().any(|h| h.0 == i) {
                want.push(j);
            }
        }
        want.sort_unstable();
        want.dedup();
        assert_eq!(g.neighbors[i], want, "node {i}");
    }
}
