use arapgs_core::camera::Camera;
use arapgs_core::render::{depth_at, project, render, Raster, FOOTPRINT_D2};
use arapgs_core::scene::GaussianScene;
use nalgebra::Vector3;

fn splat(center: [f32; 3], rotation: [f32; 4], scales: [f32; 3], logit: f32) -> GaussianScene {
    let mut s = GaussianScene::default();
    s.push(center, rotation, scales.map(f32::ln), logit, [0.0; 3], &[]);
    s
}

#[test]
fn footprint_area_matches_ellipse() {
    let cam = Camera::identity(200, 200, 150.0);
    let s = splat([0.05, -0.02, 4.0], [0.9, 0.1, 0.3, 0.2], [0.4, 0.15, 0.05], 8.0);
    let p = project(&s, &cam).splats.remove(0);
    let det = p.cov[0] * p.cov[2] - p.cov[1] * p.cov[1];
    let area = std::f64::consts::PI * FOOTPRINT_D2 * det.sqrt();
    let inside = (0..200u32)
        .flat_map(|y| (0..200u32).map(move |x| (x, y)))
        .filter(|&(x, y)| p.mahalanobis2(x as f64, y as f64) <= FOOTPRINT_D2)
        .count() as f64;
    assert!(area > 500.0);
    assert!((inside - area).abs() / area < 0.03, "{inside} pixels vs ellipse {area}");
    assert!(p.radius >= (p.cov[0].max(p.cov[2]) * FOOTPRINT_D2).sqrt());
}

#[test]
fn opaque_front_splat_hides_back() {
    let cam = Camera::identity(32, 32, 30.0);
    let mut s = splat([0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [1.0; 3], 20.0);
    s.push([0.0, 0.0, 5.0], [1.0, 0.0, 0.0, 0.0], [1.0f32.ln(); 3], 20.0, [3.0, -3.0, -3.0], &[]);
    s.sh_dc[0] = [-3.0, 3.0, -3.0];
    let img = render(&s, &cam, [0.0; 3]);
    assert_eq!(img.pixel(16, 16), &[0.0, 1.0, 0.0]);

    let raster = Raster::new(project(&s, &cam).splats, &cam);
    let mut visited = Vec::new();
    raster.shade(16, 16, |sp, _| visited.push(sp.index));
    assert_eq!(visited, vec![0]);
}

#[test]
fn depth_pick_returns_surface_point() {
    let cam = Camera::identity(64, 48, 60.0);
    let s = splat([0.2, -0.1, 3.0], [1.0, 0.0, 0.0, 0.0], [0.3; 3], 10.0);
    let (u, v, _) = cam.project(&Vector3::new(0.2, -0.1, 3.0)).unwrap();
    let hit = depth_at(&s, &cam, u.round() as u32, v.round() as u32).unwrap();
    assert!((hit.z - 3.0).abs() < 1e-9);
    assert!((hit - Vector3::new(0.2, -0.1, 3.0)).norm() < 0.05);
    assert!(depth_at(&s, &cam, 0, 0).is_none());
}

#[test]
fn tile_borders_do_not_show() {
    // a splat centred on a tile corner renders symmetrically
    let cam = Camera::identity(64, 64, 64.0);
    let s = splat([0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [0.2; 3], 1.0);
    let img = render(&s, &cam, [0.0; 3]);
    for y in 20..44u32 {
        for x in 20..44u32 {
            let mirrored = img.pixel(64 - x, 64 - y);
            assert!((img.pixel(x, y)[0] - mirrored[0]).abs() < 1e-6, "({x},{y})");
        }
    }
}
