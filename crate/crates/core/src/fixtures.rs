//! Small synthetic scenes for tests, benchmarks and demos.

use std::path::Path;

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::drag::{DragSpec, Handle};
use crate::scene::GaussianScene;
use crate::splat_io::{write_cameras, write_dragspec, write_ply, JsonError, PlyError};

fn unit_ball(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

fn push_random(scene: &mut GaussianScene, rng: &mut ChaCha8Rng, center: Vector3<f64>, color: [f32; 3]) {
    let q = UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    );
    let log_scale = std::array::from_fn(|_| rng.random_range(-3.6f32..-3.0));
    let jitter = std::array::from_fn(|c| color[c] + rng.random_range(-0.1f32..0.1));
    scene.push(
        [center.x as f32, center.y as f32, center.z as f32],
        [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
        log_scale,
        rng.random_range(1.5f32..3.0),
        jitter,
        &[],
    );
}

/// Two spherical blobs at `x = -1` and `x = +1` (radius 0.35) joined by a
/// thin bar, `2 * blob + bar` Gaussians in total.
pub fn dumbbell(blob: usize, bar: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::default();
    for (cx, color) in [(-1.0, [1.2f32, -0.8, -0.8]), (1.0, [-0.8f32, -0.6, 1.2])] {
        for _ in 0..blob {
            let p = Vector3::new(cx, 0.0, 0.0) + 0.35 * unit_ball(&mut rng);
            push_random(&mut scene, &mut rng, p, color);
        }
    }
    for _ in 0..bar {
        let x = rng.random_range(-0.7..0.7);
        let r = 0.06 * unit_ball(&mut rng);
        push_random(&mut scene, &mut rng, Vector3::new(x, r.y, r.z), [0.3, 0.3, 0.3]);
    }
    scene
}

/// The default toy scene: 1200 Gaussians per blob and 600 on the bar.
pub fn toy_dumbbell() -> GaussianScene {
    dumbbell(1200, 600, 7)
}

/// Drag of the left blob by +0.3 in x; everything farther than 1.2 from the
/// handle stays put.
pub fn toy_drag() -> DragSpec {
    DragSpec {
        handles: vec![Handle {
            source: Vector3::new(-1.0, 0.0, 0.0),
            target: Vector3::new(-0.7, 0.0, 0.0),
        }],
        anchors: vec![],
        region: None,
        auto_anchor_radius: Some(1.2),
    }
}

/// `count` cameras on a ring of radius 4 around the origin, slightly above
/// the bar, looking at the origin.
pub fn ring_cameras(count: usize, width: u32, height: u32) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let eye = Point3::new(4.0 * a.sin(), 1.0, -4.0 * a.cos());
            Camera::look_at(width, height, 0.9 * width as f64, eye, Point3::origin(), Vector3::y())
        })
        .collect()
}

pub fn toy_cameras() -> Vec<Camera> {
    ring_cameras(6, 96, 72)
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Json(#[from] JsonError),
}

/// Writes `scene.ply`, `cameras.json` and `drag.json` of the toy fixture.
pub fn write_toy_fixture(dir: &Path) -> Result<(), FixtureError> {
    write_ply(&toy_dumbbell(), dir.join("scene.ply"))?;
    write_cameras(&toy_cameras(), dir.join("cameras.json"))?;
    write_dragspec(&toy_drag(), dir.join("drag.json"))?;
    Ok(())
}
