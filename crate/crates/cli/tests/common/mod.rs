#![allow(dead_code)]

use arapgs_core::camera::Camera;
use arapgs_core::image::ImageBuffer;
use arapgs_core::render::SH_C0;
use arapgs_core::scene::GaussianScene;

/// Alpha compositing written out per pixel for isotropic splats.
pub fn hand_composite(scene: &GaussianScene, cam: &Camera, bg: [f32; 3]) -> ImageBuffer {
    ImageBuffer::from_fn(cam.width, cam.height, 3, |x, y, ch| {
        let mut order: Vec<usize> = (0..scene.len()).collect();
        order.sort_by(|&a, &b| scene.centers[a][2].total_cmp(&scene.centers[b][2]));
        let mut t = 1.0f64;
        let mut color = 0.0f64;
        for i in order {
            let [px, py, pz] = scene.centers[i].map(|v| v as f64);
            let sigma = (scene.log_scales[i][0] as f64).exp();
            let (f, z2) = (cam.fx, pz * pz);
            // J = [[f/z, 0, -f x/z^2], [0, f/z, -f y/z^2]]; cov2d = sigma^2 J J^T + 0.3 I
            let j = [[f / pz, 0.0, -f * px / z2], [0.0, f / pz, -f * py / z2]];
            let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let (ca, cb, cc) = (sigma * sigma * dot(&j[0], &j[0]) + 0.3, sigma * sigma * dot(&j[0], &j[1]), sigma * sigma * dot(&j[1], &j[1]) + 0.3);
            let det = ca * cc - cb * cb;
            let (u, v) = (f * px / pz + cam.cx, f * py / pz + cam.cy);
            let (dx, dy) = (x as f64 - u, y as f64 - v);
            let d2 = (cc * dx * dx - 2.0 * cb * dx * dy + ca * dy * dy) / det;
            let opacity = 1.0 / (1.0 + (-(scene.opacity_logits[i] as f64)).exp());
            let a = opacity * (-0.5 * d2).exp();
            if d2 > 9.0 || a < 1.0 / 255.0 {
                continue;
            }
            let c = (0.5 + SH_C0 * scene.sh_dc[i][ch] as f64).clamp(0.0, 1.0);
            color += t * a * c;
            t *= 1.0 - a;
            if t < 1e-4 {
                break;
            }
        }
        (color + t * bg[ch] as f64).clamp(0.0, 1.0) as f32
    })
}


/// Three overlapping splats in front of an identity camera.
pub fn three_splats() -> (GaussianScene, Camera) {
    let mut s = GaussianScene::default();
    s.push([0.0, 0.0, 3.0], [1.0, 0.0, 0.0, 0.0], [0.15f32.ln(); 3], 1.0, [1.2, -0.8, -0.8], &[]);
    s.push([0.2, 0.1, 2.5], [1.0, 0.0, 0.0, 0.0], [0.1f32.ln(); 3], 0.0, [-0.8, 1.2, -0.8], &[]);
    s.push([-0.15, 0.1, 3.5], [1.0, 0.0, 0.0, 0.0], [0.2f32.ln(); 3], 2.0, [-0.8, -0.8, 1.2], &[]);
    (s, Camera::identity(40, 32, 50.0))
}
