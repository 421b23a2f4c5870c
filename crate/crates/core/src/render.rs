//! Deterministic CPU splatting.
//!
//! Gaussians are projected with the local affine (EWA) approximation, sorted
//! once by depth and composited front to back per pixel. Tiles are shaded in
//! parallel but every pixel sees the same ordered splat list, so output does
//! not depend on the thread count or the input order of the Gaussians.

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, NEAR_PLANE};
use crate::image::ImageBuffer;
use crate::scene::GaussianScene;

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// Added to the projected covariance diagonal, in pixels squared.
pub const COV2D_FLOOR: f64 = 0.3;
/// Squared Mahalanobis radius of the footprint (3 sigma).
pub const FOOTPRINT_D2: f64 = 9.0;
pub const MIN_CONTRIBUTION: f64 = 1.0 / 255.0;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
const TILE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub background: [f32; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { background: [0.0; 3] }
    }
}

/// A projected Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian.
    pub index: usize,
    pub mean: [f64; 2],
    /// Upper triangle `(xx, xy, yy)` of the 2D covariance, pixels squared.
    pub cov: [f64; 3],
    /// Upper triangle of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f32; 3],
    /// SH color before clamping to `[0, 1]`.
    pub color_raw: [f32; 3],
    pub alpha: f32,
    /// Footprint half-extent in pixels (3 sigma along the major axis).
    pub radius: f64,
}

impl Splat2D {
    /// Squared Mahalanobis distance of pixel center `(x, y)`.
    pub fn mahalanobis2(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }

    /// Opacity `alpha * G` of this splat at pixel `(x, y)` if it lies
    /// inside the footprint and above the contribution cutoff.
    pub fn coverage(&self, x: f64, y: f64) -> Option<f64> {
        let d2 = self.mahalanobis2(x, y);
        if !(d2 <= FOOTPRINT_D2) {
            return None;
        }
        let a = self.alpha as f64 * (-0.5 * d2).exp();
        (a >= MIN_CONTRIBUTION).then_some(a)
    }

    fn order(&self, other: &Self) -> std::cmp::Ordering {
        let key = |s: &Self| {
            [
                s.depth,
                s.mean[0],
                s.mean[1],
                s.cov[0],
                s.cov[1],
                s.cov[2],
                s.alpha as f64,
                s.color_raw[0] as f64,
                s.color_raw[1] as f64,
                s.color_raw[2] as f64,
            ]
        };
        let (a, b) = (key(self), key(other));
        a.iter()
            .zip(&b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Projection {
    pub splats: Vec<Splat2D>,
    /// Gaussians dropped for non-finite intermediates.
    pub non_finite: usize,
}

/// SH color of Gaussian `index` seen along unit direction `dir`, before clamping.
pub fn sh_color(scene: &GaussianScene, index: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let dc = scene.sh_dc[index];
    let rest = scene.sh_rest_of(index);
    let m = scene.sh_rest_len / 3;
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut basis = Vec::with_capacity(m);
    if m >= 3 {
        basis.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    }
    if m >= 8 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis.extend([
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]);
    }
    if m >= 15 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis.extend([
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]);
    }
    std::array::from_fn(|c| {
        let higher: f64 = basis.iter().enumerate().map(|(k, b)| b * rest[c * m + k] as f64).sum();
        0.5 + SH_C0 * dc[c] as f64 + higher
    })
}

fn project_one(scene: &GaussianScene, camera: &Camera, w2c: &Matrix3<f64>, i: usize) -> Result<Option<Splat2D>, ()> {
    let p = scene.center(i);
    let t = w2c * (p - camera.position());
    if !t.iter().all(|v| v.is_finite()) {
        return Err(());
    }
    if t.z <= NEAR_PLANE {
        return Ok(None);
    }
    let z2 = t.z * t.z;
    let j = Matrix2x3::new(
        camera.fx / t.z,
        0.0,
        -camera.fx * t.x / z2,
        0.0,
        camera.fy / t.z,
        -camera.fy * t.y / z2,
    );
    let m = j * w2c;
    let cov = m * scene.covariance(i) * m.transpose();
    let (a, b, c) = (cov[(0, 0)] + COV2D_FLOOR, cov[(0, 1)], cov[(1, 1)] + COV2D_FLOOR);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return Err(());
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = FOOTPRINT_D2.sqrt() * lambda_max.sqrt();
    let mean = [camera.fx * t.x / t.z + camera.cx, camera.fy * t.y / t.z + camera.cy];
    if mean[0] + radius < -0.5
        || mean[1] + radius < -0.5
        || mean[0] - radius > camera.width as f64 - 0.5
        || mean[1] - radius > camera.height as f64 - 0.5
    {
        return Ok(None);
    }
    let dir = (p - camera.position()).normalize();
    let raw = sh_color(scene, i, &dir);
    if !raw.iter().all(|v| v.is_finite()) || !mean.iter().all(|v| v.is_finite()) {
        return Err(());
    }
    Ok(Some(Splat2D {
        index: i,
        mean,
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        color: raw.map(|v| v.clamp(0.0, 1.0) as f32),
        color_raw: raw.map(|v| v as f32),
        alpha: scene.opacity(i),
        radius,
    }))
}

/// Projects every Gaussian through `camera`, culling those behind the near
/// plane or entirely outside the image.
pub fn project(scene: &GaussianScene, camera: &Camera) -> Projection {
    let w2c = camera.rotation_w2c();
    let results: Vec<Result<Option<Splat2D>, ()>> = (0..scene.len())
        .into_par_iter()
        .map(|i| project_one(scene, camera, &w2c, i))
        .collect();
    let mut out = Projection::default();
    for r in results {
        match r {
            Ok(Some(s)) => out.splats.push(s),
            Ok(None) => {}
            Err(()) => out.non_finite += 1,
        }
    }
    if out.non_finite > 0 {
        log::debug!("dropped {} splats with non-finite projection", out.non_finite);
    }
    out
}

/// Depth-sorted splats binned into screen tiles.
pub struct Raster {
    pub splats: Vec<Splat2D>,
    width: u32,
    height: u32,
    tiles_x: u32,
    bins: Vec<Vec<u32>>,
}

impl Raster {
    pub fn new(mut splats: Vec<Splat2D>, camera: &Camera) -> Self {
        splats.sort_by(|a, b| a.order(b));
        let (width, height) = (camera.width, camera.height);
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        for (k, s) in splats.iter().enumerate() {
            let lo = |m: f64, limit: u32| ((m - s.radius).floor().max(0.0) as u32 / TILE).min(limit - 1);
            let hi = |m: f64, limit: u32| ((m + s.radius).ceil().max(0.0) as u32 / TILE).min(limit - 1);
            for ty in lo(s.mean[1], tiles_y)..=hi(s.mean[1], tiles_y) {
                for tx in lo(s.mean[0], tiles_x)..=hi(s.mean[0], tiles_x) {
                    bins[(ty * tiles_x + tx) as usize].push(k as u32);
                }
            }
        }
        Self {
            splats,
            width,
            height,
            tiles_x,
            bins,
        }
    }

    /// Walks the splats covering pixel `(x, y)` front to back, calling
    /// `visit(splat, T * alpha * G)`. Returns the residual transmittance.
    pub fn shade(&self, x: u32, y: u32, mut visit: impl FnMut(&Splat2D, f64)) -> f64 {
        let bin = &self.bins[((y / TILE) * self.tiles_x + x / TILE) as usize];
        let (fx, fy) = (x as f64, y as f64);
        let mut t = 1.0;
        for &k in bin {
            let s = &self.splats[k as usize];
            let Some(a) = s.coverage(fx, fy) else { continue };
            visit(s, t * a);
            t *= 1.0 - a;
            if t < MIN_TRANSMITTANCE {
                break;
            }
        }
        t
    }

    pub fn pixel_color(&self, x: u32, y: u32, background: [f32; 3]) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        let t = self.shade(x, y, |s, w| {
            for k in 0..3 {
                c[k] += w * s.color[k] as f64;
            }
        });
        std::array::from_fn(|k| (c[k] + t * background[k] as f64).clamp(0.0, 1.0))
    }

    pub fn image(&self, background: [f32; 3]) -> ImageBuffer {
        let (w, h) = (self.width, self.height);
        let tiles_y = h.div_ceil(TILE);
        let tiles: Vec<(u32, Vec<f32>)> = (0..self.tiles_x * tiles_y)
            .into_par_iter()
            .map(|tile| {
                let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
                let mut block = Vec::with_capacity((TILE * TILE * 3) as usize);
                for y in ty * TILE..((ty + 1) * TILE).min(h) {
                    for x in tx * TILE..((tx + 1) * TILE).min(w) {
                        block.extend(self.pixel_color(x, y, background).map(|v| v as f32));
                    }
                }
                (tile, block)
            })
            .collect();
        let mut img = ImageBuffer::new(w, h, 3);
        for (tile, block) in tiles {
            let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
            let mut values = block.chunks_exact(3);
            for y in ty * TILE..((ty + 1) * TILE).min(h) {
                for x in tx * TILE..((tx + 1) * TILE).min(w) {
                    img.pixel_mut(x, y).copy_from_slice(values.next().expect("tile block size"));
                }
            }
        }
        img
    }
}

/// Composites `splats` over `background` at the camera resolution.
pub fn rasterize(splats: &[Splat2D], camera: &Camera, background: [f32; 3]) -> ImageBuffer {
    Raster::new(splats.to_vec(), camera).image(background)
}

pub fn render(scene: &GaussianScene, camera: &Camera, background: [f32; 3]) -> ImageBuffer {
    Raster::new(project(scene, camera).splats, camera).image(background)
}

/// World point on the ray through pixel `(x, y)` at the depth where the
/// accumulated opacity crosses one half, or `None` if it never does.
pub fn depth_at(scene: &GaussianScene, camera: &Camera, x: u32, y: u32) -> Option<Vector3<f64>> {
    if x >= camera.width || y >= camera.height {
        return None;
    }
    let raster = Raster::new(project(scene, camera).splats, camera);
    let mut accumulated = 0.0;
    let mut hit = None;
    raster.shade(x, y, |s, w| {
        accumulated += w;
        if hit.is_none() && accumulated >= 0.5 {
            hit = Some(s.depth);
        }
    });
    hit.map(|z| camera.unproject(x as f64, y as f64, z))
}
