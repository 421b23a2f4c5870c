//! Mask-guided appearance refinement after a deformation.
//!
//! Views whose renders changed get their supervision images periodically
//! replaced by enhanced renders of the current scene, merged with the
//! original captures outside the edit mask. The DC color of every moved
//! Gaussian is then fitted to that supervision with an L1 loss restricted to
//! the mask. Compositing weights are held fixed within a step, so the color
//! gradient is exact.

use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::image::{ImageBuffer, ImageError, MaskBuffer};
use crate::render::{project, Raster, FOOTPRINT_D2, SH_C0};
use crate::scene::GaussianScene;

pub const DEFAULT_UPDATE_PERIOD: usize = 10;
pub const DEFAULT_LEARNING_RATE: f64 = 0.0025;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Enhancer {
    #[default]
    Identity,
    /// 3x3 unsharp mask: `2 I - box3(I)`.
    Sharpen,
    /// Runs `<command> <input.png> <output.png>` through `sh -c`.
    External { command: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Supervision is refreshed every this many steps.
    pub update_period: usize,
    pub views_per_update: usize,
    /// `None` picks 800 to 2000 steps from the scene size.
    pub total_iters: Option<usize>,
    /// Movement threshold as a fraction of the scene bbox diagonal.
    pub displacement_threshold: f64,
    pub mask_dilation: u32,
    pub learning_rate: f64,
    pub enhancer: Enhancer,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            update_period: DEFAULT_UPDATE_PERIOD,
            views_per_update: 1,
            total_iters: None,
            displacement_threshold: 0.01,
            mask_dilation: 4,
            learning_rate: DEFAULT_LEARNING_RATE,
            enhancer: Enhancer::Identity,
        }
    }
}

impl RefineConfig {
    /// 800 steps up to 500k Gaussians, rising linearly to 2000 at 3M.
    pub fn steps_for(&self, gaussians: usize) -> usize {
        self.total_iters.unwrap_or_else(|| {
            let f = ((gaussians as f64 - 500_000.0) / 2_500_000.0).clamp(0.0, 1.0);
            800 + (1200.0 * f).round() as usize
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("refinement needs at least one view")]
    NoViews,
    #[error("update_period, views_per_update and total_iters must be at least 1")]
    BadSchedule,
    #[error("view {view}: {what} is {got:?}, camera is {want:?}")]
    Shape {
        view: usize,
        what: &'static str,
        got: (u32, u32),
        want: (u32, u32),
    },
    #[error("original and deformed scenes have different Gaussian counts")]
    SceneMismatch,
}

#[derive(Debug, thiserror::Error)]
pub enum EnhanceError {
    #[error("enhancer command failed to start: {0}")]
    Spawn(std::io::Error),
    #[error("enhancer command exited with {0}")]
    Exit(std::process::ExitStatus),
    #[error("enhancer changed image size from {0:?} to {1:?}")]
    Size((u32, u32), (u32, u32)),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("temporary files: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-Gaussian flag: moved by more than `tau_abs`.
pub fn moved_gaussians(original: &GaussianScene, deformed: &GaussianScene, tau_abs: f64) -> Vec<bool> {
    (0..original.len())
        .map(|i| (deformed.center(i) - original.center(i)).norm() > tau_abs)
        .collect()
}

/// Pixels covered by the 3-sigma footprints of the moved Gaussians in the
/// deformed scene, dilated by `dilation` pixels.
pub fn displacement_mask(
    original: &GaussianScene,
    deformed: &GaussianScene,
    camera: &Camera,
    tau_abs: f64,
    dilation: u32,
) -> MaskBuffer {
    let moved = moved_gaussians(original, deformed, tau_abs);
    let mut mask = MaskBuffer::new(camera.width, camera.height);
    if !moved.iter().any(|m| *m) {
        return mask;
    }
    let (w, h) = (camera.width as i64, camera.height as i64);
    for s in project(deformed, camera).splats.iter().filter(|s| moved[s.index]) {
        let x0 = ((s.mean[0] - s.radius).floor() as i64).max(0);
        let x1 = ((s.mean[0] + s.radius).ceil() as i64).min(w - 1);
        let y0 = ((s.mean[1] - s.radius).floor() as i64).max(0);
        let y1 = ((s.mean[1] + s.radius).ceil() as i64).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if s.mahalanobis2(x as f64, y as f64) <= FOOTPRINT_D2 {
                    mask.set(x as u32, y as u32, true);
                }
            }
        }
    }
    mask.dilate(dilation)
}

/// `M * sr + (1 - M) * gt`, as a per-pixel select.
pub fn merge_images(sr: &ImageBuffer, gt: &ImageBuffer, mask: &MaskBuffer) -> Result<ImageBuffer, ImageError> {
    if sr.shape() != gt.shape() {
        return Err(ImageError::Shape(sr.shape(), gt.shape()));
    }
    if (mask.width, mask.height) != (sr.width, sr.height) {
        return Err(ImageError::Shape(sr.shape(), (mask.width, mask.height, 1)));
    }
    let c = sr.channels;
    let mut out = gt.clone();
    for (p, &m) in mask.bits.iter().enumerate() {
        if m {
            out.data[p * c..(p + 1) * c].copy_from_slice(&sr.data[p * c..(p + 1) * c]);
        }
    }
    Ok(out)
}

fn sharpen(image: &ImageBuffer) -> ImageBuffer {
    ImageBuffer::from_fn(image.width, image.height, image.channels, |x, y, c| {
        let mut sum = 0.0f64;
        for dy in -1..=1 {
            for dx in -1..=1 {
                sum += image.get_clamped(x as i64 + dx, y as i64 + dy, c) as f64;
            }
        }
        let v = image.pixel(x, y)[c] as f64;
        (v + (v - sum / 9.0)).clamp(0.0, 1.0) as f32
    })
}

fn run_external(image: &ImageBuffer, command: &str) -> Result<ImageBuffer, EnhanceError> {
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("input.png");
    let output = dir.path().join("output.png");
    image.write_png(&input)?;
    let status = Command::new("sh")
        .arg("-c")
        .arg(format!("{command} \"$1\" \"$2\""))
        .arg("arapgs-enhancer")
        .arg(&input)
        .arg(&output)
        .status()
        .map_err(EnhanceError::Spawn)?;
    if !status.success() {
        return Err(EnhanceError::Exit(status));
    }
    let out = ImageBuffer::read_png(&output)?;
    if (out.width, out.height) != (image.width, image.height) {
        return Err(EnhanceError::Size((image.width, image.height), (out.width, out.height)));
    }
    Ok(out)
}

pub fn enhance(image: &ImageBuffer, enhancer: &Enhancer) -> Result<ImageBuffer, EnhanceError> {
    match enhancer {
        Enhancer::Identity => Ok(image.clone()),
        Enhancer::Sharpen => Ok(sharpen(image)),
        Enhancer::External { command } => run_external(image, command),
    }
}

/// One training view.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    /// The captured image `I_gt`.
    pub original: ImageBuffer,
    /// Current target, initially `original`.
    pub supervision: ImageBuffer,
    pub mask: MaskBuffer,
    pub last_enhanced: Option<usize>,
}

impl View {
    pub fn new(camera: Camera, original: ImageBuffer, mask: MaskBuffer) -> Self {
        Self {
            camera,
            supervision: original.clone(),
            original,
            mask,
            last_enhanced: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewDataset {
    pub views: Vec<View>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub view: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub scene: GaussianScene,
    pub losses: Vec<LossRecord>,
    pub optimized: usize,
    pub updates: usize,
    pub enhancer_fallbacks: usize,
}

/// `step,view,loss` lines with a header.
pub fn loss_csv(losses: &[LossRecord]) -> String {
    let mut out = String::from("step,view,loss\n");
    for r in losses {
        out.push_str(&format!("{},{},{:e}\n", r.step, r.view, r.loss));
    }
    out
}

struct Adam {
    m: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [[f32; 3]], grads: &[[f64; 3]], selected: &[usize], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (slot, &i) in selected.iter().enumerate() {
            for c in 0..3 {
                let g = grads[i][c];
                let m = &mut self.m[slot][c];
                let v = &mut self.v[slot][c];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                params[i][c] = (params[i][c] as f64 - update) as f32;
            }
        }
    }
}

/// Masked L1 loss of the current scene in `view` and its gradient with
/// respect to every Gaussian's DC coefficients.
pub fn masked_l1(scene: &GaussianScene, view: &View, background: [f32; 3]) -> (f64, Vec<[f64; 3]>) {
    let raster = Raster::new(project(scene, &view.camera).splats, &view.camera);
    let w = view.camera.width;
    let pixels: Vec<u32> = (0..view.mask.bits.len() as u32).filter(|&p| view.mask.bits[p as usize]).collect();
    let mut grads = vec![[0.0f64; 3]; scene.len()];
    if pixels.is_empty() {
        return (0.0, grads);
    }
    let per_pixel: Vec<(f64, Vec<(usize, [f64; 3])>)> = pixels
        .par_iter()
        .map(|&p| {
            let (x, y) = (p % w, p / w);
            let mut color = [0.0f64; 3];
            let mut hits = Vec::new();
            let t = raster.shade(x, y, |s, weight| {
                for c in 0..3 {
                    color[c] += weight * s.color[c] as f64;
                }
                hits.push((s.index, weight, s.color_raw));
            });
            let target = view.supervision.pixel(x, y);
            let mut loss = 0.0;
            let mut sign = [0.0f64; 3];
            for c in 0..3 {
                let r = (color[c] + t * background[c] as f64).clamp(0.0, 1.0) - target[c] as f64;
                loss += r.abs();
                sign[c] = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
            }
            let contributions = hits
                .into_iter()
                .map(|(i, weight, raw)| {
                    let g = std::array::from_fn(|c| {
                        if (0.0..=1.0).contains(&raw[c]) {
                            sign[c] * weight * SH_C0
                        } else {
                            0.0
                        }
                    });
                    (i, g)
                })
                .collect();
            (loss, contributions)
        })
        .collect();
    let norm = 1.0 / (3 * pixels.len()) as f64;
    let mut loss = 0.0;
    for (l, contributions) in per_pixel {
        loss += l;
        for (i, g) in contributions {
            for c in 0..3 {
                grads[i][c] += g[c] * norm;
            }
        }
    }
    (loss * norm, grads)
}

/// Round-robin refinement of the DC colors of every Gaussian that moved by
/// more than the configured threshold.
pub fn refine(
    original: &GaussianScene,
    deformed: &GaussianScene,
    dataset: &mut ViewDataset,
    config: &RefineConfig,
    background: [f32; 3],
) -> Result<RefineResult, RefineError> {
    refine_with_progress(original, deformed, dataset, config, background, |_, _| {})
}

/// Like [`refine`], reporting `(steps done, total steps)` after every step.
pub fn refine_with_progress(
    original: &GaussianScene,
    deformed: &GaussianScene,
    dataset: &mut ViewDataset,
    config: &RefineConfig,
    background: [f32; 3],
    mut progress: impl FnMut(usize, usize),
) -> Result<RefineResult, RefineError> {
    let n_views = dataset.views.len();
    if n_views == 0 {
        return Err(RefineError::NoViews);
    }
    let steps = config.steps_for(deformed.len());
    if config.update_period == 0 || config.views_per_update == 0 || steps == 0 {
        return Err(RefineError::BadSchedule);
    }
    if original.len() != deformed.len() {
        return Err(RefineError::SceneMismatch);
    }
    for (v, view) in dataset.views.iter().enumerate() {
        let want = (view.camera.width, view.camera.height);
        for (what, got) in [
            ("original image", (view.original.width, view.original.height)),
            ("supervision image", (view.supervision.width, view.supervision.height)),
            ("mask", (view.mask.width, view.mask.height)),
        ] {
            if got != want {
                return Err(RefineError::Shape { view: v, what, got, want });
            }
        }
    }

    let tau_abs = config.displacement_threshold * original.bbox_diagonal();
    let selected: Vec<usize> = moved_gaussians(original, deformed, tau_abs)
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect();
    let mut scene = deformed.clone();
    let mut adam = Adam {
        m: vec![[0.0; 3]; selected.len()],
        v: vec![[0.0; 3]; selected.len()],
        t: 0,
    };
    let mut losses = Vec::with_capacity(steps);
    let mut next_update = 0usize;
    let mut updates = 0;
    let mut enhancer_fallbacks = 0;

    for step in 0..steps {
        if step > 0 && step % config.update_period == 0 {
            for _ in 0..config.views_per_update {
                let v = next_update % n_views;
                next_update += 1;
                let view = &mut dataset.views[v];
                let rendered = crate::render::render(&scene, &view.camera, background);
                let enhanced = enhance(&rendered, &config.enhancer).unwrap_or_else(|err| {
                    log::warn!("view {v}: enhancer failed ({err}); using the plain render");
                    enhancer_fallbacks += 1;
                    rendered
                });
                view.supervision = merge_images(&enhanced, &view.original, &view.mask).expect("shapes checked above");
                view.last_enhanced = Some(step);
                updates += 1;
            }
        }
        let v = step % n_views;
        let (loss, grads) = masked_l1(&scene, &dataset.views[v], background);
        losses.push(LossRecord { step, view: v, loss });
        if !selected.is_empty() && !dataset.views[v].mask.is_empty() {
            adam.step(&mut scene.sh_dc, &grads, &selected, config.learning_rate);
        }
        progress(step + 1, steps);
    }
    Ok(RefineResult {
        scene,
        losses,
        optimized: selected.len(),
        updates,
        enhancer_fallbacks,
    })
}
