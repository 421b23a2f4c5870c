//! Dragging accuracy index between original and edited renders.
//!
//! For each patch radius `gamma`, the squared difference between the patch
//! around each handle source in the original image and the patch around its
//! target in the edited image, normalized by the patch area, summed over
//! handles and averaged over views. The final value averages the radii.
//! Channels are summed and patches clamp to the image edge.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::drag::Handle;
use crate::image::ImageBuffer;

pub const DEFAULT_GAMMAS: [u32; 4] = [1, 5, 10, 20];
pub const DEFAULT_VIEWS: usize = 10;

/// Integer pixel coordinates.
pub type Pixel = [i64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub gammas: Vec<u32>,
    pub views: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gammas: DEFAULT_GAMMAS.to_vec(),
            views: DEFAULT_VIEWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaiView {
    pub original: ImageBuffer,
    pub edited: ImageBuffer,
    /// `(source, target)` pixel per handle.
    pub pairs: Vec<(Pixel, Pixel)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaiReport {
    pub dai: f64,
    pub per_gamma: BTreeMap<u32, f64>,
    /// Mean over radii of each view's handle sum.
    pub per_view: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no views to evaluate")]
    NoViews,
    #[error("view {0} has no handles")]
    NoHandles(usize),
    #[error("view {0}: original and edited images differ in shape")]
    Shape(usize),
    #[error("no patch radii given")]
    NoGammas,
}

/// Rounded pixel positions of each handle's source and target in every
/// camera; `None` for a camera that sees any of them behind it.
pub fn project_handles(handles: &[Handle], cameras: &[Camera]) -> Vec<Option<Vec<(Pixel, Pixel)>>> {
    let round = |cam: &Camera, p| cam.project(p).map(|(u, v, _)| [u.round() as i64, v.round() as i64]);
    cameras
        .iter()
        .enumerate()
        .map(|(v, cam)| {
            let pairs: Option<Vec<_>> = handles
                .iter()
                .map(|h| Some((round(cam, &h.source)?, round(cam, &h.target)?)))
                .collect();
            if pairs.is_none() {
                log::warn!("view {v}: a handle point is behind the camera; view skipped");
            }
            pairs
        })
        .collect()
}

/// `|patch(a, p) - patch(b, q)|^2 / (1 + 2 gamma)^2`.
pub fn patch_distance(a: &ImageBuffer, p: Pixel, b: &ImageBuffer, q: Pixel, gamma: u32) -> f64 {
    let g = gamma as i64;
    let mut sum = 0.0;
    for dy in -g..=g {
        for dx in -g..=g {
            for c in 0..a.channels {
                let d = a.get_clamped(p[0] + dx, p[1] + dy, c) as f64 - b.get_clamped(q[0] + dx, q[1] + dy, c) as f64;
                sum += d * d;
            }
        }
    }
    let side = (1 + 2 * g) as f64;
    sum / (side * side)
}

pub fn dai(views: &[DaiView], gammas: &[u32]) -> Result<DaiReport, MetricError> {
    if views.is_empty() {
        return Err(MetricError::NoViews);
    }
    if gammas.is_empty() {
        return Err(MetricError::NoGammas);
    }
    for (v, view) in views.iter().enumerate() {
        if view.pairs.is_empty() {
            return Err(MetricError::NoHandles(v));
        }
        if view.original.shape() != view.edited.shape() {
            return Err(MetricError::Shape(v));
        }
    }
    // table[v][g] = sum over handles
    let table: Vec<Vec<f64>> = views
        .par_iter()
        .map(|view| {
            gammas
                .iter()
                .map(|&g| {
                    view.pairs
                        .iter()
                        .map(|&(p, q)| patch_distance(&view.original, p, &view.edited, q, g))
                        .sum()
                })
                .collect()
        })
        .collect();
    let n = views.len() as f64;
    let per_gamma: BTreeMap<u32, f64> = gammas
        .iter()
        .enumerate()
        .map(|(k, &g)| (g, table.iter().map(|row| row[k]).sum::<f64>() / n))
        .collect();
    let per_view = table.iter().map(|row| row.iter().sum::<f64>() / gammas.len() as f64).collect();
    let dai = gammas.iter().map(|g| per_gamma[g]).sum::<f64>() / gammas.len() as f64;
    Ok(DaiReport { dai, per_gamma, per_view })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn pinhole_projection_rounds() {
        let cam = Camera::identity(100, 100, 100.0);
        let h = Handle {
            source: Vector3::new(0.0, 0.0, 10.0),
            target: Vector3::new(1.0, 0.0, 10.0),
        };
        let out = project_handles(&[h], &[cam.clone()]);
        assert_eq!(out[0], Some(vec![([50, 50], [60, 50])]));
        let behind = Handle {
            source: Vector3::new(0.0, 0.0, -1.0),
            target: Vector3::zeros(),
        };
        assert_eq!(project_handles(&[behind], &[cam]), vec![None]);
    }

    #[test]
    fn identity_edit_is_zero() {
        let img = ImageBuffer::from_fn(12, 9, 3, |x, y, c| ((x * 7 + y * 3 + c as u32) % 11) as f32 / 10.0);
        let view = DaiView {
            original: img.clone(),
            edited: img,
            pairs: vec![([0, 0], [0, 0]), ([11, 8], [11, 8]), ([5, 4], [5, 4])],
        };
        assert_eq!(dai(&[view], &DEFAULT_GAMMAS).unwrap().dai, 0.0);
    }

    #[test]
    fn scaling_difference_scales_quadratically() {
        let a = ImageBuffer::from_fn(10, 10, 1, |x, y, _| ((x + y) % 4) as f32 * 0.125);
        let b = ImageBuffer::from_fn(10, 10, 1, |x, y, _| a.pixel(x, y)[0] + 0.0625 * (x % 3) as f32);
        let b2 = ImageBuffer::from_fn(10, 10, 1, |x, y, _| a.pixel(x, y)[0] + 0.125 * (x % 3) as f32);
        let pairs = vec![([2, 3], [2, 3])];
        let v1 = DaiView { original: a.clone(), edited: b, pairs: pairs.clone() };
        let v2 = DaiView { original: a, edited: b2, pairs };
        let d1 = dai(&[v1], &[1, 2]).unwrap().dai;
        let d2 = dai(&[v2], &[1, 2]).unwrap().dai;
        assert!((d2 - 4.0 * d1).abs() < 1e-15);
    }

    #[test]
    fn swap_symmetry_and_corner_handles() {
        let a = ImageBuffer::from_fn(8, 8, 3, |x, y, c| ((x * 5 + y + c as u32) % 7) as f32 / 7.0);
        let b = ImageBuffer::from_fn(8, 8, 3, |x, y, c| ((x + y * 3 + c as u32) % 5) as f32 / 5.0);
        let fwd = DaiView { original: a.clone(), edited: b.clone(), pairs: vec![([0, 0], [7, 7]), ([7, 0], [0, 7])] };
        let back = DaiView { original: b, edited: a, pairs: vec![([7, 7], [0, 0]), ([0, 7], [7, 0])] };
        let g = [0, 3, 20];
        assert_eq!(dai(&[fwd], &g).unwrap().dai, dai(&[back], &g).unwrap().dai);
    }

    #[test]
    fn rejects_empty_inputs() {
        assert_eq!(dai(&[], &[1]), Err(MetricError::NoViews));
        let img = ImageBuffer::new(2, 2, 3);
        let v = DaiView { original: img.clone(), edited: img, pairs: vec![] };
        assert_eq!(dai(&[v], &[1]), Err(MetricError::NoHandles(0)));
    }
}
