//! User drag intent: handle points with targets, fixed anchors and an
//! optional region restricting which Gaussians take part in the edit.

use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handle {
    pub source: Vector3<f64>,
    pub target: Vector3<f64>,
}

impl Handle {
    pub fn displacement(&self) -> Vector3<f64> {
        self.target - self.source
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Region {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Region::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
            Region::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DragSpec {
    pub handles: Vec<Handle>,
    pub anchors: Vec<Vector3<f64>>,
    pub region: Option<Region>,
    pub auto_anchor_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DragDefect {
    #[error("drag spec has no handles")]
    NoHandles,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("handle source lies outside the region")]
    HandleOutsideRegion,
    #[error("invalid region")]
    BadRegion,
    #[error("auto_anchor_radius must be finite and >= 0")]
    BadRadius,
}

impl DragSpec {
    /// Returns the first defect together with the JSON pointer it refers to.
    pub fn check(&self) -> Result<(), (String, DragDefect)> {
        let finite = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        if self.handles.is_empty() {
            return Err(("/handles".into(), DragDefect::NoHandles));
        }
        for (i, h) in self.handles.iter().enumerate() {
            if !finite(&h.source) {
                return Err((format!("/handles/{i}/source"), DragDefect::NonFinite));
            }
            if !finite(&h.target) {
                return Err((format!("/handles/{i}/target"), DragDefect::NonFinite));
            }
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if !finite(a) {
                return Err((format!("/anchors/{i}"), DragDefect::NonFinite));
            }
        }
        if let Some(region) = &self.region {
            let ok = match region {
                Region::Box { min, max } => finite(min) && finite(max) && (0..3).all(|k| min[k] <= max[k]),
                Region::Sphere { center, radius } => finite(center) && radius.is_finite() && *radius >= 0.0,
            };
            if !ok {
                return Err(("/region".into(), DragDefect::BadRegion));
            }
            for (i, h) in self.handles.iter().enumerate() {
                if !region.contains(&h.source) {
                    return Err((format!("/handles/{i}/source"), DragDefect::HandleOutsideRegion));
                }
            }
        }
        if let Some(r) = self.auto_anchor_radius {
            if !(r.is_finite() && r >= 0.0) {
                return Err(("/auto_anchor_radius".into(), DragDefect::BadRadius));
            }
        }
        Ok(())
    }

    pub fn in_region(&self, p: &Vector3<f64>) -> bool {
        self.region.as_ref().is_none_or(|r| r.contains(p))
    }

    /// True when every handle keeps its source position.
    pub fn is_identity(&self) -> bool {
        self.handles.iter().all(|h| h.source == h.target)
    }
}
