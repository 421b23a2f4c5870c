//! Column-oriented storage for a set of 3D Gaussians.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Number of `f_rest_*` coefficients for SH degrees 0..=3.
pub const SH_REST_LENS: [usize; 4] = [0, 9, 24, 45];

/// A Gaussian splat scene, one entry per Gaussian in every array.
///
/// Values are kept exactly as they are stored on disk: rotations are
/// unnormalized `(w, x, y, z)` quaternions, scales are natural logs and
/// opacities are logits. Activation happens at the use sites.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub centers: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<[f32; 3]>,
    pub opacity_logits: Vec<f32>,
    pub sh_dc: Vec<[f32; 3]>,
    /// Flattened higher-order SH coefficients, `sh_rest_len` per Gaussian,
    /// channel-major as in the PLY layout (`f_rest_0..` = all red first).
    pub sh_rest: Vec<f32>,
    pub sh_rest_len: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("attribute `{attribute}` has {actual} entries, expected {expected}")]
    Length {
        attribute: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported SH rest length {0} (expected one of 0, 9, 24, 45)")]
    ShRestLen(usize),
    #[error("non-finite `{attribute}` at Gaussian {index}")]
    NonFinite { attribute: &'static str, index: usize },
}

impl GaussianScene {
    /// Creates an empty scene with the given number of SH rest coefficients.
    pub fn with_sh_rest_len(sh_rest_len: usize) -> Self {
        Self {
            sh_rest_len,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Appends one Gaussian. `sh_rest` must hold `sh_rest_len` values.
    pub fn push(
        &mut self,
        center: [f32; 3],
        rotation: [f32; 4],
        log_scale: [f32; 3],
        opacity_logit: f32,
        sh_dc: [f32; 3],
        sh_rest: &[f32],
    ) {
        assert_eq!(sh_rest.len(), self.sh_rest_len, "sh_rest length mismatch");
        self.centers.push(center);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.sh_dc.push(sh_dc);
        self.sh_rest.extend_from_slice(sh_rest);
    }

    pub fn sh_degree(&self) -> usize {
        SH_REST_LENS
            .iter()
            .position(|&n| n == self.sh_rest_len)
            .unwrap_or(0)
    }

    pub fn sh_rest_of(&self, index: usize) -> &[f32] {
        &self.sh_rest[index * self.sh_rest_len..(index + 1) * self.sh_rest_len]
    }

    /// Checks array congruence and finiteness of every attribute.
    pub fn validate(&self) -> Result<(), SceneError> {
        if !SH_REST_LENS.contains(&self.sh_rest_len) {
            return Err(SceneError::ShRestLen(self.sh_rest_len));
        }
        let n = self.len();
        let lengths = [
            ("rotations", self.rotations.len()),
            ("log_scales", self.log_scales.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("sh_dc", self.sh_dc.len()),
        ];
        for (attribute, actual) in lengths {
            if actual != n {
                return Err(SceneError::Length {
                    attribute,
                    expected: n,
                    actual,
                });
            }
        }
        if self.sh_rest.len() != n * self.sh_rest_len {
            return Err(SceneError::Length {
                attribute: "sh_rest",
                expected: n * self.sh_rest_len,
                actual: self.sh_rest.len(),
            });
        }
        for i in 0..n {
            let checks: [(&'static str, bool); 6] = [
                ("centers", self.centers[i].iter().all(|v| v.is_finite())),
                ("rotations", self.rotations[i].iter().all(|v| v.is_finite())),
                ("log_scales", self.log_scales[i].iter().all(|v| v.is_finite())),
                ("opacity_logits", self.opacity_logits[i].is_finite()),
                ("sh_dc", self.sh_dc[i].iter().all(|v| v.is_finite())),
                ("sh_rest", self.sh_rest_of(i).iter().all(|v| v.is_finite())),
            ];
            if let Some((attribute, _)) = checks.iter().find(|(_, ok)| !ok) {
                return Err(SceneError::NonFinite {
                    attribute,
                    index: i,
                });
            }
        }
        Ok(())
    }

    /// Bitwise equality of every float payload (distinguishes `-0.0`, NaN bits).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        fn bits<const N: usize>(a: &[[f32; N]], b: &[[f32; N]]) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()))
        }
        fn flat(a: &[f32], b: &[f32]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits())
        }
        self.sh_rest_len == other.sh_rest_len
            && bits(&self.centers, &other.centers)
            && bits(&self.rotations, &other.rotations)
            && bits(&self.log_scales, &other.log_scales)
            && flat(&self.opacity_logits, &other.opacity_logits)
            && bits(&self.sh_dc, &other.sh_dc)
            && flat(&self.sh_rest, &other.sh_rest)
    }

    pub fn center(&self, index: usize) -> Vector3<f64> {
        let c = self.centers[index];
        Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)
    }

    /// Activated opacity, `sigmoid(logit)`.
    pub fn opacity(&self, index: usize) -> f32 {
        sigmoid(self.opacity_logits[index])
    }

    /// Activated axis scales, `exp(log_scale)`.
    pub fn scale(&self, index: usize) -> [f32; 3] {
        self.log_scales[index].map(f32::exp)
    }

    /// Normalized rotation of Gaussian `index`. A zero quaternion maps to identity.
    pub fn unit_rotation(&self, index: usize) -> UnitQuaternion<f64> {
        quat_from_wxyz(self.rotations[index])
    }

    /// World-space covariance `R S S^T R^T`.
    pub fn covariance(&self, index: usize) -> Matrix3<f64> {
        let r = self.unit_rotation(index).to_rotation_matrix().into_inner();
        let s = self.scale(index);
        let s = Matrix3::from_diagonal(&Vector3::new(s[0] as f64, s[1] as f64, s[2] as f64));
        let m = r * s;
        m * m.transpose()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.centers.iter().map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)))
    }

    /// Length of the bounding-box diagonal over all centers, 0 for an empty scene.
    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map(|b| b.diagonal()).unwrap_or(0.0)
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn quat_from_wxyz(q: [f32; 4]) -> UnitQuaternion<f64> {
    let raw = nalgebra::Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
    if raw.norm() == 0.0 {
        UnitQuaternion::identity()
    } else {
        UnitQuaternion::from_quaternion(raw)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points(points: impl IntoIterator<Item = Vector3<f64>>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let mut b = Aabb {
            min: first,
            max: first,
        };
        for p in iter {
            b.min = b.min.inf(&p);
            b.max = b.max.sup(&p);
        }
        Some(b)
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> GaussianScene {
        let mut s = GaussianScene::default();
        s.push([0.0; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, [0.0; 3], &[]);
        s
    }

    #[test]
    fn activations_at_zero() {
        let s = one();
        assert_eq!(s.scale(0), [1.0, 1.0, 1.0]);
        assert_eq!(s.opacity(0), 0.5);
        assert_eq!(s.covariance(0), Matrix3::identity());
    }

    #[test]
    fn validate_rejects_nan() {
        let mut s = one();
        s.opacity_logits[0] = f32::NAN;
        assert_eq!(
            s.validate(),
            Err(SceneError::NonFinite {
                attribute: "opacity_logits",
                index: 0
            })
        );
    }

    #[test]
    fn validate_rejects_ragged_arrays() {
        let mut s = one();
        s.sh_dc.push([0.0; 3]);
        assert!(matches!(s.validate(), Err(SceneError::Length { attribute: "sh_dc", .. })));
    }

    #[test]
    fn bitwise_eq_sees_signed_zero() {
        let a = one();
        let mut b = one();
        assert!(a.bitwise_eq(&b));
        b.centers[0][0] = -0.0;
        assert_eq!(a, b);
        assert!(!a.bitwise_eq(&b));
    }

    #[test]
    fn unnormalized_rotation_is_normalized_at_use() {
        let mut s = one();
        s.rotations[0] = [2.0, 0.0, 0.0, 0.0];
        assert!((s.unit_rotation(0).angle()).abs() < 1e-12);
        assert_eq!(s.rotations[0], [2.0, 0.0, 0.0, 0.0]);
    }
}
