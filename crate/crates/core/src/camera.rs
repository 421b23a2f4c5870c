//! Pinhole cameras with camera-to-world poses.
//!
//! Camera space follows the OpenCV convention: +x right, +y down, +z forward.
//! Pixel `(x, y)` is centered at continuous image coordinate `(x, y)`.

use std::path::PathBuf;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};

/// Depth below which points are treated as behind the camera.
pub const NEAR_PLANE: f64 = 0.01;

const ORTHONORMAL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rigid transform.
    pub pose: Matrix4<f64>,
    pub image_path: Option<PathBuf>,
}

/// What made a camera invalid; the JSON loader turns these into pointers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CameraDefect {
    NonPositive(&'static str),
    NotOrthonormal,
    Reflection,
    BadBottomRow,
}

pub type CameraSet = Vec<Camera>;

impl Camera {
    /// Camera at the origin looking down +z.
    pub fn identity(width: u32, height: u32, f: f64) -> Self {
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            pose: Matrix4::identity(),
            image_path: None,
        }
    }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image -y.
    pub fn look_at(width: u32, height: u32, f: f64, eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_columns(&[right, down, forward]);
        let mut pose = Matrix4::identity();
        pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        pose.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye.coords);
        Self {
            pose,
            ..Self::identity(width, height, f)
        }
    }

    pub fn validate(&self) -> Result<(), CameraDefect> {
        if self.width == 0 {
            return Err(CameraDefect::NonPositive("width"));
        }
        if self.height == 0 {
            return Err(CameraDefect::NonPositive("height"));
        }
        if !(self.fx > 0.0) {
            return Err(CameraDefect::NonPositive("fx"));
        }
        if !(self.fy > 0.0) {
            return Err(CameraDefect::NonPositive("fy"));
        }
        let bottom = self.pose.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(CameraDefect::BadBottomRow);
        }
        let r = self.rotation_c2w();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= ORTHONORMAL_TOL) || !self.pose.iter().all(|v| v.is_finite()) {
            return Err(CameraDefect::NotOrthonormal);
        }
        if r.determinant() < 0.0 {
            return Err(CameraDefect::Reflection);
        }
        Ok(())
    }

    pub fn rotation_c2w(&self) -> Matrix3<f64> {
        self.pose.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Camera center in world space.
    pub fn position(&self) -> Vector3<f64> {
        self.pose.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// World-to-camera rotation `W`.
    pub fn rotation_w2c(&self) -> Matrix3<f64> {
        self.rotation_c2w().transpose()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_w2c() * (p - self.position())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_c2w() * p + self.position()
    }

    /// Continuous pixel coordinates and depth of a world point, `None` when
    /// the point is not in front of the near plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= NEAR_PLANE {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// World point on the ray through pixel `(u, v)` at camera-space depth `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let c = Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z);
        self.camera_to_world(&c)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
