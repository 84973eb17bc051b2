//! Pinhole intrinsics, stereo relations and inverse-depth conversions.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Domain(format!("focal lengths must be positive, got fx={fx}, fy={fy}")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, 0.0, 1.0)
    }

    /// Camera-frame point seen through the center of pixel `(x, y)` at `depth` meters.
    pub fn back_project_center(&self, x: usize, y: usize, depth: f64) -> Vector3<f64> {
        let u = x as f64 + 0.5;
        let v = y as f64 + 0.5;
        Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }
}

/// Relation between the two images of a stereo pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StereoGeometry {
    /// Rectified binocular pair with focal length `f` [px] and baseline `b` [m].
    Rectified { f: f64, b: f64 },
    /// Motion stereo: second view obtained by `(rotation, translation)` applied to first-view points.
    Motion { k: CameraIntrinsics, rotation: Matrix3<f64>, translation: Vector3<f64> },
}

impl StereoGeometry {
    pub fn rectified(f: f64, b: f64) -> Result<Self> {
        if !(f > 0.0 && b > 0.0) {
            return Err(Error::Domain(format!("rectified geometry needs f > 0 and b > 0, got f={f}, b={b}")));
        }
        Ok(StereoGeometry::Rectified { f, b })
    }

    pub fn motion(k: CameraIntrinsics, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let defect = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        if defect >= 1e-9 || rotation.determinant() <= 0.0 {
            return Err(Error::Domain("motion rotation is not a proper orthonormal matrix".into()));
        }
        Ok(StereoGeometry::Motion { k, rotation, translation })
    }

    /// `f * b` for rectified pairs.
    pub fn focal_baseline(&self) -> Result<f64> {
        match *self {
            StereoGeometry::Rectified { f, b } => Ok(f * b),
            StereoGeometry::Motion { .. } => Err(Error::UnsupportedGeometry { expected: "rectified" }),
        }
    }
}

/// Depth in meters from inverse depth.
pub fn inv_depth_to_depth(d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("inverse depth must be positive, got {d}")));
    }
    Ok(1.0 / d)
}

/// Disparity in pixels from inverse depth, `f * b * d`.
pub fn inv_depth_to_disparity(d: f64, geometry: &StereoGeometry) -> Result<f64> {
    let fb = geometry.focal_baseline()?;
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("inverse depth must be non-negative, got {d}")));
    }
    Ok(fb * d)
}

/// Inverse of [`inv_depth_to_disparity`].
pub fn disparity_to_inv_depth(disparity: f64, geometry: &StereoGeometry) -> Result<f64> {
    Ok(disparity / geometry.focal_baseline()?)
}

/// Rotation from roll/pitch/yaw offsets in degrees about the camera x, y and z axes.
///
/// Yaw here is a rotation about the vertical (y) axis, which shifts projections horizontally.
pub fn rotation_from_degrees(about_x: f64, about_y: f64, about_z: f64) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), about_x.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), about_y.to_radians());
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), about_z.to_radians());
    (rz * ry * rx).into_inner()
}

/// Inverse of [`rotation_from_degrees`] for rotations with `|about_y| < 90`.
pub fn rotation_to_degrees(r: &Matrix3<f64>) -> [f64; 3] {
    let (x, y, z) = Rotation3::from_matrix_unchecked(*r).euler_angles();
    [x.to_degrees(), y.to_degrees(), z.to_degrees()]
}

/// Rotation angle (degrees) of `a^T b`.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}
