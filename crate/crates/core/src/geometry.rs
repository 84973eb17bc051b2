//! Warping of pixels under a hypothesized inverse depth and projection of 3D points.

use nalgebra::{Matrix3, Vector3};

use crate::camera::{CameraIntrinsics, StereoGeometry};
use crate::error::{Error, Result};
use crate::grid::{InvDepthMap, Pixel};

/// Signed pixel coordinate in the second image; may lie outside it.
pub type WarpedPixel = (i64, i64);

// Homogeneous re-projection accumulates a few ulps; snap before flooring so that
// exact correspondences do not drop to the previous integer.
const FLOOR_SNAP: f64 = 1e-9;

/// Rigid transform applied to points before projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Extrinsics { rotation, translation }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &Extrinsics) -> Extrinsics {
        Extrinsics {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }
}

/// `(floor(x0 - f*b*d), x1)`.
#[inline]
pub fn warp_rectified(x: Pixel, d: f64, f: f64, b: f64) -> WarpedPixel {
    ((x.x as f64 - f * b * d).floor() as i64, x.y as i64)
}

/// Back-projects `x` at depth `1/d`, moves it by the camera motion and re-projects.
///
/// Returns `None` when the moved point is not in front of the second camera.
pub fn warp_motion(
    x: Pixel,
    d: f64,
    k: &CameraIntrinsics,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Result<Option<WarpedPixel>> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("motion warp needs positive inverse depth, got {d}")));
    }
    let z = 1.0 / d;
    let ray = Vector3::new((x.x as f64 - k.cx) / k.fx, (x.y as f64 - k.cy) / k.fy, 1.0);
    let moved = rotation * (ray * z) + translation;
    if moved.z <= 0.0 {
        return Ok(None);
    }
    let u = k.fx * (moved.x / moved.z) + k.cx;
    let v = k.fy * (moved.y / moved.z) + k.cy;
    Ok(Some(((u + FLOOR_SNAP).floor() as i64, (v + FLOOR_SNAP).floor() as i64)))
}

/// Correspondence of `x` in the second image for either geometry.
#[inline]
pub fn warp(x: Pixel, d: f64, geometry: &StereoGeometry) -> Option<WarpedPixel> {
    match geometry {
        StereoGeometry::Rectified { f, b } => Some(warp_rectified(x, d, *f, *b)),
        StereoGeometry::Motion { k, rotation, translation } => {
            if d > 0.0 {
                warp_motion(x, d, k, rotation, translation).ok().flatten()
            } else {
                // Zero inverse depth is the point at infinity: only the rotation acts.
                let ray = Vector3::new((x.x as f64 - k.cx) / k.fx, (x.y as f64 - k.cy) / k.fy, 1.0);
                let moved = rotation * ray;
                if moved.z <= 0.0 {
                    return None;
                }
                let u = k.fx * (moved.x / moved.z) + k.cx;
                let v = k.fy * (moved.y / moved.z) + k.cy;
                Some(((u + FLOOR_SNAP).floor() as i64, (v + FLOOR_SNAP).floor() as i64))
            }
        }
    }
}

pub type PointCloud = Vec<Vector3<f64>>;

/// A point that landed inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    /// Index of the source point in the input cloud.
    pub index: usize,
    /// Continuous image coordinates.
    pub x0: f64,
    pub x1: f64,
    /// Camera-frame depth `D` [m].
    pub depth: f64,
    /// `b * f / D` [px].
    pub disparity: f64,
    /// `1 / D` [1/m].
    pub inv_depth: f64,
}

impl ProjectedPoint {
    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.x0.floor() as usize, self.x1.floor() as usize)
    }
}

/// Projects `K (R p + t)` and keeps points with positive depth inside `[0,W) x [0,H)`.
pub fn project_points(
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
    extrinsics: &Extrinsics,
    width: usize,
    height: usize,
    geometry: &StereoGeometry,
) -> Result<Vec<ProjectedPoint>> {
    let fb = geometry.focal_baseline()?;
    let km = k.matrix();
    let mut out = Vec::new();
    for (index, p) in points.iter().enumerate() {
        let h = km * extrinsics.apply(p);
        let depth = h.z;
        if !(depth > 0.0) {
            continue;
        }
        let x0 = h.x / depth;
        let x1 = h.y / depth;
        if !(x0 >= 0.0 && x0 < width as f64 && x1 >= 0.0 && x1 < height as f64) {
            continue;
        }
        out.push(ProjectedPoint { index, x0, x1, depth, disparity: fb / depth, inv_depth: 1.0 / depth });
    }
    Ok(out)
}

/// Rasterizes projections; a pixel hit several times keeps the nearest point.
pub fn sparse_map_from_projection(points: &[ProjectedPoint], width: usize, height: usize) -> InvDepthMap {
    let mut values: Vec<Option<f64>> = vec![None; width * height];
    for p in points {
        let px = p.pixel();
        if px.x >= width || px.y >= height || !(p.inv_depth > 0.0 && p.inv_depth.is_finite()) {
            continue;
        }
        let slot = &mut values[px.index(width)];
        match slot {
            Some(d) if *d >= p.inv_depth => {}
            _ => *slot = Some(p.inv_depth),
        }
    }
    InvDepthMap::new(width, height, values).expect("projected inverse depths are positive")
}

/// Camera-frame point cloud from the non-empty pixels of a map (through pixel centers).
pub fn back_project_map(map: &InvDepthMap, k: &CameraIntrinsics) -> (PointCloud, Vec<Pixel>) {
    map.iter_valid().map(|(px, d)| (k.back_project_center(px.x, px.y, 1.0 / d), px)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::rotation_from_degrees;

    #[test]
    fn rectified_examples() {
        assert_eq!(warp_rectified(Pixel::new(37, 12), 0.0, 123.0, 0.3), (37, 12));
        assert_eq!(warp_rectified(Pixel::new(100, 50), 0.2, 100.0, 0.5), (90, 50));
        assert_eq!(warp_rectified(Pixel::new(10, 0), 0.37, 10.0, 1.0), (6, 0));
    }

    #[test]
    fn motion_identity_is_identity() {
        let k = CameraIntrinsics::new(500.0, 480.0, 319.5, 239.5).unwrap();
        for &d in &[1e-3, 0.1, 0.37, 2.0, 17.0] {
            for y in (0..480).step_by(37) {
                for x in (0..640).step_by(41) {
                    let w = warp_motion(Pixel::new(x, y), d, &k, &Matrix3::identity(), &Vector3::zeros());
                    assert_eq!(w.unwrap(), Some((x as i64, y as i64)), "d={d} x={x} y={y}");
                }
            }
        }
    }

    #[test]
    fn pure_baseline_motion_matches_rectified() {
        let (f, b) = (100.0, 0.5);
        let k = CameraIntrinsics::new(f, f, 64.0, 48.0).unwrap();
        let t = Vector3::new(-b, 0.0, 0.0);
        for &d in &[0.013, 0.11, 0.29, 0.41] {
            for x in [3usize, 50, 90, 127] {
                let px = Pixel::new(x, 20);
                let m = warp_motion(px, d, &k, &Matrix3::identity(), &t).unwrap().unwrap();
                assert_eq!(m, warp_rectified(px, d, f, b), "d={d} x={x}");
            }
        }
    }

    #[test]
    fn motion_yaw_matches_homogeneous_oracle() {
        // Oracle: explicit homogeneous coordinates with a hand-built rotation matrix.
        let k = CameraIntrinsics::new(400.0, 400.0, 160.0, 120.0).unwrap();
        let a = 5f64.to_radians();
        let r = Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos());
        let t = Vector3::new(0.0, 0.0, 1.0);
        let (x0, x1, d) = (160.0, 120.0, 0.1);
        let z = 1.0 / d;
        let p = [(x0 - 160.0) / 400.0 * z, (x1 - 120.0) / 400.0 * z, z];
        let q = [
            r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2],
            r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2],
            r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2] + 1.0,
        ];
        let h = [400.0 * q[0] + 160.0 * q[2], 400.0 * q[1] + 120.0 * q[2], q[2]];
        let expect = ((h[0] / h[2]).floor() as i64, (h[1] / h[2]).floor() as i64);
        // 10 m * sin 5° / (10 cos 5° + 1) * 400 + 160 ≈ 191.7
        assert_eq!(expect, (191, 120));
        let got = warp_motion(Pixel::new(160, 120), d, &k, &r, &t).unwrap().unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn motion_behind_camera_is_absent_and_bad_depth_errors() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        let t = Vector3::new(0.0, 0.0, -20.0);
        assert_eq!(warp_motion(Pixel::new(50, 50), 0.1, &k, &Matrix3::identity(), &t).unwrap(), None);
        assert!(warp_motion(Pixel::new(50, 50), 0.0, &k, &Matrix3::identity(), &t).is_err());
    }

    #[test]
    fn axis_point_hits_principal_point() {
        let k = CameraIntrinsics::new(300.0, 300.0, 64.0, 40.0).unwrap();
        let g = StereoGeometry::rectified(300.0, 0.5).unwrap();
        let pts = vec![Vector3::new(0.0, 0.0, 4.0), Vector3::new(0.0, 0.0, -4.0)];
        let proj = project_points(&pts, &k, &Extrinsics::identity(), 128, 80, &g).unwrap();
        assert_eq!(proj.len(), 1);
        assert_eq!((proj[0].x0, proj[0].x1, proj[0].depth), (64.0, 40.0, 4.0));
        assert_eq!(proj[0].pixel(), Pixel::new(64, 40));
        assert_eq!(proj[0].disparity, 150.0 / 4.0);
    }

    #[test]
    fn cube_matches_per_point_oracle() {
        let k = CameraIntrinsics::new(250.0, 260.0, 100.0, 75.0).unwrap();
        let g = StereoGeometry::rectified(250.0, 0.54).unwrap();
        let ext = Extrinsics::new(Matrix3::identity(), Vector3::new(0.1, 0.0, 0.0));
        let mut cube = Vec::new();
        for &x in &[-0.5, 0.5] {
            for &y in &[-0.5, 0.5] {
                for &z in &[5.0, 6.0] {
                    cube.push(Vector3::new(x, y, z));
                }
            }
        }
        let proj = project_points(&cube, &k, &ext, 200, 150, &g).unwrap();
        assert_eq!(proj.len(), 8);
        for p in &proj {
            let c = cube[p.index];
            let (xx, yy, zz) = (c.x + 0.1, c.y, c.z);
            let u = (250.0 * xx + 100.0 * zz) / zz;
            let v = (260.0 * yy + 75.0 * zz) / zz;
            assert!((p.x0 - u).abs() < 1e-12 && (p.x1 - v).abs() < 1e-12);
            assert_eq!(p.depth, zz);
            assert!((p.disparity - 250.0 * 0.54 / zz).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_map_rules() {
        assert_eq!(sparse_map_from_projection(&[], 4, 3).count_valid(), 0);
        let mk = |x0: f64, x1: f64, depth: f64| ProjectedPoint {
            index: 0,
            x0,
            x1,
            depth,
            disparity: 1.0 / depth,
            inv_depth: 1.0 / depth,
        };
        let one = sparse_map_from_projection(&[mk(3.2, 4.9, 10.0)], 8, 8);
        assert_eq!(one.count_valid(), 1);
        assert_eq!(one.get(3, 4), Some(0.1));
        // Exhaustive two-point oracle: both orders keep the nearer point.
        for pair in [[mk(3.1, 4.1, 5.0), mk(3.7, 4.6, 9.0)], [mk(3.7, 4.6, 9.0), mk(3.1, 4.1, 5.0)]] {
            let m = sparse_map_from_projection(&pair, 8, 8);
            assert_eq!(m.get(3, 4), Some(1.0 / 5.0));
            assert_eq!(m.count_valid(), 1);
        }
    }

    #[test]
    fn dense_projection_roundtrip() {
        let k = CameraIntrinsics::new(120.0, 120.0, 16.0, 12.0).unwrap();
        let g = StereoGeometry::rectified(120.0, 0.3).unwrap();
        let dense: Vec<f64> = (0..32 * 24).map(|i| 0.05 + (i % 17) as f64 * 0.01).collect();
        let map = InvDepthMap::from_dense(32, 24, dense).unwrap();
        let (cloud, _) = back_project_map(&map, &k);
        let proj = project_points(&cloud, &k, &Extrinsics::identity(), 32, 24, &g).unwrap();
        let back = sparse_map_from_projection(&proj, 32, 24);
        for (px, d) in back.iter_valid() {
            let want = map.get(px.x, px.y).unwrap();
            assert!((d - want).abs() <= 1e-12 * want, "{px:?}");
        }
        assert_eq!(back.count_valid(), 32 * 24);
    }

    #[test]
    fn extrinsics_compose() {
        let a = Extrinsics::new(rotation_from_degrees(1.0, 2.0, 3.0), Vector3::new(0.1, 0.2, 0.3));
        let b = Extrinsics::new(rotation_from_degrees(-2.0, 0.5, 0.0), Vector3::new(-0.3, 0.0, 1.0));
        let p = Vector3::new(1.0, -2.0, 7.0);
        let lhs = a.then(&b).apply(&p);
        let rhs = b.apply(&a.apply(&p));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn zero_inverse_depth_is_identity(x in 0usize..2000, y in 0usize..2000, f in 1.0f64..2000.0, b in 0.01f64..2.0) {
            proptest::prop_assert_eq!(warp_rectified(Pixel::new(x, y), 0.0, f, b), (x as i64, y as i64));
        }
    }
}
