//! Synthetic piecewise-planar stereo scenes with known depth, used as an end-to-end oracle.
//!
//! A scene is a backdrop plane, an optional ground plane and fronto-parallel rectangles.
//! The left image gets a seeded value-noise texture per surface. The right image is built by
//! forward-warping the left one with the same floored rectified correspondence the matching
//! cost uses, so the true depth is an exact match wherever nothing is occluded.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{rotation_from_degrees, CameraIntrinsics, StereoGeometry};
use crate::error::{Error, Result};
use crate::geometry::{project_points, sparse_map_from_projection, Extrinsics, PointCloud, ProjectedPoint};
use crate::grid::{ImageGrid, InvDepthMap};

/// Fronto-parallel rectangle covering pixels `x0..x1` by `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    /// Depth [m].
    pub depth: f64,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Rotation about x, y, z [deg].
    pub rotation_deg: [f64; 3],
    /// Translation [m].
    pub translation: [f64; 3],
}

impl Perturbation {
    pub fn extrinsics(&self) -> Extrinsics {
        let [a, b, c] = self.rotation_deg;
        Extrinsics::new(rotation_from_degrees(a, b, c), Vector3::from(self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Focal length [px]; the principal point is the image center.
    pub f: f64,
    /// Stereo baseline [m].
    pub baseline: f64,
    /// Height of the camera above the ground plane [m]; no ground when absent.
    pub camera_height: Option<f64>,
    /// Depth of the plane behind everything [m].
    pub backdrop_depth: f64,
    pub rectangles: Vec<Rect>,
    pub texture_amplitude: f64,
    pub texture_octaves: usize,
    /// Lattice spacing of the coarsest texture octave [px].
    pub texture_scale: f64,
    /// Half-width of uniform intensity noise added to both images.
    pub noise: f64,
    pub n_lines: usize,
    /// Elevation span covered by the scanlines [deg].
    pub span_deg: f64,
    /// Elevation of the middle scanline, positive downward [deg].
    pub center_deg: f64,
    /// Horizontal sampling step along a scanline [px].
    pub column_step: usize,
    /// LiDAR points further than this are dropped [m].
    pub lidar_max_range: f64,
    pub perturbation: Perturbation,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 256,
            height: 160,
            f: 300.0,
            baseline: 0.54,
            camera_height: Some(1.65),
            backdrop_depth: 60.0,
            rectangles: vec![
                Rect { depth: 8.0, x0: 30, y0: 40, x1: 100, y1: 110 },
                Rect { depth: 15.0, x0: 140, y0: 30, x1: 220, y1: 100 },
                Rect { depth: 25.0, x0: 90, y0: 50, x1: 160, y1: 90 },
            ],
            texture_amplitude: 0.6,
            texture_octaves: 3,
            texture_scale: 4.0,
            noise: 0.0,
            n_lines: 64,
            span_deg: 28.0,
            center_deg: 0.0,
            column_step: 1,
            lidar_max_range: 120.0,
            perturbation: Perturbation::default(),
        }
    }
}

/// Texture id of right-image pixels that no left-image pixel maps to.
pub const UNMATCHED_SURFACE: u32 = u32::MAX;
pub const BACKDROP_SURFACE: u32 = 0;
pub const GROUND_SURFACE: u32 = 1;

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.width < 2 || self.height < 2 {
            return cfg(format!("image must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if !(self.f > 0.0 && self.f.is_finite() && self.baseline > 0.0 && self.baseline.is_finite()) {
            return cfg("focal length and baseline must be positive".into());
        }
        if !(self.backdrop_depth > 0.0 && self.backdrop_depth.is_finite()) {
            return cfg("backdrop depth must be positive".into());
        }
        if let Some(h) = self.camera_height {
            if !(h > 0.0 && h.is_finite()) {
                return cfg("camera height must be positive".into());
            }
        }
        for (i, r) in self.rectangles.iter().enumerate() {
            if !(r.depth > 0.0 && r.depth.is_finite()) {
                return cfg(format!("rectangle {i} has non-positive depth"));
            }
            if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > self.width || r.y1 > self.height {
                return cfg(format!("rectangle {i} lies outside the {}x{} image", self.width, self.height));
            }
        }
        if !(self.texture_amplitude >= 0.2 && self.texture_amplitude <= 1.0) {
            return cfg("texture amplitude must lie in [0.2, 1]".into());
        }
        if self.texture_octaves == 0 || !(self.texture_scale >= 1.0) {
            return cfg("texture needs at least one octave and a scale >= 1 px".into());
        }
        if !(0.0..0.5).contains(&self.noise) {
            return cfg("noise must lie in [0, 0.5)".into());
        }
        if self.n_lines == 0 || self.column_step == 0 {
            return cfg("n_lines and column_step must be >= 1".into());
        }
        if !(self.span_deg >= 0.0 && self.span_deg < 180.0 && self.center_deg.abs() < 90.0) {
            return cfg("scanline span must lie in [0, 180) and center in (-90, 90) degrees".into());
        }
        if !(self.lidar_max_range > 0.0) {
            return cfg("lidar_max_range must be positive".into());
        }
        if self.perturbation.rotation_deg.iter().any(|a| !(a.abs() < 90.0)) {
            return cfg("perturbation angles must be below 90 degrees".into());
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics { fx: self.f, fy: self.f, cx: self.width as f64 / 2.0, cy: self.height as f64 / 2.0 }
    }

    pub fn geometry(&self) -> StereoGeometry {
        StereoGeometry::Rectified { f: self.f, b: self.baseline }
    }

    /// Nearest surface through the center of pixel `(x, y)`: `(surface id, depth)`.
    fn surface_at(&self, x: usize, y: usize) -> (u32, f64) {
        let mut best = (BACKDROP_SURFACE, self.backdrop_depth);
        if let Some(hc) = self.camera_height {
            let ray_y = (y as f64 + 0.5 - self.height as f64 / 2.0) / self.f;
            if ray_y > 0.0 {
                let z = hc / ray_y;
                if z < best.1 {
                    best = (GROUND_SURFACE, z);
                }
            }
        }
        for (i, r) in self.rectangles.iter().enumerate() {
            if x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1 && r.depth < best.1 {
                best = (2 + i as u32, r.depth);
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub i1: ImageGrid,
    pub i2: ImageGrid,
    /// Dense ground-truth inverse depth of the left view.
    pub gt: InvDepthMap,
    /// Surface id per left pixel.
    pub surfaces: Vec<u32>,
    /// Right-image pixels that received no left-image pixel.
    pub unmatched: Vec<bool>,
    /// Left-image pixels whose correspondence is outside the right image or hidden by a nearer surface.
    pub occluded: Vec<bool>,
    pub k: CameraIntrinsics,
    pub geometry: StereoGeometry,
}

/// Base intensity and one value grid per octave.
type Lattice = (f64, Vec<Vec<f64>>);

struct Texture {
    width: usize,
    height: usize,
    amplitude: f64,
    octaves: Vec<(f64, usize, usize)>,
    seed: u64,
}

impl Texture {
    fn new(spec: &SceneSpec, seed: u64) -> Self {
        let mut octaves = Vec::new();
        let mut s = spec.texture_scale;
        for _ in 0..spec.texture_octaves {
            let lw = (spec.width as f64 / s).ceil() as usize + 2;
            let lh = (spec.height as f64 / s).ceil() as usize + 2;
            octaves.push((s, lw, lh));
            s = (s / 2.0).max(1.0);
        }
        Texture { width: spec.width, height: spec.height, amplitude: spec.texture_amplitude, octaves, seed }
    }

    /// Lattice values of one surface, one table per octave, plus a base intensity.
    fn lattice(&self, surface: u32) -> Lattice {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(surface as u64);
        let base = 0.5 + 0.2 * (rng.gen::<f64>() - 0.5);
        let tables = self.octaves.iter().map(|&(_, lw, lh)| (0..lw * lh).map(|_| rng.gen::<f64>()).collect()).collect();
        (base, tables)
    }

    fn sample(&self, lattice: &(f64, Vec<Vec<f64>>), x: usize, y: usize) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let mut acc = 0.0;
        let mut weight = 0.0;
        let mut a = 1.0;
        for (&(s, lw, _), table) in self.octaves.iter().zip(&lattice.1) {
            let (gx, gy) = (x as f64 / s, y as f64 / s);
            let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
            let at = |cx: usize, cy: usize| table[cy * lw + cx];
            let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
            let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
            acc += a * (top * (1.0 - fy) + bottom * fy - 0.5);
            weight += a;
            a *= 0.5;
        }
        // Rescale so the interpolated noise keeps roughly the full amplitude.
        (lattice.0 + self.amplitude * 1.6 * acc / weight).clamp(0.0, 1.0)
    }

    fn render(&self, surfaces: &[u32]) -> Vec<f64> {
        let mut ids: Vec<u32> = surfaces.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let lattices: Vec<(u32, Lattice)> = ids.iter().map(|&id| (id, self.lattice(id))).collect();
        let w = self.width;
        (0..self.width * self.height)
            .into_par_iter()
            .map(|i| {
                let id = surfaces[i];
                let pos = lattices.binary_search_by_key(&id, |(k, _)| *k).expect("surface id rendered");
                self.sample(&lattices[pos].1, i % w, i / w)
            })
            .collect()
    }
}

fn add_noise(values: &mut [f64], amplitude: f64, seed: u64, stream: u64) {
    if amplitude == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for v in values.iter_mut() {
        *v = (*v + rng.gen_range(-amplitude..=amplitude)).clamp(0.0, 1.0);
    }
}

/// Renders both views and the ground truth. Identical `(spec, seed)` give identical output.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<RenderedScene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (surfaces, depth): (Vec<u32>, Vec<f64>) = (0..w * h).map(|i| spec.surface_at(i % w, i / w)).unzip();
    let texture = Texture::new(spec, seed);
    let i1 = texture.render(&surfaces);

    // Forward warp with a z-buffer; the nearest surface wins each right-image pixel.
    let fb = spec.f * spec.baseline;
    let mut owner: Vec<Option<(f64, usize)>> = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let inv = 1.0 / depth[i];
            let tx = (x as f64 - fb * inv).floor();
            if tx < 0.0 {
                continue;
            }
            let slot = &mut owner[y * w + tx as usize];
            if slot.is_none_or(|(d, _)| inv > d) {
                *slot = Some((inv, i));
            }
        }
    }
    let unmatched: Vec<bool> = owner.iter().map(Option::is_none).collect();
    let mut occluded = vec![true; w * h];
    for (_, src) in owner.iter().flatten() {
        occluded[*src] = false;
    }
    let filler_ids: Vec<u32> = vec![UNMATCHED_SURFACE; w * h];
    let filler = texture.render(&filler_ids);
    let mut i2: Vec<f64> = owner.iter().zip(&filler).map(|(o, f)| o.map_or(*f, |(_, src)| i1[src])).collect();

    let mut i1 = i1;
    add_noise(&mut i1, spec.noise, seed, 1 << 40);
    add_noise(&mut i2, spec.noise, seed, (1 << 40) + 1);

    Ok(RenderedScene {
        i1: ImageGrid::new(w, h, i1)?,
        i2: ImageGrid::new(w, h, i2)?,
        gt: InvDepthMap::from_dense(w, h, depth.iter().map(|z| 1.0 / z).collect())?,
        surfaces,
        unmatched,
        occluded,
        k: spec.intrinsics(),
        geometry: spec.geometry(),
    })
}

/// Image rows hit by `n_lines` scanlines evenly spaced in elevation over `span_deg`.
pub fn scanline_rows(
    k: &CameraIntrinsics,
    height: usize,
    n_lines: usize,
    span_deg: f64,
    center_deg: f64,
) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..n_lines)
        .filter_map(|i| {
            let t = if n_lines == 1 { 0.0 } else { i as f64 / (n_lines - 1) as f64 - 0.5 };
            let phi = (center_deg + span_deg * t).to_radians();
            if phi.abs() >= std::f64::consts::FRAC_PI_2 {
                return None;
            }
            let y = (k.cy + k.fy * phi.tan()).floor();
            (y >= 0.0 && y < height as f64).then_some(y as usize)
        })
        .collect();
    rows.dedup();
    rows
}

/// LiDAR-like points: back-projections of ground-truth depth along the scanline rows,
/// every `column_step` pixels, within `max_range`.
pub fn sample_scanlines(
    gt: &InvDepthMap,
    k: &CameraIntrinsics,
    n_lines: usize,
    span_deg: f64,
    center_deg: f64,
    column_step: usize,
    max_range: f64,
) -> Result<PointCloud> {
    if n_lines == 0 || column_step == 0 {
        return Err(Error::Domain("n_lines and column_step must be >= 1".into()));
    }
    let mut points = Vec::new();
    for y in scanline_rows(k, gt.height(), n_lines, span_deg, center_deg) {
        for x in (0..gt.width()).step_by(column_step) {
            if let Some(d) = gt.get(x, y) {
                let z = 1.0 / d;
                if z <= max_range {
                    points.push(k.back_project_center(x, y, z));
                }
            }
        }
    }
    Ok(points)
}

/// Scanline points of a scene spec.
pub fn scene_points(spec: &SceneSpec, scene: &RenderedScene) -> Result<PointCloud> {
    sample_scanlines(
        &scene.gt,
        &scene.k,
        spec.n_lines,
        spec.span_deg,
        spec.center_deg,
        spec.column_step,
        spec.lidar_max_range,
    )
}

/// Projects points through a (mis-)calibration and rasterizes them into a sparse map.
pub fn perturb_and_project(
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
    perturbation: &Extrinsics,
    width: usize,
    height: usize,
    geometry: &StereoGeometry,
) -> Result<(InvDepthMap, Vec<ProjectedPoint>)> {
    let proj = project_points(points, k, perturbation, width, height, geometry)?;
    Ok((sparse_map_from_projection(&proj, width, height), proj))
}
