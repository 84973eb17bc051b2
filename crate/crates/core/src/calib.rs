//! Single-frame, target-free LiDAR-camera extrinsic calibration by exhaustive grid search.
//!
//! Each candidate pose projects the LiDAR points into the left image and is scored by the
//! stereo matching cost at the projected inverse depth, plus an optional background term
//! `-min(L(x, 0), l_B)` that rewards points landing where the pair does not look like
//! infinitely distant background.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{rotation_from_degrees, CameraIntrinsics, StereoGeometry};
use crate::cost::{CostContext, DisparityCostVolume};
use crate::error::{Error, Result};
use crate::geometry::{project_points, Extrinsics};
use crate::grid::Pixel;

/// Search ranges around the initial pose. Offsets run over `-half_range..=half_range` in `step`s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub rotation_half_range_deg: f64,
    pub rotation_step_deg: f64,
    pub translation_half_range: f64,
    pub translation_step: f64,
    /// Extra passes after the first, each re-centered on the best pose with half the step
    /// and a half-range of one previous step (never wider than the previous half-range).
    pub refinements: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            rotation_half_range_deg: 2.0,
            rotation_step_deg: 0.5,
            translation_half_range: 0.2,
            translation_step: 0.1,
            refinements: 2,
        }
    }
}

fn offsets(half_range: f64, step: f64) -> Vec<f64> {
    let n = (half_range / step + 1e-9).floor() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_step_deg > 0.0 && self.translation_step > 0.0) {
            return Err(Error::Config("grid steps must be > 0".into()));
        }
        if !(self.rotation_half_range_deg >= 0.0 && self.translation_half_range >= 0.0) {
            return Err(Error::Config("grid half-ranges must be >= 0".into()));
        }
        if !(self.rotation_half_range_deg < 90.0) {
            return Err(Error::Config("rotation half-range must be below 90 degrees".into()));
        }
        let per_level = self.level_sizes(0);
        if per_level > 50_000_000 {
            return Err(Error::Config(format!("grid has {per_level} candidates per level")));
        }
        Ok(())
    }

    /// `(rotation half-range, rotation step, translation half-range, translation step)` of a level.
    pub fn level(&self, level: usize) -> (f64, f64, f64, f64) {
        if level == 0 {
            return (
                self.rotation_half_range_deg,
                self.rotation_step_deg,
                self.translation_half_range,
                self.translation_step,
            );
        }
        let (rh, rs, th, ts) = self.level(level - 1);
        (rs.min(rh), rs / 2.0, ts.min(th), ts / 2.0)
    }

    /// Finest rotation and translation steps.
    pub fn finest_steps(&self) -> (f64, f64) {
        let (_, rs, _, ts) = self.level(self.refinements);
        (rs, ts)
    }

    fn level_sizes(&self, level: usize) -> usize {
        let (rh, rs, th, ts) = self.level(level);
        offsets(rh, rs).len().pow(3) * offsets(th, ts).len().pow(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibOptions {
    /// Background truncation `l_B`.
    pub l_b: f64,
    pub use_background: bool,
    /// Points kept after seeded subsampling.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for CalibOptions {
    fn default() -> Self {
        CalibOptions { l_b: 0.5, use_background: true, max_points: 2000, seed: 0 }
    }
}

/// Score of one evaluated pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateScore {
    pub level: usize,
    /// Rotation offset about x, y, z [deg] relative to the level center.
    pub rotation_offset_deg: [f64; 3],
    /// Translation offset [m] relative to the level center.
    pub translation_offset: [f64; 3],
    #[serde(skip)]
    pub extrinsics: Extrinsics,
    /// Sum of matching costs at the projected points.
    pub stereo: f64,
    /// Sum of `-min(L(x, 0), l_B)` over the same points.
    pub background: f64,
    /// `stereo + background` with the background term enabled, `stereo` otherwise.
    pub score: f64,
    /// Points that projected into the image.
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct CalibResult {
    pub extrinsics: Extrinsics,
    pub score: f64,
    /// Every evaluated candidate in evaluation order.
    pub table: Vec<CandidateScore>,
    pub points_used: usize,
}

impl CalibResult {
    /// Score table as comma-separated text with a header line.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("level,rx_deg,ry_deg,rz_deg,tx,ty,tz,points,stereo,background,score\n");
        for c in &self.table {
            let [rx, ry, rz] = c.rotation_offset_deg;
            let [tx, ty, tz] = c.translation_offset;
            s.push_str(&format!(
                "{},{rx},{ry},{rz},{tx},{ty},{tz},{},{},{},{}\n",
                c.level, c.points, c.stereo, c.background, c.score
            ));
        }
        s
    }
}

/// `-min(L(x, 0), l_B)`.
pub fn background_cost(ctx: &CostContext, x: Pixel, l_b: f64) -> f64 {
    -ctx.stereo_cost(x, 0.0).min(l_b)
}

fn subsample(points: &[Vector3<f64>], cap: usize, seed: u64) -> Vec<Vector3<f64>> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, points.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

struct Scorer<'a> {
    ctx: &'a CostContext,
    volume: DisparityCostVolume,
    /// Background term per pixel, so the sum does not depend on the pose beyond visibility.
    background: Vec<f64>,
    k: CameraIntrinsics,
    points: Vec<Vector3<f64>>,
}

impl Scorer<'_> {
    fn score(&self, e: &Extrinsics) -> Result<(f64, f64, usize)> {
        let (w, h) = (self.ctx.i1.width(), self.ctx.i1.height());
        let proj = project_points(&self.points, &self.k, e, w, h, &self.ctx.geometry)?;
        let mut stereo = 0.0;
        let mut background = 0.0;
        for p in &proj {
            let px = p.pixel();
            stereo += self.volume.stereo_cost(self.ctx, px, p.inv_depth);
            background += self.background[px.index(w)];
        }
        Ok((stereo, background, proj.len()))
    }
}

/// Grid search for the extrinsics mapping LiDAR points into the left camera.
///
/// Candidates are `R = R_offset * R_center`, `t = t_center + t_offset`, starting from the
/// initial pose. Each level is evaluated in order of increasing offset, counted in grid steps,
/// and ties keep the earliest candidate, so the pose closest to the level center wins.
pub fn calibrate(
    points: &[Vector3<f64>],
    ctx: &CostContext,
    k: &CameraIntrinsics,
    initial: &Extrinsics,
    grid: &SearchGrid,
    options: &CalibOptions,
) -> Result<CalibResult> {
    grid.validate()?;
    if !matches!(ctx.geometry, StereoGeometry::Rectified { .. }) {
        return Err(Error::UnsupportedGeometry { expected: "rectified" });
    }
    if points.is_empty() {
        return Err(Error::NoData("calibration needs at least one LiDAR point".into()));
    }
    if options.max_points == 0 {
        return Err(Error::Config("max_points must be >= 1".into()));
    }
    if !(options.l_b >= 0.0) {
        return Err(Error::Config("l_b must be >= 0".into()));
    }
    let points = subsample(points, options.max_points, options.seed);
    let (w, h) = (ctx.i1.width(), ctx.i1.height());

    // Cache costs up to the largest disparity any point can reach; beyond that the volume
    // falls back to direct evaluation.
    let fb = ctx.geometry.focal_baseline()?;
    let min_depth = points.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min).max(1e-3);
    let max_disparity = ((fb / min_depth).ceil() as usize + 2).min(w);
    let volume = DisparityCostVolume::build(ctx, max_disparity)?;
    let background =
        (0..w * h).into_par_iter().map(|i| background_cost(ctx, Pixel::from_index(i, w), options.l_b)).collect();
    let scorer = Scorer { ctx, volume, background, k: *k, points };

    let mut center = *initial;
    let mut table = Vec::new();
    let mut best: Option<CandidateScore> = None;
    for level in 0..=grid.refinements {
        let (rh, rs, th, ts) = grid.level(level);
        let rot = offsets(rh, rs);
        let tr = offsets(th, ts);
        let mut poses = Vec::with_capacity(rot.len().pow(3) * tr.len().pow(3));
        for &rx in &rot {
            for &ry in &rot {
                for &rz in &rot {
                    let r: Matrix3<f64> = rotation_from_degrees(rx, ry, rz) * center.rotation;
                    for &tx in &tr {
                        for &ty in &tr {
                            for &tz in &tr {
                                let t = center.translation + Vector3::new(tx, ty, tz);
                                poses.push(([rx, ry, rz], [tx, ty, tz], Extrinsics::new(r, t)));
                            }
                        }
                    }
                }
            }
        }
        let steps = |(ro, to, _): &([f64; 3], [f64; 3], Extrinsics)| {
            let r: f64 = ro.iter().map(|v| (v / rs).abs()).sum();
            let t: f64 = to.iter().map(|v| (v / ts).abs()).sum();
            (r + t).round() as i64
        };
        poses.sort_by_key(steps);
        let scored: Vec<CandidateScore> = poses
            .par_iter()
            .map(|(ro, to, e)| {
                let (stereo, bg, n) = scorer.score(e)?;
                let background = if options.use_background { bg } else { 0.0 };
                Ok(CandidateScore {
                    level,
                    rotation_offset_deg: *ro,
                    translation_offset: *to,
                    extrinsics: *e,
                    stereo,
                    background: bg,
                    score: stereo + background,
                    points: n,
                })
            })
            .collect::<Result<_>>()?;

        let mut level_best: Option<CandidateScore> = None;
        for c in &scored {
            if c.points > 0 && level_best.is_none_or(|b| c.score < b.score) {
                level_best = Some(*c);
            }
        }
        table.extend(scored);
        let Some(lb) = level_best else {
            return Err(Error::Degenerate("no candidate pose projects any point into the image".into()));
        };
        center = lb.extrinsics;
        if best.is_none_or(|b| lb.score < b.score) {
            best = Some(lb);
        }
    }
    let best = best.expect("at least one level evaluated");
    Ok(CalibResult { extrinsics: best.extrinsics, score: best.score, table, points_used: scorer.points.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::tests::{naive_cost, random_image};
    use crate::cost::CostParams;
    use crate::synth::{render_scene, scene_points, Rect, SceneSpec};

    fn calib_scene() -> (SceneSpec, CostContext, Vec<Vector3<f64>>) {
        // A mosaic of small blocks at varied depths, so that mis-projection crosses depth edges.
        let mut rectangles = Vec::new();
        for (j, y0) in (24..136).step_by(16).enumerate() {
            for (i, x0) in (32..224).step_by(16).enumerate() {
                let depth = 3.0 + ((i * 7 + j * 3) % 6) as f64;
                rectangles.push(Rect { depth, x0, y0, x1: x0 + 16, y1: y0 + 16 });
            }
        }
        let spec = SceneSpec { backdrop_depth: 12.0, rectangles, ..Default::default() };
        let scene = render_scene(&spec, 5).unwrap();
        let pts = scene_points(&spec, &scene).unwrap();
        // Keep points well inside the frame so every candidate sees the same set.
        let k = spec.intrinsics();
        let pts = pts
            .into_iter()
            .filter(|p| {
                let (u, v) = (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
                u > 40.0 && u < 216.0 && v > 30.0 && v < 130.0
            })
            .collect();
        let ctx = CostContext::new(scene.i1, scene.i2, scene.geometry, CostParams::default()).unwrap();
        (spec, ctx, pts)
    }

    #[test]
    fn grid_offsets() {
        assert_eq!(offsets(2.0, 0.5).len(), 9);
        assert_eq!(offsets(0.0, 0.5), vec![0.0]);
        assert_eq!(offsets(0.2, 0.1).len(), 5);
        let g = SearchGrid::default();
        assert_eq!(g.level(1), (0.5, 0.25, 0.1, 0.05));
        assert_eq!(g.finest_steps(), (0.125, 0.025));
        assert!(SearchGrid { rotation_step_deg: 0.0, ..g }.validate().is_err());
    }

    #[test]
    fn background_examples() {
        let img = random_image(40, 30, 3);
        let g = StereoGeometry::Rectified { f: 10.0, b: 1.0 };
        let same = CostContext::new(img.clone(), img.clone(), g, CostParams::default()).unwrap();
        assert_eq!(background_cost(&same, Pixel::new(20, 15), 0.5), 0.0);

        let other = CostContext::new(img.clone(), random_image(40, 30, 4), g, CostParams::default()).unwrap();
        assert_eq!(background_cost(&other, Pixel::new(20, 15), 0.5), -0.5);

        let (i1, i2) = (random_image(40, 30, 5), random_image(40, 30, 6));
        let p = CostParams::default();
        let ctx = CostContext::new(i1.clone(), i2.clone(), g, p).unwrap();
        for (x, y) in [(0, 0), (7, 3), (20, 15), (39, 29), (12, 28)] {
            let oracle = naive_cost(&i1, &i2, (x, y), (x, y), &p);
            for l_b in [0.5, 30.0, 1e3] {
                let got = background_cost(&ctx, Pixel::new(x as usize, y as usize), l_b);
                assert!((got + oracle.min(l_b)).abs() < 1e-9, "({x},{y}) l_b={l_b}");
            }
        }
    }

    #[test]
    fn score_table_is_exhaustive_and_decomposes() {
        let (spec, ctx, pts) = calib_scene();
        let initial = crate::synth::Perturbation { rotation_deg: [0.0, 0.5, 0.0], translation: [0.0; 3] }.extrinsics();
        let grid = SearchGrid {
            rotation_half_range_deg: 1.0,
            rotation_step_deg: 0.5,
            translation_half_range: 0.0,
            translation_step: 0.1,
            refinements: 1,
        };
        let with = calibrate(&pts, &ctx, &spec.intrinsics(), &initial, &grid, &CalibOptions::default()).unwrap();
        let without = calibrate(
            &pts,
            &ctx,
            &spec.intrinsics(),
            &initial,
            &grid,
            &CalibOptions { use_background: false, ..Default::default() },
        )
        .unwrap();
        let min = with.table.iter().filter(|c| c.points > 0).map(|c| c.score).fold(f64::INFINITY, f64::min);
        assert_eq!(with.score, min);
        assert_eq!(with.table.len(), 125 + 125);
        // Each level starts at its center and grows outward.
        for level in [&with.table[..125], &with.table[125..]] {
            assert_eq!((level[0].rotation_offset_deg, level[0].translation_offset), ([0.0; 3], [0.0; 3]));
            let dist = |c: &CandidateScore| c.rotation_offset_deg.iter().map(|v| v.abs()).sum::<f64>();
            assert!(level.windows(2).all(|w| dist(&w[0]) <= dist(&w[1]) + 1e-12));
        }
        // Level 0 is identical in both runs, so the decomposition holds candidate by candidate.
        for (a, b) in with.table.iter().zip(&without.table).take(125) {
            assert_eq!(a.extrinsics, b.extrinsics);
            assert_eq!(a.score, b.score + a.background);
            assert!(a.background <= 0.0);
        }
        // Recovers the identity pose that projected the points.
        let angle = crate::camera::rotation_angle_between(&with.extrinsics.rotation, &Matrix3::identity());
        assert!(angle <= grid.finest_steps().0 + 1e-9, "{angle}");
    }

    #[test]
    fn identity_pose_attains_minimum() {
        let (spec, ctx, pts) = calib_scene();
        let grid = SearchGrid {
            rotation_half_range_deg: 0.25,
            rotation_step_deg: 0.25,
            translation_half_range: 0.025,
            translation_step: 0.025,
            refinements: 0,
        };
        // Only points whose whole window (plus the gradient margin) sees one unoccluded surface,
        // so the stereo cost is exactly zero at the true pose.
        let scene = render_scene(&spec, 5).unwrap();
        let (w, k) = (spec.width, spec.intrinsics());
        let pts: Vec<_> = pts
            .into_iter()
            .filter(|p| {
                let (u, v) = ((k.fx * p.x / p.z + k.cx) as usize, (k.fy * p.y / p.z + k.cy) as usize);
                let id = scene.surfaces[v * w + u];
                (v - 6..=v + 6)
                    .all(|y| (u - 6..=u + 6).all(|x| scene.surfaces[y * w + x] == id && !scene.occluded[y * w + x]))
            })
            .collect();
        assert!(pts.len() > 100, "{}", pts.len());
        let r = calibrate(&pts, &ctx, &k, &Extrinsics::identity(), &grid, &CalibOptions::default()).unwrap();
        assert_eq!(r.table.len(), 729);
        // Poses that keep every point inside its fronto-parallel block also cost zero, so the
        // identity is a minimizer but shares the minimum with a few neighbours.
        let id = r.table.iter().find(|c| c.extrinsics == Extrinsics::identity()).unwrap();
        assert_eq!(id.stereo, 0.0);
        assert_eq!(id.score, r.score);
        let tied = r.table.iter().filter(|c| c.score == r.score).count();
        assert!(tied < r.table.len() / 50, "{tied}");
    }

    #[test]
    fn one_degree_yaw_recovered_within_a_step() {
        let (spec, ctx, pts) = calib_scene();
        let initial = crate::synth::Perturbation { rotation_deg: [0.0, 1.0, 0.0], translation: [0.0; 3] }.extrinsics();
        let grid = SearchGrid {
            rotation_half_range_deg: 2.0,
            rotation_step_deg: 0.25,
            translation_half_range: 0.0,
            translation_step: 0.1,
            refinements: 0,
        };
        let r = calibrate(&pts, &ctx, &spec.intrinsics(), &initial, &grid, &CalibOptions::default()).unwrap();
        let angle = crate::camera::rotation_angle_between(&r.extrinsics.rotation, &Matrix3::identity());
        assert!(angle <= 0.25 + 1e-9, "{angle}");
    }

    #[test]
    fn failures() {
        let (spec, ctx, pts) = calib_scene();
        let k = spec.intrinsics();
        let e = Extrinsics::identity();
        let g = SearchGrid::default();
        assert!(matches!(calibrate(&[], &ctx, &k, &e, &g, &CalibOptions::default()), Err(Error::NoData(_))));
        // Points behind the camera never project.
        let behind: Vec<_> = pts.iter().map(|p| -p).collect();
        let small = SearchGrid { rotation_half_range_deg: 0.0, translation_half_range: 0.0, ..g };
        assert!(matches!(
            calibrate(&behind, &ctx, &k, &e, &small, &CalibOptions::default()),
            Err(Error::Degenerate(_))
        ));
        let k2 = CameraIntrinsics::new(300.0, 300.0, 128.0, 80.0).unwrap();
        let motion = CostContext::new(
            ctx.i1.clone(),
            ctx.i2.clone(),
            StereoGeometry::motion(k2, Matrix3::identity(), Vector3::new(-0.5, 0.0, 0.0)).unwrap(),
            CostParams::default(),
        )
        .unwrap();
        assert!(matches!(
            calibrate(&pts, &motion, &k, &e, &small, &CalibOptions::default()),
            Err(Error::UnsupportedGeometry { .. })
        ));
    }

    #[test]
    fn subsampling_is_seeded() {
        let pts: Vec<_> = (0..100).map(|i| Vector3::new(i as f64, 0.0, 1.0)).collect();
        let a = subsample(&pts, 10, 3);
        assert_eq!(a, subsample(&pts, 10, 3));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0].x < w[1].x));
        assert_eq!(subsample(&pts, 1000, 3), pts);
    }
}
