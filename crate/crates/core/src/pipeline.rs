//! End-to-end completion: candidate assignment, interpolation, selection, ground detection
//! and edge-aware smoothing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, StereoGeometry};
use crate::candidates::{assign_candidates, attach_correspondences, ignns_interpolate, PruneRule};
use crate::cost::{CostContext, CostParams};
use crate::error::{Error, Result};
use crate::geometry::back_project_map;
use crate::grid::{ImageGrid, InvDepthMap};
use crate::ground::{ground_masks, ransac_plane, GroundMask, Plane, RansacParams};
use crate::radius::{optimal_radius, RadiusInputs};
use crate::smoothing::{derive_badt, tgv_minimize, BadtField, TgvParams};
use crate::ssm::{lbp_select, SourceMap, SsmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidate search radius [px]; derived from the two angles below when absent.
    pub radius: Option<f64>,
    /// Expected rotational calibration error [deg].
    pub theta_calib_deg: f64,
    /// Angle between neighbouring scanlines [deg].
    pub theta_scan_deg: f64,
    /// Sets with fewer candidates are emptied and re-filled by interpolation.
    pub min_candidates: usize,
    /// Constant added to the squared image gradient in the interpolation path cost.
    pub ignns_c: f64,
    pub prune: PruneRule,
    pub cost: CostParams,
    pub ssm: SsmParams,
    pub ransac: RansacParams,
    /// Keep regularization on ground pixels regardless of depth jumps.
    pub ground_mask: bool,
    /// Depth jump that breaks regularization [m].
    pub depth_jump: f64,
    pub tgv: TgvParams,
    pub skip_smoothing: bool,
    /// Worker threads; the global pool when absent.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            radius: None,
            theta_calib_deg: 0.0,
            theta_scan_deg: 0.4,
            min_candidates: 4,
            ignns_c: 0.04,
            prune: PruneRule::NearestSource,
            cost: CostParams::default(),
            ssm: SsmParams::default(),
            ransac: RansacParams::default(),
            ground_mask: true,
            depth_jump: 2.0,
            tgv: TgvParams::default(),
            skip_smoothing: false,
            workers: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("radius must be positive, got {r}")));
            }
        }
        if self.min_candidates == 0 {
            return Err(Error::Config("min_candidates must be >= 1".into()));
        }
        if !(self.ignns_c >= 0.0 && self.ignns_c.is_finite()) {
            return Err(Error::Config("ignns_c must be finite and >= 0".into()));
        }
        if !(self.depth_jump >= 0.0) {
            return Err(Error::Config("depth_jump must be >= 0".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.cost.validate()?;
        self.ssm.validate()?;
        if !(self.ransac.threshold >= 0.0) {
            return Err(Error::Config("RANSAC threshold must be >= 0".into()));
        }
        self.tgv.validate()
    }

    /// Candidate radius for focal length `f`.
    pub fn resolve_radius(&self, f: f64) -> Result<f64> {
        let r = match self.radius {
            Some(r) => r,
            None => {
                optimal_radius(&RadiusInputs { f, theta_calib: self.theta_calib_deg, theta_scan: self.theta_scan_deg })?
            }
        };
        if !(r > 0.0) {
            return Err(Error::Config("candidate radius resolved to 0; set radius or a non-zero angle".into()));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub i1: ImageGrid,
    pub i2: ImageGrid,
    /// Projected LiDAR inverse depth.
    pub sparse: InvDepthMap,
    pub k: CameraIntrinsics,
    pub geometry: StereoGeometry,
}

impl PipelineInputs {
    fn check(&self) -> Result<()> {
        let (w, h) = (self.i1.width(), self.i1.height());
        if (self.i2.width(), self.i2.height()) != (w, h) || (self.sparse.width(), self.sparse.height()) != (w, h) {
            return Err(Error::Dimension(format!(
                "inputs differ in size: left {w}x{h}, right {}x{}, sparse {}x{}",
                self.i2.width(),
                self.i2.height(),
                self.sparse.width(),
                self.sparse.height()
            )));
        }
        if self.sparse.count_valid() == 0 {
            return Err(Error::NoData("sparse depth map is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub radius: f64,
    /// Selected inverse depth before smoothing.
    pub d_ssm: InvDepthMap,
    pub sources: SourceMap,
    pub ssm_iterations: usize,
    pub ssm_converged: bool,
    /// Fitted ground plane, absent when disabled or when the fit was degenerate.
    pub plane: Option<Plane>,
    pub ground_sparse: GroundMask,
    pub ground: GroundMask,
    pub badt: BadtField,
    /// Final inverse depth.
    pub depth: InvDepthMap,
    /// Smoothing energy before and after, absent when smoothing is skipped.
    pub tgv_energy: Option<(f64, f64)>,
    pub timings: Vec<StageTiming>,
}

/// Runs `f` on a pool of `workers` threads, or on the global pool when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?
            .install(f),
    }
}

/// Runs the full completion.
pub fn complete(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    inputs.check()?;
    with_workers(cfg.workers, || run(inputs, cfg))
}

fn run(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &'static str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming { stage, seconds: clock.elapsed().as_secs_f64() });
        clock = Instant::now();
    };
    let (w, h) = (inputs.i1.width(), inputs.i1.height());

    let radius = cfg.resolve_radius(inputs.k.fx)?;
    let assigned = assign_candidates(&inputs.sparse, radius, cfg.min_candidates)?;
    lap("assign", &mut timings);
    let filled = ignns_interpolate(&assigned, &inputs.i1, cfg.ignns_c)?;
    lap("interpolate", &mut timings);
    let ctx = CostContext::new(inputs.i1.clone(), inputs.i2.clone(), inputs.geometry, cfg.cost)?;
    let scored = attach_correspondences(&filled, &ctx, cfg.prune)?;
    lap("correspondences", &mut timings);
    let ssm = lbp_select(&scored, &cfg.ssm)?;
    lap("selection", &mut timings);

    let (plane, ground_sparse, ground) = if cfg.ground_mask {
        let (points, pixels) = back_project_map(&inputs.sparse, &inputs.k);
        match ransac_plane(&points, &cfg.ransac) {
            Ok(fit) => {
                let inlier_pixels: Vec<_> = fit.inliers.iter().map(|&i| pixels[i]).collect();
                let (s, d) = ground_masks(&inlier_pixels, &ssm.sources)?;
                (Some(fit.plane), s, d)
            }
            Err(Error::Degenerate(_)) => (None, GroundMask::empty(w, h), GroundMask::empty(w, h)),
            Err(e) => return Err(e),
        }
    } else {
        (None, GroundMask::empty(w, h), GroundMask::empty(w, h))
    };
    lap("ground", &mut timings);
    let badt = derive_badt(&ssm.depth, &ground, cfg.depth_jump)?;
    lap("tensor", &mut timings);

    let (depth, tgv_energy) = if cfg.skip_smoothing {
        (ssm.depth.clone(), None)
    } else {
        let out = tgv_minimize(&ssm.depth, &badt, &cfg.tgv)?;
        (out.depth, Some((out.initial_energy, out.energy)))
    };
    lap("smoothing", &mut timings);

    Ok(PipelineOutput {
        radius,
        d_ssm: ssm.depth,
        sources: ssm.sources,
        ssm_iterations: ssm.iterations,
        ssm_converged: ssm.converged,
        plane,
        ground_sparse,
        ground,
        badt,
        depth,
        tgv_energy,
        timings,
    })
}

/// Baseline completion by image-guided nearest-neighbour interpolation of the sparse map alone.
pub fn ignns_completion(sparse: &InvDepthMap, i1: &ImageGrid, c: f64) -> Result<InvDepthMap> {
    let own = assign_candidates(sparse, 1.0, 1)?;
    let filled = ignns_interpolate(&own, i1, c)?;
    let values = filled.sets().iter().map(|s| s[0].d).collect();
    InvDepthMap::from_dense(sparse.width(), sparse.height(), values)
}
