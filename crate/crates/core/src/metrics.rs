//! Accuracy measures against a ground-truth map. Only pixels where the ground truth is
//! non-empty are evaluated.

use serde::Serialize;

use crate::camera::StereoGeometry;
use crate::error::{Error, Result};
use crate::grid::InvDepthMap;

/// Disparity error at or above which a pixel counts as an outlier [px].
pub const DEFAULT_OUTLIER_PX: f64 = 3.0;

/// Pairwise summation; the result depends only on the order of `v`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// `(estimate, ground truth)` inverse depths at every ground-truth pixel.
fn paired(est: &InvDepthMap, gt: &InvDepthMap) -> Result<Vec<(f64, f64)>> {
    if est.width() != gt.width() || est.height() != gt.height() {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}, ground truth {}x{}",
            est.width(),
            est.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut out = Vec::with_capacity(gt.count_valid());
    for (i, (e, g)) in est.values().iter().zip(gt.values()).enumerate() {
        if let Some(g) = g {
            let e = e.ok_or_else(|| {
                Error::Precondition(format!(
                    "estimate is empty at ({}, {}) where ground truth exists",
                    i % gt.width(),
                    i / gt.width()
                ))
            })?;
            out.push((e, *g));
        }
    }
    if out.is_empty() {
        return Err(Error::NoData("ground truth has no valid pixels".into()));
    }
    Ok(out)
}

/// Percentage of pixels whose disparity error is at least `threshold_px`.
pub fn error_rate(est: &InvDepthMap, gt: &InvDepthMap, geometry: &StereoGeometry, threshold_px: f64) -> Result<f64> {
    let fb = geometry.focal_baseline()?;
    let pairs = paired(est, gt)?;
    let outliers = pairs.iter().filter(|(e, g)| (fb * e - fb * g).abs() >= threshold_px).count();
    Ok(100.0 * outliers as f64 / pairs.len() as f64)
}

/// Mean absolute depth error [m].
pub fn mae(est: &InvDepthMap, gt: &InvDepthMap) -> Result<f64> {
    let errs: Vec<f64> = paired(est, gt)?.iter().map(|(e, g)| (1.0 / e - 1.0 / g).abs()).collect();
    Ok(pairwise_sum(&errs) / errs.len() as f64)
}

/// Mean absolute inverse-depth error [1/m].
pub fn imae(est: &InvDepthMap, gt: &InvDepthMap) -> Result<f64> {
    let errs: Vec<f64> = paired(est, gt)?.iter().map(|(e, g)| (e - g).abs()).collect();
    Ok(pairwise_sum(&errs) / errs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketMae {
    /// Ground-truth depth range `[lo, hi)` [m].
    pub lo: f64,
    pub hi: f64,
    /// Absent when no pixel falls in the bucket.
    pub mae: Option<f64>,
    pub count: usize,
}

/// Depth MAE per ground-truth depth bucket. Pixels outside every bucket are ignored.
pub fn range_bucketed_mae(est: &InvDepthMap, gt: &InvDepthMap, edges: &[f64]) -> Result<Vec<BucketMae>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("bucket edges must be at least two strictly increasing values".into()));
    }
    let pairs = paired(est, gt)?;
    let mut errs: Vec<Vec<f64>> = vec![Vec::new(); edges.len() - 1];
    for (e, g) in pairs {
        let depth = 1.0 / g;
        let slot = edges.partition_point(|edge| *edge <= depth);
        if slot >= 1 && slot < edges.len() {
            errs[slot - 1].push((1.0 / e - depth).abs());
        }
    }
    Ok(edges
        .windows(2)
        .zip(errs)
        .map(|(w, v)| BucketMae {
            lo: w[0],
            hi: w[1],
            mae: (!v.is_empty()).then(|| pairwise_sum(&v) / v.len() as f64),
            count: v.len(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Percent of pixels with disparity error >= `outlier_px`.
    pub error_rate: f64,
    pub outlier_px: f64,
    /// [m]
    pub mae: f64,
    /// [1/m]
    pub imae: f64,
    pub valid_pixels: usize,
    pub buckets: Vec<BucketMae>,
}

pub fn evaluate(est: &InvDepthMap, gt: &InvDepthMap, geometry: &StereoGeometry, edges: &[f64]) -> Result<EvalReport> {
    Ok(EvalReport {
        error_rate: error_rate(est, gt, geometry, DEFAULT_OUTLIER_PX)?,
        outlier_px: DEFAULT_OUTLIER_PX,
        mae: mae(est, gt)?,
        imae: imae(est, gt)?,
        valid_pixels: gt.count_valid(),
        buckets: if edges.is_empty() { Vec::new() } else { range_bucketed_mae(est, gt, edges)? },
    })
}
