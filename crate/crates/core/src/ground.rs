//! Ground-plane detection on the LiDAR points and the ground masks derived from it.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Pixel;
use crate::ssm::SourceMap;

/// Plane `n . p = offset` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Plane through three points, `None` when they are (nearly) collinear.
    pub fn through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if !(len > 1e-12) {
            return None;
        }
        let mut normal = n / len;
        let mut offset = normal.dot(a);
        // Canonical sign: non-negative offset, or a positive leading component for planes through the origin.
        let flip = if offset.abs() > 1e-12 {
            offset < 0.0
        } else {
            normal.iter().find(|v| v.abs() > 1e-12).is_some_and(|v| *v < 0.0)
        };
        if flip {
            normal = -normal;
            offset = -offset;
        }
        Some(Plane { normal, offset })
    }

    #[inline]
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Inlier threshold [m].
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams { threshold: 0.2, iterations: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    /// Indices of points within the threshold, ascending.
    pub inliers: Vec<usize>,
    /// Trial that produced the plane.
    pub trial: usize,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Three-point RANSAC; keeps the plane with the most inliers, earliest trial on ties.
pub fn ransac_plane(points: &[Vector3<f64>], params: &RansacParams) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("plane fit needs at least 3 points, got {}", points.len())));
    }
    if !(params.threshold >= 0.0) {
        return Err(Error::Domain("RANSAC threshold must be non-negative".into()));
    }
    let n = points.len();
    let scored: Vec<Option<(usize, Plane)>> = (0..params.iterations)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(params.seed, trial);
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let (lo, hi) = (a.min(b), a.max(b));
            let mut c = rng.gen_range(0..n - 2);
            if c >= lo {
                c += 1;
            }
            if c >= hi {
                c += 1;
            }
            let plane = Plane::through(&points[a], &points[b], &points[c])?;
            let count = points.iter().filter(|p| plane.distance(p) <= params.threshold).count();
            Some((count, plane))
        })
        .collect();

    let mut best: Option<(usize, usize, Plane)> = None;
    for (trial, s) in scored.into_iter().enumerate() {
        if let Some((count, plane)) = s {
            if best.is_none_or(|(c, _, _)| count > c) {
                best = Some((count, trial, plane));
            }
        }
    }
    let (_, trial, plane) = best.ok_or_else(|| Error::Degenerate("every RANSAC sample was collinear".into()))?;
    let inliers = (0..n).filter(|&i| plane.distance(&points[i]) <= params.threshold).collect();
    Ok(PlaneFit { plane, inliers, trial })
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl GroundMask {
    pub fn empty(width: usize, height: usize) -> Self {
        GroundMask { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimension("mask size mismatch".into()));
        }
        Ok(GroundMask { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Sparse mask at the inlier pixels, and its propagation through the selection sources.
pub fn ground_masks(inlier_pixels: &[Pixel], sources: &SourceMap) -> Result<(GroundMask, GroundMask)> {
    let (w, h) = (sources.width(), sources.height());
    let mut sparse = GroundMask::empty(w, h);
    for p in inlier_pixels {
        if p.x >= w || p.y >= h {
            return Err(Error::Domain(format!("ground pixel ({}, {}) outside the image", p.x, p.y)));
        }
        sparse.bits[p.index(w)] = true;
    }
    let dense = sources.sources().iter().map(|src| sparse.get(src.x, src.y)).collect();
    Ok((sparse.clone(), GroundMask { width: w, height: h, bits: dense }))
}
