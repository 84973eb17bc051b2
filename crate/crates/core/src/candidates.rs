//! Per-pixel candidate sets built from the sparse LiDAR map.
//!
//! Three passes produce the input of the selection stage:
//!
//! 1. [`assign_candidates`] gathers every sparse value whose source pixel lies strictly inside
//!    radius `r` of the pixel, and drops sets with fewer than `m` members.
//! 2. [`ignns_interpolate`] gives every empty pixel a copy of the set of its image-guided nearest
//!    non-empty pixel. Path length is the sum of `|grad I1|^2 + c` over the 4-connected path,
//!    excluding the seed and including the destination.
//! 3. [`attach_correspondences`] warps each candidate into the second image, scores it, and
//!    prunes candidates that share a correspondence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::geometry::{warp, WarpedPixel};
use crate::grid::{image_gradient, ImageGrid, InvDepthMap, Pixel};

/// One inverse-depth hypothesis for a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub d: f64,
    /// Pixel of the sparse map the value came from.
    pub source: Pixel,
    /// Correspondence in the second image, once attached.
    pub warp: Option<WarpedPixel>,
    pub unary_cost: f64,
}

impl Candidate {
    pub fn new(d: f64, source: Pixel) -> Self {
        Candidate { d, source, warp: None, unary_cost: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMap {
    width: usize,
    height: usize,
    sets: Vec<Vec<Candidate>>,
}

impl CandidateMap {
    pub fn new(width: usize, height: usize, sets: Vec<Vec<Candidate>>) -> Result<Self> {
        if sets.len() != width * height {
            return Err(Error::Dimension(format!("candidate map needs {} sets, got {}", width * height, sets.len())));
        }
        if sets.iter().flatten().any(|c| !(c.d > 0.0 && c.d.is_finite())) {
            return Err(Error::Domain("candidate inverse depths must be positive".into()));
        }
        Ok(CandidateMap { width, height, sets })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> &[Candidate] {
        &self.sets[y * self.width + x]
    }

    pub fn sets(&self) -> &[Vec<Candidate>] {
        &self.sets
    }

    pub fn count_empty(&self) -> usize {
        self.sets.iter().filter(|s| s.is_empty()).count()
    }

    pub fn total_candidates(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// Offsets `(dx, dy)` with `dx^2 + dy^2 < r^2`, row-major.
fn disk_offsets(r: f64) -> Vec<(i64, i64)> {
    let reach = r.ceil() as i64;
    let r2 = r * r;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) < r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Collects sparse values within radius `r` (strict) of each pixel; sets smaller than `m` are emptied.
pub fn assign_candidates(sparse: &InvDepthMap, r: f64, m: usize) -> Result<CandidateMap> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("candidate radius must be positive, got {r}")));
    }
    if m == 0 {
        return Err(Error::Domain("minimum candidate count must be at least 1".into()));
    }
    let (w, h) = (sparse.width(), sparse.height());
    let offsets = disk_offsets(r);
    let sets: Vec<Vec<Candidate>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let x = Pixel::from_index(i, w);
            let mut set = Vec::new();
            for &(dx, dy) in &offsets {
                let (sx, sy) = (x.x as i64 + dx, x.y as i64 + dy);
                if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                    continue;
                }
                if let Some(d) = sparse.get(sx as usize, sy as usize) {
                    set.push(Candidate::new(d, Pixel::new(sx as usize, sy as usize)));
                }
            }
            if set.len() < m {
                set.clear();
            }
            set
        })
        .collect();
    CandidateMap::new(w, h, sets)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Label {
    cost: f64,
    seed: usize,
}

impl Label {
    fn better_than(&self, other: &Label) -> bool {
        match self.cost.total_cmp(&other.cost) {
            Ordering::Less => true,
            Ordering::Equal => self.seed < other.seed,
            Ordering::Greater => false,
        }
    }
}

#[derive(Debug, PartialEq)]
struct QueueEntry {
    label: Label,
    pixel: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    // Reversed so that the max-heap pops the smallest (cost, seed, pixel).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .label
            .cost
            .total_cmp(&self.label.cost)
            .then_with(|| other.label.seed.cmp(&self.label.seed))
            .then_with(|| other.pixel.cmp(&self.pixel))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Image-guided nearest seed for every pixel: `(seed index, path cost)`.
///
/// Seeds are the pixels flagged in `is_seed`; ties break by lower cost, then lower seed index.
pub fn image_guided_nearest(is_seed: &[bool], img: &ImageGrid, c: f64) -> Result<Vec<(usize, f64)>> {
    let (w, h) = (img.width(), img.height());
    if is_seed.len() != w * h {
        return Err(Error::Dimension("seed mask does not match image size".into()));
    }
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("path cost constant must be non-negative, got {c}")));
    }
    let grad = image_gradient(img)?;
    let node_cost: Vec<f64> = (0..w * h)
        .map(|i| {
            let p = Pixel::from_index(i, w);
            grad.norm2(p.x, p.y) + c
        })
        .collect();

    let mut best: Vec<Option<Label>> = vec![None; w * h];
    let mut heap = BinaryHeap::new();
    for (i, _) in is_seed.iter().enumerate().filter(|(_, s)| **s) {
        let label = Label { cost: 0.0, seed: i };
        best[i] = Some(label);
        heap.push(QueueEntry { label, pixel: i });
    }
    if heap.is_empty() {
        return Err(Error::NoData("no seed pixels for image-guided search".into()));
    }

    while let Some(QueueEntry { label, pixel }) = heap.pop() {
        if best[pixel] != Some(label) {
            continue;
        }
        let p = Pixel::from_index(pixel, w);
        let mut neighbors = [usize::MAX; 4];
        if p.x > 0 {
            neighbors[0] = pixel - 1;
        }
        if p.x + 1 < w {
            neighbors[1] = pixel + 1;
        }
        if p.y > 0 {
            neighbors[2] = pixel - w;
        }
        if p.y + 1 < h {
            neighbors[3] = pixel + w;
        }
        for n in neighbors.into_iter().filter(|&n| n != usize::MAX) {
            let cand = Label { cost: label.cost + node_cost[n], seed: label.seed };
            if best[n].is_none_or(|b| cand.better_than(&b)) {
                best[n] = Some(cand);
                heap.push(QueueEntry { label: cand, pixel: n });
            }
        }
    }
    Ok(best.into_iter().map(|b| b.map(|l| (l.seed, l.cost)).expect("grid is connected")).collect())
}

/// Fills every empty set with a copy of its image-guided nearest non-empty set.
pub fn ignns_interpolate(cm: &CandidateMap, i1: &ImageGrid, c: f64) -> Result<CandidateMap> {
    if i1.width() != cm.width || i1.height() != cm.height {
        return Err(Error::Dimension("image and candidate map sizes differ".into()));
    }
    let is_seed: Vec<bool> = cm.sets.iter().map(|s| !s.is_empty()).collect();
    if !is_seed.iter().any(|&s| s) {
        return Err(Error::NoData("all candidate sets are empty".into()));
    }
    let nearest = image_guided_nearest(&is_seed, i1, c)?;
    let sets = cm
        .sets
        .iter()
        .zip(&nearest)
        .map(|(set, &(seed, _))| if set.is_empty() { cm.sets[seed].clone() } else { set.clone() })
        .collect();
    CandidateMap::new(cm.width, cm.height, sets)
}

/// How candidates sharing one correspondence are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneRule {
    /// Keep the candidate whose source pixel is nearest to the pixel.
    #[default]
    NearestSource,
    /// Keep every candidate.
    Keep,
}

/// Computes correspondences and unary costs, then prunes duplicates per [`PruneRule`].
pub fn attach_correspondences(cm: &CandidateMap, ctx: &CostContext, rule: PruneRule) -> Result<CandidateMap> {
    if ctx.i1.width() != cm.width || ctx.i1.height() != cm.height {
        return Err(Error::Dimension("image and candidate map sizes differ".into()));
    }
    let w = cm.width;
    let sets: Vec<Vec<Candidate>> = cm
        .sets
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let x = Pixel::from_index(i, w);
            let mut kept: Vec<Candidate> = Vec::with_capacity(set.len());
            for cand in set {
                let target = warp(x, cand.d, &ctx.geometry);
                let scored = Candidate { warp: target, unary_cost: 0.0, ..*cand };
                if rule == PruneRule::NearestSource {
                    if let Some(existing) = kept.iter_mut().find(|k| k.warp == target) {
                        if closer(&scored, existing, x) {
                            *existing = scored;
                        }
                        continue;
                    }
                }
                kept.push(scored);
            }
            for cand in &mut kept {
                cand.unary_cost = ctx.cost_at_warp(x, cand.warp);
            }
            kept
        })
        .collect();
    CandidateMap::new(cm.width, cm.height, sets)
}

fn closer(a: &Candidate, b: &Candidate, x: Pixel) -> bool {
    let (da, db) = (a.source.dist2(x), b.source.dist2(x));
    da < db
        || (da == db && a.d < b.d)
        || (da == db && a.d == b.d && (a.source.y, a.source.x) < (b.source.y, b.source.x))
}
