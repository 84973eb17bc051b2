//! Edge-aware TGV smoothing of the selected inverse depth map.
//!
//! The regularizer is `lambda_a |G (grad u - v)| + lambda_b |grad v|`. `G` is a per-pixel
//! binary diagonal tensor that switches off regularization across depth discontinuities,
//! except on the ground. It is minimized with a fixed-step first-order primal-dual scheme
//! on forward differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::InvDepthMap;
use crate::ground::GroundMask;

/// Diagonal 0/1 tensor at one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tensor {
    /// diag(1, 1)
    Identity,
    /// diag(0, 1): horizontal discontinuity, only the vertical component is regularized.
    KeepY,
    /// diag(1, 0): vertical discontinuity, only the horizontal component is regularized.
    KeepX,
    /// diag(0, 0)
    Zero,
}

impl Tensor {
    pub fn from_diag(gx: bool, gy: bool) -> Tensor {
        match (gx, gy) {
            (true, true) => Tensor::Identity,
            (false, true) => Tensor::KeepY,
            (true, false) => Tensor::KeepX,
            (false, false) => Tensor::Zero,
        }
    }

    /// Diagonal entries as 0.0 / 1.0.
    #[inline]
    pub fn diag(self) -> [f64; 2] {
        match self {
            Tensor::Identity => [1.0, 1.0],
            Tensor::KeepY => [0.0, 1.0],
            Tensor::KeepX => [1.0, 0.0],
            Tensor::Zero => [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BadtField {
    width: usize,
    height: usize,
    tensors: Vec<Tensor>,
}

impl BadtField {
    pub fn new(width: usize, height: usize, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != width * height {
            return Err(Error::Dimension("tensor field size mismatch".into()));
        }
        Ok(BadtField { width, height, tensors })
    }

    pub fn uniform(width: usize, height: usize, tensor: Tensor) -> Self {
        BadtField { width, height, tensors: vec![tensor; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Tensor {
        self.tensors[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, t: Tensor) {
        self.tensors[y * self.width + x] = t;
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}

/// Tensor field from forward depth differences: a jump larger than `t` meters along x
/// drops the x component, along y the y component. Ground pixels always get the identity.
pub fn derive_badt(d: &InvDepthMap, ground: &GroundMask, t: f64) -> Result<BadtField> {
    let (w, h) = (d.width(), d.height());
    if ground.width() != w || ground.height() != h {
        return Err(Error::Dimension("ground mask and depth map differ in size".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain("depth jump threshold must be >= 0".into()));
    }
    let inv = d.dense_values()?;
    let depth: Vec<f64> = inv.iter().map(|v| 1.0 / v).collect();
    let tensors = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if ground.get(x, y) {
                return Tensor::Identity;
            }
            let jump_x = x + 1 < w && (depth[i + 1] - depth[i]).abs() > t;
            let jump_y = y + 1 < h && (depth[i + w] - depth[i]).abs() > t;
            Tensor::from_diag(!jump_x, !jump_y)
        })
        .collect();
    Ok(BadtField { width: w, height: h, tensors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TgvParams {
    pub lambda_a: f64,
    pub lambda_b: f64,
    /// Data weight is `D_SSM^w_exponent`, clamped to `[1e-6, 1e6]`.
    pub w_exponent: f64,
    /// Primal step.
    pub tau: f64,
    /// Dual step.
    pub sigma: f64,
    pub iters: usize,
}

/// Squared operator norm bound of the stacked TGV operator on a unit grid.
pub const TGV_OPERATOR_NORM2: f64 = 12.0;

impl Default for TgvParams {
    fn default() -> Self {
        let step = 1.0 / TGV_OPERATOR_NORM2.sqrt();
        TgvParams { lambda_a: 1.0, lambda_b: 8.0, w_exponent: -2.5, tau: step, sigma: step, iters: 1000 }
    }
}

impl TgvParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_a", self.lambda_a), ("lambda_b", self.lambda_b)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.w_exponent.is_finite() {
            return Err(Error::Config("w_exponent must be finite".into()));
        }
        if !(self.tau > 0.0 && self.sigma > 0.0) {
            return Err(Error::Config("step sizes must be > 0".into()));
        }
        if self.tau * self.sigma * TGV_OPERATOR_NORM2 > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "tau * sigma = {} exceeds 1 / {TGV_OPERATOR_NORM2}",
                self.tau * self.sigma
            )));
        }
        Ok(())
    }

    /// Data-term weight for a given input inverse depth.
    #[inline]
    pub fn data_weight(&self, d: f64) -> f64 {
        d.powf(self.w_exponent).clamp(1e-6, 1e6)
    }
}

#[derive(Debug, Clone)]
pub struct TgvOutput {
    pub depth: InvDepthMap,
    /// Relaxation variable paired with `depth`.
    pub v: Vec<[f64; 2]>,
    pub energy: f64,
    pub initial_energy: f64,
    /// Iteration whose iterate was returned (0 is the input itself).
    pub best_iteration: usize,
}

/// Energies are compared every this many iterations and at the end; the lowest iterate wins.
const CHECK_EVERY: usize = 10;

#[derive(Clone, Copy, Default)]
struct Primal {
    u: f64,
    v: [f64; 2],
}

#[derive(Clone, Copy, Default)]
struct Dual {
    p: [f64; 2],
    q: [f64; 4],
}

#[inline]
fn fwd(a: &[Primal], w: usize, h: usize, i: usize, f: impl Fn(&Primal) -> f64) -> [f64; 2] {
    let (x, y) = (i % w, i / w);
    let c = f(&a[i]);
    let dx = if x + 1 < w { f(&a[i + 1]) - c } else { 0.0 };
    let dy = if y + 1 < h { f(&a[i + w]) - c } else { 0.0 };
    [dx, dy]
}

/// Divergence as the negative adjoint of the forward difference.
#[inline]
fn div(a: &[Dual], w: usize, h: usize, i: usize, f: impl Fn(&Dual) -> [f64; 2]) -> f64 {
    let (x, y) = (i % w, i / w);
    let c = f(&a[i]);
    let mut s = 0.0;
    if x + 1 < w {
        s += c[0];
    }
    if x >= 1 {
        s -= f(&a[i - 1])[0];
    }
    if y + 1 < h {
        s += c[1];
    }
    if y >= 1 {
        s -= f(&a[i - w])[1];
    }
    s
}

#[inline]
fn project(v: &mut [f64], radius: f64) {
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n > radius {
        let s = if n > 0.0 { radius / n } else { 0.0 };
        v.iter_mut().for_each(|c| *c *= s);
    }
}

fn energy_of(prim: &[Primal], f: &[f64], wt: &[f64], g: &BadtField, p: &TgvParams) -> f64 {
    let (w, h) = (g.width, g.height);
    let rows: Vec<f64> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut s = 0.0;
            for x in 0..w {
                let i = y * w + x;
                let r = prim[i].u - f[i];
                let gu = fwd(prim, w, h, i, |a| a.u);
                let gd = g.tensors[i].diag();
                let a0 = gd[0] * (gu[0] - prim[i].v[0]);
                let a1 = gd[1] * (gu[1] - prim[i].v[1]);
                let g1 = fwd(prim, w, h, i, |a| a.v[0]);
                let g2 = fwd(prim, w, h, i, |a| a.v[1]);
                s += wt[i] * r * r
                    + p.lambda_a * (a0 * a0 + a1 * a1).sqrt()
                    + p.lambda_b * (g1[0] * g1[0] + g1[1] * g1[1] + g2[0] * g2[0] + g2[1] * g2[1]).sqrt();
            }
            s
        })
        .collect();
    rows.iter().sum()
}

fn check_inputs(d: &InvDepthMap, g: &BadtField) -> Result<Vec<f64>> {
    if g.width != d.width() || g.height != d.height() {
        return Err(Error::Dimension("tensor field and depth map differ in size".into()));
    }
    let f = d.dense_values()?;
    if let Some(bad) = f.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("inverse depth {bad} is not positive")));
    }
    Ok(f)
}

/// Evaluates the smoothing energy of `(u, v)` against the input map `d`.
pub fn tgv_energy(u: &[f64], v: &[[f64; 2]], d: &InvDepthMap, g: &BadtField, p: &TgvParams) -> Result<f64> {
    let f = check_inputs(d, g)?;
    if u.len() != f.len() || v.len() != f.len() {
        return Err(Error::Dimension("state size mismatch".into()));
    }
    let prim: Vec<Primal> = u.iter().zip(v).map(|(&u, &v)| Primal { u, v }).collect();
    let wt: Vec<f64> = f.iter().map(|&x| p.data_weight(x)).collect();
    Ok(energy_of(&prim, &f, &wt, g, p))
}

/// Runs the solver from `u = d`, `v = 0` and returns the lowest-energy iterate seen.
pub fn tgv_minimize(d: &InvDepthMap, g: &BadtField, p: &TgvParams) -> Result<TgvOutput> {
    p.validate()?;
    let f = check_inputs(d, g)?;
    let (w, h) = (d.width(), d.height());
    let n = w * h;
    let wt: Vec<f64> = f.iter().map(|&x| p.data_weight(x)).collect();

    let mut prim: Vec<Primal> = f.iter().map(|&u| Primal { u, v: [0.0; 2] }).collect();
    let initial_energy = energy_of(&prim, &f, &wt, g, p);
    let mut best = (initial_energy, 0usize, prim.clone());
    if (p.lambda_a == 0.0 && p.lambda_b == 0.0) || p.iters == 0 || n == 0 {
        return finish(d, best, initial_energy);
    }

    let mut bar = prim.clone();
    let mut next = prim.clone();
    let mut dual = vec![Dual::default(); n];
    let (tau, sigma) = (p.tau, p.sigma);

    for it in 1..=p.iters {
        dual.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, dv) in row.iter_mut().enumerate() {
                let i = y * w + x;
                let gd = g.tensors[i].diag();
                let gu = fwd(&bar, w, h, i, |a| a.u);
                dv.p[0] += sigma * gd[0] * (gu[0] - bar[i].v[0]);
                dv.p[1] += sigma * gd[1] * (gu[1] - bar[i].v[1]);
                project(&mut dv.p, p.lambda_a);
                let g1 = fwd(&bar, w, h, i, |a| a.v[0]);
                let g2 = fwd(&bar, w, h, i, |a| a.v[1]);
                dv.q[0] += sigma * g1[0];
                dv.q[1] += sigma * g1[1];
                dv.q[2] += sigma * g2[0];
                dv.q[3] += sigma * g2[1];
                project(&mut dv.q, p.lambda_b);
            }
        });

        next.par_chunks_mut(w).zip(bar.par_chunks_mut(w)).enumerate().for_each(|(y, (nrow, brow))| {
            for x in 0..w {
                let i = y * w + x;
                let old = prim[i];
                let ut = old.u + tau * div_gp(&dual, g, w, h, i);
                let u = ut + 2.0 * tau * wt[i] * (f[i] - ut) / (1.0 + 2.0 * tau * wt[i]);
                let gd = g.tensors[i].diag();
                let v0 = old.v[0] + tau * (gd[0] * dual[i].p[0] + div(&dual, w, h, i, |q| [q.q[0], q.q[1]]));
                let v1 = old.v[1] + tau * (gd[1] * dual[i].p[1] + div(&dual, w, h, i, |q| [q.q[2], q.q[3]]));
                nrow[x] = Primal { u, v: [v0, v1] };
                brow[x] = Primal { u: 2.0 * u - old.u, v: [2.0 * v0 - old.v[0], 2.0 * v1 - old.v[1]] };
            }
        });
        std::mem::swap(&mut prim, &mut next);

        if it % CHECK_EVERY == 0 || it == p.iters {
            let e = energy_of(&prim, &f, &wt, g, p);
            if e < best.0 {
                best = (e, it, prim.clone());
            }
        }
    }
    finish(d, best, initial_energy)
}

/// `div(G p)` at pixel `i`, where `G` varies per pixel.
#[inline]
fn div_gp(dual: &[Dual], g: &BadtField, w: usize, h: usize, i: usize) -> f64 {
    let (x, y) = (i % w, i / w);
    let gp = |j: usize| {
        let gd = g.tensors[j].diag();
        [gd[0] * dual[j].p[0], gd[1] * dual[j].p[1]]
    };
    let mut s = 0.0;
    if x + 1 < w {
        s += gp(i)[0];
    }
    if x >= 1 {
        s -= gp(i - 1)[0];
    }
    if y + 1 < h {
        s += gp(i)[1];
    }
    if y >= 1 {
        s -= gp(i - w)[1];
    }
    s
}

fn finish(d: &InvDepthMap, best: (f64, usize, Vec<Primal>), initial_energy: f64) -> Result<TgvOutput> {
    let (energy, best_iteration, prim) = best;
    let values = prim.iter().map(|a| a.u).collect::<Vec<_>>();
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Degenerate(format!("smoothing produced non-positive inverse depth {bad}")));
    }
    Ok(TgvOutput {
        depth: InvDepthMap::from_dense(d.width(), d.height(), values)?,
        v: prim.iter().map(|a| a.v).collect(),
        energy,
        initial_energy,
        best_iteration,
    })
}

/// Smoothed inverse depth map.
pub fn tgv_smooth(d: &InvDepthMap, g: &BadtField, p: &TgvParams) -> Result<InvDepthMap> {
    Ok(tgv_minimize(d, g, p)?.depth)
}
