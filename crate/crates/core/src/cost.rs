//! Truncated stereo matching cost: photometric + census + gradient terms over a square window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::StereoGeometry;
use crate::error::{Error, Result};
use crate::geometry::{warp, WarpedPixel};
use crate::grid::{image_gradient, GradientField, ImageGrid, Pixel};

/// Census bit strings, one per pixel, packed into 64-bit words.
///
/// Bit `i` covers the `i`-th window offset in row-major order, skipping the center;
/// it is set when the neighbor is strictly darker than the center.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusGrid {
    width: usize,
    height: usize,
    radius: usize,
    words: usize,
    data: Vec<u64>,
}

impl CensusGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of bits per pixel, `|W| - 1`.
    pub fn bit_count(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side - 1
    }

    #[inline]
    fn words_at(&self, x: usize, y: usize) -> &[u64] {
        let start = (y * self.width + x) * self.words;
        &self.data[start..start + self.words]
    }

    pub fn bits(&self, x: usize, y: usize) -> Vec<bool> {
        let words = self.words_at(x, y);
        (0..self.bit_count()).map(|i| words[i / 64] >> (i % 64) & 1 == 1).collect()
    }

    /// Hamming distance between the bit strings at two pixels of two grids.
    #[inline]
    pub fn hamming(&self, a: (usize, usize), other: &CensusGrid, b: (usize, usize)) -> u32 {
        self.words_at(a.0, a.1).iter().zip(other.words_at(b.0, b.1)).map(|(p, q)| (p ^ q).count_ones()).sum()
    }
}

/// Census transform; neighbors outside the image compare as intensity 0.
pub fn census_transform(img: &ImageGrid, radius: usize) -> Result<CensusGrid> {
    if radius == 0 {
        return Err(Error::Domain("census radius must be at least 1".into()));
    }
    let (w, h) = (img.width(), img.height());
    let r = radius as i64;
    let side = 2 * radius + 1;
    let bits = side * side - 1;
    let words = bits.div_ceil(64);
    let rows: Vec<Vec<u64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0u64; w * words];
            for x in 0..w {
                let center = img.get(x, y);
                let out = &mut row[x * words..(x + 1) * words];
                let mut bit = 0usize;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let n = img.get_signed(x as i64 + dx, y as i64 + dy).unwrap_or(0.0);
                        if n < center {
                            out[bit / 64] |= 1 << (bit % 64);
                        }
                        bit += 1;
                    }
                }
            }
            row
        })
        .collect();
    Ok(CensusGrid { width: w, height: h, radius, words, data: rows.concat() })
}

/// Weights and truncation maxima of the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub alpha_c: f64,
    pub alpha_g: f64,
    pub l_p: f64,
    pub l_c: f64,
    pub l_g: f64,
    /// Half-size of the square window; 5 gives 11x11.
    pub radius: usize,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { alpha_c: 1.0, alpha_g: 1.0, l_p: 0.5, l_c: 0.5, l_g: 0.5, radius: 5 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_c, self.alpha_g, self.l_p, self.l_c, self.l_g];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("cost weights and truncations must be finite and >= 0".into()));
        }
        if self.radius == 0 {
            return Err(Error::Config("cost window radius must be >= 1".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side
    }

    /// `|W| l_P + alpha_C l_C + |W| l_G`.
    pub fn max_cost(&self) -> f64 {
        let n = self.window_len() as f64;
        n * self.l_p + self.alpha_c * self.l_c + n * self.l_g
    }
}

/// Everything needed to evaluate the matching cost of one stereo pair.
#[derive(Debug, Clone)]
pub struct CostContext {
    pub i1: ImageGrid,
    pub i2: ImageGrid,
    pub census1: CensusGrid,
    pub census2: CensusGrid,
    pub grad1: GradientField,
    pub grad2: GradientField,
    pub geometry: StereoGeometry,
    pub params: CostParams,
}

impl CostContext {
    pub fn new(i1: ImageGrid, i2: ImageGrid, geometry: StereoGeometry, params: CostParams) -> Result<Self> {
        params.validate()?;
        let census1 = census_transform(&i1, params.radius)?;
        let census2 = census_transform(&i2, params.radius)?;
        let grad1 = image_gradient(&i1)?;
        let grad2 = image_gradient(&i2)?;
        Ok(CostContext { i1, i2, census1, census2, grad1, grad2, geometry, params })
    }

    pub fn max_cost(&self) -> f64 {
        self.params.max_cost()
    }

    /// Matching cost `L^x(d)`.
    #[inline]
    pub fn stereo_cost(&self, x: Pixel, d: f64) -> f64 {
        self.cost_at_warp(x, warp(x, d, &self.geometry))
    }

    /// Matching cost of `x` against an already computed correspondence.
    pub fn cost_at_warp(&self, x: Pixel, target: Option<WarpedPixel>) -> f64 {
        let p = &self.params;
        let Some((tx, ty)) = target else {
            return p.max_cost();
        };
        if !self.i2.contains(tx, ty) {
            return p.max_cost();
        }
        let (w1, h1) = (self.i1.width() as i64, self.i1.height() as i64);
        let (w2, h2) = (self.i2.width() as i64, self.i2.height() as i64);
        let r = p.radius as i64;
        let (sx, sy) = (x.x as i64, x.y as i64);
        let v1 = self.i1.values();
        let v2 = self.i2.values();

        let mut photometric = 0.0;
        let mut gradient = 0.0;
        for dy in -r..=r {
            let (ay, by) = (sy + dy, ty + dy);
            let rows_ok = ay >= 0 && ay < h1 && by >= 0 && by < h2;
            for dx in -r..=r {
                let (ax, bx) = (sx + dx, tx + dx);
                if !(rows_ok && ax >= 0 && ax < w1 && bx >= 0 && bx < w2) {
                    photometric += p.l_p;
                    gradient += p.l_g;
                    continue;
                }
                let ia = (ay * w1 + ax) as usize;
                let ib = (by * w2 + bx) as usize;
                photometric += (v1[ia] - v2[ib]).abs().min(p.l_p);
                let ga = self.grad1.get(ax as usize, ay as usize);
                let gb = self.grad2.get(bx as usize, by as usize);
                let (ex, ey) = (ga[0] - gb[0], ga[1] - gb[1]);
                gradient += (ex * ex + ey * ey).sqrt().min(p.l_g);
            }
        }
        let ham = self.census1.hamming((x.x, x.y), &self.census2, (tx as usize, ty as usize));
        let census = (ham as f64 / self.census1.bit_count() as f64).min(p.l_c);
        photometric + p.alpha_c * census + p.alpha_g * gradient
    }
}

/// Matching costs of a rectified pair precomputed for every integer disparity in `0..=max_disparity`.
///
/// For rectified pairs the cost depends on `d` only through the floored correspondence, so
/// lookups reproduce [`CostContext::stereo_cost`] bit for bit.
#[derive(Debug, Clone)]
pub struct DisparityCostVolume {
    width: usize,
    levels: usize,
    fb: f64,
    costs: Vec<f64>,
}

impl DisparityCostVolume {
    pub fn build(ctx: &CostContext, max_disparity: usize) -> Result<Self> {
        let fb = ctx.geometry.focal_baseline()?;
        let (w, h) = (ctx.i1.width(), ctx.i1.height());
        let levels = max_disparity + 1;
        let costs: Vec<f64> = (0..w * h)
            .into_par_iter()
            .flat_map_iter(|i| {
                let x = Pixel::from_index(i, w);
                (0..levels).map(move |k| ctx.cost_at_warp(x, Some((x.x as i64 - k as i64, x.y as i64))))
            })
            .collect();
        Ok(DisparityCostVolume { width: w, levels, fb, costs })
    }

    /// Cost at `(x, d)`, falling back to direct evaluation outside the cached range.
    #[inline]
    pub fn stereo_cost(&self, ctx: &CostContext, x: Pixel, d: f64) -> f64 {
        let target = (x.x as f64 - self.fb * d).floor() as i64;
        let k = x.x as i64 - target;
        if k >= 0 && (k as usize) < self.levels {
            self.costs[x.index(self.width) * self.levels + k as usize]
        } else {
            ctx.cost_at_warp(x, Some((target, x.y as i64)))
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_image(w: usize, h: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(w, h, |_, _| rng.gen::<f64>()).unwrap()
    }

    /// Direct transcription of the windowed cost with no precomputation.
    pub(crate) fn naive_cost(i1: &ImageGrid, i2: &ImageGrid, x: (i64, i64), target: (i64, i64), p: &CostParams) -> f64 {
        let r = p.radius as i64;
        let n = p.window_len() as f64;
        if !i2.contains(target.0, target.1) {
            return n * p.l_p + p.alpha_c * p.l_c + n * p.l_g;
        }
        let px = |img: &ImageGrid, x: i64, y: i64| img.get_signed(x, y);
        let grad = |img: &ImageGrid, x: i64, y: i64| -> [f64; 2] {
            let c = img.get_signed(x, y).unwrap();
            let gx = img.get_signed(x + 1, y).map_or(0.0, |v| v - c);
            let gy = img.get_signed(x, y + 1).map_or(0.0, |v| v - c);
            [gx, gy]
        };
        let mut lp = 0.0;
        let mut lg = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let a = px(i1, x.0 + dx, x.1 + dy);
                let b = px(i2, target.0 + dx, target.1 + dy);
                match (a, b) {
                    (Some(a), Some(b)) => {
                        lp += (a - b).abs().min(p.l_p);
                        let ga = grad(i1, x.0 + dx, x.1 + dy);
                        let gb = grad(i2, target.0 + dx, target.1 + dy);
                        lg += ((ga[0] - gb[0]).powi(2) + (ga[1] - gb[1]).powi(2)).sqrt().min(p.l_g);
                    }
                    _ => {
                        lp += p.l_p;
                        lg += p.l_g;
                    }
                }
            }
        }
        let mut ham = 0usize;
        let c1 = i1.get_signed(x.0, x.1).unwrap();
        let c2 = i2.get_signed(target.0, target.1).unwrap();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let b1 = px(i1, x.0 + dx, x.1 + dy).unwrap_or(0.0) < c1;
                let b2 = px(i2, target.0 + dx, target.1 + dy).unwrap_or(0.0) < c2;
                ham += (b1 != b2) as usize;
            }
        }
        let lc = (ham as f64 / (n - 1.0)).min(p.l_c);
        lp + p.alpha_c * lc + p.alpha_g * lg
    }

    #[test]
    fn census_constant_and_hand_patch() {
        let c = census_transform(&ImageGrid::constant(7, 7, 0.4).unwrap(), 1).unwrap();
        // Interior pixels of a constant image have no darker neighbor.
        assert!(c.bits(3, 3).iter().all(|b| !b));
        let patch = ImageGrid::from_fn(3, 3, |x, y| (y * 3 + x + 1) as f64 / 9.0).unwrap();
        let c = census_transform(&patch, 1).unwrap();
        assert_eq!(c.bits(1, 1), vec![true, true, true, true, false, false, false, false]);
        assert_eq!(c.bit_count(), 8);
        assert_eq!(census_transform(&patch, 5).unwrap().bit_count(), 120);
        assert!(census_transform(&patch, 0).is_err());
    }

    #[test]
    fn census_self_distance_is_zero() {
        let img = random_image(20, 15, 3);
        let c = census_transform(&img, 5).unwrap();
        for y in 0..15 {
            for x in 0..20 {
                assert_eq!(c.hamming((x, y), &c, (x, y)), 0);
            }
        }
    }

    #[test]
    fn identical_images_zero_cost() {
        let img = random_image(32, 32, 1);
        let g = StereoGeometry::rectified(100.0, 0.5).unwrap();
        let ctx = CostContext::new(img.clone(), img, g, CostParams::default()).unwrap();
        assert_eq!(ctx.stereo_cost(Pixel::new(16, 16), 0.0), 0.0);
    }

    #[test]
    fn shifted_pair_zero_cost_at_true_disparity() {
        let i1 = random_image(48, 32, 2);
        let i2 = ImageGrid::from_fn(48, 32, |x, y| if x + 10 < 48 { i1.get(x + 10, y) } else { 0.5 }).unwrap();
        let g = StereoGeometry::rectified(100.0, 0.5).unwrap();
        let ctx = CostContext::new(i1, i2, g, CostParams::default()).unwrap();
        // f b d = 10
        assert_eq!(ctx.stereo_cost(Pixel::new(24, 16), 0.2), 0.0);
        assert!(ctx.stereo_cost(Pixel::new(24, 16), 0.1) > 0.0);
    }

    #[test]
    fn matches_naive_triple_loop() {
        let i1 = random_image(32, 32, 10);
        let i2 = random_image(32, 32, 11);
        let g = StereoGeometry::rectified(50.0, 0.4).unwrap();
        let params = CostParams::default();
        let ctx = CostContext::new(i1.clone(), i2.clone(), g, params).unwrap();
        let pixels = [(16usize, 16usize), (0, 0), (31, 5), (7, 29), (20, 3)];
        let depths = [0.0, 0.13, 0.6];
        for &(x, y) in &pixels {
            for &d in &depths {
                let t = ((x as f64 - 50.0 * 0.4 * d).floor() as i64, y as i64);
                let want = naive_cost(&i1, &i2, (x as i64, y as i64), t, &params);
                let got = ctx.stereo_cost(Pixel::new(x, y), d);
                assert!((got - want).abs() < 1e-9, "({x},{y}) d={d}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn out_of_image_target_is_truncation_maximum() {
        let img = random_image(16, 16, 4);
        let g = StereoGeometry::rectified(100.0, 1.0).unwrap();
        let ctx = CostContext::new(img.clone(), img, g, CostParams::default()).unwrap();
        assert_eq!(ctx.stereo_cost(Pixel::new(3, 3), 0.5), CostParams::default().max_cost());
        assert_eq!(CostParams::default().max_cost(), 121.5);
    }

    #[test]
    fn volume_reproduces_direct_cost() {
        let i1 = random_image(40, 20, 5);
        let i2 = random_image(40, 20, 6);
        let g = StereoGeometry::rectified(60.0, 0.5).unwrap();
        let ctx = CostContext::new(i1, i2, g, CostParams { radius: 2, ..Default::default() }).unwrap();
        let vol = DisparityCostVolume::build(&ctx, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = Pixel::new(rng.gen_range(0..40), rng.gen_range(0..20));
            let d = rng.gen_range(0.0..0.5);
            assert_eq!(vol.stereo_cost(&ctx, x, d), ctx.stereo_cost(x, d));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn cost_bounded_and_monotone_in_truncation(
            seed in 0u64..1000, x in 0usize..24, y in 0usize..16, d in 0.0f64..0.4,
            bump in 0.0f64..0.5,
        ) {
            let i1 = random_image(24, 16, seed);
            let i2 = random_image(24, 16, seed + 1);
            let g = StereoGeometry::rectified(40.0, 0.5).unwrap();
            let base = CostParams { radius: 2, ..Default::default() };
            let ctx = CostContext::new(i1.clone(), i2.clone(), g, base).unwrap();
            let c = ctx.stereo_cost(Pixel::new(x, y), d);
            proptest::prop_assert!(c >= 0.0 && c <= base.max_cost() + 1e-12);
            for raised in [
                CostParams { l_p: base.l_p + bump, ..base },
                CostParams { l_c: base.l_c + bump, ..base },
                CostParams { l_g: base.l_g + bump, ..base },
            ] {
                let ctx2 = CostContext::new(i1.clone(), i2.clone(), g, raised).unwrap();
                proptest::prop_assert!(ctx2.stereo_cost(Pixel::new(x, y), d) >= c - 1e-12);
            }
        }
    }
}
