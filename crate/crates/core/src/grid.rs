//! Row-major pixel grids shared by every stage of the pipeline.
//!
//! Coordinates follow the image convention: `x` is the column, `y` the row,
//! and `(0, 0)` is the top-left pixel.

use crate::error::{Error, Result};

/// Integer pixel coordinate inside some image domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub const fn new(x: usize, y: usize) -> Self {
        Pixel { x, y }
    }

    /// Row-major linear index for an image of the given width.
    #[inline]
    pub fn index(self, width: usize) -> usize {
        self.y * width + self.x
    }

    #[inline]
    pub fn from_index(index: usize, width: usize) -> Self {
        Pixel::new(index % width, index / width)
    }

    /// Squared Euclidean distance between two pixels.
    #[inline]
    pub fn dist2(self, other: Pixel) -> usize {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx * dx + dy * dy
    }
}

/// Grayscale image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {} values for a {width}x{height} image, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("intensity {v} outside [0, 1]")));
        }
        Ok(ImageGrid { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Converts interleaved color samples to gray by averaging channels.
    pub fn from_color(width: usize, height: usize, channels: usize, samples: &[f64]) -> Result<Self> {
        if channels == 0 || samples.len() != width * height * channels {
            return Err(Error::Dimension("color sample count does not match image size".into()));
        }
        let values = samples.chunks_exact(channels).map(|px| px.iter().sum::<f64>() / channels as f64).collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Intensity at signed coordinates, `None` outside the image.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<f64> {
        if self.contains(x, y) {
            Some(self.values[y as usize * self.width + x as usize])
        } else {
            None
        }
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }
}

/// Inverse depth map `[1/m]` where each pixel is either a positive value or empty.
#[derive(Debug, Clone, PartialEq)]
pub struct InvDepthMap {
    width: usize,
    height: usize,
    values: Vec<Option<f64>>,
}

impl InvDepthMap {
    pub fn new(width: usize, height: usize, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {} values for a {width}x{height} map, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(d) = values.iter().flatten().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::Domain(format!("inverse depth {d} is not positive and finite")));
        }
        Ok(InvDepthMap { width, height, values })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        InvDepthMap { width, height, values: vec![None; width * height] }
    }

    pub fn from_dense(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(width, height, values.into_iter().map(Some).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: Option<f64>) -> Result<()> {
        if let Some(d) = value {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Domain(format!("inverse depth {d} is not positive and finite")));
            }
        }
        self.values[y * self.width + x] = value;
        Ok(())
    }

    pub fn count_valid(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_dense(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Dense values, or an error naming the first empty pixel.
    pub fn dense_values(&self) -> Result<Vec<f64>> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    let p = Pixel::from_index(i, self.width);
                    Error::Precondition(format!("map is not dense: pixel ({}, {}) is empty", p.x, p.y))
                })
            })
            .collect()
    }

    /// Iterator over non-empty pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (Pixel, f64)> + '_ {
        let w = self.width;
        self.values.iter().enumerate().filter_map(move |(i, v)| v.map(|d| (Pixel::from_index(i, w), d)))
    }
}

/// Per-pixel forward-difference image gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    values: Vec<[f64; 2]>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.values[y * self.width + x]
    }

    /// Squared gradient magnitude at a pixel.
    #[inline]
    pub fn norm2(&self, x: usize, y: usize) -> f64 {
        let [gx, gy] = self.get(x, y);
        gx * gx + gy * gy
    }
}

/// Forward differences; the component crossing the last column/row is zero.
pub fn image_gradient(img: &ImageGrid) -> Result<GradientField> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(Error::Dimension(format!("gradient needs at least 2x2 pixels, got {w}x{h}")));
    }
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let c = img.get(x, y);
            let gx = if x + 1 < w { img.get(x + 1, y) - c } else { 0.0 };
            let gy = if y + 1 < h { img.get(x, y + 1) - c } else { 0.0 };
            values.push([gx, gy]);
        }
    }
    Ok(GradientField { width: w, height: h, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_gradient() {
        let img = ImageGrid::constant(5, 4, 0.3).unwrap();
        let g = image_gradient(&img).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(g.get(x, y), [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn horizontal_ramp() {
        let w = 6;
        let img = ImageGrid::from_fn(w, 3, |x, _| x as f64 / (w - 1) as f64).unwrap();
        let g = image_gradient(&img).unwrap();
        for y in 0..3 {
            for x in 0..w {
                let expect = if x + 1 < w { 1.0 / (w - 1) as f64 } else { 0.0 };
                assert!((g.get(x, y)[0] - expect).abs() < 1e-15);
                assert_eq!(g.get(x, y)[1], 0.0);
            }
        }
    }

    #[test]
    fn two_by_two_hand_case() {
        let img = ImageGrid::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let g = image_gradient(&img).unwrap();
        assert_eq!(g.get(0, 0), [1.0, 0.0]);
        assert_eq!(g.get(1, 0), [0.0, -1.0]);
    }

    #[test]
    fn degenerate_dimensions_rejected() {
        let img = ImageGrid::constant(1, 5, 0.0).unwrap();
        assert!(matches!(image_gradient(&img), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_out_of_range_intensity_and_bad_depth() {
        assert!(ImageGrid::new(1, 1, vec![1.5]).is_err());
        assert!(InvDepthMap::new(1, 1, vec![Some(0.0)]).is_err());
        assert!(InvDepthMap::new(1, 2, vec![Some(0.1)]).is_err());
    }

    #[test]
    fn color_is_averaged() {
        let img = ImageGrid::from_color(1, 1, 3, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(img.get(0, 0), 0.5);
    }
}
