//! Dense H×W scalar grids and the image/depth/mask types built on them.
//!
//! Row-major storage, pixel (x, y) at index `y * width + x`. Pixel centers sit
//! at integer coordinates (x, y) ∈ {0..W−1}×{0..H−1}.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// H×W grid of f64 values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, fill: f64) -> Self {
        Grid {
            height,
            width,
            data: vec![fill; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "grid data length mismatch");
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        assert!(self.same_shape(other), "zip_map shape mismatch");
        Grid {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 2×2 block average downsampling; output is (H/2)×(W/2), truncating an
    /// odd last row/column.
    pub fn avg_pool2(&self) -> Grid {
        let oh = self.height / 2;
        let ow = self.width / 2;
        let mut out = Grid::new(oh, ow, 0.0);
        for y in 0..oh {
            for x in 0..ow {
                let s = self.get(2 * x, 2 * y)
                    + self.get(2 * x + 1, 2 * y)
                    + self.get(2 * x, 2 * y + 1)
                    + self.get(2 * x + 1, 2 * y + 1);
                out.set(x, y, s * 0.25);
            }
        }
        out
    }
}

/// H×W×C image with intensities in [0, 1], stored as C planes (C ∈ {1, 3}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageField {
    planes: Vec<Grid>,
}

impl ImageField {
    pub fn new(planes: Vec<Grid>) -> Result<Self> {
        if planes.is_empty() || (planes.len() != 1 && planes.len() != 3) {
            return Err(Error::ShapeMismatch(format!(
                "image must have 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        for p in &planes {
            if !p.same_shape(&planes[0]) {
                return Err(Error::ShapeMismatch(
                    "image planes have differing shapes".into(),
                ));
            }
            if !p.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(
                    "image intensities must be finite and in [0, 1]".into(),
                ));
            }
        }
        Ok(ImageField { planes })
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn plane(&self, c: usize) -> &Grid {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[Grid] {
        &self.planes
    }

    /// Channel mean, (r + g + b) / 3 for RGB, identity for grayscale.
    pub fn grayscale(&self) -> Grid {
        if self.planes.len() == 1 {
            return self.planes[0].clone();
        }
        let mut g = self.planes[0].clone();
        let n = self.planes.len() as f64;
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            let mut s = *v;
            for p in &self.planes[1..] {
                s += p.data()[i];
            }
            *v = s / n;
        }
        g
    }

    pub fn avg_pool2(&self) -> ImageField {
        ImageField {
            planes: self.planes.iter().map(Grid::avg_pool2).collect(),
        }
    }
}

/// H×W strictly positive scene depth in world units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap(Grid);

impl DepthMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if !grid.data().iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidDepth(
                "depth values must be finite and strictly positive".into(),
            ));
        }
        Ok(DepthMap(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn avg_pool2(&self) -> DepthMap {
        DepthMap(self.0.avg_pool2())
    }
}

/// H×W binary indicators stored as 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityMask(Grid);

impl ValidityMask {
    pub fn new(grid: Grid) -> Result<Self> {
        if !grid.data().iter().all(|v| *v == 0.0 || *v == 1.0) {
            return Err(Error::InvalidInput("mask entries must be 0 or 1".into()));
        }
        Ok(ValidityMask(grid))
    }

    pub fn ones(height: usize, width: usize) -> Self {
        ValidityMask(Grid::new(height, width, 1.0))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ValidityMask(Grid::new(height, width, 0.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) != 0.0
    }

    pub fn set(&mut self, x: usize, y: usize, valid: bool) {
        self.0.set(x, y, if valid { 1.0 } else { 0.0 });
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|v| **v != 0.0).count()
    }

    /// Pixel-wise AND.
    pub fn and(&self, other: &ValidityMask) -> ValidityMask {
        ValidityMask(self.0.zip_map(&other.0, |a, b| a * b))
    }

    /// Complement (1 − m).
    pub fn complement(&self) -> ValidityMask {
        ValidityMask(self.0.map(|v| 1.0 - v))
    }

    /// 2×2 majority-rule downsampling: block average > 0.5 maps to 1.
    pub fn downsample_majority(&self) -> ValidityMask {
        ValidityMask(self.0.avg_pool2().map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
    }
}
