//! In-memory raster types.

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, interleaved (HWC).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "{height}×{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(RgbImage { height, width, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> [u8; 3] {
        let i = (r * self.width + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, px: [u8; 3]) {
        let i = (r * self.width + c) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Per-channel mean intensity in `[0,1]`.
    pub fn channel_means(&self) -> [f32; 3] {
        let mut sum = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for k in 0..3 {
                sum[k] += px[k] as u64;
            }
        }
        let n = (self.height * self.width).max(1) as f64 * 255.0;
        [
            (sum[0] as f64 / n) as f32,
            (sum[1] as f64 / n) as f32,
            (sum[2] as f64 / n) as f32,
        ]
    }
}

/// Binary mask with values in `{0,1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}×{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Mask { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Mask { height, width, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] != 0
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.width + c] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn crop(&self, region: Region) -> Mask {
        let mut out = Mask::new(region.rows, region.cols);
        for r in 0..region.rows {
            let src = (region.row + r) * self.width + region.col;
            out.data[r * region.cols..(r + 1) * region.cols].copy_from_slice(&self.data[src..src + region.cols]);
        }
        out
    }
}

/// Axis-aligned pixel rectangle: top-left corner plus extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub fn full(height: usize, width: usize) -> Self {
        Region {
            row: 0,
            col: 0,
            rows: height,
            cols: width,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.rows && c >= self.col && c < self.col + self.cols
    }

    pub fn area(&self) -> usize {
        self.rows * self.cols
    }
}

/// Dense per-pixel probability map over a full image. Pixels outside
/// `valid` carry no prediction and hold NaN.
#[derive(Clone, Debug)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub valid: Region,
}

impl ProbMap {
    /// A map with every pixel valid.
    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}×{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(ProbMap {
            height,
            width,
            data,
            valid: Region::full(height, width),
        })
    }

    /// An all-no-data map with the given valid region (filled with 0).
    pub fn empty(height: usize, width: usize, valid: Region) -> Self {
        let mut data = vec![f32::NAN; height * width];
        for r in valid.row..valid.row + valid.rows {
            data[r * width + valid.col..r * width + valid.col + valid.cols].fill(0.0);
        }
        ProbMap {
            height,
            width,
            data,
            valid,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.width + c] = v;
    }

    /// The valid region as a standalone map.
    pub fn crop_valid(&self) -> ProbMap {
        let v = self.valid;
        let mut data = Vec::with_capacity(v.area());
        for r in v.row..v.row + v.rows {
            data.extend_from_slice(&self.data[r * self.width + v.col..r * self.width + v.col + v.cols]);
        }
        ProbMap {
            height: v.rows,
            width: v.cols,
            data,
            valid: Region::full(v.rows, v.cols),
        }
    }

    /// Binarises with `p ≥ threshold` (ties positive); no-data pixels are 0.
    pub fn binarize(&self, threshold: f64) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| (p as f64 >= threshold) as u8).collect(),
        }
    }
}
