//! Grayscale raster type and the pixel-level operations used by the
//! registration pipeline.
//!
//! All intensities are `f64` in `[0, 1]`. Images carry their physical pixel
//! spacing so that landmark errors can be reported in micrometers.

mod io;

pub use io::{encode_png, load_gray, save_png};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default mean-intensity threshold below which a border row/column is
/// considered black.
pub const DEFAULT_TRIM_THRESHOLD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("expected {expected} pixels, got {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("intensity {value} at index {index} lies outside [0, 1]")]
    IntensityOutOfRange { index: usize, value: f64 },
    #[error("pixel spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("every row is black at threshold {threshold}")]
    AllBlack { threshold: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, RasterError>;

/// Single-channel raster with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    spacing_um: f64,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>, spacing_um: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(RasterError::DataLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        if !(spacing_um.is_finite() && spacing_um > 0.0) {
            return Err(RasterError::InvalidSpacing(spacing_um));
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(RasterError::IntensityOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
            spacing_um,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        spacing_um: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data, spacing_um)
    }

    pub fn filled(width: usize, height: usize, value: f64, spacing_um: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], spacing_um)
    }

    /// Constructor for operations that provably preserve the invariants.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f64>, spacing_um: f64) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            width,
            height,
            data,
            spacing_um,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn spacing_um(&self) -> f64 {
        self.spacing_um
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn with_spacing(mut self, spacing_um: f64) -> Result<Self> {
        if !(spacing_um.is_finite() && spacing_um > 0.0) {
            return Err(RasterError::InvalidSpacing(spacing_um));
        }
        self.spacing_um = spacing_um;
        Ok(self)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the `rect` region out into a new image with the same spacing.
    pub fn crop(&self, rect: CropRect) -> Result<Self> {
        if rect.width == 0
            || rect.height == 0
            || rect.x0 + rect.width > self.width
            || rect.y0 + rect.height > self.height
        {
            return Err(RasterError::InvalidArgument(format!(
                "crop {rect:?} does not fit in {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y0..rect.y0 + rect.height {
            data.extend_from_slice(&self.row(y)[rect.x0..rect.x0 + rect.width]);
        }
        Ok(Self::from_parts(
            rect.width,
            rect.height,
            data,
            self.spacing_um,
        ))
    }
}

/// Color raster with per-channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(RasterError::DataLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some((index, px)) = data
            .iter()
            .enumerate()
            .find(|(_, px)| px.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            let value = px
                .iter()
                .copied()
                .find(|c| !(0.0..=1.0).contains(c))
                .unwrap();
            return Err(RasterError::IntensityOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }
}

/// Region retained by [`trim_black_border`], in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width,
            height,
        }
    }

    /// Maps a pixel of the cropped image back to the source image.
    pub fn to_source(&self, x: usize, y: usize) -> (usize, usize) {
        (x + self.x0, y + self.y0)
    }
}

/// Rec. 601 luma.
pub fn to_grayscale(img: &RgbImage, spacing_um: f64) -> Result<GrayImage> {
    let data = img
        .data
        .iter()
        .map(|&[r, g, b]| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(img.width, img.height, data, spacing_um)
}

/// Removes rows and columns of (near-)black pixels from the image border.
///
/// A row or column is black when its mean intensity is at most `threshold`.
/// Rows are trimmed first; column means are taken over the retained rows.
pub fn trim_black_border(img: &GrayImage, threshold: f64) -> Result<(GrayImage, CropRect)> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(RasterError::InvalidArgument(format!(
            "trim threshold must lie in [0, 1), got {threshold}"
        )));
    }
    let row_black = |y: usize| img.row(y).iter().sum::<f64>() / img.width as f64 <= threshold;
    let top = (0..img.height)
        .find(|&y| !row_black(y))
        .ok_or(RasterError::AllBlack { threshold })?;
    let bottom = (0..img.height).rev().find(|&y| !row_black(y)).unwrap();

    let rows = bottom - top + 1;
    let col_black =
        |x: usize| (top..=bottom).map(|y| img.get(x, y)).sum::<f64>() / rows as f64 <= threshold;
    // A non-black row guarantees at least one non-black column.
    let left = (0..img.width).find(|&x| !col_black(x)).unwrap_or(0);
    let right = (0..img.width)
        .rev()
        .find(|&x| !col_black(x))
        .unwrap_or(img.width - 1);

    let rect = CropRect {
        x0: left,
        y0: top,
        width: right - left + 1,
        height: rows,
    };
    Ok((img.crop(rect)?, rect))
}

/// Box-filter downsampling by an integer factor.
///
/// Partial blocks on the right and bottom edges average only their in-bounds
/// pixels. The output spacing is the input spacing times `factor`.
///
/// Panics if `factor` is zero.
pub fn downsample(img: &GrayImage, factor: usize) -> GrayImage {
    assert!(factor >= 1, "downsample factor must be at least 1");
    if factor == 1 {
        return img.clone();
    }
    let out_w = img.width.div_ceil(factor);
    let out_h = img.height.div_ceil(factor);
    let mut data = Vec::with_capacity(out_w * out_h);
    for by in 0..out_h {
        let y_end = ((by + 1) * factor).min(img.height);
        for bx in 0..out_w {
            let x_end = ((bx + 1) * factor).min(img.width);
            let mut sum = 0.0;
            for y in by * factor..y_end {
                sum += img.row(y)[bx * factor..x_end].iter().sum::<f64>();
            }
            let count = (y_end - by * factor) * (x_end - bx * factor);
            data.push((sum / count as f64).clamp(0.0, 1.0));
        }
    }
    GrayImage::from_parts(out_w, out_h, data, img.spacing_um * factor as f64)
}

pub fn rotate180(img: &GrayImage) -> GrayImage {
    let mut data = img.data.clone();
    data.reverse();
    GrayImage::from_parts(img.width, img.height, data, img.spacing_um)
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    kernel
}

/// Separable Gaussian blur with clamp-to-edge borders.
///
/// Panics if `sigma` is not positive.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let (lo, hi) = img.min_max();

    let mut horizontal = vec![0.0; img.data.len()];
    for y in 0..h {
        let row = img.row(y as usize);
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                let sx = (x + k as isize - radius).clamp(0, w - 1);
                acc += wk * row[sx as usize];
            }
            horizontal[(y * w + x) as usize] = acc;
        }
    }

    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                let sy = (y + k as isize - radius).clamp(0, h - 1);
                acc += wk * horizontal[(sy * w + x) as usize];
            }
            // Rounding in the normalized weights can overshoot by an ulp.
            out[(y * w + x) as usize] = acc.clamp(lo, hi);
        }
    }
    GrayImage::from_parts(img.width, img.height, out, img.spacing_um)
}

/// Locates the interpolation cell for coordinate `c` on an axis of `n`
/// samples. Returns the left index, the fractional offset in `[0, 1]`, and
/// whether the coordinate was clamped.
#[inline]
fn cell(c: f64, n: usize) -> (usize, f64, bool) {
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&c);
    let c = c.clamp(0.0, max);
    if n == 1 {
        return (0, 0.0, true);
    }
    let i = (c.floor() as usize).min(n - 2);
    (i, c - i as f64, clamped)
}

/// Bilinear interpolation with clamp-to-edge for out-of-range coordinates.
#[inline]
pub fn bilinear_sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    bilinear_sample_with_gradient(img, x, y).0
}

/// Bilinear sample plus its partial derivatives with respect to `x` and `y`.
///
/// The derivative is that of the interpolant inside the cell containing the
/// sample point, and zero along an axis where the coordinate was clamped.
#[inline]
pub fn bilinear_sample_with_gradient(img: &GrayImage, x: f64, y: f64) -> (f64, f64, f64) {
    let (x0, fx, x_clamped) = cell(x, img.width);
    let (y0, fy, y_clamped) = cell(y, img.height);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let a = img.get(x0, y0);
    let b = img.get(x1, y0);
    let c = img.get(x0, y1);
    let d = img.get(x1, y1);
    let top = a + fx * (b - a);
    let bottom = c + fx * (d - c);
    let value = top + fy * (bottom - top);
    let dx = if x_clamped {
        0.0
    } else {
        (1.0 - fy) * (b - a) + fy * (d - c)
    };
    let dy = if y_clamped { 0.0 } else { bottom - top };
    (value, dx, dy)
}
