//! Grayscale rasters, binary label masks, and the preprocessing stage.
//!
//! All intensities live in `[0, 1]`; a [`GrayImage`] is the currency every
//! pipeline stage trades in. Preprocessing consists of a median filter
//! (impulse-noise removal) followed by two intensity transforms: a
//! window/level contrast stretch and gamma correction. Filters use replicate
//! padding at the borders.

pub mod pgm;
pub mod phantom;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel data: expected {expected} bytes, got {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// 2-D grayscale raster with row-major intensities normalized to `[0, 1]`.
///
/// Immutable after construction; cheap to clone and safe to share across
/// threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Build an image, checking that `pixels` has `width * height` entries
    /// all within `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImagingError> {
        if pixels.len() != width * height {
            return Err(ImagingError::InvalidParam(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ImagingError::InvalidParam(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Constant image.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![value; width * height])
    }

    // Internal constructor for outputs whose math already guarantees range.
    fn from_raw(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Read with replicate border padding: out-of-bounds coordinates clamp to
    /// the nearest edge pixel.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Population standard deviation of the intensities.
    pub fn std_dev(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .pixels
            .iter()
            .map(|p| (p - mean) * (p - mean))
            .sum::<f64>()
            / self.pixels.len() as f64;
        var.sqrt()
    }
}

/// Binary labeling over a pixel grid; `1` marks nodule pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, ImagingError> {
        if labels.len() != width * height {
            return Err(ImagingError::InvalidParam(format!(
                "label count {} does not match {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(ImagingError::InvalidParam(
                "labels must be 0 or 1".to_string(),
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!(label <= 1);
        self.labels[y * self.width + x] = label;
    }

    pub fn count_ones(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Render as a grayscale image with labels mapped to intensities 0 and 1.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.labels.iter().map(|&l| f64::from(l)).collect(),
        )
    }

    /// Threshold a grayscale image into a mask (`1` where intensity >= threshold).
    pub fn from_gray(image: &GrayImage, threshold: f64) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            labels: image
                .pixels()
                .iter()
                .map(|&p| u8::from(p >= threshold))
                .collect(),
        }
    }
}

/// RGB raster produced by [`overlay_mask`]; channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }
}

/// Median filter with a `(2r+1) x (2r+1)` window and replicate border padding.
///
/// The window always holds an odd number of samples, so the median is the
/// middle order statistic of the sorted window.
pub fn median_filter(image: &GrayImage, radius: usize) -> Result<GrayImage, ImagingError> {
    if radius == 0 {
        return Err(ImagingError::InvalidParam(
            "median filter radius must be >= 1".to_string(),
        ));
    }
    let side = 2 * radius + 1;
    let mut window = Vec::with_capacity(side * side);
    let mut out = Vec::with_capacity(image.width() * image.height());
    let r = radius as isize;
    for y in 0..image.height() as isize {
        for x in 0..image.width() as isize {
            window.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    window.push(image.get_clamped(x + dx, y + dy));
                }
            }
            window.sort_unstable_by(f64::total_cmp);
            // lower middle; equals the true median for odd counts
            out.push(window[(window.len() - 1) / 2]);
        }
    }
    Ok(GrayImage::from_raw(image.width(), image.height(), out))
}

/// Window/level contrast stretch: map `[level - width/2, level + width/2]`
/// linearly onto `[0, 1]`, clamping outside the window.
pub fn intensity_window(
    image: &GrayImage,
    level: f64,
    width: f64,
) -> Result<GrayImage, ImagingError> {
    if !(width > 0.0) {
        return Err(ImagingError::InvalidParam(format!(
            "window width must be > 0, got {width}"
        )));
    }
    let lo = level - width / 2.0;
    let out = image
        .pixels()
        .iter()
        .map(|&x| ((x - lo) / width).clamp(0.0, 1.0))
        .collect();
    Ok(GrayImage::from_raw(image.width(), image.height(), out))
}

/// Gamma correction `x^gamma` per pixel.
pub fn gamma_correct(image: &GrayImage, gamma: f64) -> Result<GrayImage, ImagingError> {
    if !(gamma > 0.0) {
        return Err(ImagingError::InvalidParam(format!(
            "gamma must be > 0, got {gamma}"
        )));
    }
    let out = image
        .pixels()
        .iter()
        .map(|&x| x.powf(gamma).clamp(0.0, 1.0))
        .collect();
    Ok(GrayImage::from_raw(image.width(), image.height(), out))
}

/// Tint mask-1 pixels by saturating the red channel over a grayscale base.
pub fn overlay_mask(image: &GrayImage, mask: &LabelMask) -> Result<RgbImage, ImagingError> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(ImagingError::DimensionMismatch(
            image.width(),
            image.height(),
            mask.width(),
            mask.height(),
        ));
    }
    let pixels = image
        .pixels()
        .iter()
        .zip(mask.labels())
        .map(|(&g, &l)| if l == 1 { [1.0, g, g] } else { [g, g, g] })
        .collect();
    Ok(RgbImage {
        width: image.width(),
        height: image.height(),
        pixels,
    })
}
