//! Segmentation energy over the pixel grid.
//!
//! The energy of a labeling `u` is
//!
//! ```text
//! E(u) = sum_i D(u_i) + sum_{(i,j)} V(u_i, u_j)
//! ```
//!
//! with the data term `D` the negative log-likelihood of the per-pixel
//! probability (clamped away from 0 and 1) and the pairwise term `V` a
//! contrast-sensitive Potts cost over undirected 4-neighbor edges:
//! zero for equal labels, `lambda * exp(-(dI)^2 / (2 sigma^2))` otherwise.
//!
//! [`window_energy`] restricts the sum to a rectangular window plus every
//! edge crossing its boundary, so it captures exactly the part of the total
//! that can change when edits stay inside the window. [`brute_force_min`]
//! enumerates all labelings of a small window and serves as the correctness
//! oracle for the genetic refinement stage.

use thiserror::Error;

use crate::imaging::{GrayImage, LabelMask};
use crate::indrnn::ProbMap;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("invalid energy parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch between mask, probability map, and image")]
    DimensionMismatch,
    #[error("window [{x}, {y}, {width}x{height}] out of bounds for {image_width}x{image_height}")]
    WindowOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        image_width: usize,
        image_height: usize,
    },
    #[error("window area {0} exceeds the brute-force limit of 16 pixels")]
    WindowTooLarge(usize),
}

/// Parameters of the energy. Connectivity is fixed at 4 neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    /// Pairwise strength; 0 disables smoothing.
    pub lambda: f64,
    /// Contrast scale in intensity units.
    pub sigma: f64,
    /// Probability floor keeping the data term finite.
    pub epsilon_clamp: f64,
}

pub const DEFAULT_EPSILON_CLAMP: f64 = 1e-6;

impl EnergyParams {
    pub fn new(lambda: f64, sigma: f64, epsilon_clamp: f64) -> Result<Self, EnergyError> {
        let params = Self {
            lambda,
            sigma,
            epsilon_clamp,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.lambda >= 0.0) {
            return Err(EnergyError::InvalidParam(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(EnergyError::InvalidParam(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 0.5) {
            return Err(EnergyError::InvalidParam(format!(
                "epsilon clamp must be in (0, 0.5), got {}",
                self.epsilon_clamp
            )));
        }
        Ok(())
    }
}

/// Rectangular pixel window, `x`/`y` top-left inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

/// Data cost of assigning `label` to a pixel with nodule probability `p`.
#[inline]
pub fn data_term(p: f64, label: u8, epsilon_clamp: f64) -> f64 {
    let q = p.clamp(epsilon_clamp, 1.0 - epsilon_clamp);
    if label == 1 {
        -q.ln()
    } else {
        -(1.0 - q).ln()
    }
}

/// Potts cost of a 4-neighbor edge: zero for equal labels, contrast-weighted
/// `lambda` otherwise.
#[inline]
pub fn pairwise_term(
    label_i: u8,
    label_j: u8,
    intensity_i: f64,
    intensity_j: f64,
    params: &EnergyParams,
) -> f64 {
    if label_i == label_j {
        return 0.0;
    }
    let diff = intensity_i - intensity_j;
    params.lambda * (-(diff * diff) / (2.0 * params.sigma * params.sigma)).exp()
}

fn check_dims(mask: &LabelMask, probmap: &ProbMap, image: &GrayImage) -> Result<(), EnergyError> {
    let dims = (mask.width(), mask.height());
    if dims != (probmap.width(), probmap.height()) || dims != (image.width(), image.height()) {
        return Err(EnergyError::DimensionMismatch);
    }
    Ok(())
}

fn check_window(window: &Rect, image: &GrayImage) -> Result<(), EnergyError> {
    let fits = window.width > 0
        && window.height > 0
        && window.x + window.width <= image.width()
        && window.y + window.height <= image.height();
    if !fits {
        return Err(EnergyError::WindowOutOfBounds {
            x: window.x,
            y: window.y,
            width: window.width,
            height: window.height,
            image_width: image.width(),
            image_height: image.height(),
        });
    }
    Ok(())
}

/// Total energy of a labeling: data terms over all pixels plus pairwise
/// terms over each undirected 4-neighbor edge counted once.
pub fn total_energy(
    mask: &LabelMask,
    probmap: &ProbMap,
    image: &GrayImage,
    params: &EnergyParams,
) -> Result<f64, EnergyError> {
    check_dims(mask, probmap, image)?;
    params.validate()?;
    let (w, h) = (mask.width(), mask.height());
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            sum += data_term(probmap.get(x, y), mask.get(x, y), params.epsilon_clamp);
            if x + 1 < w {
                sum += pairwise_term(
                    mask.get(x, y),
                    mask.get(x + 1, y),
                    image.get(x, y),
                    image.get(x + 1, y),
                    params,
                );
            }
            if y + 1 < h {
                sum += pairwise_term(
                    mask.get(x, y),
                    mask.get(x, y + 1),
                    image.get(x, y),
                    image.get(x, y + 1),
                    params,
                );
            }
        }
    }
    Ok(sum)
}

/// Energy restricted to a window: data terms of the window's pixels plus
/// every edge with at least one endpoint inside the window (boundary edges
/// use the frozen outside labels).
///
/// For two masks differing only inside the window, the difference of their
/// window energies equals the difference of their total energies.
pub fn window_energy(
    mask: &LabelMask,
    window: Rect,
    probmap: &ProbMap,
    image: &GrayImage,
    params: &EnergyParams,
) -> Result<f64, EnergyError> {
    check_dims(mask, probmap, image)?;
    check_window(&window, image)?;
    params.validate()?;
    let (w, h) = (mask.width(), mask.height());
    let mut sum = 0.0;
    let edge = |xa: usize, ya: usize, xb: usize, yb: usize| {
        pairwise_term(
            mask.get(xa, ya),
            mask.get(xb, yb),
            image.get(xa, ya),
            image.get(xb, yb),
            params,
        )
    };
    for y in window.y..window.y + window.height {
        for x in window.x..window.x + window.width {
            sum += data_term(probmap.get(x, y), mask.get(x, y), params.epsilon_clamp);
            // right and down edges: canonical owners of in-window pairs,
            // and boundary edges leaving through the right/bottom side
            if x + 1 < w {
                sum += edge(x, y, x + 1, y);
            }
            if y + 1 < h {
                sum += edge(x, y, x, y + 1);
            }
            // left and up edges only when the neighbor lies outside the
            // window; in-window pairs were already counted canonically
            if x > 0 && !window.contains(x - 1, y) {
                sum += edge(x, y, x - 1, y);
            }
            if y > 0 && !window.contains(x, y - 1) {
                sum += edge(x, y, x, y - 1);
            }
        }
    }
    Ok(sum)
}

/// Exhaustively minimize [`window_energy`] over all `2^area` labelings of a
/// window of at most 16 pixels, with the rest of the mask frozen.
///
/// Returns the best labeling (row-major window bits) and its energy. Ties
/// break toward the lexicographically smallest bit string (0 before 1).
pub fn brute_force_min(
    mask: &LabelMask,
    window: Rect,
    probmap: &ProbMap,
    image: &GrayImage,
    params: &EnergyParams,
) -> Result<(Vec<u8>, f64), EnergyError> {
    check_dims(mask, probmap, image)?;
    check_window(&window, image)?;
    params.validate()?;
    let area = window.area();
    if area > 16 {
        return Err(EnergyError::WindowTooLarge(area));
    }

    let mut scratch = mask.clone();
    let mut best_bits = vec![0u8; area];
    let mut best_energy = f64::INFINITY;
    let mut bits = vec![0u8; area];
    for code in 0u32..(1u32 << area) {
        // most significant bit first, so ascending codes enumerate bit
        // strings in lexicographic order and the first minimum wins ties
        for (i, bit) in bits.iter_mut().enumerate() {
            *bit = ((code >> (area - 1 - i)) & 1) as u8;
        }
        apply_window_bits(&mut scratch, window, &bits);
        let energy = window_energy(&scratch, window, probmap, image, params)?;
        if energy < best_energy {
            best_energy = energy;
            best_bits.copy_from_slice(&bits);
        }
    }
    Ok((best_bits, best_energy))
}

/// Write a row-major window labeling into a mask.
pub fn apply_window_bits(mask: &mut LabelMask, window: Rect, bits: &[u8]) {
    debug_assert_eq!(bits.len(), window.area());
    for wy in 0..window.height {
        for wx in 0..window.width {
            mask.set(window.x + wx, window.y + wy, bits[wy * window.width + wx]);
        }
    }
}

/// Read a window's labeling out of a mask, row-major.
pub fn extract_window_bits(mask: &LabelMask, window: Rect) -> Vec<u8> {
    let mut bits = Vec::with_capacity(window.area());
    for wy in 0..window.height {
        for wx in 0..window.width {
            bits.push(mask.get(window.x + wx, window.y + wy));
        }
    }
    bits
}
