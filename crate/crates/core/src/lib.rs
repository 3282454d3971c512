//! Lung-nodule segmentation toolkit.
//!
//! The pipeline has three stages:
//!
//! 1. **Preprocessing** ([`imaging`]) — median filtering plus intensity
//!    transforms (window/level stretch, gamma) on normalized grayscale rasters.
//! 2. **Initial segmentation** ([`indrnn`]) — an independently recurrent
//!    network scans each image row and emits a per-pixel nodule probability,
//!    which is thresholded into a binary mask.
//! 3. **Refinement** ([`ga`]) — a genetic algorithm sweeps the mask in 8×8
//!    windows and minimizes a Markov-random-field energy ([`energy`]): a
//!    negative-log-likelihood data term from the probability map plus a
//!    contrast-sensitive Potts smoothness term over 4-neighbor edges.
//!
//! [`metrics`] scores masks against ground truth (accuracy, sensitivity,
//! specificity, Dice, Jaccard). Synthetic phantoms with known masks
//! ([`imaging::phantom`]) stand in for clinical data during verification.
//!
//! All randomness flows through explicit seeds; identical inputs and seeds
//! reproduce identical outputs bit for bit.

pub mod energy;
pub mod ga;
pub mod imaging;
pub mod indrnn;
pub mod metrics;
pub mod rng;

pub use imaging::{GrayImage, LabelMask};
pub use indrnn::ProbMap;
