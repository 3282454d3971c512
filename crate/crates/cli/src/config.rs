//! Pipeline configuration and per-stage seed derivation.
//!
//! One JSON file configures every stage. Fields are kebab-case and all have
//! defaults, so an empty object `{}` (or no `--config` at all) runs the stock
//! pipeline. A single master seed deterministically derives one seed per
//! stage, so a stage rerun in isolation sees the same randomness it saw
//! inside the full pipeline.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use noduleseg_core::energy::EnergyParams;
use noduleseg_core::ga::GaConfig;
use noduleseg_core::imaging::GrayImage;
use noduleseg_core::indrnn::TrainConfig;
use noduleseg_core::rng::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Lower bound for the auto-resolved pairwise contrast scale, so a constant
/// image (standard deviation zero) cannot produce a division by zero.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Contrast/denoise stage parameters. The defaults are a light median
/// denoise with the windowing and gamma stages left at identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Median filter neighborhood radius (window side `2r + 1`).
    pub median_radius: usize,
    /// Center of the intensity window, in `[0, 1]`.
    pub window_level: f64,
    /// Width of the intensity window; 1.0 with level 0.5 is the identity.
    pub window_width: f64,
    /// Gamma exponent; 1.0 is the identity.
    pub gamma: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            median_radius: 1,
            window_level: 0.5,
            window_width: 1.0,
            gamma: 1.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_radius == 0 {
            bail!("median radius must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.window_level) {
            bail!("window level {} outside [0, 1]", self.window_level);
        }
        if !(self.window_width > 0.0) {
            bail!("window width must be positive, got {}", self.window_width);
        }
        if !(self.gamma > 0.0) {
            bail!("gamma must be positive, got {}", self.gamma);
        }
        Ok(())
    }
}

/// Network architecture plus training hyperparameters.
///
/// The training fields flatten into this object, so a config file says
/// `"model": {"learning-rate": 0.05, "layer-units": [16, 16], ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Hidden units per recurrent layer, bottom to top.
    pub layer_units: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            layer_units: vec![16, 16],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate().context("training parameters")?;
        if self.layer_units.is_empty() {
            bail!("at least one recurrent layer is required");
        }
        if self.layer_units.contains(&0) {
            bail!("layer sizes must be positive, got {:?}", self.layer_units);
        }
        Ok(())
    }
}

/// Labeling-energy parameters. `sigma` may be omitted, in which case each
/// image uses its own intensity standard deviation (floored at
/// [`SIGMA_FLOOR`]) as the contrast scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct EnergyConfig {
    /// Pairwise smoothness weight.
    pub lambda: f64,
    /// Contrast scale; `null` selects the per-image standard deviation.
    pub sigma: Option<f64>,
    /// Probability clamp bound for the data term's logarithms.
    pub epsilon_clamp: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sigma: None,
            epsilon_clamp: noduleseg_core::energy::DEFAULT_EPSILON_CLAMP,
        }
    }
}

impl EnergyConfig {
    /// Fix the contrast scale against a concrete image and validate.
    pub fn resolve(&self, image: &GrayImage) -> Result<EnergyParams> {
        let sigma = match self.sigma {
            Some(value) => value,
            None => image.std_dev().max(SIGMA_FLOOR),
        };
        EnergyParams::new(self.lambda, sigma, self.epsilon_clamp)
            .context("energy parameters")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sigma) = self.sigma {
            if !(sigma > 0.0) {
                bail!("sigma must be positive, got {sigma}");
            }
        }
        if !(self.lambda >= 0.0) {
            bail!("lambda must be >= 0, got {}", self.lambda);
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 0.5) {
            bail!("epsilon clamp {} outside (0, 0.5)", self.epsilon_clamp);
        }
        Ok(())
    }
}

/// Everything a full run needs, in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub energy: EnergyConfig,
    pub ga: GaConfig,
    /// Probability threshold for the initial binary mask.
    pub binarize_threshold: f64,
    /// Master seed; per-stage seeds are derived from it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            energy: EnergyConfig::default(),
            ga: GaConfig::default(),
            binarize_threshold: 0.5,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Load from a JSON file, or return the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            None => Self::default(),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate().context("preprocess config")?;
        self.model.validate().context("model config")?;
        self.energy.validate().context("energy config")?;
        self.ga.validate().context("ga config")?;
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            bail!(
                "binarize threshold {} outside [0, 1]",
                self.binarize_threshold
            );
        }
        Ok(())
    }

    /// Replace the nested stage seeds with ones derived from the master
    /// seed. Commands call this once up front; the result is what gets
    /// written to `config.json`, so the stored file pins the exact seed
    /// every stage consumed.
    pub fn with_derived_seeds(mut self) -> Self {
        self.model.train.seed = stage_seed(self.seed, STAGE_TRAIN);
        self.ga.seed = stage_seed(self.seed, STAGE_REFINE);
        self
    }
}

pub const STAGE_PHANTOM: &str = "phantom";
pub const STAGE_TRAIN: &str = "train";
pub const STAGE_REFINE: &str = "refine";

/// Derive a stage's seed from the master seed and the stage name.
///
/// The name is hashed so adding a stage never shifts the seeds of existing
/// ones, and the result is mixed with the master seed through the same
/// splitmix derivation used for per-window streams.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(stage.as_bytes());
    let tag = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    derive_seed(master, tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_matches_defaults() {
        let parsed: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, PipelineConfig::default());
        parsed.validate().unwrap();
        // Pin the scalar defaults: a derived Default would silently make the
        // threshold 0.0, which binarizes every pixel to foreground.
        assert_eq!(parsed.binarize_threshold, 0.5);
        assert_eq!(parsed.seed, 0);
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let config = PipelineConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn fields_serialize_kebab_case() {
        let json = serde_json::to_string(&PipelineConfig::default()).unwrap();
        for field in [
            "median-radius",
            "window-level",
            "window-width",
            "layer-units",
            "learning-rate",
            "epsilon-clamp",
            "binarize-threshold",
            "mutation-rate",
        ] {
            assert!(json.contains(field), "missing {field} in {json}");
        }
    }

    #[test]
    fn unknown_top_level_field_rejected() {
        let err = serde_json::from_str::<PipelineConfig>("{\"typo\": 1}");
        assert!(err.is_err());
    }

    #[test]
    fn unknown_model_field_rejected_by_inner_config() {
        // The model object flattens TrainConfig, which denies strays itself.
        let err =
            serde_json::from_str::<PipelineConfig>("{\"model\": {\"learning-rat\": 0.1}}");
        assert!(err.is_err());
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let mut config = PipelineConfig::default();
        config.binarize_threshold = 1.5;
        assert!(config.validate().is_err());

        let mut config = PipelineConfig::default();
        config.preprocess.median_radius = 0;
        assert!(config.validate().is_err());

        let mut config = PipelineConfig::default();
        config.model.layer_units = vec![];
        assert!(config.validate().is_err());

        let mut config = PipelineConfig::default();
        config.energy.sigma = Some(0.0);
        assert!(config.validate().is_err());
    }

    #[test]
    fn sigma_resolution_uses_image_std_dev_with_floor() {
        let flat = GrayImage::filled(4, 4, 0.5).unwrap();
        let params = EnergyConfig::default().resolve(&flat).unwrap();
        assert_eq!(params.sigma, SIGMA_FLOOR);

        let mixed = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let params = EnergyConfig::default().resolve(&mixed).unwrap();
        assert_eq!(params.sigma, 0.5);

        let fixed = EnergyConfig {
            sigma: Some(0.25),
            ..EnergyConfig::default()
        };
        assert_eq!(fixed.resolve(&flat).unwrap().sigma, 0.25);
    }

    #[test]
    fn stage_seeds_differ_by_stage_and_master() {
        let a = stage_seed(0, STAGE_TRAIN);
        let b = stage_seed(0, STAGE_REFINE);
        let c = stage_seed(1, STAGE_TRAIN);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stage_seed(0, STAGE_TRAIN));
    }

    #[test]
    fn derived_seeds_propagate_to_stage_configs() {
        let config = PipelineConfig {
            seed: 42,
            ..PipelineConfig::default()
        }
        .with_derived_seeds();
        assert_eq!(config.model.train.seed, stage_seed(42, STAGE_TRAIN));
        assert_eq!(config.ga.seed, stage_seed(42, STAGE_REFINE));
    }
}
