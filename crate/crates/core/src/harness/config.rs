//! Strict JSON experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackSpec, DEFAULT_RANDOM_START};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::trainers::Method;

use super::landscape::{LandscapeMode, DEFAULT_RESOLUTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub standard: StandardConfig,
    pub train: TrainConfig,
    pub eval_attack: AttackConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub landscape: Option<LandscapeConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        n_train: usize,
        n_test: usize,
        dim: usize,
        classes: usize,
        /// ℓ∞ distance between class means.
        separation: f64,
        #[serde(default = "one")]
        noise_std: f64,
        /// Coordinates carrying the full separation; the rest use `weak_scale`.
        #[serde(default)]
        strong_dims: Option<usize>,
        #[serde(default = "one")]
        weak_scale: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        max_train: usize,
        max_test: usize,
        mean: f64,
        std: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Widths of the ReLU hidden layers.
    pub hidden: Vec<usize>,
    /// Width of an optional identity layer inserted before the last layer.
    #[serde(default)]
    pub extra_linear: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Skip training and load this standard model instead.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
}

fn default_loss() -> LossKind {
    LossKind::Ce
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub attack: AttackConfig,
    #[serde(default)]
    pub freeze_backbone: bool,
}

fn default_beta() -> f64 {
    1.0
}

/// Attack parameters as written in a config. With `pixel_scale` set,
/// `epsilon` and `step_size` are given in pixel fractions (e.g. 8/255) and
/// multiplied by `pixel_scale` to reach normalized input units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    #[serde(default = "default_random_start")]
    pub random_start_scale: f64,
    #[serde(default = "default_true")]
    pub use_sign: bool,
    #[serde(default)]
    pub value_clamp: Option<[f64; 2]>,
    #[serde(default)]
    pub pixel_scale: Option<f64>,
}

fn default_random_start() -> f64 {
    DEFAULT_RANDOM_START
}

fn default_true() -> bool {
    true
}

impl AttackConfig {
    pub fn resolve(&self) -> Result<AttackSpec> {
        let scale = self.pixel_scale.unwrap_or(1.0);
        if !(scale > 0.0) {
            return Err(Error::Config(format!("pixel_scale must be positive, got {scale}")));
        }
        let spec = AttackSpec {
            epsilon: self.epsilon * scale,
            step_size: self.step_size * scale,
            steps: self.steps,
            random_start_scale: self.random_start_scale,
            use_sign: self.use_sign,
            value_clamp: self.value_clamp.map(|[lo, hi]| (lo, hi)),
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to `[train.method]`.
    #[serde(default)]
    pub methods: Vec<Method>,
    /// Defaults to `[train.beta]`.
    #[serde(default)]
    pub betas: Vec<f64>,
    /// Extra-linear-layer widths; empty means the base `model` only.
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Defaults to the evaluation ε.
    #[serde(default)]
    pub extent: Option<f64>,
    #[serde(default = "default_anchors")]
    pub anchors: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<LandscapeMode>,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

fn default_anchors() -> usize {
    1
}

fn default_modes() -> Vec<LandscapeMode> {
    vec![LandscapeMode::Adversarial, LandscapeMode::Random]
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
            extent: None,
            anchors: default_anchors(),
            modes: default_modes(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        positive("standard.batch_size", self.standard.batch_size)?;
        positive("train.batch_size", self.train.batch_size)?;
        if self.model.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("model.hidden widths must be positive".into()));
        }
        if !(self.train.beta >= 0.0) || self.sweep.betas.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::Config("β values must be nonnegative".into()));
        }
        self.train.attack.resolve()?;
        self.eval_attack.resolve()?;
        if let Some(l) = &self.landscape {
            if l.resolution < 3 || l.resolution % 2 == 0 {
                return Err(Error::Config(format!(
                    "landscape.resolution must be odd and ≥ 3, got {}",
                    l.resolution
                )));
            }
        }
        if let DatasetConfig::Blobs { classes, separation, n_train, n_test, .. } = &self.dataset {
            if *classes < 2 || !(*separation > 0.0) || *n_train == 0 || *n_test == 0 {
                return Err(Error::Config("blobs need ≥ 2 classes, positive separation and sizes".into()));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        if self.sweep.methods.is_empty() {
            vec![self.train.method]
        } else {
            self.sweep.methods.clone()
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        if self.sweep.betas.is_empty() {
            vec![self.train.beta]
        } else {
            self.sweep.betas.clone()
        }
    }

    /// Extra-linear widths to sweep; `None` is the base model.
    pub fn hidden_variants(&self) -> Vec<Option<usize>> {
        if self.sweep.hidden_sizes.is_empty() {
            vec![self.model.extra_linear]
        } else {
            self.sweep.hidden_sizes.iter().map(|&h| Some(h)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 3,
        "dataset": {"kind": "blobs", "n_train": 40, "n_test": 20, "dim": 4, "classes": 2, "separation": 3.0},
        "model": {"hidden": [8]},
        "standard": {"learning_rate": 0.1, "batch_size": 8, "epochs": 2},
        "train": {"method": "npgd", "learning_rate": 0.05, "batch_size": 8, "epochs": 1,
                  "attack": {"epsilon": 0.5, "step_size": 0.2, "steps": 3}},
        "eval_attack": {"epsilon": 0.5, "step_size": 0.1, "steps": 5}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.methods(), vec![Method::Npgd]);
        assert_eq!(cfg.betas(), vec![1.0]);
        assert_eq!(cfg.hidden_variants(), vec![None]);
        assert_eq!(cfg.train.attack.random_start_scale, 0.001);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sede\": 4");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("sede"), "{err}");
        let text = MINIMAL.replace("\"steps\": 3}", "\"steps\": 3, \"epsilom\": 1}");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("epsilom"), "{err}");
        let text = MINIMAL.replace("\"separation\": 3.0", "\"separation\": 3.0, \"gap\": 1");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("gap"), "{err}");
    }

    #[test]
    fn pixel_scale_converts_units() {
        let a = AttackConfig {
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            steps: 10,
            random_start_scale: 0.001,
            use_sign: true,
            value_clamp: None,
            pixel_scale: Some(2.0),
        };
        let s = a.resolve().unwrap();
        assert_eq!(s.epsilon, 16.0 / 255.0);
        assert_eq!(s.step_size, 4.0 / 255.0);
    }
}
