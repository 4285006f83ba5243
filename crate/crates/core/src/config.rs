//! Experiment configuration: schema, defaults, validation, and load/save.
//!
//! The format is TOML with a closed schema: unknown keys are rejected so a
//! typo in an ablation flag fails loudly instead of silently running the
//! wrong experiment.

use crate::error::CoreError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Global seed; every random stream is derived from it with a label.
    pub seed: u64,
    pub diffusion: DiffusionConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub transfer: TransferConfig,
    pub augmentation: AugmentationConfig,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub eval: EvalConfig,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Timestep used for single-step feature extraction, in `(0, num_steps)`.
    pub timestep: usize,
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Step count for the multi-step baseline mode (timing comparisons only).
    pub multistep_baseline: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            timestep: 100,
            num_steps: 1000,
            beta_start: 8.5e-4,
            beta_end: 1.2e-2,
            multistep_baseline: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight on the output-consistency pair (box + class) inside the
    /// consistency loss.
    pub gamma: f64,
    /// Weight on the consistency loss inside the total objective.
    pub lambda: f64,
    /// Softmax temperature for class consistency.
    pub tau: f64,
    /// Multiply the class-consistency KL by tau^2 (keeps gradient magnitude
    /// temperature-independent).
    pub kl_tau_squared: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 1.0,
            lambda: 1.0,
            tau: 1.0,
            kl_tau_squared: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Abort if the total loss exceeds this cap.
    pub loss_cap: f64,
    /// Ablation: enable the object-centered auxiliary branch.
    pub aux_branch: bool,
    /// Ablation: enable the consistency loss.
    pub consistency: bool,
    /// Ablation: enable top-down skip connections in fusion.
    pub fusion_skips: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 300,
            batch_size: 2,
            learning_rate: 0.02,
            momentum: 0.9,
            loss_cap: 1.0e4,
            aux_branch: true,
            consistency: true,
            fusion_skips: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    /// Teacher detections at or above this score become pseudo-labels.
    pub pseudo_label_threshold: f64,
    pub pseudo_label_nms_iou: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Ablation: feature-level alignment term.
    pub feature_alignment: bool,
    /// Ablation: object-level alignment term.
    pub object_alignment: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            pseudo_label_threshold: 0.8,
            pseudo_label_nms_iou: 0.5,
            steps: 200,
            batch_size: 2,
            learning_rate: 0.02,
            momentum: 0.9,
            feature_alignment: true,
            object_alignment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub enabled: bool,
    pub hflip_prob: f64,
    pub color_jitter_prob: f64,
    /// Maximum relative brightness/contrast/saturation shift.
    pub color_jitter_strength: f64,
    pub scale_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Probability of applying one domain-level transform (FDA, histogram
    /// matching, or moment matching against a reference image).
    pub domain_prob: f64,
    /// Half-width fraction of the low-frequency band swapped by FDA.
    pub fda_beta: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            hflip_prob: 0.5,
            color_jitter_prob: 0.5,
            color_jitter_strength: 0.2,
            scale_prob: 0.0,
            scale_min: 0.8,
            scale_max: 1.2,
            domain_prob: 0.5,
            fda_beta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// COCO-style annotation file for the labeled source domain.
    pub source_annotations: Option<PathBuf>,
    /// Image root for the source annotations.
    pub source_images: Option<PathBuf>,
    /// Unlabeled target-domain image directory (DA transfer only).
    pub target_images: Option<PathBuf>,
    /// Annotated evaluation dataset.
    pub eval_annotations: Option<PathBuf>,
    pub eval_images: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub train_images: usize,
    pub eval_images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Alpha of the white blend in the fog target domain.
    pub fog_alpha: f64,
    /// Gamma applied in the dark target domain.
    pub dark_gamma: f64,
    /// Additive Gaussian sigma in the noise target domain.
    pub noise_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            image_size: 64,
            train_images: 48,
            eval_images: 32,
            min_objects: 1,
            max_objects: 3,
            min_radius: 6.0,
            max_radius: 14.0,
            fog_alpha: 0.5,
            dark_gamma: 2.4,
            noise_sigma: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Override for the denoiser architecture file; defaults to the embedded
    /// miniature architecture.
    pub unet_arch: Option<PathBuf>,
    pub anchor_sizes: Vec<f64>,
    pub roi_pool_size: usize,
    pub rpn_hidden: usize,
    pub roi_hidden: usize,
    /// Channel width the finest pyramid level is reduced to before ROI pooling.
    pub roi_reduce: usize,
    pub proposals_train: usize,
    pub proposals_eval: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            unet_arch: None,
            anchor_sizes: vec![10.0, 16.0, 24.0, 34.0],
            roi_pool_size: 4,
            rpn_hidden: 64,
            roi_hidden: 96,
            roi_reduce: 64,
            proposals_train: 24,
            proposals_eval: 16,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            diffusion: DiffusionConfig::default(),
            loss: LossConfig::default(),
            training: TrainingConfig::default(),
            transfer: TransferConfig::default(),
            augmentation: AugmentationConfig::default(),
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            eval: EvalConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Checks every schema invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), CoreError> {
        let d = &self.diffusion;
        if d.num_steps < 1 {
            return Err(CoreError::field("diffusion.num_steps", "must be >= 1"));
        }
        if d.timestep == 0 || d.timestep >= d.num_steps {
            return Err(CoreError::field(
                "diffusion.timestep",
                format!(
                    "must satisfy 0 < t < num_steps (got t={}, num_steps={})",
                    d.timestep, d.num_steps
                ),
            ));
        }
        if !(d.beta_start > 0.0 && d.beta_start <= d.beta_end && d.beta_end < 1.0) {
            return Err(CoreError::field(
                "diffusion.beta_start/beta_end",
                "need 0 < beta_start <= beta_end < 1",
            ));
        }
        if d.multistep_baseline < 1 {
            return Err(CoreError::field("diffusion.multistep_baseline", "must be >= 1"));
        }

        let l = &self.loss;
        if l.gamma < 0.0 || !l.gamma.is_finite() {
            return Err(CoreError::field("loss.gamma", "must be >= 0"));
        }
        if l.lambda < 0.0 || !l.lambda.is_finite() {
            return Err(CoreError::field("loss.lambda", "must be >= 0"));
        }
        if l.tau <= 0.0 || !l.tau.is_finite() {
            return Err(CoreError::field("loss.tau", "temperature must be positive"));
        }

        let t = &self.transfer;
        if !(t.pseudo_label_threshold > 0.0 && t.pseudo_label_threshold < 1.0) {
            return Err(CoreError::field(
                "transfer.pseudo_label_threshold",
                "must lie in (0, 1)",
            ));
        }
        if !(0.0..=1.0).contains(&t.pseudo_label_nms_iou) {
            return Err(CoreError::field(
                "transfer.pseudo_label_nms_iou",
                "must lie in [0, 1]",
            ));
        }

        let a = &self.augmentation;
        for (name, p) in [
            ("augmentation.hflip_prob", a.hflip_prob),
            ("augmentation.color_jitter_prob", a.color_jitter_prob),
            ("augmentation.scale_prob", a.scale_prob),
            ("augmentation.domain_prob", a.domain_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::field(name, "probability must lie in [0, 1]"));
            }
        }
        if !(0.0..=0.5).contains(&a.fda_beta) {
            return Err(CoreError::field(
                "augmentation.fda_beta",
                "must lie in [0, 0.5]",
            ));
        }
        if !(a.scale_min > 0.0 && a.scale_min <= a.scale_max) {
            return Err(CoreError::field(
                "augmentation.scale_min/scale_max",
                "need 0 < scale_min <= scale_max",
            ));
        }

        if self.training.batch_size == 0 {
            return Err(CoreError::field("training.batch_size", "must be >= 1"));
        }
        if self.training.loss_cap <= 0.0 {
            return Err(CoreError::field("training.loss_cap", "must be positive"));
        }
        if self.synthetic.image_size % 64 != 0 || self.synthetic.image_size == 0 {
            return Err(CoreError::field(
                "synthetic.image_size",
                "must be a positive multiple of 64",
            ));
        }
        if !(self.synthetic.min_radius > 0.0
            && self.synthetic.min_radius <= self.synthetic.max_radius)
        {
            return Err(CoreError::field(
                "synthetic.min_radius/max_radius",
                "need 0 < min_radius <= max_radius",
            ));
        }
        if self.synthetic.min_objects > self.synthetic.max_objects {
            return Err(CoreError::field(
                "synthetic.min_objects/max_objects",
                "need min_objects <= max_objects",
            ));
        }
        Ok(())
    }
}

/// Loads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        CoreError::ConfigParse { message, .. } => CoreError::ConfigParse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parses config text (TOML). Unknown keys and invariant violations are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CoreError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CoreError::ConfigParse {
        path: PathBuf::from("<inline>"),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a config; `load_config(save_config(c))` compares equal to `c`.
pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<(), CoreError> {
    let text = config_to_string(config);
    std::fs::write(path, text).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn config_to_string(config: &ExperimentConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}
