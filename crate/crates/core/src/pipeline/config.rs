//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentConfig;
use crate::dataset::DeformityConfig;
use crate::geometry::ChamferVariant;
use crate::losses::LossWeights;
use crate::model::{FitConfig, ModelSpec};
use crate::predictor::TrainConfig;
use crate::{seed, Error, Result};

/// Everything a run depends on. Component seeds are derived from `seed`
/// by name, so one number pins the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub code_len: usize,
    pub resolution: usize,
    pub cohort_size: usize,
    pub deformity: DeformityConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub augment_enabled: bool,
    pub augment: AugmentConfig,
    pub fit: FitConfig,
    pub folds: usize,
    pub chamfer: ChamferVariant,
    pub model_path: PathBuf,
    pub dataset_dir: PathBuf,
    pub checkpoint_path: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            code_len: 64,
            resolution: 18,
            cohort_size: 160,
            deformity: DeformityConfig::default(),
            weights: LossWeights::default(),
            train: TrainConfig::default(),
            augment_enabled: true,
            augment: AugmentConfig::default(),
            fit: FitConfig::default(),
            folds: 5,
            chamfer: ChamferVariant::Squared,
            model_path: "model.txt".into(),
            dataset_dir: "data".into(),
            checkpoint_path: "checkpoint.txt".into(),
            output_dir: "out".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: invalid value {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: invalid value {value:?}: expected true or false"))),
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "model.code_len",
    "model.resolution",
    "cohort.size",
    "cohort.protrusion_min",
    "cohort.protrusion_max",
    "cohort.asymmetry_min",
    "cohort.asymmetry_max",
    "cohort.correction_min",
    "cohort.correction_max",
    "cohort.base_std",
    "cohort.base_asymmetry_scale",
    "loss.alpha_p",
    "loss.alpha_a",
    "loss.alpha_f",
    "loss.alpha_g",
    "loss.w_normal",
    "loss.asymmetry_normal",
    "loss.asymmetry_reduction",
    "loss.unit_scale",
    "train.batch_size",
    "train.epochs",
    "train.learning_rate",
    "train.decay",
    "train.decay_every",
    "train.dropout",
    "train.optimizer",
    "train.hidden",
    "train.bn_momentum",
    "augment.enabled",
    "augment.factor",
    "augment.xi_std",
    "augment.band",
    "augment.tau",
    "augment.retries",
    "augment.split_landmark",
    "augment.fit_lambda",
    "fit.lambda",
    "fit.surface_iterations",
    "fit.surface_weight",
    "fit.surface_samples",
    "fit.pose_iterations",
    "cv.folds",
    "metrics.chamfer",
    "paths.model",
    "paths.dataset",
    "paths.checkpoint",
    "paths.output",
];

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "model.code_len" => self.code_len = parse(key, v)?,
            "model.resolution" => self.resolution = parse(key, v)?,
            "cohort.size" => self.cohort_size = parse(key, v)?,
            "cohort.protrusion_min" => self.deformity.protrusion.0 = parse(key, v)?,
            "cohort.protrusion_max" => self.deformity.protrusion.1 = parse(key, v)?,
            "cohort.asymmetry_min" => self.deformity.asymmetry.0 = parse(key, v)?,
            "cohort.asymmetry_max" => self.deformity.asymmetry.1 = parse(key, v)?,
            "cohort.correction_min" => self.deformity.correction.0 = parse(key, v)?,
            "cohort.correction_max" => self.deformity.correction.1 = parse(key, v)?,
            "cohort.base_std" => self.deformity.base_std = parse(key, v)?,
            "cohort.base_asymmetry_scale" => self.deformity.base_asymmetry_scale = parse(key, v)?,
            "loss.alpha_p" => self.weights.alpha_p = parse(key, v)?,
            "loss.alpha_a" => self.weights.alpha_a = parse(key, v)?,
            "loss.alpha_f" => self.weights.alpha_f = parse(key, v)?,
            "loss.alpha_g" => self.weights.alpha_g = parse(key, v)?,
            "loss.w_normal" => self.weights.w_normal = parse(key, v)?,
            "loss.asymmetry_normal" => self.weights.asymmetry_normal = parse(key, v)?,
            "loss.asymmetry_reduction" => self.weights.asymmetry_reduction = parse(key, v)?,
            "loss.unit_scale" => self.weights.unit_scale = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.decay" => self.train.decay = parse(key, v)?,
            "train.decay_every" => self.train.decay_every = parse(key, v)?,
            "train.dropout" => self.train.dropout = parse(key, v)?,
            "train.optimizer" => self.train.optimizer = parse(key, v)?,
            "train.hidden" => self.train.hidden = parse(key, v)?,
            "train.bn_momentum" => self.train.bn_momentum = parse(key, v)?,
            "augment.enabled" => self.augment_enabled = parse_bool(key, v)?,
            "augment.factor" => self.augment.factor = parse(key, v)?,
            "augment.xi_std" => self.augment.xi_std = parse(key, v)?,
            "augment.band" => self.augment.band = parse(key, v)?,
            "augment.tau" => self.augment.tau = parse(key, v)?,
            "augment.retries" => self.augment.retries = parse(key, v)?,
            "augment.split_landmark" => self.augment.split_landmark = parse(key, v)?,
            "augment.fit_lambda" => self.augment.fit.lambda = parse(key, v)?,
            "fit.lambda" => self.fit.lambda = parse(key, v)?,
            "fit.surface_iterations" => self.fit.surface_iterations = parse(key, v)?,
            "fit.surface_weight" => self.fit.surface_weight = parse(key, v)?,
            "fit.surface_samples" => self.fit.surface_samples = parse(key, v)?,
            "fit.pose_iterations" => self.fit.pose_iterations = parse(key, v)?,
            "cv.folds" => self.folds = parse(key, v)?,
            "metrics.chamfer" => self.chamfer = parse(key, v)?,
            "paths.model" => self.model_path = v.into(),
            "paths.dataset" => self.dataset_dir = v.into(),
            "paths.checkpoint" => self.checkpoint_path = v.into(),
            "paths.output" => self.output_dir = v.into(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "seed" => self.seed.to_string(),
            "model.code_len" => self.code_len.to_string(),
            "model.resolution" => self.resolution.to_string(),
            "cohort.size" => self.cohort_size.to_string(),
            "cohort.protrusion_min" => self.deformity.protrusion.0.to_string(),
            "cohort.protrusion_max" => self.deformity.protrusion.1.to_string(),
            "cohort.asymmetry_min" => self.deformity.asymmetry.0.to_string(),
            "cohort.asymmetry_max" => self.deformity.asymmetry.1.to_string(),
            "cohort.correction_min" => self.deformity.correction.0.to_string(),
            "cohort.correction_max" => self.deformity.correction.1.to_string(),
            "cohort.base_std" => self.deformity.base_std.to_string(),
            "cohort.base_asymmetry_scale" => self.deformity.base_asymmetry_scale.to_string(),
            "loss.alpha_p" => self.weights.alpha_p.to_string(),
            "loss.alpha_a" => self.weights.alpha_a.to_string(),
            "loss.alpha_f" => self.weights.alpha_f.to_string(),
            "loss.alpha_g" => self.weights.alpha_g.to_string(),
            "loss.w_normal" => self.weights.w_normal.to_string(),
            "loss.asymmetry_normal" => self.weights.asymmetry_normal.to_string(),
            "loss.asymmetry_reduction" => self.weights.asymmetry_reduction.to_string(),
            "loss.unit_scale" => self.weights.unit_scale.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.learning_rate" => self.train.learning_rate.to_string(),
            "train.decay" => self.train.decay.to_string(),
            "train.decay_every" => self.train.decay_every.to_string(),
            "train.dropout" => self.train.dropout.to_string(),
            "train.optimizer" => self.train.optimizer.to_string(),
            "train.hidden" => self.train.hidden.to_string(),
            "train.bn_momentum" => self.train.bn_momentum.to_string(),
            "augment.enabled" => self.augment_enabled.to_string(),
            "augment.factor" => self.augment.factor.to_string(),
            "augment.xi_std" => self.augment.xi_std.to_string(),
            "augment.band" => self.augment.band.to_string(),
            "augment.tau" => self.augment.tau.to_string(),
            "augment.retries" => self.augment.retries.to_string(),
            "augment.split_landmark" => self.augment.split_landmark.to_string(),
            "augment.fit_lambda" => self.augment.fit.lambda.to_string(),
            "fit.lambda" => self.fit.lambda.to_string(),
            "fit.surface_iterations" => self.fit.surface_iterations.to_string(),
            "fit.surface_weight" => self.fit.surface_weight.to_string(),
            "fit.surface_samples" => self.fit.surface_samples.to_string(),
            "fit.pose_iterations" => self.fit.pose_iterations.to_string(),
            "cv.folds" => self.folds.to_string(),
            "metrics.chamfer" => self.chamfer.to_string(),
            "paths.model" => self.model_path.display().to_string(),
            "paths.dataset" => self.dataset_dir.display().to_string(),
            "paths.checkpoint" => self.checkpoint_path.display().to_string(),
            "paths.output" => self.output_dir.display().to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        })
    }

    /// Applies `key = value` lines on top of the current values. Blank
    /// lines and `#` comments are skipped; a key may appear once.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |message: String| Error::Config(format!("{source_name}: line {}: {message}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            self.set(key, value.trim()).map_err(|e| match e {
                Error::Config(m) => at(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        config.apply_text(text, source_name)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    /// Every key with its current value, one per line, in canonical order.
    pub fn format(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_len < 8 {
            return Err(Error::Config(format!("model.code_len {} must be at least 8", self.code_len)));
        }
        if self.cohort_size == 0 {
            return Err(Error::Config("cohort.size must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("cv.folds {} must be at least 2", self.folds)));
        }
        self.deformity.validate()?;
        self.weights.validate()?;
        self.train_config().validate()?;
        self.augment.validate()?;
        if !(self.fit.lambda >= 0.0) {
            return Err(Error::Config(format!("fit.lambda {} must be nonnegative", self.fit.lambda)));
        }
        Ok(())
    }

    pub fn component_seed(&self, component: &str) -> u64 {
        seed::derive(self.seed, component)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            seed: self.component_seed("model"),
            code_len: self.code_len,
            resolution: self.resolution,
        }
    }

    pub fn deformity_config(&self) -> DeformityConfig {
        DeformityConfig {
            seed: self.component_seed("cohort"),
            ..self.deformity.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.component_seed("train"),
            weights: self.weights,
            chamfer: self.chamfer,
            ..self.train.clone()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            seed: self.component_seed("augment"),
            ..self.augment.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.component_seed("split")
    }
}
