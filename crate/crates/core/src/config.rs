//! Experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::AdamConfig;
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::model::{Head, ModelConfig};

pub const LR_GRID: [f64; 3] = [1e-4, 5e-5, 1e-5];
pub const BATCH_SIZE_GRID: [usize; 2] = [16, 32];
pub const MIN_COUNT_GRID: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    SourceOnly,
    Se,
    Ae,
}

impl TrainingMode {
    pub fn label(self) -> &'static str {
        match self {
            TrainingMode::SourceOnly => "source_only",
            TrainingMode::Se => "se",
            TrainingMode::Ae => "ae",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub source: PathBuf,
    pub target_unlabeled: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Optional whitespace-separated `token v1 v2 ...` embedding file.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
}

impl DataPaths {
    /// Resolves relative paths against `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.source);
        fix(&mut self.target_unlabeled);
        fix(&mut self.dev);
        if let Some(p) = &mut self.test {
            fix(p);
        }
        if let Some(p) = &mut self.embeddings {
            fix(p);
        }
    }

    pub fn required(&self) -> Vec<(&'static str, &Path)> {
        let mut out = vec![
            ("data.source", self.source.as_path()),
            ("data.target_unlabeled", self.target_unlabeled.as_path()),
            ("data.dev", self.dev.as_path()),
        ];
        if let Some(p) = &self.test {
            out.push(("data.test", p.as_path()));
        }
        if let Some(p) = &self.embeddings {
            out.push(("data.embeddings", p.as_path()));
        }
        out
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub mode: TrainingMode,
    pub curriculum: bool,
    pub model: ModelConfig,
    /// Fixed smoothing factor of the moving-average teacher.
    pub alpha: f64,
    /// Initial value of every adaptive constant.
    pub alpha0: f64,
    /// Learning rate of the adaptive constants; `None` uses `lr`.
    pub epsilon: Option<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub min_count: usize,
    pub consistency_weight: f64,
    /// Linear warm-up of the consistency weight over this many steps.
    pub consistency_ramp_steps: Option<u64>,
    pub class_weighting: bool,
    pub epochs: usize,
    pub patience: usize,
    pub early_stopping: bool,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    pub threshold: f64,
    pub sampled_constants: usize,
    pub seed: u64,
    /// Permits values outside the standard search grids.
    pub allow_off_grid: bool,
    pub data: DataPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Binary,
            mode: TrainingMode::Ae,
            curriculum: true,
            model: ModelConfig::default(),
            alpha: 0.99,
            alpha0: 0.99,
            epsilon: None,
            lr: 1e-4,
            batch_size: 32,
            min_count: 1,
            consistency_weight: 1.0,
            consistency_ramp_steps: None,
            class_weighting: true,
            epochs: 100,
            patience: 10,
            early_stopping: true,
            max_steps: None,
            threshold: 0.5,
            sampled_constants: 5,
            seed: 0,
            allow_off_grid: false,
            data: DataPaths::default(),
        }
    }
}

fn unit_interval(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} is outside [0, 1]")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.sync_model();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            cfg.data.resolve(dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Makes the output layer agree with the task.
    pub fn sync_model(&mut self) {
        self.model.n_classes = self.task.n_classes();
        self.model.head = Head::for_task(self.task);
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(self.lr)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Applies `path=value` where `path` is a dot-separated field path and
    /// `value` is JSON (bare words are taken as strings).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected key=value"))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for key in path.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(key))
                .ok_or_else(|| Error::config(path, "unknown field"))?;
        }
        *node = value;
        let mut updated: RunConfig = serde_json::from_value(tree).map_err(|e| Error::config(path, e.to_string()))?;
        updated.sync_model();
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.n_classes != self.task.n_classes() || self.model.head != Head::for_task(self.task) {
            return Err(Error::config("model.n_classes", "does not match the task"));
        }
        unit_interval("alpha", self.alpha)?;
        unit_interval("alpha0", self.alpha0)?;
        unit_interval("threshold", self.threshold)?;
        if let Some(eps) = self.epsilon {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::config("epsilon", "must be finite and non-negative"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.consistency_weight >= 0.0 && self.consistency_weight.is_finite()) {
            return Err(Error::config("consistency_weight", "must be finite and non-negative"));
        }
        if self.consistency_ramp_steps == Some(0) {
            return Err(Error::config("consistency_ramp_steps", "must be positive when set"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.min_count == 0 {
            return Err(Error::config("min_count", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be positive when set"));
        }
        if !self.allow_off_grid {
            if !LR_GRID.contains(&self.lr) {
                return Err(Error::config(
                    "lr",
                    format!("{} is not in {LR_GRID:?}; pass the override flag to allow it", self.lr),
                ));
            }
            if !BATCH_SIZE_GRID.contains(&self.batch_size) {
                return Err(Error::config(
                    "batch_size",
                    format!(
                        "{} is not in {BATCH_SIZE_GRID:?}; pass the override flag to allow it",
                        self.batch_size
                    ),
                ));
            }
            if !MIN_COUNT_GRID.contains(&self.min_count) {
                return Err(Error::config(
                    "min_count",
                    format!(
                        "{} is not in {MIN_COUNT_GRID:?}; pass the override flag to allow it",
                        self.min_count
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Every combination of the standard learning-rate, batch-size and
    /// minimum-count grids applied to `self`.
    pub fn grid(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &lr in &LR_GRID {
            for &batch_size in &BATCH_SIZE_GRID {
                for &min_count in &MIN_COUNT_GRID {
                    out.push(RunConfig {
                        lr,
                        batch_size,
                        min_count,
                        ..self.clone()
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn off_grid_values_need_the_flag() {
        let mut cfg = RunConfig {
            lr: 3e-3,
            ..RunConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("lr"), "{err}");
        cfg.allow_off_grid = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("model.n_layers=3").unwrap();
        cfg.apply_override("mode=se").unwrap();
        cfg.apply_override("task=multilabel").unwrap();
        assert_eq!(cfg.model.n_layers, 3);
        assert_eq!(cfg.mode, TrainingMode::Se);
        assert_eq!(cfg.model.n_classes, 3);
        assert!(cfg.apply_override("model.nope=1").is_err());
        assert!(cfg.apply_override("lr").is_err());
    }

    #[test]
    fn grid_has_eighteen_points() {
        let grid = RunConfig::default().grid();
        assert_eq!(grid.len(), 18);
        assert!(grid.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"learning_rate": 0.1}"#).is_err());
    }
}
