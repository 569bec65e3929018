use std::fs;
use std::path::{Path, PathBuf};

use dualmoco::datagen::{Language, Split, WorldConfig};
use dualmoco::eval::MarginVariant;
use dualmoco::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs. Every field has a default; unknown keys are
/// rejected. Command-line flags override values loaded from `--config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: WorldConfig,
    pub train: TrainConfig,
    /// Add the NLI multitask term during training.
    pub nli: bool,
    pub eval: EvalSettings,
    pub paths: PathSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub margin: MarginVariant,
    pub split: Split,
    pub language: Language,
    pub threads: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            margin: MarginVariant::Distance,
            split: Split::Test,
            language: Language::A,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSettings {
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings_dir: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.eval.threads == 0 {
            return Err(CliError::Config("eval.threads: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        crate::commands::write_json(&dir.join("resolved_config.json"), self)
    }
}

pub fn require(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.clone()
        .ok_or_else(|| CliError::Usage(format!("missing {flag} (or the matching `paths` entry in --config)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}, "nli": true}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert!(c.nli);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.eval, EvalSettings::default());
    }

    #[test]
    fn nested_unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"eval": {"thread": 2}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"paths": {"data": "x"}}"#).is_err());
    }

    #[test]
    fn zero_threads_fail_validation() {
        let mut c = RunConfig::default();
        c.eval.threads = 0;
        assert!(matches!(c.validate(), Err(CliError::Config(m)) if m.contains("threads")));
    }

    #[test]
    fn train_errors_name_the_field() {
        let mut c = RunConfig::default();
        c.train.momentum = 1.5;
        let err = c.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("momentum"), "{err}");
    }

    #[test]
    fn require_reports_the_flag() {
        let err = require(&None, "--checkpoint").unwrap_err();
        assert!(matches!(&err, CliError::Usage(m) if m.contains("--checkpoint")));
        assert_eq!(require(&Some(PathBuf::from("a")), "--x").unwrap(), PathBuf::from("a"));
    }
}
