//! Run configuration: flat UTF-8 `key = value` lines, `#` comments.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dualhead::Mode;
use crate::manifest::Stage;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected 'key = value', got '{1}'")]
    BadLine(usize, String),
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for '{key}': {reason}")]
    BadValue { key: String, reason: String },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("m must be at least 1")]
    ZeroM,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub workspace: PathBuf,
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub mode: Mode,
    pub hidden: [usize; 2],
    pub lr: f64,
    pub lambda: f64,
    pub m: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub threshold: f64,
    /// Train/dev/test ratios for the stratified split.
    pub ratios: (f64, f64, f64),
    /// Precomputed split file; when set it overrides `ratios`.
    pub split: Option<PathBuf>,
    /// Stages to run, in order.
    pub stages: Vec<Stage>,
    /// Class-balanced batches when true; plain shuffled batches otherwise.
    pub balanced_sampler: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workspace: PathBuf::from("."),
            manifest: PathBuf::from("manifest.json"),
            features: PathBuf::from("features.txaf"),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            mode: Mode::Full,
            hidden: [512, 256],
            lr: 1e-4,
            lambda: 0.2,
            m: 3,
            patience: 5,
            max_epochs: 50,
            threshold: 0.5,
            ratios: (0.7, 0.1, 0.2),
            split: None,
            stages: vec![Stage::S1Source, Stage::S2Category, Stage::S3Full],
            balanced_sampler: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine(lineno + 1, raw.to_string()))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |reason: &str| ConfigError::BadValue {
                key: key.to_string(),
                reason: reason.to_string(),
            };
            match key {
                "workspace" => config.workspace = PathBuf::from(value),
                "manifest" => config.manifest = PathBuf::from(value),
                "features" => config.features = PathBuf::from(value),
                "output_dir" => config.output_dir = PathBuf::from(value),
                "seed" => config.seed = value.parse().map_err(|_| bad("expected u64"))?,
                "mode" => {
                    config.mode = match value {
                        "full" => Mode::Full,
                        "binary" => Mode::Binary,
                        _ => return Err(bad("expected 'full' or 'binary'")),
                    }
                }
                "hidden1" => config.hidden[0] = value.parse().map_err(|_| bad("expected usize"))?,
                "hidden2" => config.hidden[1] = value.parse().map_err(|_| bad("expected usize"))?,
                "lr" => config.lr = value.parse().map_err(|_| bad("expected float"))?,
                "lambda" => config.lambda = value.parse().map_err(|_| bad("expected float"))?,
                "m" => config.m = value.parse().map_err(|_| bad("expected usize"))?,
                "patience" => config.patience = value.parse().map_err(|_| bad("expected usize"))?,
                "max_epochs" => {
                    config.max_epochs = value.parse().map_err(|_| bad("expected usize"))?
                }
                "threshold" => config.threshold = value.parse().map_err(|_| bad("expected float"))?,
                "split" => config.split = Some(PathBuf::from(value)),
                "ratios" => {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("expected three comma-separated floats"))?;
                    if parts.len() != 3 {
                        return Err(bad("expected three comma-separated floats"));
                    }
                    config.ratios = (parts[0], parts[1], parts[2]);
                }
                "balanced_sampler" => {
                    config.balanced_sampler = value.parse().map_err(|_| bad("expected bool"))?
                }
                "stages" => {
                    config.stages = value
                        .split(',')
                        .map(|s| match s.trim() {
                            "S1" => Ok(Stage::S1Source),
                            "S2" => Ok(Stage::S2Category),
                            "S3" => Ok(Stage::S3Full),
                            other => Err(ConfigError::BadValue {
                                key: key.to_string(),
                                reason: format!("unknown stage '{other}'"),
                            }),
                        })
                        .collect::<Result<_, _>>()?;
                }
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::parse(&text)?;
        // Relative paths resolve against the workspace root.
        let root = if config.workspace.is_absolute() {
            config.workspace.clone()
        } else {
            path.parent().unwrap_or(Path::new(".")).join(&config.workspace)
        };
        for p in [&mut config.manifest, &mut config.features, &mut config.output_dir] {
            if p.is_relative() {
                *p = root.join(&p);
            }
        }
        if let Some(split) = &mut config.split {
            if split.is_relative() {
                *split = root.join(&split);
            }
        }
        config.workspace = root;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::BadLambda(self.lambda));
        }
        if self.m == 0 {
            return Err(ConfigError::ZeroM);
        }
        let sum = self.ratios.0 + self.ratios.1 + self.ratios.2;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::BadValue {
                key: "ratios".to_string(),
                reason: format!("must sum to 1, got {sum}"),
            });
        }
        Ok(())
    }
}
