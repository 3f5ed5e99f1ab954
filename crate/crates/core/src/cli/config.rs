//! Run configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditional::DistFamily;
use crate::corpus::FeatureKind;
use crate::mi_sweep::{SweepBounds, DEFAULT_TOLERANCE};
use crate::predictor::TrainConfig;
use crate::synthetic::{comparable_weights, noise_sd_for_mi, ProcessSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported config schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "all_features")]
    pub features: Vec<FeatureKind>,
    #[serde(default = "all_families")]
    pub families: Vec<DistFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_features() -> Vec<FeatureKind> {
    FeatureKind::ALL.to_vec()
}

fn all_families() -> Vec<DistFamily> {
    DistFamily::ALL.to_vec()
}

/// Real corpus input: either one file whose manifest assigns splits, or
/// one file per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub infer_syllables: bool,
    /// Stored features normalized per speaker with training statistics.
    #[serde(default = "default_zscore")]
    pub zscore: Vec<FeatureKind>,
}

fn default_zscore() -> Vec<FeatureKind> {
    vec![FeatureKind::Pitch]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    pub past: usize,
    pub future: usize,
    /// Lag weights for `-past..=future`; comparable magnitudes if omitted.
    pub weights: Option<Vec<f64>>,
    /// Explicit noise level; otherwise chosen to reach `target_mi`.
    pub noise_sd: Option<f64>,
    #[serde(default = "default_target_mi")]
    pub target_mi: f64,
    pub utterance_len: [usize; 2],
    pub train_utterances: usize,
    pub validation_utterances: usize,
    pub test_utterances: usize,
}

fn default_target_mi() -> f64 {
    0.5
}

impl SyntheticConfig {
    pub fn process_spec(&self, seed: u64) -> ProcessSpec {
        let weights = self
            .weights
            .clone()
            .unwrap_or_else(|| comparable_weights(self.past, self.future));
        let noise_sd = self
            .noise_sd
            .unwrap_or_else(|| noise_sd_for_mi(&weights, 1.0, self.target_mi));
        ProcessSpec {
            vocab_size: self.vocab_size,
            past: self.past,
            future: self.future,
            weights,
            noise_sd,
            utterance_len: self.utterance_len,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Number of log-spaced candidate bandwidths.
    pub bandwidths: usize,
    pub max_centers: Option<usize>,
    pub histogram_bins: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            bandwidths: 24,
            max_centers: Some(50_000),
            histogram_bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub max_past: usize,
    pub max_future: usize,
    pub tolerance: f64,
    pub plots: bool,
    /// `host:port` of an external predictor; the built-in model otherwise.
    pub endpoint: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            max_past: 10,
            max_future: 10,
            tolerance: DEFAULT_TOLERANCE,
            plots: true,
            endpoint: None,
        }
    }
}

impl SweepConfig {
    pub fn bounds(&self) -> SweepBounds {
        SweepBounds {
            max_past: self.max_past,
            max_future: self.max_future,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out_dir: default_out_dir(),
            features: all_features(),
            families: all_families(),
            data: None,
            synthetic: None,
            density: DensityConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        match raw.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(ConfigError::Schema(v.max(0) as u32)),
            None => {
                return Err(ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: "missing integer schema_version".into(),
                })
            }
        }
        let mut cfg: RunConfig =
            raw.try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Makes relative paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(d) = &mut self.data {
            for p in [&mut d.corpus, &mut d.train, &mut d.validation, &mut d.test]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        if self.features.is_empty() {
            return bad("features must not be empty".into());
        }
        if self.families.is_empty() {
            return bad("families must not be empty".into());
        }
        if self.density.bandwidths < 1 || self.density.histogram_bins < 1 {
            return bad("density.bandwidths and density.histogram_bins must be positive".into());
        }
        if !(self.sweep.tolerance >= 0.0) {
            return bad("sweep.tolerance must be non-negative".into());
        }
        if self.sweep.max_past > 10 || self.sweep.max_future > 10 {
            return bad("sweep bounds are limited to 10 past and 10 future words".into());
        }
        self.train.validate().or_else(|e| bad(e.to_string()))?;
        if let Some(d) = &self.data {
            let split_files = [&d.train, &d.validation, &d.test];
            let count = split_files.iter().filter(|p| p.is_some()).count();
            match (&d.corpus, count) {
                (Some(_), 0) | (None, 3) => {}
                _ => {
                    return bad(
                        "data needs either `corpus` or all of `train`, `validation`, `test`".into(),
                    )
                }
            }
            for p in d.corpus.iter().chain(split_files.into_iter().flatten()) {
                if !p.exists() {
                    return bad(format!("data file {} does not exist", p.display()));
                }
            }
            if let Some(k) = d.zscore.iter().find(|k| !k.is_stored()) {
                return bad(format!("{k} is derived and cannot be z-scored"));
            }
        }
        if let Some(s) = &self.synthetic {
            crate::synthetic::SyntheticProcess::new(s.process_spec(0))
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if s.train_utterances == 0 || s.validation_utterances == 0 || s.test_utterances == 0 {
                return bad("synthetic split sizes must be positive".into());
            }
            if !(s.target_mi > 0.0) {
                return bad("synthetic.target_mi must be positive".into());
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical form of everything that affects results.
    /// The output directory is excluded so relocated runs hash alike.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        let text = toml::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Independent 64-bit seed for one named consumer of randomness.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
