//! Run configuration: one TOML file, overridable from the command line with
//! `section.key=value` assignments (the value is parsed as TOML, falling
//! back to a bare string).

use std::fs;
use std::path::{Path, PathBuf};

use metafilm_core::embeddings::{CandidateEncoderConfig, EncoderKind};
use metafilm_core::model::{ModelConfig, Pooling, Variant};
use metafilm_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Conditioning width used for the recurrent candidate encoder when none is
/// configured.
pub const DEFAULT_CONTEXTUAL_D_COND: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Shuffle one dataset and cut it by `ratios`.
    #[default]
    Ratio,
    /// Shuffle one dataset and cut `sizes` (or a named `preset`).
    Fixed,
    /// Separate train / validation / test files.
    Files,
    /// `folds`-fold cross-validation over one dataset.
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub split: SplitMode,
    pub dataset: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub ratios: [f64; 3],
    pub sizes: Option<[usize; 3]>,
    pub preset: Option<String>,
    pub folds: usize,
    /// Share of each cross-validation training set held out for model
    /// selection.
    pub validation_fraction: f64,
    pub seed: u64,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            split: SplitMode::Ratio,
            dataset: None,
            train: None,
            validation: None,
            test: None,
            ratios: [0.7, 0.1, 0.2],
            sizes: None,
            preset: None,
            folds: 10,
            validation_fraction: 0.1,
            seed: 0,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    /// Pretrained vectors; without one the table is random.
    pub path: Option<PathBuf>,
    pub d_word: usize,
    pub trainable: bool,
    pub seed: u64,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        EmbeddingsConfig {
            path: None,
            d_word: 200,
            trainable: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub d_hidden: usize,
    pub d_attn: Option<usize>,
    /// Longest sentence in the data when unset.
    pub max_len: Option<usize>,
    pub pooling: Pooling,
    pub encoder: EncoderKind,
    /// `d_word` for static-mean, the width of the supplied vectors for
    /// precomputed, 1024 for contextual-recurrent when unset.
    pub d_cond: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: Variant::Film,
            d_hidden: 512,
            d_attn: None,
            max_len: None,
            pooling: Pooling::LastStep,
            encoder: EncoderKind::StaticMean,
            d_cond: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub embeddings: EmbeddingsConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/metafilm"),
            data: DataConfig::default(),
            embeddings: EmbeddingsConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_override(assignment: &str) -> Result<(Vec<&str>, toml::Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key in override {assignment:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, value) = parse_override(assignment)?;
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `overrides` in order and resolves relative
    /// paths against `base`.
    pub fn from_toml(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let merged = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
        let mut cfg: RunConfig = toml::from_str(&merged).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from the defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let cwd = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let dir = p.parent().map(|d| cwd.join(d)).unwrap_or(cwd.clone());
                Self::from_toml(&text, overrides, &dir)
            }
            None => Self::from_toml("", overrides, &cwd),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.data.dataset,
            &mut self.data.train,
            &mut self.data.validation,
            &mut self.data.test,
            &mut self.embeddings.path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(CliError::Config(format!("{field}: {reason}")));
        let d = &self.data;
        match d.split {
            SplitMode::Files => {
                for (name, p) in [
                    ("data.train", &d.train),
                    ("data.validation", &d.validation),
                    ("data.test", &d.test),
                ] {
                    if p.is_none() {
                        return bad(name, "required when data.split = \"files\"");
                    }
                }
            }
            _ if d.dataset.is_none() => return bad("data.dataset", "required unless data.split = \"files\""),
            SplitMode::Fixed => match (&d.sizes, &d.preset) {
                (Some(_), Some(_)) => return bad("data.sizes", "give either sizes or preset, not both"),
                (None, None) => return bad("data.sizes", "fixed split needs sizes or a preset"),
                (None, Some(p)) if metafilm_core::data::preset_sizes(p).is_none() => {
                    return bad("data.preset", "unknown preset (zaytw, trofi, vuamc, tsv)")
                }
                _ => {}
            },
            SplitMode::Kfold => {
                if d.folds < 2 {
                    return bad("data.folds", "must be at least 2");
                }
                if !(d.validation_fraction > 0.0 && d.validation_fraction < 1.0) {
                    return bad("data.validation_fraction", "must lie in (0, 1)");
                }
            }
            SplitMode::Ratio => {}
        }
        if d.min_count == 0 {
            return bad("data.min_count", "must be at least 1");
        }
        if self.embeddings.d_word == 0 {
            return bad("embeddings.d_word", "must be positive");
        }
        if self.model.d_hidden == 0 {
            return bad("model.d_hidden", "must be positive");
        }
        self.train.validate()?;
        Ok(())
    }

    /// Model configuration once the data-dependent defaults are known.
    pub fn model_config(&self, longest_sentence: usize, conditioning_width: Option<usize>) -> Result<ModelConfig> {
        let m = &self.model;
        let d_cond = match (m.d_cond, m.encoder) {
            (Some(d), _) => d,
            (None, EncoderKind::StaticMean) => self.embeddings.d_word,
            (None, EncoderKind::ContextualRecurrent) => DEFAULT_CONTEXTUAL_D_COND,
            (None, EncoderKind::Precomputed) => conditioning_width.ok_or_else(|| {
                CliError::Config("model.d_cond: precomputed encoder but the data has no conditioning column".into())
            })?,
        };
        let cfg = ModelConfig {
            variant: m.variant,
            d_word: self.embeddings.d_word,
            d_hidden: m.d_hidden,
            d_attn: m.d_attn,
            max_len: m.max_len.unwrap_or(longest_sentence),
            pooling: m.pooling,
            candidate_encoder: CandidateEncoderConfig {
                kind: m.encoder,
                d_cond,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }
}
