use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use saner_core::corpus::{ReadMode, SchemeKind};
use saner_core::embeddings::UnkPolicy;
use saner_core::train_eval::ModelConfig;

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub embeddings: Vec<SlotConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<NeighborConfig>,
    #[serde(default)]
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeKind,
    /// Tag column; the token is always column 0.
    #[serde(default = "default_column")]
    pub column: usize,
    /// Rewrite malformed tag sequences instead of rejecting them.
    #[serde(default)]
    pub repair: bool,
}

fn default_scheme() -> SchemeKind {
    SchemeKind::Bio
}

fn default_column() -> usize {
    1
}

impl DataConfig {
    pub fn read_mode(&self) -> ReadMode {
        if self.repair {
            ReadMode::Repair
        } else {
            ReadMode::Strict
        }
    }

    pub fn split_path(&self, split: &str) -> Result<&Path, Failure> {
        match split {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => self
                .test
                .as_deref()
                .ok_or_else(|| Failure::Config("no test split configured".into())),
            other => Err(Failure::Config(format!(
                "unknown split {other:?}; expected train, dev or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SlotConfig {
    Static {
        path: PathBuf,
        #[serde(default)]
        unk: UnkPolicy,
    },
    /// Per-token vectors from an external encoder, one file per split.
    Precomputed {
        dim: usize,
        splits: BTreeMap<String, PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborConfig {
    /// Prebuilt neighbor cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    /// Embedding file searched for neighbors when there is no cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = crate::read_text(path)?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        if cfg.embeddings.is_empty() {
            return Err(Failure::Config(
                "at least one [[embeddings]] slot is required".into(),
            ));
        }
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        self.data.test.as_mut().map(fix);
        for slot in &mut self.embeddings {
            match slot {
                SlotConfig::Static { path, .. } => fix(path),
                SlotConfig::Precomputed { splits, .. } => splits.values_mut().for_each(fix),
            }
        }
        if let Some(n) = &mut self.neighbors {
            n.cache.as_mut().map(fix);
            n.source.as_mut().map(fix);
        }
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::Config(format!("cannot serialize config: {e}")))
    }
}
