//! Model assembly across ablation modes, training, conlleval-style scoring
//! and attention/gate inspection.

mod inspect;
mod model;
mod score;
pub mod synthetic;
mod train;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::corpus::{chunk_spans, LabeledSentence};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

pub use inspect::{inspect, InspectionDump, NeighborWeight, SentenceDump, TokenDump};
pub use model::{ForwardOut, Model, SentenceInput};
pub use score::{conlleval_score, unseen_recall, EvalReport, Prf, UnseenRecall};
pub use train::{evaluate, predict, train, DataRefs, EpochLog, TrainOutcome};

/// Which augmentation and fusion modules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Mode {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "DS")]
    Ds,
    #[serde(rename = "DS+GA")]
    DsGa,
    #[serde(rename = "AU")]
    Au,
    #[default]
    #[serde(rename = "AU+GA")]
    AuGa,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Baseline, Mode::Ds, Mode::DsGa, Mode::Au, Mode::AuGa];

    pub fn augments(self) -> bool {
        self != Mode::Baseline
    }

    pub fn attentive(self) -> bool {
        matches!(self, Mode::Au | Mode::AuGa)
    }

    pub fn gated(self) -> bool {
        matches!(self, Mode::DsGa | Mode::AuGa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Ds => "DS",
            Mode::DsGa => "DS+GA",
            Mode::Au => "AU",
            Mode::AuGa => "AU+GA",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}; expected baseline, DS, DS+GA, AU or AU+GA")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mode: Mode,
    pub encoder: EncoderConfig,
    /// Neighbors used per token.
    pub m: usize,
    /// Width of the output projection; the encoder width when absent.
    pub output_dim: Option<usize>,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Forbid invalid BIOES transitions when decoding.
    pub constrain_decode: bool,
    /// Average instead of sum in the direct-summation modes.
    pub ds_mean: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::AuGa,
            encoder: EncoderConfig::default(),
            m: 10,
            output_dim: None,
            lr: 1e-4,
            betas: [0.9, 0.99],
            eps: 1e-8,
            epochs: 50,
            batch_size: 32,
            seed: 42,
            constrain_decode: false,
            ds_mean: false,
        }
    }
}

impl ModelConfig {
    pub fn output_dim(&self) -> usize {
        self.output_dim.unwrap_or(self.encoder.model_dim)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.output_dim == Some(0) {
            return Err(Error::Config("output_dim must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) || self.eps <= 0.0 {
            return Err(Error::Config("betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

/// BIOES output labels: `O`, then `B/I/E/S` for each entity type in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn from_types<S: AsRef<str>>(types: impl IntoIterator<Item = S>) -> LabelSet {
        let types: BTreeSet<String> = types.into_iter().map(|t| t.as_ref().to_string()).collect();
        let mut labels = vec!["O".to_string()];
        for t in &types {
            labels.extend(["B", "I", "E", "S"].map(|p| format!("{p}-{t}")));
        }
        LabelSet::from_labels(labels)
    }

    /// Entity types occurring in `data`.
    pub fn from_data(data: &[LabeledSentence]) -> LabelSet {
        LabelSet::from_types(data.iter().flat_map(|s| chunk_spans(&s.tags)).map(|sp| sp.label))
    }

    pub fn from_labels(labels: Vec<String>) -> LabelSet {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelSet { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.index(t.as_ref())
                    .ok_or_else(|| Error::Scheme(format!("tag {:?} is not in the label set", t.as_ref())))
            })
            .collect()
    }
}
