//! Seeded toy corpus whose entity words form tight clusters in a small
//! embedding space, so similar-word retrieval carries real signal.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{spans_to_tags, write_conll, EntitySpan, LabeledSentence, SchemeKind};
use crate::embeddings::{EmbeddingTable, UnkPolicy};
use crate::error::Result;

pub const TYPES: [&str; 3] = ["LOC", "ORG", "PER"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Words per entity type.
    pub entity_words: usize,
    pub context_words: usize,
    /// Words per type that only occur in the test split.
    pub held_out: usize,
    pub dim: usize,
    /// Spread of a word around its cluster centre.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 42,
            train: 50,
            dev: 20,
            test: 20,
            entity_words: 10,
            context_words: 30,
            held_out: 2,
            dim: 16,
            noise: 0.3,
        }
    }
}

pub struct SyntheticCorpus {
    /// BIOES-tagged splits.
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    pub embeddings: EmbeddingTable,
}

fn entity_word(ty: &str, i: usize) -> String {
    format!("{}{i}", ty.to_lowercase())
}

fn context_word(i: usize) -> String {
    format!("w{i:02}")
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn sentence(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, entity_pool: usize) -> Result<LabeledSentence> {
    let mut words = Vec::new();
    let mut spans = Vec::new();
    let context = |rng: &mut ChaCha8Rng, words: &mut Vec<String>, k: usize| {
        for _ in 0..k {
            words.push(context_word(rng.gen_range(0..cfg.context_words)));
        }
    };
    let lead = rng.gen_range(0..=2);
    context(rng, &mut words, lead);
    let entities = rng.gen_range(1..=3);
    for e in 0..entities {
        if e > 0 {
            let gap = rng.gen_range(1..=3);
            context(rng, &mut words, gap);
        }
        let ty = *TYPES.choose(rng).expect("non-empty");
        let max_len = if ty == "ORG" { 3 } else { 2 };
        let len = rng.gen_range(1..=max_len);
        let start = words.len();
        for _ in 0..len {
            words.push(entity_word(ty, rng.gen_range(0..entity_pool)));
        }
        spans.push(EntitySpan::new(ty, start, words.len() - 1));
    }
    let tail = rng.gen_range(0..=2);
    context(rng, &mut words, tail);
    let tags = spans_to_tags(&spans, words.len(), SchemeKind::Bioes)?;
    LabeledSentence::from_pairs(&words, &tags)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for ty in TYPES {
        let centre = unit(&mut rng, cfg.dim);
        for i in 0..cfg.entity_words {
            let jitter = unit(&mut rng, cfg.dim);
            let v = centre.iter().zip(&jitter).map(|(c, j)| c + cfg.noise * j).collect();
            rows.push((entity_word(ty, i), v));
        }
    }
    for i in 0..cfg.context_words {
        rows.push((context_word(i), unit(&mut rng, cfg.dim)));
    }
    let embeddings = EmbeddingTable::from_rows(rows, UnkPolicy::Zero)?;

    let seen = cfg.entity_words.saturating_sub(cfg.held_out).max(1);
    let mut split = |n: usize, pool: usize| (0..n).map(|_| sentence(&mut rng, cfg, pool)).collect::<Result<Vec<_>>>();
    let train = split(cfg.train, seen)?;
    let dev = split(cfg.dev, seen)?;
    let test = split(cfg.test, cfg.entity_words)?;
    Ok(SyntheticCorpus {
        train,
        dev,
        test,
        embeddings,
    })
}

impl SyntheticCorpus {
    /// Every distinct token surface across the three splits, sorted.
    pub fn vocab(&self) -> Vec<String> {
        let mut v: Vec<String> = [&self.train, &self.dev, &self.test]
            .into_iter()
            .flatten()
            .flat_map(|s| s.surfaces().map(str::to_string).collect::<Vec<_>>())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Writes `train.conll`, `dev.conll`, `test.conll` in `kind` and `emb.txt`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, kind: SchemeKind) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, data) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            let converted = data
                .iter()
                .map(|s| {
                    let tags = spans_to_tags(&crate::corpus::chunk_spans(&s.tags), s.len(), kind)?;
                    LabeledSentence::new(s.tokens.clone(), tags)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut buf = Vec::new();
            write_conll(&mut buf, &converted)?;
            fs::write(dir.join(format!("{name}.conll")), buf)?;
        }
        let e = &self.embeddings;
        let mut text = format!("{} {}\n", e.len(), e.dim());
        for r in 0..e.len() {
            text.push_str(e.word(r));
            for x in e.row(r) {
                write!(text, " {x}").expect("writing to a String");
            }
            text.push('\n');
        }
        fs::write(dir.join("emb.txt"), text)?;
        Ok(())
    }
}
