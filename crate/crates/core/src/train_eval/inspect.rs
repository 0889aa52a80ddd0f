use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataRefs, Model};
use crate::autodiff::{Graph, GraphMode};
use crate::corpus::LabeledSentence;
use crate::embeddings::SentenceKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborWeight {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDump {
    pub token: String,
    pub neighbors: Vec<NeighborWeight>,
    pub gate_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDump {
    pub tokens: Vec<TokenDump>,
    pub gold: Vec<String>,
    pub pred: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionDump {
    pub mode: String,
    pub sentences: Vec<SentenceDump>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Attention weights over each token's neighbors and its mean gate
/// activation, rounded to six decimals. Only attentive modes have weights.
pub fn inspect(model: &Model, sentences: &[LabeledSentence], split: &str, data: DataRefs<'_>) -> Result<InspectionDump> {
    let mode = model.config().mode;
    if !mode.attentive() {
        return Err(Error::UnsupportedMode(format!("inspection needs an AU mode, checkpoint is {mode}")));
    }
    let dumped = sentences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let input = model.prepare(s, SentenceKey { split, index }, data.embedder, data.neighbors)?;
            let mut g = Graph::new(model.store(), GraphMode::Eval);
            let out = model.forward(&mut g, &input)?;
            let pred = model.viterbi_tags(g.value(out.emissions))?;
            let gate = g.value(out.gate);
            let tokens = s
                .tokens
                .iter()
                .enumerate()
                .map(|(i, tok)| {
                    let neighbors = match out.weights[i] {
                        Some(w) => input.neighbor_words[i]
                            .iter()
                            .zip(g.value(w).data())
                            .map(|(word, p)| NeighborWeight {
                                word: word.clone(),
                                weight: round6(*p),
                            })
                            .collect(),
                        None => Vec::new(),
                    };
                    let row = gate.row(i);
                    TokenDump {
                        token: tok.surface.clone(),
                        neighbors,
                        gate_mean: round6(row.iter().sum::<f64>() / row.len() as f64),
                    }
                })
                .collect();
            Ok(SentenceDump {
                tokens,
                gold: s.tags.clone(),
                pred,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InspectionDump {
        mode: mode.to_string(),
        sentences: dumped,
    })
}
