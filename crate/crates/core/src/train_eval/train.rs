use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{conlleval_score, EvalReport, Model};
use crate::corpus::{validate_tags, LabeledSentence, SchemeKind, TagScheme};
use crate::embeddings::{CompositeEmbedder, NeighborIndex, SentenceKey};
use crate::error::{Error, Result};

/// The frozen resources a model reads its inputs from.
#[derive(Clone, Copy)]
pub struct DataRefs<'a> {
    pub embedder: &'a CompositeEmbedder,
    pub neighbors: Option<&'a NeighborIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the highest dev F1 (the earliest on ties),
    /// or the initial ones when no epoch ran.
    pub model: Model,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Best tag sequence (BIOES) for every sentence.
pub fn predict(model: &Model, sentences: &[LabeledSentence], split: &str, data: DataRefs<'_>) -> Result<Vec<Vec<String>>> {
    sentences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let input = model.prepare(s, SentenceKey { split, index }, data.embedder, data.neighbors)?;
            model.decode(&input)
        })
        .collect()
}

pub fn evaluate(model: &Model, sentences: &[LabeledSentence], split: &str, data: DataRefs<'_>) -> Result<EvalReport> {
    let pred = predict(model, sentences, split, data)?;
    conlleval_score(sentences, &pred)
}

/// Mini-batch training with Adam; `train` must carry BIOES tags. Each
/// sentence is its own graph and a batch's gradients are summed in sentence
/// order, so results do not depend on the thread count. `on_epoch` sees
/// every log record as it is produced.
pub fn train(
    mut model: Model,
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    data: DataRefs<'_>,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config("training and dev data must be non-empty".into()));
    }
    let config = model.config().clone();
    let adam = config.adam();
    let labels = model.labels().clone();
    let bioes = TagScheme::open(SchemeKind::Bioes);
    let prepared = train
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            validate_tags(&s.tags, &bioes).map_err(|e| Error::Scheme(format!("training sentence {index}: {e}")))?;
            let input = model.prepare(s, SentenceKey { split: "train", index }, data.embedder, data.neighbors)?;
            Ok((input, labels.encode(&s.tags)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(config.seed));
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let results = chunk
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let seed = mix(config.seed ^ mix(((epoch as u64) << 32) ^ (batch * config.batch_size + pos) as u64));
                    let (input, gold) = &prepared[i];
                    model.loss_and_grad(input, gold, Some(seed))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch_loss: f64 = results.iter().map(|(l, _)| l).sum();
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch + 1 });
            }
            total += batch_loss;
            let scale = 1.0 / chunk.len() as f64;
            let store = model.store_mut();
            for (_, grads) in &results {
                store.accumulate(grads, scale);
            }
            store.adam_step(&adam)?;
        }
        let report = evaluate(&model, dev, "dev", data)?;
        let entry = EpochLog {
            epoch,
            loss: total / train.len() as f64,
            dev_p: report.overall.precision,
            dev_r: report.overall.recall,
            dev_f1: report.overall.f1,
        };
        info!(
            "epoch {epoch}: loss {:.4}, dev P/R/F1 {:.4}/{:.4}/{:.4}",
            entry.loss, entry.dev_p, entry.dev_r, entry.dev_f1
        );
        on_epoch(&entry)?;
        if best.as_ref().is_none_or(|(f1, _, _)| entry.dev_f1 > *f1) {
            best = Some((entry.dev_f1, epoch, model.clone()));
        }
        log.push(entry);
    }

    Ok(match best {
        Some((_, epoch, best_model)) => TrainOutcome {
            model: best_model,
            best_epoch: Some(epoch),
            log,
        },
        None => TrainOutcome {
            model,
            best_epoch: None,
            log,
        },
    })
}
