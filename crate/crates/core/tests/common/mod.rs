#![allow(dead_code)]

use std::sync::Arc;

use saner_core::embeddings::{build_neighbor_index, CompositeEmbedder, EmbeddingSlot, NeighborIndex};
use saner_core::encoder::EncoderConfig;
use saner_core::train_eval::synthetic::{generate, SyntheticConfig, SyntheticCorpus};
use saner_core::train_eval::DataRefs;

pub struct Synth {
    pub corpus: SyntheticCorpus,
    pub index: NeighborIndex,
    pub embedder: CompositeEmbedder,
}

impl Synth {
    pub fn new(cfg: &SyntheticConfig, m: usize) -> Synth {
        let corpus = generate(cfg).unwrap();
        let vocab = corpus.vocab();
        let (index, _) = build_neighbor_index(&corpus.embeddings, vocab.iter().map(String::as_str), m).unwrap();
        let embedder = CompositeEmbedder::new(vec![EmbeddingSlot::Static(Arc::new(corpus.embeddings.clone()))]).unwrap();
        Synth {
            corpus,
            index,
            embedder,
        }
    }

    pub fn standard() -> Synth {
        Synth::new(&SyntheticConfig::default(), 10)
    }

    pub fn data(&self) -> DataRefs<'_> {
        DataRefs {
            embedder: &self.embedder,
            neighbors: Some(&self.index),
        }
    }
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        heads: 2,
        model_dim: 8,
        head_dim: None,
        ff_dim: 12,
        dropout: 0.0,
    }
}
