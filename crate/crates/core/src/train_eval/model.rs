use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelSet, ModelConfig};
use crate::augment::{augment_sentence, AugTable, Combine, SumMode};
use crate::autodiff::{Gradients, Graph, GraphMode, ParamId, ParameterStore, Tensor, Var};
use crate::corpus::LabeledSentence;
use crate::crf::{nll_node, viterbi, BioesConstraints, CrfScores, CrfVars};
use crate::embeddings::{CompositeEmbedder, NeighborIndex, SentenceKey};
use crate::encoder::Encoder;
use crate::error::{shape_err, Error, Result};
use crate::gate::{fuse, no_gate_fuse, project, GateOverride, GateParams};

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    labels: Vec<String>,
    input_dim: usize,
    aug_vocab: Vec<String>,
}

/// Frozen per-sentence inputs: embedding rows and neighbor lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInput {
    /// `n × input_dim`.
    pub embeddings: Tensor,
    /// Augmentation-table rows of each token's neighbors.
    pub neighbor_rows: Vec<Vec<usize>>,
    pub neighbor_words: Vec<Vec<String>>,
}

pub struct ForwardOut {
    /// `n × |L|`.
    pub emissions: Var,
    /// Per-token attention over neighbors (attentive modes only).
    pub weights: Vec<Option<Var>>,
    /// `n × d` gate activations; all ones when ungated.
    pub gate: Var,
}

/// All trainable state plus the structure needed to run it.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    labels: LabelSet,
    input_dim: usize,
    store: ParameterStore,
    encoder: Encoder,
    aug: Option<AugTable>,
    gate: Option<GateParams>,
    w_u: ParamId,
    w_c: ParamId,
    b_c: ParamId,
    transitions: ParamId,
    start: ParamId,
    stop: ParamId,
    constraints: BioesConstraints,
}

impl Model {
    /// Freshly initialized model, seeded from `config.seed`.
    pub fn new(config: ModelConfig, labels: LabelSet, input_dim: usize, aug_vocab: Vec<String>) -> Result<Model> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParameterStore::new();
        let d = config.encoder.model_dim;
        let d_o = config.output_dim();
        let l = labels.len();
        let encoder = Encoder::new(&mut store, "encoder", &config.encoder, input_dim, &mut rng)?;
        let aug = if config.mode.augments() {
            Some(AugTable::new(&mut store, aug_vocab, d, &mut rng)?)
        } else {
            None
        };
        let gate = if config.mode.gated() {
            Some(GateParams::new(&mut store, d, &mut rng)?)
        } else {
            None
        };
        let w_u = store.add("output.w_u", Tensor::xavier(d_o, 2 * d, &mut rng))?;
        let w_c = store.add("crf.w_c", Tensor::xavier(l, d_o, &mut rng))?;
        let b_c = store.add("crf.b_c", Tensor::zeros(&[l]))?;
        let transitions = store.add("crf.transitions", Tensor::zeros(&[l, l]))?;
        let start = store.add("crf.start", Tensor::zeros(&[l]))?;
        let stop = store.add("crf.stop", Tensor::zeros(&[l]))?;
        let constraints = BioesConstraints::new(labels.labels());
        Ok(Model {
            config,
            labels,
            input_dim,
            store,
            encoder,
            aug,
            gate,
            w_u,
            w_c,
            b_c,
            transitions,
            start,
            stop,
            constraints,
        })
    }

    /// Labels from the training data; augmentation vocabulary from every
    /// neighbor word in the index.
    pub fn for_data(
        config: ModelConfig,
        train: &[LabeledSentence],
        embedder: &CompositeEmbedder,
        neighbors: Option<&NeighborIndex>,
    ) -> Result<Model> {
        let aug_vocab = match (config.mode.augments(), neighbors) {
            (false, _) => Vec::new(),
            (true, Some(index)) => index.neighbor_vocab(),
            (true, None) => {
                return Err(Error::Config(format!("mode {} needs a neighbor index", config.mode)));
            }
        };
        Model::new(config, LabelSet::from_data(train), embedder.total_dim(), aug_vocab)
    }

    fn bind(meta: CheckpointMeta, store: ParameterStore) -> Result<Model> {
        let CheckpointMeta {
            config,
            labels,
            input_dim,
            aug_vocab,
        } = meta;
        config.validate()?;
        let labels = LabelSet::from_labels(labels);
        let get = |n: &str| store.id(n).ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {n}")));
        let encoder = Encoder::bind(&store, "encoder", &config.encoder, input_dim)?;
        let d = config.encoder.model_dim;
        let aug = if config.mode.augments() {
            Some(AugTable::bind(&store, aug_vocab, d)?)
        } else {
            None
        };
        let gate = if config.mode.gated() {
            Some(GateParams::bind(&store)?)
        } else {
            None
        };
        let (w_u, w_c) = (get("output.w_u")?, get("crf.w_c")?);
        let l = labels.len();
        if store.value(w_u).shape() != [config.output_dim(), 2 * d] || store.value(w_c).shape() != [l, config.output_dim()] {
            return Err(Error::Format("output projection shapes do not match the configuration".into()));
        }
        let constraints = BioesConstraints::new(labels.labels());
        Ok(Model {
            b_c: get("crf.b_c")?,
            transitions: get("crf.transitions")?,
            start: get("crf.start")?,
            stop: get("crf.stop")?,
            config,
            labels,
            input_dim,
            encoder,
            aug,
            gate,
            w_u,
            w_c,
            constraints,
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Decoding option only; parameters are untouched.
    pub fn set_constrain_decode(&mut self, on: bool) {
        self.config.constrain_decode = on;
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn aug_vocab(&self) -> &[String] {
        self.aug.as_ref().map_or(&[], |a| a.words())
    }

    fn metadata(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointMeta {
            config: self.config.clone(),
            labels: self.labels.labels().to_vec(),
            input_dim: self.input_dim,
            aug_vocab: self.aug_vocab().to_vec(),
        })?)
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        self.store.write_checkpoint(w, &self.metadata()?)
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.save_checkpoint(path, &self.metadata()?)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Model> {
        let (store, meta) = ParameterStore::read_checkpoint(bytes)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        Model::bind(meta, store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_checkpoint(&std::fs::read(path)?)
    }

    /// Embeds a sentence and resolves its neighbors. The index is consulted
    /// only in augmenting modes.
    pub fn prepare(
        &self,
        sentence: &LabeledSentence,
        key: SentenceKey<'_>,
        embedder: &CompositeEmbedder,
        neighbors: Option<&NeighborIndex>,
    ) -> Result<SentenceInput> {
        if embedder.total_dim() != self.input_dim {
            return Err(shape_err(
                "prepare",
                format!("embedder dim {} vs model input {}", embedder.total_dim(), self.input_dim),
            ));
        }
        let n = sentence.len();
        let embeddings = Tensor::matrix(n, self.input_dim, embedder.embed_sentence(sentence, key)?)?;
        let mut neighbor_rows = vec![Vec::new(); n];
        let mut neighbor_words = vec![Vec::new(); n];
        if let Some(aug) = &self.aug {
            let index = neighbors
                .ok_or_else(|| Error::Config(format!("mode {} needs a neighbor index", self.config.mode)))?;
            for (i, token) in sentence.tokens.iter().enumerate() {
                for nb in index.neighbors(token).iter().take(self.config.m) {
                    if let Some(r) = aug.row_of(&nb.word) {
                        neighbor_rows[i].push(r);
                        neighbor_words[i].push(nb.word.clone());
                    }
                }
            }
        }
        Ok(SentenceInput {
            embeddings,
            neighbor_rows,
            neighbor_words,
        })
    }

    /// E → encoder → augmentation → fusion → projection → emissions.
    pub fn forward(&self, g: &mut Graph<'_>, input: &SentenceInput) -> Result<ForwardOut> {
        self.forward_with(g, input, GateOverride::Learned)
    }

    pub fn forward_with(&self, g: &mut Graph<'_>, input: &SentenceInput, hook: GateOverride) -> Result<ForwardOut> {
        let n = input.embeddings.rows();
        if input.neighbor_rows.len() != n {
            return Err(shape_err("forward", "neighbor lists do not match sentence length"));
        }
        let e = g.constant(input.embeddings.clone());
        let h = self.encoder.encode(g, e)?;
        let d = self.config.encoder.model_dim;
        let (v, weights) = match &self.aug {
            Some(aug) => {
                let combine = if self.config.mode.attentive() {
                    Combine::Attentive
                } else if self.config.ds_mean {
                    Combine::Direct(SumMode::Mean)
                } else {
                    Combine::Direct(SumMode::Sum)
                };
                let a = augment_sentence(g, aug, h, &input.neighbor_rows, combine)?;
                (a.v, a.weights)
            }
            None => (g.constant(Tensor::zeros(&[n, d])), vec![None; n]),
        };
        let fused = match &self.gate {
            Some(p) => fuse(g, h, v, p, hook)?,
            None => no_gate_fuse(g, h, v)?,
        };
        let w_u = g.param(self.w_u);
        let o = project(g, fused.u, w_u)?;
        let (w_c, b_c) = (g.param(self.w_c), g.param(self.b_c));
        let emissions = g.linear(o, w_c, Some(b_c))?;
        Ok(ForwardOut {
            emissions,
            weights,
            gate: fused.gate,
        })
    }

    fn crf_vars(&self, g: &mut Graph<'_>) -> CrfVars {
        CrfVars {
            transitions: g.param(self.transitions),
            start: g.param(self.start),
            stop: g.param(self.stop),
        }
    }

    /// Sentence NLL and its gradients. `dropout_seed` selects training mode.
    pub fn loss_and_grad(
        &self,
        input: &SentenceInput,
        gold: &[usize],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Gradients)> {
        let mode = dropout_seed.map_or(GraphMode::Eval, |seed| GraphMode::Train { seed });
        let mut g = Graph::new(&self.store, mode);
        let out = self.forward(&mut g, input)?;
        let vars = self.crf_vars(&mut g);
        let loss = nll_node(&mut g, out.emissions, vars, gold)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        Ok((value, grads))
    }

    /// Sentence NLL without dropout.
    pub fn loss(&self, input: &SentenceInput, gold: &[usize]) -> Result<f64> {
        let mut g = Graph::new(&self.store, GraphMode::Eval);
        let out = self.forward(&mut g, input)?;
        let vars = self.crf_vars(&mut g);
        let loss = nll_node(&mut g, out.emissions, vars, gold)?;
        Ok(g.value(loss).item())
    }

    pub fn emissions(&self, input: &SentenceInput) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, GraphMode::Eval);
        let out = self.forward(&mut g, input)?;
        Ok(g.value(out.emissions).clone())
    }

    pub fn crf_scores(&self) -> CrfScores<'_> {
        CrfScores {
            transitions: self.store.value(self.transitions).data(),
            start: self.store.value(self.start).data(),
            stop: self.store.value(self.stop).data(),
        }
    }

    pub fn viterbi_tags(&self, emissions: &Tensor) -> Result<Vec<String>> {
        let constraints = self.config.constrain_decode.then_some(&self.constraints);
        let path = viterbi(emissions, &self.crf_scores(), constraints)?;
        Ok(path.into_iter().map(|i| self.labels.label(i).to_string()).collect())
    }

    /// Best BIOES tag sequence.
    pub fn decode(&self, input: &SentenceInput) -> Result<Vec<String>> {
        self.viterbi_tags(&self.emissions(input)?)
    }
}
