use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::info;
use serde::Serialize;

use saner_core::corpus::{
    corpus_stats, read_conll, repair_tags, to_bioes, write_conll, CorpusStats, LabeledSentence,
    ReadMode, SchemeKind, TagScheme,
};
use saner_core::embeddings::{
    build_neighbor_index, CompositeEmbedder, CoverageReport, EmbeddingSlot, EmbeddingTable,
    NeighborIndex, PrecomputedVectors,
};
use saner_core::train_eval::synthetic::{generate, SyntheticConfig};
use saner_core::train_eval::{
    self, conlleval_score, unseen_recall, DataRefs, EvalReport, Model, ModelConfig,
};

use crate::config::{DataConfig, NeighborConfig, RunConfig, SlotConfig};
use crate::{
    require, Failure, InspectArgs, NeighborArgs, Overrides, RunArgs, StatsArgs, SynthArgs,
    TrainArgs,
};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_split(
    path: &Path,
    scheme: SchemeKind,
    column: usize,
    mode: ReadMode,
) -> Result<Vec<LabeledSentence>, Failure> {
    require(path)?;
    read_conll(path, column, &TagScheme::open(scheme), mode)
        .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SplitStats {
    path: String,
    #[serde(flatten)]
    stats: CorpusStats,
}

pub fn stats(a: &StatsArgs) -> Result<(), Failure> {
    let scheme = TagScheme::open(a.scheme);
    let mode = if a.repair {
        ReadMode::Repair
    } else {
        ReadMode::Strict
    };
    let train = read_split(&a.train, a.scheme, a.column, mode)?;
    let mut splits = vec![SplitStats {
        path: a.train.display().to_string(),
        stats: corpus_stats(&train, None, &scheme)?,
    }];
    for p in &a.eval {
        let data = read_split(p, a.scheme, a.column, mode)?;
        splits.push(SplitStats {
            path: p.display().to_string(),
            stats: corpus_stats(&data, Some(&train), &scheme)?,
        });
    }
    match &a.out {
        Some(out) => write_json(out, &splits),
        None => {
            println!("{}", serde_json::to_string_pretty(&splits)?);
            Ok(())
        }
    }
}

/// First whitespace field of every non-blank line.
fn token_vocab(path: &Path) -> Result<Vec<String>, Failure> {
    let text = crate::read_text(path)?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect())
}

fn load_table(
    path: &Path,
    unk: saner_core::embeddings::UnkPolicy,
) -> Result<EmbeddingTable, Failure> {
    require(path)?;
    EmbeddingTable::load_text(path, unk)
        .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn neighbors_from(
    source: &Path,
    vocab: &[String],
    m: usize,
) -> Result<(NeighborIndex, CoverageReport), Failure> {
    let table = load_table(source, Default::default())?;
    let (index, report) = build_neighbor_index(&table, vocab.iter().map(String::as_str), m)?;
    info!(
        "neighbors: {} of {} query words found in {}",
        report.found,
        report.queried,
        source.display()
    );
    Ok((index, report))
}

pub fn build_neighbors(a: &NeighborArgs) -> Result<(), Failure> {
    let mut vocab = Vec::new();
    for p in &a.vocab_from {
        vocab.extend(token_vocab(p)?);
    }
    let (index, report) = neighbors_from(&a.emb, &vocab, a.m)?;
    fs::create_dir_all(&a.out)?;
    index.save(a.out.join("neighbors.bin"))?;
    write_json(&a.out.join("coverage.json"), &report)
}

fn apply(model: &mut ModelConfig, o: &Overrides) {
    if let Some(v) = o.mode {
        model.mode = v;
    }
    if let Some(v) = o.seed {
        model.seed = v;
    }
    if let Some(v) = o.m {
        model.m = v;
    }
    if let Some(v) = o.epochs {
        model.epochs = v;
    }
    if let Some(v) = o.batch_size {
        model.batch_size = v;
    }
    if let Some(v) = o.lr {
        model.lr = v;
    }
    if let Some(v) = o.dropout {
        model.encoder.dropout = v;
    }
    if o.constrain_decode {
        model.constrain_decode = true;
    }
}

/// A split as read from disk and as the model sees it.
struct Split {
    name: &'static str,
    original: Vec<LabeledSentence>,
    bioes: Vec<LabeledSentence>,
}

impl Split {
    fn read(data: &DataConfig, name: &'static str) -> Result<Split, Failure> {
        let path = data.split_path(name)?;
        let original = read_split(path, data.scheme, data.column, data.read_mode())?;
        let bioes = original
            .iter()
            .map(|s| to_bioes(s, data.scheme))
            .collect::<saner_core::Result<Vec<_>>>()
            .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
        Ok(Split {
            name,
            original,
            bioes,
        })
    }

    /// Model output converted back to the corpus scheme.
    fn to_scheme(preds: Vec<Vec<String>>, kind: SchemeKind) -> Vec<Vec<String>> {
        match kind {
            SchemeKind::Bioes => preds,
            SchemeKind::Bio => preds
                .iter()
                .map(|p| repair_tags(p, SchemeKind::Bio))
                .collect(),
        }
    }
}

struct Inputs {
    splits: Vec<Split>,
    embedder: CompositeEmbedder,
    neighbors: Option<NeighborIndex>,
    coverage: Option<CoverageReport>,
}

impl Inputs {
    fn data(&self) -> DataRefs<'_> {
        DataRefs {
            embedder: &self.embedder,
            neighbors: self.neighbors.as_ref(),
        }
    }

    fn split(&self, name: &str) -> &Split {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .expect("split was loaded")
    }
}

fn load_embedder(slots: &[SlotConfig]) -> Result<CompositeEmbedder, Failure> {
    let mut out = Vec::new();
    for slot in slots {
        out.push(match slot {
            SlotConfig::Static { path, unk } => {
                EmbeddingSlot::Static(Arc::new(load_table(path, *unk)?))
            }
            SlotConfig::Precomputed { dim, splits } => {
                let mut loaded = BTreeMap::new();
                for (name, path) in splits {
                    require(path)?;
                    let v = PrecomputedVectors::load_text(path)
                        .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
                    loaded.insert(name.clone(), Arc::new(v));
                }
                EmbeddingSlot::Precomputed {
                    dim: *dim,
                    splits: loaded,
                }
            }
        });
    }
    Ok(CompositeEmbedder::new(out)?)
}

/// Loads data and features. The neighbor index is only loaded or built when
/// `need_index` is set.
fn load_inputs(
    cfg: &RunConfig,
    names: &[&'static str],
    need_index: bool,
    m: usize,
) -> Result<Inputs, Failure> {
    let splits = names
        .iter()
        .map(|n| Split::read(&cfg.data, n))
        .collect::<Result<Vec<_>, _>>()?;
    let embedder = load_embedder(&cfg.embeddings)?;
    let (neighbors, coverage) = if need_index {
        match &cfg.neighbors {
            Some(NeighborConfig {
                cache: Some(cache), ..
            }) => {
                require(cache)?;
                (Some(NeighborIndex::load(cache)?), None)
            }
            Some(NeighborConfig {
                source: Some(source),
                ..
            }) => {
                let vocab: Vec<String> = splits
                    .iter()
                    .flat_map(|s| {
                        s.original
                            .iter()
                            .flat_map(|x| x.surfaces().map(str::to_string))
                    })
                    .collect();
                let (index, report) = neighbors_from(source, &vocab, m)?;
                (Some(index), Some(report))
            }
            _ => {
                return Err(Failure::Config(
                    "this mode needs [neighbors] with a cache or a source".into(),
                ))
            }
        }
    } else {
        (None, None)
    };
    Ok(Inputs {
        splits,
        embedder,
        neighbors,
        coverage,
    })
}

#[derive(Serialize)]
struct EvalOut {
    mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    reports: BTreeMap<String, EvalReport>,
}

/// Scores predictions in the corpus scheme, with unseen-entity recall
/// against `train` when available.
fn score(
    split: &Split,
    preds: &[Vec<String>],
    train: Option<&Split>,
) -> Result<EvalReport, Failure> {
    let mut report = conlleval_score(&split.original, preds)?;
    if let Some(train) = train {
        report.unseen = Some(unseen_recall(&train.original, &split.original, preds)?);
    }
    Ok(report)
}

fn write_preds(path: &Path, split: &Split, preds: &[Vec<String>]) -> Result<(), Failure> {
    let tagged = split
        .original
        .iter()
        .zip(preds)
        .map(|(s, p)| LabeledSentence::new(s.tokens.clone(), p.clone()))
        .collect::<saner_core::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_conll(&mut buf, &tagged)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&a.config)?;
    apply(&mut cfg.model, &a.overrides);
    cfg.model.validate()?;
    let mut names = vec!["train", "dev"];
    if cfg.data.test.is_some() {
        names.push("test");
    }
    let inputs = load_inputs(&cfg, &names, cfg.model.mode.augments(), cfg.model.m)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.resolved"), cfg.to_toml()?)?;
    if let (Some(index), None) = (
        &inputs.neighbors,
        cfg.neighbors.as_ref().and_then(|n| n.cache.as_ref()),
    ) {
        index.save(a.out.join("neighbors.bin"))?;
        if let Some(report) = &inputs.coverage {
            write_json(&a.out.join("coverage.json"), report)?;
        }
    }

    let data = inputs.data();
    let train_split = inputs.split("train");
    let dev_split = inputs.split("dev");
    let model = Model::for_data(
        cfg.model.clone(),
        &train_split.bioes,
        &inputs.embedder,
        inputs.neighbors.as_ref(),
    )?;
    let mut log = fs::File::create(a.out.join("train.log.jsonl"))?;
    let outcome = train_eval::train(model, &train_split.bioes, &dev_split.bioes, data, |entry| {
        let line = serde_json::to_string(entry)?;
        writeln!(log, "{line}")?;
        Ok(())
    })?;
    outcome.model.save(a.out.join("best.ckpt"))?;

    let mut reports = BTreeMap::new();
    let mut last = None;
    for split in inputs.splits.iter().filter(|s| s.name != "train") {
        let raw = train_eval::predict(&outcome.model, &split.bioes, split.name, data)?;
        let preds = Split::to_scheme(raw, cfg.data.scheme);
        reports.insert(
            split.name.to_string(),
            score(split, &preds, Some(train_split))?,
        );
        last = Some((split, preds));
    }
    if let Some((split, preds)) = last {
        write_preds(&a.out.join("preds.conll"), split, &preds)?;
        let f1 = reports[split.name].overall.f1;
        info!(
            "best epoch {:?}, {} F1 {:.4}",
            outcome.best_epoch, split.name, f1
        );
    }
    write_json(
        &a.out.join("eval.json"),
        &EvalOut {
            mode: cfg.model.mode.to_string(),
            best_epoch: outcome.best_epoch,
            reports,
        },
    )
}

/// Checkpoint plus the data it is applied to. Train is loaded too so that
/// reports carry unseen-entity recall.
fn restore(a: &RunArgs) -> Result<(RunConfig, Model, Inputs, &'static str), Failure> {
    let cfg = RunConfig::load(&a.config)?;
    require(&a.ckpt)?;
    let mut model = Model::load(&a.ckpt)?;
    if a.constrain_decode {
        model.set_constrain_decode(true);
    }
    let split: &'static str = match a.split.as_str() {
        "train" => "train",
        "dev" => "dev",
        "test" => "test",
        other => {
            return Err(Failure::Config(format!(
                "unknown split {other:?}; expected train, dev or test"
            )))
        }
    };
    let names: Vec<&'static str> = if split == "train" {
        vec!["train"]
    } else {
        vec!["train", split]
    };
    let mode = model.config().mode;
    let inputs = load_inputs(&cfg, &names, mode.augments(), model.config().m)?;
    Ok((cfg, model, inputs, split))
}

pub fn evaluate(a: &RunArgs) -> Result<(), Failure> {
    let (cfg, model, inputs, name) = restore(a)?;
    let split = inputs.split(name);
    let raw = train_eval::predict(&model, &split.bioes, name, inputs.data())?;
    let preds = Split::to_scheme(raw, cfg.data.scheme);
    let report = score(split, &preds, Some(inputs.split("train")))?;
    info!(
        "{name}: P/R/F1 {:.4}/{:.4}/{:.4}",
        report.overall.precision, report.overall.recall, report.overall.f1
    );
    fs::create_dir_all(&a.out)?;
    write_json(
        &a.out.join("eval.json"),
        &EvalOut {
            mode: model.config().mode.to_string(),
            best_epoch: None,
            reports: BTreeMap::from([(name.to_string(), report)]),
        },
    )
}

pub fn predict(a: &RunArgs) -> Result<(), Failure> {
    let (cfg, model, inputs, name) = restore(a)?;
    let split = inputs.split(name);
    let raw = train_eval::predict(&model, &split.bioes, name, inputs.data())?;
    let preds = Split::to_scheme(raw, cfg.data.scheme);
    fs::create_dir_all(&a.out)?;
    write_preds(&a.out.join("preds.conll"), split, &preds)
}

pub fn inspect(a: &InspectArgs) -> Result<(), Failure> {
    let (_, model, inputs, name) = restore(&a.run)?;
    let sentences = &inputs.split(name).bioes;
    let n = a.limit.unwrap_or(sentences.len()).min(sentences.len());
    let dump = train_eval::inspect(&model, &sentences[..n], name, inputs.data())?;
    fs::create_dir_all(&a.run.out)?;
    write_json(&a.run.out.join("inspect.json"), &dump)
}

const SYNTH_CONFIG: &str = r#"[data]
train = "train.conll"
dev = "dev.conll"
test = "test.conll"
scheme = "SCHEME"

[[embeddings]]
kind = "static"
path = "emb.txt"

[neighbors]
source = "emb.txt"

[model]
mode = "AU+GA"
seed = SEED
"#;

pub fn gen_synthetic(a: &SynthArgs) -> Result<(), Failure> {
    let cfg = SyntheticConfig {
        seed: a.seed,
        ..Default::default()
    };
    let corpus = generate(&cfg)?;
    corpus.write_dir(&a.out, a.scheme)?;
    let text = SYNTH_CONFIG
        .replace("SCHEME", &a.scheme.to_string())
        .replace("SEED", &a.seed.to_string());
    fs::write(a.out.join("config.toml"), text)?;
    Ok(())
}
