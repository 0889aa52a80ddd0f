//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use common::{tiny_encoder, Synth};
use saner_core::augment::attend;
use saner_core::autodiff::{Graph, GraphMode, ParameterStore, Tensor};
use saner_core::corpus::{
    corpus_stats, read_conll, spans_to_tags, tags_to_spans, validate_tags, EntitySpan, LabeledSentence, ReadMode,
    SchemeKind, TagScheme,
};
use saner_core::crf::{log_partition, viterbi, BioesConstraints, CrfScores};
use saner_core::embeddings::{build_neighbor_index, EmbeddingTable, Neighbor, NeighborIndex, UnkPolicy};
use saner_core::gate::{fuse, project, GateOverride, GateParams};
use saner_core::train_eval::{
    conlleval_score, train, unseen_recall, DataRefs, LabelSet, Mode, Model, ModelConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------

struct DatasetRow {
    name: &'static str,
    dir: &'static str,
    sentences: [usize; 3],
    entities: [usize; 3],
    unseen_test: usize,
}

const DATASETS: [DatasetRow; 3] = [
    DatasetRow {
        name: "W16",
        dir: "wnut16",
        sentences: [2394, 1000, 3850],
        entities: [1496, 661, 3473],
        unseen_test: 2778,
    },
    DatasetRow {
        name: "W17",
        dir: "wnut17",
        sentences: [3394, 1008, 1287],
        entities: [1975, 835, 1079],
        unseen_test: 912,
    },
    DatasetRow {
        name: "WB",
        dir: "weibo",
        sentences: [1350, 270, 270],
        entities: [1885, 389, 414],
        unseen_test: 189,
    },
];

fn paper_numbers() -> Outcome {
    let statement = "published F1 (55.01 / 50.36 / 69.80) needs BERT/ELMo/ZEN/Tencent inputs and the licensed \
                     datasets and is not reproduced here";
    let Ok(root) = std::env::var("SANER_DATA_DIR") else {
        return Ok(format!("{statement}; SANER_DATA_DIR unset, dataset counts not checked"));
    };
    let scheme = TagScheme::open(SchemeKind::Bio);
    let mut checked = Vec::new();
    for row in &DATASETS {
        let dir = Path::new(&root).join(row.dir);
        let paths = ["train", "dev", "test"].map(|s| dir.join(format!("{s}.conll")));
        if !paths.iter().all(|p| p.exists()) {
            continue;
        }
        let splits = paths
            .iter()
            .map(|p| read_conll(p, 1, &scheme, ReadMode::Repair).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        for (k, split) in splits.iter().enumerate() {
            let st = corpus_stats(split, Some(&splits[0]), &scheme).map_err(|e| e.to_string())?;
            ensure(st.n_sentences == row.sentences[k] && st.n_entities == row.entities[k], || {
                format!(
                    "{} split {k}: {} sentences / {} entities, expected {} / {}",
                    row.name, st.n_sentences, st.n_entities, row.sentences[k], row.entities[k]
                )
            })?;
        }
        let gold_as_pred: Vec<Vec<String>> = splits[2].iter().map(|s| s.tags.clone()).collect();
        let unseen = unseen_recall(&splits[0], &splits[2], &gold_as_pred).map_err(|e| e.to_string())?;
        ensure(unseen.count == row.unseen_test, || {
            format!("{} unseen test entities {}, expected {}", row.name, unseen.count, row.unseen_test)
        })?;
        checked.push(row.name);
    }
    Ok(format!("{statement}; dataset counts checked for {checked:?}"))
}

// ---------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let synth = Synth::new(&Default::default(), 3);
    let config = ModelConfig {
        mode: Mode::AuGa,
        encoder: tiny_encoder(),
        m: 3,
        ..Default::default()
    };
    let train_set = &synth.corpus.train;
    let mut model = Model::for_data(config, train_set, &synth.embedder, Some(&synth.index)).map_err(|e| e.to_string())?;
    // Move every tensor off its structured initial value.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<_> = model.store().ids().collect();
    for &id in &ids {
        for x in model.store_mut().value_mut(id).data_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
    let batch: Vec<_> = train_set[..2]
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let input = model
                .prepare(s, saner_core::embeddings::SentenceKey { split: "train", index }, &synth.embedder, Some(&synth.index))
                .unwrap();
            (input, model.labels().encode(&s.tags).unwrap())
        })
        .collect();
    let batch_loss = |m: &Model| batch.iter().map(|(x, y)| m.loss(x, y).unwrap()).sum::<f64>() / 2.0;

    let mut analytic = model.store().clone();
    for (x, y) in &batch {
        let (_, g) = model.loss_and_grad(x, y, None).map_err(|e| e.to_string())?;
        analytic.accumulate(&g, 0.5);
    }
    let h = 1e-4;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for &id in &ids {
        for k in 0..model.store().value(id).len() {
            let orig = model.store().value(id).data()[k];
            model.store_mut().value_mut(id).data_mut()[k] = orig + h;
            let plus = batch_loss(&model);
            model.store_mut().value_mut(id).data_mut()[k] = orig - h;
            let minus = batch_loss(&model);
            model.store_mut().value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.grad(id).data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}] analytic {a:e} numeric {numeric:e}", model.store().name(id)));
            }
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst.0 < 1e-3, || format!("max relative error {:.3e} at {}", worst.0, worst.1))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} tensors, {checked} entries, max relative error {:.2e}, {secs:.1}s",
        ids.len(),
        worst.0
    ))
}

// ---------------------------------------------------------------------------

fn enumerate_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![vec![]];
    for _ in 0..n {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    paths
}

fn crf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.gen_range(1..=5);
        let l = rng.gen_range(1..=4);
        let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>();
        let em = Tensor::matrix(n, l, draw(n * l)).unwrap();
        let (tr, st, sp) = (draw(l * l), draw(l), draw(l));
        // Independent path score: emissions and transitions summed directly.
        let score = |p: &[usize]| {
            let mut s = st[p[0]] + sp[p[n - 1]];
            for i in 0..n {
                s += em.get(i, p[i]);
                if i > 0 {
                    s += tr[p[i - 1] * l + p[i]];
                }
            }
            s
        };
        let paths = enumerate_paths(n, l);
        let scores: Vec<f64> = paths.iter().map(|p| score(p)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let best = &paths[scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];

        let p = CrfScores {
            transitions: &tr,
            start: &st,
            stop: &sp,
        };
        let lz = log_partition(&em, &p).map_err(|e| e.to_string())?;
        worst = worst.max((lz - z).abs());
        ensure((lz - z).abs() <= 1e-9, || format!("case {case}: log Z {lz} vs {z}"))?;
        let v = viterbi(&em, &p, None).map_err(|e| e.to_string())?;
        ensure(&v == best, || format!("case {case}: viterbi {v:?} vs {best:?}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("200 instances, max |log Z diff| {worst:.1e}, viterbi exact, {secs:.2}s"))
}

// ---------------------------------------------------------------------------

fn linear_scan(table: &EmbeddingTable, query: &str, m: usize) -> Option<Vec<Neighbor>> {
    let q = table.lookup(query)?;
    let norm = |r: usize| {
        let mut s = 0.0;
        for x in table.row(r) {
            s += x * x;
        }
        s.sqrt()
    };
    let qn = norm(q);
    if qn == 0.0 {
        return Some(Vec::new());
    }
    let mut all = Vec::new();
    for r in 0..table.len() {
        let rn = norm(r);
        if r == q || rn == 0.0 {
            continue;
        }
        let mut dot = 0.0;
        for (a, b) in table.row(q).iter().zip(table.row(r)) {
            dot += a * b;
        }
        all.push((r, (dot / (qn * rn)).clamp(-1.0, 1.0)));
    }
    // Stable sort keeps ascending row order among equal similarities.
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Some(
        all.into_iter()
            .take(m)
            .map(|(r, similarity)| Neighbor {
                word: table.word(r).to_string(),
                similarity,
            })
            .collect(),
    )
}

fn neighbor_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut queries_checked = 0;
    for t in 0..50 {
        let words = rng.gen_range(1..=200);
        let dim = rng.gen_range(1..=6);
        // Small integer coordinates make ties and zero rows common.
        let rows: Vec<(String, Vec<f64>)> = (0..words)
            .map(|i| (format!("w{i}"), (0..dim).map(|_| rng.gen_range(-2..=2) as f64).collect()))
            .collect();
        let table = EmbeddingTable::from_rows(rows, UnkPolicy::Zero).map_err(|e| e.to_string())?;
        let m = rng.gen_range(1..=12);
        let mut queries: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
        queries.push("absent".into());
        queries.push("W0".into());
        let (index, _) =
            build_neighbor_index(&table, queries.iter().map(String::as_str), m).map_err(|e| e.to_string())?;
        for q in &queries {
            let expect = linear_scan(&table, q, m).unwrap_or_default();
            let got = index.get(q).ok_or_else(|| format!("table {t}: no entry for {q}"))?;
            ensure(got == expect.as_slice(), || format!("table {t}, query {q}: {got:?} vs {expect:?}"))?;
            queries_checked += 1;
        }
    }
    Ok(format!("50 tables, {queries_checked} queries, exact match"))
}

// ---------------------------------------------------------------------------

fn softmax_gate_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_sum = 0.0f64;
    for _ in 0..500 {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store, GraphMode::Eval);
        let (m, d) = (rng.gen_range(1..=10), rng.gen_range(1..=8));
        let h = g.constant(Tensor::uniform(&[1, d], -3.0, 3.0, &mut rng));
        let rows = g.constant(Tensor::uniform(&[m, d], -3.0, 3.0, &mut rng));
        let (_, p) = attend(&mut g, h, rows).map_err(|e| e.to_string())?;
        let w = g.value(p).data();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        ensure(w.iter().all(|x| *x > 0.0 && *x <= 1.0), || format!("weights out of range: {w:?}"))?;
    }
    ensure(worst_sum <= 1e-9, || format!("weights sum off by {worst_sum:e}"))?;

    let d = 6;
    let mut store = ParameterStore::new();
    let params = GateParams::new(&mut store, d, &mut rng).unwrap();
    let w_u = store.add("w_u", Tensor::uniform(&[d, 2 * d], -1.0, 1.0, &mut rng)).unwrap();
    let run = |h: &Tensor, v: &Tensor, fixed: f64| {
        let mut g = Graph::new(&store, GraphMode::Eval);
        let (hv, vv) = (g.constant(h.clone()), g.constant(v.clone()));
        let f = fuse(&mut g, hv, vv, &params, GateOverride::Fixed(fixed)).unwrap();
        let wv = g.param(w_u);
        let o = project(&mut g, f.u, wv).unwrap();
        g.value(o).data().to_vec()
    };
    let mut max_delta = 0.0f64;
    for _ in 0..200 {
        let h = Tensor::uniform(&[3, d], -5.0, 5.0, &mut rng);
        let v = Tensor::uniform(&[3, d], -5.0, 5.0, &mut rng);
        let v2 = Tensor::uniform(&[3, d], -50.0, 50.0, &mut rng);
        let h2 = Tensor::uniform(&[3, d], -50.0, 50.0, &mut rng);
        for (a, b) in [(run(&h, &v, 1.0), run(&h, &v2, 1.0)), (run(&h, &v, 0.0), run(&h2, &v, 0.0))] {
            for (x, y) in a.iter().zip(&b) {
                max_delta = max_delta.max((x - y).abs());
            }
        }
    }
    ensure(max_delta == 0.0, || format!("forced gate output changed by {max_delta:e}"))?;
    Ok(format!("max |sum p - 1| {worst_sum:.1e}; forced g=1 / g=0 max output delta 0"))
}

// ---------------------------------------------------------------------------

fn shuffled_index(index: &NeighborIndex, rng: &mut ChaCha8Rng) -> NeighborIndex {
    let mut lists: Vec<Vec<Neighbor>> = index.entries().map(|(_, l)| l.to_vec()).collect();
    lists.shuffle(rng);
    let mut out = NeighborIndex::new(index.m());
    for ((word, _), mut list) in index.entries().zip(lists) {
        list.reverse();
        out.insert(word, list);
    }
    out
}

fn ablation_lattice() -> Outcome {
    let synth = Synth::standard();
    let (train_set, dev) = (&synth.corpus.train, &synth.corpus.dev);
    let mut summary = Vec::new();
    for mode in Mode::ALL {
        let config = ModelConfig {
            mode,
            epochs: 5,
            ..Default::default()
        };
        let model = Model::for_data(config, train_set, &synth.embedder, Some(&synth.index)).map_err(|e| e.to_string())?;
        let out = train(model, train_set, dev, synth.data(), |_| Ok(())).map_err(|e| format!("{mode}: {e}"))?;
        ensure(out.log.len() == 5 && out.log.iter().all(|e| e.loss.is_finite()), || {
            format!("{mode}: bad log {:?}", out.log)
        })?;
        let (first, last) = (out.log[0].loss, out.log[4].loss);
        ensure(last < first, || format!("{mode}: loss did not fall ({first} -> {last})"))?;
        summary.push(format!("{mode} {first:.2}->{last:.2}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let other = shuffled_index(&synth.index, &mut rng);
    let config = ModelConfig {
        mode: Mode::Baseline,
        epochs: 2,
        ..Default::default()
    };
    let run = |index: &NeighborIndex| {
        let data = DataRefs {
            embedder: &synth.embedder,
            neighbors: Some(index),
        };
        let model = Model::for_data(config.clone(), train_set, &synth.embedder, Some(index)).unwrap();
        let out = train(model, train_set, dev, data, |_| Ok(())).unwrap();
        let preds = saner_core::train_eval::predict(&out.model, dev, "dev", data).unwrap();
        (out.model.checkpoint_bytes().unwrap(), preds)
    };
    ensure(run(&synth.index) == run(&other), || "baseline changed under neighbor shuffling".into())?;
    Ok(format!("5 epochs each, mean loss {}; baseline invariant to shuffled neighbors", summary.join(", ")))
}

// ---------------------------------------------------------------------------

fn overfit() -> Outcome {
    let start = Instant::now();
    let synth = Synth::standard();
    let config = ModelConfig {
        mode: Mode::AuGa,
        seed: 42,
        epochs: 50,
        lr: 5e-3,
        batch_size: 8,
        constrain_decode: true,
        ..Default::default()
    };
    let (train_set, dev) = (&synth.corpus.train, &synth.corpus.dev);
    let model = Model::for_data(config, train_set, &synth.embedder, Some(&synth.index)).map_err(|e| e.to_string())?;
    let out = train(model, train_set, dev, synth.data(), |_| Ok(())).map_err(|e| e.to_string())?;
    let best = out.best_epoch.unwrap();
    let f1 = out.log[best - 1].dev_f1;
    let secs = start.elapsed().as_secs_f64();
    ensure(f1 >= 0.95, || format!("best dev F1 {f1:.4} at epoch {best}"))?;
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!("dev F1 {f1:.4} at epoch {best}, {secs:.0}s"))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct GoldenCase {
    name: String,
    gold: Vec<Vec<String>>,
    pred: Vec<Vec<String>>,
    counts: [usize; 3],
    tags_right: usize,
    per_type: BTreeMap<String, [usize; 3]>,
}

fn scorer_parity() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/conlleval_golden.json");
    let cases: Vec<GoldenCase> =
        serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(cases.len() == 12, || format!("{} golden cases", cases.len()))?;
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    for c in &cases {
        let gold: Vec<LabeledSentence> = c
            .gold
            .iter()
            .map(|tags| {
                let toks: Vec<String> = (0..tags.len()).map(|i| format!("t{i}")).collect();
                LabeledSentence::from_pairs(&toks, tags).unwrap()
            })
            .collect();
        let r = conlleval_score(&gold, &c.pred).map_err(|e| e.to_string())?;
        let [g, p, k] = c.counts;
        let o = r.overall;
        ensure((o.gold, o.predicted, o.correct) == (g, p, k), || {
            format!("{}: counts {:?}", c.name, (o.gold, o.predicted, o.correct))
        })?;
        let f1 = frac(2 * k, g + p);
        ensure(
            o.precision == frac(k, p) && o.recall == frac(k, g) && (o.f1 - f1).abs() < 1e-15,
            || format!("{}: P/R/F1 {} {} {}", c.name, o.precision, o.recall, o.f1),
        )?;
        let tokens: usize = c.gold.iter().map(Vec::len).sum();
        ensure(r.token_accuracy == frac(c.tags_right, tokens), || {
            format!("{}: token accuracy {}", c.name, r.token_accuracy)
        })?;
        let per: BTreeMap<String, [usize; 3]> = r
            .per_type
            .iter()
            .map(|(t, s)| (t.clone(), [s.gold, s.predicted, s.correct]))
            .collect();
        ensure(per == c.per_type, || format!("{}: per-type {per:?}", c.name))?;
    }
    Ok("12 golden cases match".into())
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let synth = Synth::standard();
    let (train_set, dev) = (&synth.corpus.train, &synth.corpus.dev);
    let run = || {
        let config = ModelConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let model = Model::for_data(config, train_set, &synth.embedder, Some(&synth.index)).unwrap();
        let mut lines = Vec::new();
        let out = train(model, train_set, dev, synth.data(), |e| {
            lines.push(serde_json::to_string(e).unwrap());
            Ok(())
        })
        .unwrap();
        (out.model.checkpoint_bytes().unwrap(), lines)
    };
    let (a, b) = (run(), run());
    ensure(a.0 == b.0, || "checkpoints differ".into())?;
    ensure(a.1 == b.1, || "logs differ".into())?;
    Ok(format!("two runs: {}-byte checkpoints and {} log lines identical", a.0.len(), a.1.len()))
}

// ---------------------------------------------------------------------------

fn random_spans(rng: &mut ChaCha8Rng, n: usize) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.4) {
            let len = rng.gen_range(1..=(n - i).min(4));
            let label = ["PER", "LOC", "ORG"][rng.gen_range(0..3)];
            spans.push(EntitySpan::new(label, i, i + len - 1));
            i += len;
        } else {
            i += 1;
        }
    }
    spans
}

fn tag_scheme_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let bioes = TagScheme::open(SchemeKind::Bioes);
    for case in 0..1000 {
        let n = rng.gen_range(0..=20);
        let spans = random_spans(&mut rng, n);
        let tags = spans_to_tags(&spans, n, SchemeKind::Bioes).map_err(|e| e.to_string())?;
        let back = tags_to_spans(&tags, &bioes).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == spans, || format!("case {case}: {spans:?} -> {tags:?} -> {back:?}"))?;
    }
    for case in 0..1000 {
        let types = ["A", "B", "C"][..rng.gen_range(1..=3)].to_vec();
        let labels = LabelSet::from_types(types);
        let constraints = BioesConstraints::new(labels.labels());
        let (n, l) = (rng.gen_range(1..=8), labels.len());
        let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<f64>>();
        let em = Tensor::matrix(n, l, draw(n * l)).unwrap();
        let (tr, st, sp) = (draw(l * l), draw(l), draw(l));
        let p = CrfScores {
            transitions: &tr,
            start: &st,
            stop: &sp,
        };
        let path = viterbi(&em, &p, Some(&constraints)).map_err(|e| e.to_string())?;
        let tags: Vec<&str> = path.iter().map(|&i| labels.label(i)).collect();
        validate_tags(&tags, &bioes).map_err(|e| format!("case {case}: {tags:?}: {e}"))?;
    }
    Ok("1000 span sets round-trip; 1000 constrained decodes valid".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("paper numbers", paper_numbers),
        ("gradient oracle", gradient_oracle),
        ("crf oracle", crf_oracle),
        ("neighbor oracle", neighbor_oracle),
        ("softmax/gate invariants", softmax_gate_invariants),
        ("ablation lattice", ablation_lattice),
        ("overfit", overfit),
        ("scorer parity", scorer_parity),
        ("determinism", determinism),
        ("tag scheme", tag_scheme_properties),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
