//! Static embedding tables, composite per-token input vectors, and the
//! top-m similar-word index used for semantic augmentation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledSentence, Token};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnkPolicy {
    #[default]
    Zero,
    Mean,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    matrix: Vec<f64>,
    unk_policy: UnkPolicy,
    unk: Vec<f64>,
    /// Number of duplicate word lines dropped while loading.
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn from_rows<S: Into<String>>(
        rows: impl IntoIterator<Item = (S, Vec<f64>)>,
        unk_policy: UnkPolicy,
    ) -> Result<EmbeddingTable> {
        let mut table = EmbeddingTable {
            dim: 0,
            words: Vec::new(),
            vocab: HashMap::new(),
            matrix: Vec::new(),
            unk_policy,
            unk: Vec::new(),
            duplicates: 0,
        };
        for (i, (word, row)) in rows.into_iter().enumerate() {
            table.push(word.into(), row, i + 1)?;
        }
        table.finish()
    }

    fn push(&mut self, word: String, row: Vec<f64>, line: usize) -> Result<()> {
        if self.words.is_empty() && self.dim == 0 {
            if row.is_empty() {
                return Err(Error::Parse {
                    line,
                    msg: "embedding row has no values".into(),
                });
            }
            self.dim = row.len();
        }
        if row.len() != self.dim {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} values, found {}", self.dim, row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: "non-finite embedding value".into(),
            });
        }
        if self.vocab.contains_key(&word) {
            self.duplicates += 1;
            return Ok(());
        }
        self.vocab.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.matrix.extend_from_slice(&row);
        Ok(())
    }

    fn finish(mut self) -> Result<EmbeddingTable> {
        if self.words.is_empty() {
            return Err(Error::Format("embedding table is empty".into()));
        }
        self.unk = match self.unk_policy {
            UnkPolicy::Zero => vec![0.0; self.dim],
            UnkPolicy::Mean => {
                let mut mean = vec![0.0; self.dim];
                for row in self.matrix.chunks_exact(self.dim) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                let n = self.words.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                mean
            }
        };
        if self.duplicates > 0 {
            warn!("embedding table: {} duplicate words ignored", self.duplicates);
        }
        Ok(self)
    }

    pub fn load_text(path: impl AsRef<Path>, unk_policy: UnkPolicy) -> Result<EmbeddingTable> {
        let text = std::fs::read_to_string(path)?;
        EmbeddingTable::parse_text(&text, unk_policy)
    }

    /// Parses `word v1 .. vd` lines, with an optional leading `count dim` header.
    pub fn parse_text(text: &str, unk_policy: UnkPolicy) -> Result<EmbeddingTable> {
        let mut table = EmbeddingTable {
            dim: 0,
            words: Vec::new(),
            vocab: HashMap::new(),
            matrix: Vec::new(),
            unk_policy,
            unk: Vec::new(),
            duplicates: 0,
        };
        for (idx, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if idx == 0 && rest.len() == 1 {
                if let (Ok(_), Ok(dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                    table.dim = dim;
                    continue;
                }
            }
            let row = rest
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad embedding value: {e}"),
                })?;
            table.push(word.to_string(), row, idx + 1)?;
        }
        table.finish()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_policy(&self) -> UnkPolicy {
        self.unk_policy
    }

    pub fn word(&self, row: usize) -> &str {
        &self.words[row]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.vocab.get(word).copied()
    }

    /// Row for a word: exact surface first, then its lowercased form.
    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index_of(word)
            .or_else(|| self.index_of(&word.to_lowercase()))
    }

    /// Vector for a token, falling back to the unknown-word policy.
    pub fn vector(&self, token: &Token) -> &[f64] {
        match self.index_of(&token.surface).or_else(|| self.index_of(&token.normalized)) {
            Some(r) => self.row(r),
            None => &self.unk,
        }
    }
}

/// Per-token vectors computed outside this crate (e.g. by a contextual
/// encoder), stored in sentence order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedVectors {
    dim: usize,
    sentences: Vec<Vec<f64>>,
}

impl PrecomputedVectors {
    pub fn new(dim: usize, sentences: Vec<Vec<Vec<f64>>>) -> Result<PrecomputedVectors> {
        if dim == 0 {
            return Err(Error::Format("precomputed vectors need dim > 0".into()));
        }
        let mut flat = Vec::with_capacity(sentences.len());
        for (s, rows) in sentences.into_iter().enumerate() {
            let mut buf = Vec::with_capacity(rows.len() * dim);
            for (t, row) in rows.into_iter().enumerate() {
                if row.len() != dim || row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format(format!(
                        "bad precomputed vector at sentence {s}, token {t}"
                    )));
                }
                buf.extend(row);
            }
            flat.push(buf);
        }
        Ok(PrecomputedVectors {
            dim,
            sentences: flat,
        })
    }

    /// Reads blocks of `token v1 .. vd` lines separated by blank lines,
    /// one block per sentence.
    pub fn load_text(path: impl AsRef<Path>) -> Result<PrecomputedVectors> {
        let text = std::fs::read_to_string(path)?;
        PrecomputedVectors::parse_text(&text)
    }

    pub fn parse_text(text: &str) -> Result<PrecomputedVectors> {
        let mut dim = 0;
        let mut sentences = Vec::new();
        let mut current: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                if !current.is_empty() {
                    sentences.push(std::mem::take(&mut current));
                }
                continue;
            }
            let row = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad vector value: {e}"),
                })?;
            if dim == 0 {
                dim = row.len();
            }
            if row.len() != dim || dim == 0 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {dim} values, found {}", row.len()),
                });
            }
            current.push(row);
        }
        if !current.is_empty() {
            sentences.push(current);
        }
        PrecomputedVectors::new(dim.max(1), sentences)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn token(&self, sentence: usize, token: usize, n_tokens: usize) -> Result<&[f64]> {
        let buf = self.sentences.get(sentence).ok_or_else(|| {
            Error::Coverage(format!("no precomputed vectors for sentence {sentence}"))
        })?;
        if buf.len() != n_tokens * self.dim {
            return Err(Error::Coverage(format!(
                "sentence {sentence}: precomputed vectors cover {} tokens, sentence has {n_tokens}",
                buf.len() / self.dim
            )));
        }
        Ok(&buf[token * self.dim..(token + 1) * self.dim])
    }
}

/// One input feature source.
#[derive(Debug, Clone)]
pub enum EmbeddingSlot {
    Static(Arc<EmbeddingTable>),
    /// Precomputed vectors, one set per corpus split name.
    Precomputed {
        dim: usize,
        splits: BTreeMap<String, Arc<PrecomputedVectors>>,
    },
}

impl EmbeddingSlot {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSlot::Static(t) => t.dim(),
            EmbeddingSlot::Precomputed { dim, .. } => *dim,
        }
    }
}

/// Identifies a sentence for precomputed-slot lookup.
#[derive(Debug, Clone, Copy)]
pub struct SentenceKey<'a> {
    pub split: &'a str,
    pub index: usize,
}

/// Concatenation of several embedding sources into one input vector per token.
#[derive(Debug, Clone)]
pub struct CompositeEmbedder {
    slots: Vec<EmbeddingSlot>,
}

impl CompositeEmbedder {
    pub fn new(slots: Vec<EmbeddingSlot>) -> Result<CompositeEmbedder> {
        for slot in &slots {
            if let EmbeddingSlot::Precomputed { dim, splits } = slot {
                if let Some((name, _)) = splits.iter().find(|(_, v)| v.dim() != *dim) {
                    return Err(Error::Format(format!(
                        "precomputed split {name:?} does not have dim {dim}"
                    )));
                }
            }
        }
        let c = CompositeEmbedder { slots };
        if c.total_dim() == 0 {
            return Err(Error::Format("composite embedder has zero total dim".into()));
        }
        Ok(c)
    }

    pub fn slots(&self) -> &[EmbeddingSlot] {
        &self.slots
    }

    pub fn total_dim(&self) -> usize {
        self.slots.iter().map(EmbeddingSlot::dim).sum()
    }

    /// Row-major `n × total_dim` matrix of concatenated slot vectors.
    pub fn embed_sentence(&self, sentence: &LabeledSentence, key: SentenceKey<'_>) -> Result<Vec<f64>> {
        let n = sentence.len();
        let total = self.total_dim();
        let mut out = Vec::with_capacity(n * total);
        for (i, token) in sentence.tokens.iter().enumerate() {
            for slot in &self.slots {
                match slot {
                    EmbeddingSlot::Static(table) => out.extend_from_slice(table.vector(token)),
                    EmbeddingSlot::Precomputed { splits, .. } => {
                        let vectors = splits.get(key.split).ok_or_else(|| {
                            Error::Coverage(format!(
                                "no precomputed vectors for split {:?}",
                                key.split
                            ))
                        })?;
                        out.extend_from_slice(vectors.token(key.index, i, n)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(shape_err("cosine", format!("{} vs {}", u.len(), v.len())));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok(similarity(dot(u, v), nu, nv))
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn similarity(dot: f64, nu: f64, nv: f64) -> f64 {
    // `+ 0.0` turns -0.0 into 0.0 so the two rank as a tie.
    (dot / (nu * nv)).clamp(-1.0, 1.0) + 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub word: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    m: usize,
    entries: BTreeMap<String, Vec<Neighbor>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub queried: usize,
    pub found: usize,
    pub missing: Vec<String>,
}

const NEIGHBOR_MAGIC: &[u8; 8] = b"SANERNBR";
const NEIGHBOR_VERSION: u32 = 1;

impl NeighborIndex {
    pub fn new(m: usize) -> NeighborIndex {
        NeighborIndex {
            m,
            entries: BTreeMap::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, neighbors: Vec<Neighbor>) {
        self.entries.insert(word.into(), neighbors);
    }

    pub fn get(&self, word: &str) -> Option<&[Neighbor]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// Neighbors of a token: exact surface entry first, then the normalized one.
    pub fn neighbors(&self, token: &Token) -> &[Neighbor] {
        self.get(&token.surface)
            .or_else(|| self.get(&token.normalized))
            .unwrap_or(&[])
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[Neighbor])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Distinct neighbor words across all entries, sorted.
    pub fn neighbor_vocab(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .entries
            .values()
            .flatten()
            .map(|n| n.word.as_str())
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(NEIGHBOR_MAGIC)?;
        w.write_all(&NEIGHBOR_VERSION.to_le_bytes())?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        for (word, list) in &self.entries {
            write_str(&mut w, word)?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for n in list {
                write_str(&mut w, &n.word)?;
                w.write_all(&n.similarity.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(bytes: &[u8]) -> Result<NeighborIndex> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != NEIGHBOR_MAGIC {
            return Err(Error::Format("not a neighbor cache (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != NEIGHBOR_VERSION {
            return Err(Error::Format(format!(
                "neighbor cache version {version}, expected {NEIGHBOR_VERSION}"
            )));
        }
        let mut index = NeighborIndex::new(r.u32()? as usize);
        while !r.at_end() {
            let word = r.string()?;
            let k = r.u32()? as usize;
            let mut list = Vec::with_capacity(k.min(1 << 16));
            for _ in 0..k {
                let word = r.string()?;
                let similarity = r.f64()?;
                list.push(Neighbor { word, similarity });
            }
            index.entries.insert(word, list);
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NeighborIndex> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        NeighborIndex::read_from(&bytes)
    }
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated file at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }
}

/// Orders candidates by similarity (descending), then source row (ascending).
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top-m most cosine-similar source words for every query word present in
/// `source`, excluding the word itself. Queries are matched exactly, then
/// lowercased; absent queries get an empty entry and are reported.
pub fn build_neighbor_index<'q>(
    source: &EmbeddingTable,
    query_vocab: impl IntoIterator<Item = &'q str>,
    m: usize,
) -> Result<(NeighborIndex, CoverageReport)> {
    if m == 0 {
        return Err(Error::Config("neighbor count m must be at least 1".into()));
    }
    let queries: BTreeSet<&str> = query_vocab.into_iter().collect();
    let norms: Vec<f64> = (0..source.len()).map(|r| norm(source.row(r))).collect();

    let results: Vec<(&str, Option<Vec<Neighbor>>)> = queries
        .par_iter()
        .map(|&q| {
            let Some(qrow) = source.lookup(q) else {
                return (q, None);
            };
            let qn = norms[qrow];
            if qn == 0.0 {
                return (q, Some(Vec::new()));
            }
            let qv = source.row(qrow);
            let mut cands: Vec<(f64, usize)> = (0..source.len())
                .filter(|&r| r != qrow && norms[r] != 0.0)
                .map(|r| (similarity(dot(qv, source.row(r)), qn, norms[r]), r))
                .collect();
            if cands.len() > m {
                cands.select_nth_unstable_by(m - 1, rank);
                cands.truncate(m);
            }
            cands.sort_by(rank);
            let list = cands
                .into_iter()
                .map(|(similarity, r)| Neighbor {
                    word: source.word(r).to_string(),
                    similarity,
                })
                .collect();
            (q, Some(list))
        })
        .collect();

    let mut index = NeighborIndex::new(m);
    let mut report = CoverageReport {
        queried: results.len(),
        ..Default::default()
    };
    for (q, list) in results {
        match list {
            Some(list) => {
                report.found += 1;
                index.insert(q, list);
            }
            None => {
                report.missing.push(q.to_string());
                index.insert(q, Vec::new());
            }
        }
    }
    Ok((index, report))
}
