//! CoNLL-style corpus handling: reading and writing column files, tag scheme
//! validation and conversion, span extraction and dataset statistics.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    /// Lowercased surface, used for neighbor lookup.
    pub normalized: String,
}

impl Token {
    pub fn new(surface: &str) -> Result<Token> {
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("invalid token {surface:?}")));
        }
        Ok(Token {
            surface: surface.to_string(),
            normalized: surface.to_lowercase(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub tokens: Vec<Token>,
    pub tags: Vec<String>,
}

impl LabeledSentence {
    pub fn new(tokens: Vec<Token>, tags: Vec<String>) -> Result<LabeledSentence> {
        if tokens.is_empty() {
            return Err(Error::Format("empty sentence".into()));
        }
        if tokens.len() != tags.len() {
            return Err(Error::Format(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        Ok(LabeledSentence { tokens, tags })
    }

    /// Builds a sentence from parallel surface/tag slices.
    pub fn from_pairs<S: AsRef<str>, T: AsRef<str>>(
        surfaces: &[S],
        tags: &[T],
    ) -> Result<LabeledSentence> {
        let tokens = surfaces
            .iter()
            .map(|s| Token::new(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let tags = tags.iter().map(|t| t.as_ref().to_string()).collect();
        LabeledSentence::new(tokens, tags)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    /// Surface string of a span: its tokens joined by single spaces.
    pub fn span_surface(&self, span: &EntitySpan) -> String {
        self.tokens[span.start..=span.end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "BIO")]
    Bio,
    #[serde(rename = "BIOES")]
    Bioes,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Bio => write!(f, "BIO"),
            SchemeKind::Bioes => write!(f, "BIOES"),
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<SchemeKind> {
        match s.to_ascii_uppercase().as_str() {
            "BIO" | "IOB2" => Ok(SchemeKind::Bio),
            "BIOES" | "IOBES" => Ok(SchemeKind::Bioes),
            _ => Err(Error::Config(format!("unknown tag scheme {s:?}"))),
        }
    }
}

/// A tag scheme. An empty label list accepts any entity type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagScheme {
    pub kind: SchemeKind,
    pub labels: Vec<String>,
}

impl TagScheme {
    pub fn open(kind: SchemeKind) -> TagScheme {
        TagScheme {
            kind,
            labels: Vec::new(),
        }
    }

    pub fn with_labels<S: Into<String>>(
        kind: SchemeKind,
        labels: impl IntoIterator<Item = S>,
    ) -> TagScheme {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort();
        labels.dedup();
        TagScheme { kind, labels }
    }

    pub fn parse(&self, tag: &str) -> Result<Tag> {
        let parsed = Tag::parse(tag)?;
        let allowed = match self.kind {
            SchemeKind::Bio => matches!(parsed.prefix, Prefix::B | Prefix::I | Prefix::O),
            SchemeKind::Bioes => true,
        };
        if !allowed {
            return Err(Error::Scheme(format!("tag {tag:?} not valid under {}", self.kind)));
        }
        if parsed.prefix != Prefix::O
            && !self.labels.is_empty()
            && !self.labels.iter().any(|l| *l == parsed.label)
        {
            return Err(Error::Scheme(format!("unknown entity type in {tag:?}")));
        }
        Ok(parsed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prefix {
    B,
    I,
    O,
    E,
    S,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tag {
    pub prefix: Prefix,
    /// Entity type; empty for `O`.
    pub label: String,
}

impl Tag {
    pub fn parse(tag: &str) -> Result<Tag> {
        if tag == "O" {
            return Ok(Tag {
                prefix: Prefix::O,
                label: String::new(),
            });
        }
        let (p, label) = tag
            .split_once('-')
            .ok_or_else(|| Error::Scheme(format!("malformed tag {tag:?}")))?;
        let prefix = match p {
            "B" => Prefix::B,
            "I" => Prefix::I,
            "E" => Prefix::E,
            "S" => Prefix::S,
            _ => return Err(Error::Scheme(format!("malformed tag {tag:?}"))),
        };
        if label.is_empty() {
            return Err(Error::Scheme(format!("missing entity type in {tag:?}")));
        }
        Ok(Tag {
            prefix,
            label: label.to_string(),
        })
    }

    fn lenient(tag: &str) -> Tag {
        Tag::parse(tag).unwrap_or(Tag {
            prefix: Prefix::O,
            label: String::new(),
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.prefix {
            Prefix::B => "B",
            Prefix::I => "I",
            Prefix::O => return write!(f, "O"),
            Prefix::E => "E",
            Prefix::S => "S",
        };
        write!(f, "{p}-{}", self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    #[serde(rename = "type")]
    pub label: String,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

impl EntitySpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> EntitySpan {
        EntitySpan {
            label: label.into(),
            start,
            end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    #[default]
    Strict,
    Repair,
}

/// Checks that a tag sequence is well formed under the scheme.
pub fn validate_tags<S: AsRef<str>>(tags: &[S], scheme: &TagScheme) -> Result<()> {
    let mut prev: Option<Tag> = None;
    for (i, raw) in tags.iter().enumerate() {
        let tag = scheme.parse(raw.as_ref())?;
        let open = prev
            .as_ref()
            .filter(|p| matches!(p.prefix, Prefix::B | Prefix::I));
        let ok = match (scheme.kind, tag.prefix) {
            (_, Prefix::O) | (_, Prefix::B) | (SchemeKind::Bioes, Prefix::S) => {
                scheme.kind == SchemeKind::Bio || open.is_none()
            }
            (_, Prefix::I) | (SchemeKind::Bioes, Prefix::E) => {
                open.is_some_and(|p| p.label == tag.label)
            }
            _ => false,
        };
        if !ok {
            return Err(Error::Scheme(format!(
                "invalid {} transition at position {i}: {:?} after {}",
                scheme.kind,
                raw.as_ref(),
                prev.map_or("<start>".to_string(), |p| p.to_string())
            )));
        }
        prev = Some(tag);
    }
    if scheme.kind == SchemeKind::Bioes {
        if let Some(p) = prev.filter(|p| matches!(p.prefix, Prefix::B | Prefix::I)) {
            return Err(Error::Scheme(format!("unterminated BIOES span ending in {p}")));
        }
    }
    Ok(())
}

fn end_of_chunk(prev: &Tag, cur: &Tag) -> bool {
    use Prefix::*;
    match (prev.prefix, cur.prefix) {
        (O, _) => false,
        (E, _) | (S, _) => true,
        (B, B | S | O) | (I, B | S | O) => true,
        _ => prev.label != cur.label,
    }
}

fn start_of_chunk(prev: &Tag, cur: &Tag) -> bool {
    use Prefix::*;
    match (prev.prefix, cur.prefix) {
        (_, O) => false,
        (_, B | S) => true,
        (E | S | O, E | I) => true,
        _ => prev.label != cur.label,
    }
}

/// Extracts chunks with conlleval semantics (IOBES-aware). Accepts any
/// sequence, including malformed ones; unparseable tags are read as `O`.
pub fn chunk_spans<S: AsRef<str>>(tags: &[S]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut prev = Tag::lenient("O");
    let mut open: Option<(String, usize)> = None;
    for (i, raw) in tags.iter().enumerate() {
        let cur = Tag::lenient(raw.as_ref());
        if end_of_chunk(&prev, &cur) {
            if let Some((label, start)) = open.take() {
                spans.push(EntitySpan::new(label, start, i - 1));
            }
        }
        if start_of_chunk(&prev, &cur) {
            open = Some((cur.label.clone(), i));
        }
        prev = cur;
    }
    if let Some((label, start)) = open {
        spans.push(EntitySpan::new(label, start, tags.len() - 1));
    }
    spans
}

/// Maximal entity spans of a valid tag sequence, left to right.
pub fn tags_to_spans<S: AsRef<str>>(tags: &[S], scheme: &TagScheme) -> Result<Vec<EntitySpan>> {
    validate_tags(tags, scheme)?;
    Ok(chunk_spans(tags))
}

/// Renders non-overlapping spans as a tag sequence of length `n`.
pub fn spans_to_tags(spans: &[EntitySpan], n: usize, kind: SchemeKind) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); n];
    let mut covered = vec![false; n];
    for s in spans {
        if s.start > s.end || s.end >= n {
            return Err(Error::Scheme(format!(
                "span {}({},{}) out of range for length {n}",
                s.label, s.start, s.end
            )));
        }
        for i in s.start..=s.end {
            if std::mem::replace(&mut covered[i], true) {
                return Err(Error::Scheme(format!("overlapping span at position {i}")));
            }
            let prefix = match kind {
                SchemeKind::Bio if i == s.start => "B",
                SchemeKind::Bio => "I",
                SchemeKind::Bioes if s.start == s.end => "S",
                SchemeKind::Bioes if i == s.start => "B",
                SchemeKind::Bioes if i == s.end => "E",
                SchemeKind::Bioes => "I",
            };
            tags[i] = format!("{prefix}-{}", s.label);
        }
    }
    Ok(tags)
}

pub fn bio_to_bioes<S: AsRef<str>>(tags: &[S]) -> Result<Vec<String>> {
    let spans = tags_to_spans(tags, &TagScheme::open(SchemeKind::Bio))?;
    spans_to_tags(&spans, tags.len(), SchemeKind::Bioes)
}

pub fn bioes_to_bio<S: AsRef<str>>(tags: &[S]) -> Result<Vec<String>> {
    let spans = tags_to_spans(tags, &TagScheme::open(SchemeKind::Bioes))?;
    spans_to_tags(&spans, tags.len(), SchemeKind::Bio)
}

/// Rewrites a possibly malformed sequence into a valid one with the same
/// conlleval chunks; e.g. a bare `I-X` opening a span becomes `B-X`.
pub fn repair_tags<S: AsRef<str>>(tags: &[S], kind: SchemeKind) -> Vec<String> {
    spans_to_tags(&chunk_spans(tags), tags.len(), kind)
        .expect("conlleval chunks never overlap")
}

/// Converts a sentence's tags from `kind` to BIOES.
pub fn to_bioes(sentence: &LabeledSentence, kind: SchemeKind) -> Result<LabeledSentence> {
    let tags = match kind {
        SchemeKind::Bio => bio_to_bioes(&sentence.tags)?,
        SchemeKind::Bioes => {
            validate_tags(&sentence.tags, &TagScheme::open(SchemeKind::Bioes))?;
            sentence.tags.clone()
        }
    };
    LabeledSentence::new(sentence.tokens.clone(), tags)
}

pub fn read_conll(
    path: impl AsRef<Path>,
    column: usize,
    scheme: &TagScheme,
    mode: ReadMode,
) -> Result<Vec<LabeledSentence>> {
    let text = std::fs::read_to_string(path)?;
    parse_conll(&text, column, scheme, mode)
}

/// Parses CoNLL text: token in column 0, tag in `column`, fields separated by
/// whitespace runs, sentences separated by blank lines.
pub fn parse_conll(
    text: &str,
    column: usize,
    scheme: &TagScheme,
    mode: ReadMode,
) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut first_line = 0;

    let mut flush = |tokens: &mut Vec<Token>, tags: &mut Vec<String>, line: usize| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let tags_out = match mode {
            ReadMode::Strict => {
                validate_tags(tags, scheme).map_err(|e| match e {
                    Error::Scheme(msg) => Error::Scheme(format!("sentence at line {line}: {msg}")),
                    e => e,
                })?;
                std::mem::take(tags)
            }
            ReadMode::Repair => {
                for t in tags.iter() {
                    scheme.parse(t).map_err(|e| match e {
                        Error::Scheme(msg) => {
                            Error::Scheme(format!("sentence at line {line}: {msg}"))
                        }
                        e => e,
                    })?;
                }
                let fixed = repair_tags(tags, scheme.kind);
                tags.clear();
                fixed
            }
        };
        out.push(LabeledSentence::new(std::mem::take(tokens), tags_out)?);
        Ok(())
    };

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            flush(&mut tokens, &mut tags, first_line)?;
            continue;
        }
        if fields.len() <= column {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least {} fields, found {}", column + 1, fields.len()),
            });
        }
        if tokens.is_empty() {
            first_line = lineno;
        }
        tokens.push(Token::new(fields[0]).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?);
        tags.push(fields[column].to_string());
    }
    flush(&mut tokens, &mut tags, first_line)?;
    Ok(out)
}

/// Writes two-column CoNLL (token, tag) with a blank line after each sentence.
pub fn write_conll<W: Write>(mut w: W, sentences: &[LabeledSentence]) -> Result<()> {
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            writeln!(w, "{} {}", tok.surface, tag)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    #[serde(rename = "sentences")]
    pub n_sentences: usize,
    #[serde(rename = "entities")]
    pub n_entities: usize,
    /// Percentage of entity occurrences whose surface never appears as an
    /// entity surface in the reference training split.
    pub pct_unseen: Option<f64>,
}

/// Set of entity surface strings (case-sensitive, type ignored).
pub fn entity_surfaces(data: &[LabeledSentence], scheme: &TagScheme) -> Result<HashSet<String>> {
    let mut set = HashSet::new();
    for s in data {
        for span in tags_to_spans(&s.tags, scheme)? {
            set.insert(s.span_surface(&span));
        }
    }
    Ok(set)
}

pub fn corpus_stats(
    data: &[LabeledSentence],
    train_ref: Option<&[LabeledSentence]>,
    scheme: &TagScheme,
) -> Result<CorpusStats> {
    let seen = train_ref.map(|t| entity_surfaces(t, scheme)).transpose()?;
    let mut n_entities = 0;
    let mut unseen = 0;
    for s in data {
        for span in tags_to_spans(&s.tags, scheme)? {
            n_entities += 1;
            if let Some(seen) = &seen {
                if !seen.contains(&s.span_surface(&span)) {
                    unseen += 1;
                }
            }
        }
    }
    let pct_unseen = seen.map(|_| {
        if n_entities == 0 {
            0.0
        } else {
            100.0 * unseen as f64 / n_entities as f64
        }
    });
    Ok(CorpusStats {
        n_sentences: data.len(),
        n_entities,
        pct_unseen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bio() -> TagScheme {
        TagScheme::open(SchemeKind::Bio)
    }

    fn bioes() -> TagScheme {
        TagScheme::open(SchemeKind::Bioes)
    }

    #[test]
    fn reads_two_sentences() {
        let data = parse_conll("EU B-ORG\n\nhi O\n", 1, &bio(), ReadMode::Strict).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].len(), 1);
        assert_eq!(data[1].len(), 1);
        assert_eq!(data[0].tags, vec!["B-ORG"]);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_conll("", 1, &bio(), ReadMode::Strict).unwrap().is_empty());
        assert!(parse_conll("\n\n  \n", 1, &bio(), ReadMode::Strict).unwrap().is_empty());
    }

    #[test]
    fn bare_inside_tag_strict_vs_repair() {
        let text = "Bob I-PER\nsays O\n";
        let err = parse_conll(text, 1, &bio(), ReadMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Scheme(_)), "{err}");
        let data = parse_conll(text, 1, &bio(), ReadMode::Repair).unwrap();
        assert_eq!(data[0].tags, vec!["B-PER", "O"]);
    }

    #[test]
    fn short_line_reports_line_number() {
        let err = parse_conll("a O\nb\n", 1, &bio(), ReadMode::Strict).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn configurable_tag_column() {
        let data =
            parse_conll("Paris NNP B-LOC\nis VBZ O\n", 2, &bio(), ReadMode::Strict).unwrap();
        assert_eq!(data[0].tags, vec!["B-LOC", "O"]);
        assert_eq!(data[0].tokens[0].normalized, "paris");
    }

    #[test]
    fn label_set_is_enforced() {
        let scheme = TagScheme::with_labels(SchemeKind::Bio, ["PER"]);
        assert!(parse_conll("x B-LOC\n", 1, &scheme, ReadMode::Strict).is_err());
        assert!(parse_conll("x B-PER\n", 1, &scheme, ReadMode::Strict).is_ok());
    }

    #[test]
    fn bio_to_bioes_examples() {
        assert_eq!(bio_to_bioes(&["B-PER"]).unwrap(), vec!["S-PER"]);
        assert_eq!(
            bio_to_bioes(&["B-PER", "I-PER", "O"]).unwrap(),
            vec!["B-PER", "E-PER", "O"]
        );
        assert_eq!(bio_to_bioes(&["O", "O"]).unwrap(), vec!["O", "O"]);
        assert_eq!(
            bio_to_bioes(&["B-A", "I-A", "I-A", "B-A"]).unwrap(),
            vec!["B-A", "I-A", "E-A", "S-A"]
        );
        assert!(bio_to_bioes(&["O", "I-PER"]).is_err());
        assert!(bio_to_bioes(&["S-PER"]).is_err());
    }

    #[test]
    fn spans_examples() {
        assert_eq!(
            tags_to_spans(&["B-LOC", "E-LOC"], &bioes()).unwrap(),
            vec![EntitySpan::new("LOC", 0, 1)]
        );
        assert_eq!(
            tags_to_spans(&["S-PER", "O", "S-PER"], &bioes()).unwrap(),
            vec![EntitySpan::new("PER", 0, 0), EntitySpan::new("PER", 2, 2)]
        );
        assert!(tags_to_spans(&["B-LOC", "O"], &bioes()).is_err());
        assert!(tags_to_spans(&["B-LOC", "E-PER"], &bioes()).is_err());
        assert!(tags_to_spans(&["B-LOC", "B-LOC"], &bioes()).is_err());
        assert!(tags_to_spans(&["B-LOC"], &bioes()).is_err());
    }

    #[test]
    fn chunk_spans_follow_conlleval() {
        // Type change inside a span opens a new chunk.
        assert_eq!(
            chunk_spans(&["B-PER", "I-LOC"]),
            vec![EntitySpan::new("PER", 0, 0), EntitySpan::new("LOC", 1, 1)]
        );
        assert_eq!(chunk_spans(&["O", "I-PER", "I-PER"]), vec![EntitySpan::new("PER", 1, 2)]);
        assert_eq!(
            chunk_spans(&["B-PER", "E-PER", "B-PER", "E-PER"]),
            vec![EntitySpan::new("PER", 0, 1), EntitySpan::new("PER", 2, 3)]
        );
        assert_eq!(
            chunk_spans(&["S-PER", "S-PER"]),
            vec![EntitySpan::new("PER", 0, 0), EntitySpan::new("PER", 1, 1)]
        );
        assert_eq!(chunk_spans(&["B-PER", "I-PER"]), vec![EntitySpan::new("PER", 0, 1)]);
    }

    #[test]
    fn stats_counts_and_unseen() {
        let train = vec![LabeledSentence::from_pairs(&["Bob", "x"], &["B-PER", "O"]).unwrap()];
        let dev_seen = vec![LabeledSentence::from_pairs(&["hi", "Bob"], &["O", "B-PER"]).unwrap()];
        let s = corpus_stats(&dev_seen, Some(&train), &bio()).unwrap();
        assert_eq!(s.pct_unseen, Some(0.0));
        let dev_unseen = vec![LabeledSentence::from_pairs(&["xyz"], &["B-ORG"]).unwrap()];
        let s = corpus_stats(&dev_unseen, Some(&train), &bio()).unwrap();
        assert_eq!(s.pct_unseen, Some(100.0));
        assert_eq!(s.n_entities, 1);
        let s = corpus_stats(&train, None, &bio()).unwrap();
        assert_eq!((s.n_sentences, s.n_entities, s.pct_unseen), (1, 1, None));
        // Case-sensitive surface identity.
        let dev_case = vec![LabeledSentence::from_pairs(&["bob"], &["B-PER"]).unwrap()];
        let s = corpus_stats(&dev_case, Some(&train), &bio()).unwrap();
        assert_eq!(s.pct_unseen, Some(100.0));
    }

    #[test]
    fn stats_json_layout() {
        let s = CorpusStats {
            n_sentences: 3,
            n_entities: 2,
            pct_unseen: Some(50.0),
        };
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"sentences":3,"entities":2,"pct_unseen":50.0}"#
        );
    }

    #[test]
    fn write_round_trip() {
        let text = "EU B-ORG\nrejects O\n\nhi O\n\n";
        let data = parse_conll(text, 1, &bio(), ReadMode::Strict).unwrap();
        let mut buf = Vec::new();
        write_conll(&mut buf, &data).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn token_rejects_whitespace() {
        assert!(Token::new("a b").is_err());
        assert!(Token::new("").is_err());
    }

    fn bio_sequence() -> impl Strategy<Value = Vec<String>> {
        // Random valid BIO: each position either O, B-X, or continues the open span.
        proptest::collection::vec((0u8..4, 0u8..3), 1..20).prop_map(|steps| {
            let mut out: Vec<String> = Vec::new();
            let mut open: Option<u8> = None;
            for (action, label) in steps {
                let name = ["PER", "LOC", "ORG"][label as usize];
                match (action, open) {
                    (0, _) => {
                        out.push("O".into());
                        open = None;
                    }
                    (1, Some(l)) | (2, Some(l)) => {
                        out.push(format!("I-{}", ["PER", "LOC", "ORG"][l as usize]));
                    }
                    _ => {
                        out.push(format!("B-{name}"));
                        open = Some(label);
                    }
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn bioes_conversion_preserves_spans(tags in bio_sequence()) {
            let converted = bio_to_bioes(&tags).unwrap();
            prop_assert_eq!(
                tags_to_spans(&converted, &bioes()).unwrap(),
                tags_to_spans(&tags, &bio()).unwrap()
            );
        }

        #[test]
        fn stats_entities_equal_span_total(seqs in proptest::collection::vec(bio_sequence(), 0..6)) {
            let data: Vec<LabeledSentence> = seqs
                .iter()
                .map(|t| {
                    let toks: Vec<String> = (0..t.len()).map(|i| format!("w{i}")).collect();
                    LabeledSentence::from_pairs(&toks, t).unwrap()
                })
                .collect();
            let total: usize = data
                .iter()
                .map(|s| tags_to_spans(&s.tags, &bio()).unwrap().len())
                .sum();
            prop_assert_eq!(corpus_stats(&data, None, &bio()).unwrap().n_entities, total);
        }
    }
}
