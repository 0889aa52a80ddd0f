use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_spans, EntitySpan, LabeledSentence};
use crate::error::{Error, Result};

/// Precision, recall and F1 with the counts they come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Prf {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (precision, recall) = (ratio(correct, predicted), ratio(correct, gold));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnseenRecall {
    /// Gold entity occurrences whose surface never occurs as a training entity.
    pub count: usize,
    pub correct: usize,
    /// `None` when `count` is zero.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Prf,
    pub per_type: BTreeMap<String, Prf>,
    pub tokens: usize,
    pub token_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unseen: Option<UnseenRecall>,
}

fn check_aligned<S: AsRef<str>>(gold: &[LabeledSentence], pred: &[Vec<S>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!("{} gold sentences, {} predicted", gold.len(), pred.len())));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Alignment(format!(
                "sentence {i}: {} gold tokens, {} predicted",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Entity-level micro scores by exact span and type match, chunking both
/// sides the way conlleval does, plus tag-level accuracy.
pub fn conlleval_score<S: AsRef<str>>(gold: &[LabeledSentence], pred: &[Vec<S>]) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let (mut tokens, mut tags_right) = (0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gs = chunk_spans(&g.tags);
        let ps = chunk_spans(p);
        let gset: HashSet<&EntitySpan> = gs.iter().collect();
        for s in &gs {
            counts.entry(s.label.clone()).or_default().0 += 1;
        }
        for s in &ps {
            let c = counts.entry(s.label.clone()).or_default();
            c.1 += 1;
            if gset.contains(s) {
                c.2 += 1;
            }
        }
        tokens += g.len();
        tags_right += g.tags.iter().zip(p).filter(|(a, b)| a.as_str() == b.as_ref()).count();
    }
    let (mut tg, mut tp, mut tc) = (0, 0, 0);
    let per_type = counts
        .into_iter()
        .map(|(label, (g, p, c))| {
            tg += g;
            tp += p;
            tc += c;
            (label, Prf::from_counts(g, p, c))
        })
        .collect();
    Ok(EvalReport {
        overall: Prf::from_counts(tg, tp, tc),
        per_type,
        tokens,
        token_accuracy: if tokens == 0 { 0.0 } else { tags_right as f64 / tokens as f64 },
        unseen: None,
    })
}

/// Recall on gold entities whose surface string never appears as an entity
/// in `train` (type ignored, case-sensitive).
pub fn unseen_recall<S: AsRef<str>>(
    train: &[LabeledSentence],
    eval: &[LabeledSentence],
    pred: &[Vec<S>],
) -> Result<UnseenRecall> {
    check_aligned(eval, pred)?;
    let seen: BTreeSet<String> = train
        .iter()
        .flat_map(|s| chunk_spans(&s.tags).into_iter().map(|sp| s.span_surface(&sp)))
        .collect();
    let (mut count, mut correct) = (0, 0);
    for (g, p) in eval.iter().zip(pred) {
        let ps: HashSet<EntitySpan> = chunk_spans(p).into_iter().collect();
        for span in chunk_spans(&g.tags) {
            if !seen.contains(&g.span_surface(&span)) {
                count += 1;
                correct += usize::from(ps.contains(&span));
            }
        }
    }
    Ok(UnseenRecall {
        count,
        correct,
        recall: (count > 0).then(|| correct as f64 / count as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(tags: &[&str]) -> LabeledSentence {
        let toks: Vec<String> = (0..tags.len()).map(|i| format!("w{i}")).collect();
        LabeledSentence::from_pairs(&toks, tags).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![sent(&["B-PER", "E-PER", "O", "S-LOC"])];
        let r = conlleval_score(&g, &[g[0].tags.clone()]).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.token_accuracy, 1.0);
    }

    #[test]
    fn extra_prediction_halves_precision() {
        // gold PER(1,2); pred PER(1,2) and LOC(4,4)
        let g = vec![sent(&["O", "B-PER", "E-PER", "O", "O"])];
        let p = vec![vec!["O", "B-PER", "E-PER", "O", "S-LOC"]];
        let r = conlleval_score(&g, &p).unwrap();
        assert_eq!(r.overall.precision, 0.5);
        assert_eq!(r.overall.recall, 1.0);
        assert!((r.overall.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_type["LOC"].predicted, 1);
        assert_eq!(r.per_type["LOC"].gold, 0);
    }

    #[test]
    fn all_outside_prediction() {
        let g = vec![sent(&["S-PER", "O"])];
        let r = conlleval_score(&g, &[vec!["O", "O"]]).unwrap();
        assert_eq!((r.overall.recall, r.overall.f1, r.overall.precision), (0.0, 0.0, 0.0));
        assert_eq!(r.token_accuracy, 0.5);
    }

    #[test]
    fn misaligned_input_is_rejected() {
        let g = vec![sent(&["O", "O"])];
        assert!(matches!(conlleval_score(&g, &[vec!["O"]]), Err(Error::Alignment(_))));
        assert!(matches!(conlleval_score::<&str>(&g, &[]), Err(Error::Alignment(_))));
    }

    #[test]
    fn unseen_entities() {
        let train = vec![LabeledSentence::from_pairs(&["Ann", "runs"], &["S-PER", "O"]).unwrap()];
        let eval = vec![LabeledSentence::from_pairs(&["Ann", "met", "Bob"], &["S-PER", "O", "S-PER"]).unwrap()];
        let r = unseen_recall(&train, &eval, &[vec!["S-PER", "O", "S-PER"]]).unwrap();
        assert_eq!((r.count, r.correct, r.recall), (1, 1, Some(1.0)));
        let r = unseen_recall(&train, &eval, &[vec!["S-PER", "O", "O"]]).unwrap();
        assert_eq!(r.recall, Some(0.0));
        let r = unseen_recall(&train, &train, &[vec!["O", "O"]]).unwrap();
        assert_eq!((r.count, r.recall), (0, None));
    }
}
