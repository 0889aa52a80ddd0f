use proptest::prelude::*;

use saner_core::corpus::{chunk_spans, LabeledSentence};
use saner_core::train_eval::conlleval_score;

fn tag() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("O".to_string()),
        (prop::sample::select(vec!["B", "I", "E", "S"]), prop::sample::select(vec!["PER", "LOC"]))
            .prop_map(|(p, t)| format!("{p}-{t}")),
    ]
}

fn pair() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    (1usize..12).prop_flat_map(|n| (prop::collection::vec(tag(), n), prop::collection::vec(tag(), n)))
}

fn sentence(tags: &[String]) -> LabeledSentence {
    let toks: Vec<String> = (0..tags.len()).map(|i| format!("t{i}")).collect();
    LabeledSentence::from_pairs(&toks, tags).unwrap()
}

proptest! {
    #[test]
    fn report_invariants(cases in prop::collection::vec(pair(), 1..6)) {
        let gold: Vec<LabeledSentence> = cases.iter().map(|(g, _)| sentence(g)).collect();
        let pred: Vec<Vec<String>> = cases.iter().map(|(_, p)| p.clone()).collect();
        let r = conlleval_score(&gold, &pred).unwrap();
        let o = r.overall;
        for x in [o.precision, o.recall, o.f1, r.token_accuracy] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if o.precision + o.recall > 0.0 {
            let f = 2.0 * o.precision * o.recall / (o.precision + o.recall);
            prop_assert!((o.f1 - f).abs() < 1e-12);
        } else {
            prop_assert_eq!(o.f1, 0.0);
        }
        let g: usize = gold.iter().map(|s| chunk_spans(&s.tags).len()).sum();
        prop_assert_eq!(o.gold, g);
        prop_assert_eq!(r.per_type.values().map(|t| t.correct).sum::<usize>(), o.correct);
        prop_assert!(o.correct <= o.gold.min(o.predicted));
    }

    #[test]
    fn self_score_is_perfect((g, _) in pair()) {
        let gold = vec![sentence(&g)];
        let r = conlleval_score(&gold, &[g.clone()]).unwrap();
        prop_assert_eq!(r.token_accuracy, 1.0);
        prop_assert_eq!(r.overall.correct, r.overall.gold);
    }
}
