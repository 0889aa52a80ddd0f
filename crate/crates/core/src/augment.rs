//! Semantic augmentation: each token's similar words are mapped to trainable
//! vectors and combined, either by attention against the token's hidden
//! state or by plain summation.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParameterStore, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// Trainable vectors for every word that occurs as a neighbor.
#[derive(Debug, Clone)]
pub struct AugTable {
    id: ParamId,
    words: Vec<String>,
    rows: HashMap<String, usize>,
}

pub const AUG_PARAM: &str = "augment.table";

impl AugTable {
    /// Rows initialized uniformly in (-0.1, 0.1).
    pub fn new(store: &mut ParameterStore, words: Vec<String>, dim: usize, rng: &mut impl Rng) -> Result<AugTable> {
        // Keep at least one row so the table is a valid matrix.
        let n = words.len().max(1);
        let id = store.add(AUG_PARAM, Tensor::uniform(&[n, dim], -0.1, 0.1, rng))?;
        Ok(AugTable::with_id(id, words))
    }

    pub fn bind(store: &ParameterStore, words: Vec<String>, dim: usize) -> Result<AugTable> {
        let id = store
            .id(AUG_PARAM)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {AUG_PARAM}")))?;
        let shape = store.value(id).shape();
        if shape[1] != dim || shape[0] < words.len() {
            return Err(Error::Format(format!("augmentation table shape {shape:?} does not fit vocabulary")));
        }
        Ok(AugTable::with_id(id, words))
    }

    fn with_id(id: ParamId, words: Vec<String>) -> AugTable {
        let rows = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        AugTable { id, words, rows }
    }

    pub fn param(&self) -> ParamId {
        self.id
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        self.rows.get(word).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumMode {
    Sum,
    Mean,
}

/// Attention of one hidden state `h` (`1 × d`) over neighbor rows (`m × d`):
/// `p = softmax(rows · hᵀ)`, `v = p · rows`. Returns `(v, p)`.
pub fn attend(g: &mut Graph<'_>, h: Var, rows: Var) -> Result<(Var, Var)> {
    let ((hr, d), (_, rd)) = (g.shape(h), g.shape(rows));
    if hr != 1 || d != rd {
        return Err(shape_err("attend", format!("h {hr}x{d}, neighbors width {rd}")));
    }
    let scores = g.matmul_nt(h, rows)?;
    let p = g.softmax(scores);
    let v = g.matmul(p, rows)?;
    Ok((v, p))
}

/// Unweighted combination of neighbor rows (`m × d` → `1 × d`).
pub fn direct_sum(g: &mut Graph<'_>, rows: Var, mode: SumMode) -> Result<Var> {
    let (m, _) = g.shape(rows);
    let weights = match mode {
        SumMode::Sum => 1.0,
        SumMode::Mean => 1.0 / m as f64,
    };
    let ones = g.constant(Tensor::filled(&[1, m], weights));
    g.matmul(ones, rows)
}

/// How the neighbor vectors of a token are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Attentive,
    Direct(SumMode),
}

/// Output of augmenting a whole sentence.
pub struct Augmentation {
    /// `n × d`; zero rows for tokens without neighbors.
    pub v: Var,
    /// Attention weights per token (`1 × m`), when attentive and non-empty.
    pub weights: Vec<Option<Var>>,
}

/// Augments every token. `neighbor_rows[i]` lists the table rows of token
/// `i`'s neighbors, in neighbor order.
pub fn augment_sentence(
    g: &mut Graph<'_>,
    table: &AugTable,
    h: Var,
    neighbor_rows: &[Vec<usize>],
    combine: Combine,
) -> Result<Augmentation> {
    let (n, d) = g.shape(h);
    if neighbor_rows.len() != n {
        return Err(shape_err("augment", format!("{} neighbor lists for {n} tokens", neighbor_rows.len())));
    }
    let mut rows_out = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (i, ids) in neighbor_rows.iter().enumerate() {
        if ids.is_empty() {
            rows_out.push(g.constant(Tensor::zeros(&[1, d])));
            weights.push(None);
            continue;
        }
        let rows = g.param_rows(table.param(), ids)?;
        match combine {
            Combine::Attentive => {
                let hi = g.select_rows(h, &[i])?;
                let (v, p) = attend(g, hi, rows)?;
                rows_out.push(v);
                weights.push(Some(p));
            }
            Combine::Direct(mode) => {
                rows_out.push(direct_sum(g, rows, mode)?);
                weights.push(None);
            }
        }
    }
    Ok(Augmentation {
        v: g.concat_rows(&rows_out)?,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GraphMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn attend_values(h: &[f64], rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store, GraphMode::Eval);
        let hv = g.constant(Tensor::row_vector(h.to_vec()));
        let rv = g.constant(Tensor::matrix(rows.len(), h.len(), rows.concat()).unwrap());
        let (v, p) = attend(&mut g, hv, rv).unwrap();
        (g.value(v).data().to_vec(), g.value(p).data().to_vec())
    }

    #[test]
    fn equal_scores_split_evenly() {
        let (_, p) = attend_values(&[1.0, 1.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn worked_softmax_example() {
        let (v, p) = attend_values(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let e = std::f64::consts::E;
        let p1 = e / (e + 1.0);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[0] - p1).abs() < 1e-15);
        assert!((v[0] - p1).abs() < 1e-15);
        assert!((v[1] - (1.0 - p1)).abs() < 1e-15);
    }

    #[test]
    fn single_neighbor_is_copied() {
        let (v, p) = attend_values(&[0.3, -2.0, 1.0], &[&[0.5, 0.25, -4.0]]);
        assert_eq!(p, vec![1.0]);
        assert_eq!(v, vec![0.5, 0.25, -4.0]);
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store, GraphMode::Eval);
        let h = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
        let rows = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(attend(&mut g, h, rows), Err(Error::Shape { .. })));
    }

    #[test]
    fn direct_sum_examples() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store, GraphMode::Eval);
        let rows = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let s = direct_sum(&mut g, rows, SumMode::Sum).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 1.0]);
        let m = direct_sum(&mut g, rows, SumMode::Mean).unwrap();
        assert_eq!(g.value(m).data(), &[0.5, 0.5]);
        let one = g.constant(Tensor::matrix(1, 3, vec![2.0, -1.0, 0.5]).unwrap());
        let s = direct_sum(&mut g, one, SumMode::Sum).unwrap();
        assert_eq!(g.value(s).data(), &[2.0, -1.0, 0.5]);
    }

    #[test]
    fn empty_neighbor_list_yields_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let table = AugTable::new(&mut store, vec!["a".into(), "b".into()], 3, &mut rng).unwrap();
        for combine in [Combine::Attentive, Combine::Direct(SumMode::Sum)] {
            let mut g = Graph::new(&store, GraphMode::Eval);
            let h = g.constant(Tensor::filled(&[2, 3], 0.5));
            let aug = augment_sentence(&mut g, &table, h, &[vec![], vec![0, 1]], combine).unwrap();
            assert_eq!(g.value(aug.v).row(0), &[0.0, 0.0, 0.0]);
            assert!(aug.weights[0].is_none());
        }
    }

    #[test]
    fn weights_are_a_distribution_and_v_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = rng.gen_range(1..12);
            let d = rng.gen_range(1..6);
            let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let (v, p) = attend_values(&h, &refs);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|x| *x > 0.0 && *x < 1.0 || m == 1));
            for c in 0..d {
                let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                assert!(v[c] >= lo - 1e-12 && v[c] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn shift_invariance() {
        // An extra coordinate equal for all rows adds the same constant to every score.
        let h = [0.4, -1.0, 2.0];
        let rows: [&[f64]; 3] = [&[0.1, 0.2, 0.0], &[-0.5, 0.3, 0.0], &[0.9, -0.4, 0.0]];
        let (_, p) = attend_values(&h, &rows);
        let shifted: [&[f64]; 3] = [&[0.1, 0.2, 1.5], &[-0.5, 0.3, 1.5], &[0.9, -0.4, 1.5]];
        let (_, q) = attend_values(&h, &shifted);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_reach_hidden_state_and_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let h_id = store.add("h", Tensor::uniform(&[1, 3], -1.0, 1.0, &mut rng)).unwrap();
        let table = AugTable::new(&mut store, vec!["a".into(), "b".into()], 3, &mut rng).unwrap();
        let probe = Tensor::uniform(&[1, 3], -1.0, 1.0, &mut rng);
        let loss_of = |s: &ParameterStore| -> (f64, Option<crate::autodiff::Gradients>) {
            let mut g = Graph::new(s, GraphMode::Eval);
            let h = g.param(h_id);
            let aug = augment_sentence(&mut g, &table, h, &[vec![0, 1]], Combine::Attentive).unwrap();
            let pr = g.constant(probe.clone());
            let prod = g.mul(aug.v, pr).unwrap();
            let loss = g.sum(prod);
            let val = g.value(loss).item();
            (val, Some(g.backward(loss).unwrap()))
        };
        let grads = loss_of(&store).1.unwrap();
        let h = 1e-5;
        for id in [h_id, table.param()] {
            let a = grads.get(id);
            for k in 0..a.len() {
                let mut plus = store.clone();
                plus.value_mut(id).data_mut()[k] += h;
                let mut minus = store.clone();
                minus.value_mut(id).data_mut()[k] -= h;
                let num = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * h);
                let rel = (a.data()[k] - num).abs() / a.data()[k].abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-4, "{} {k}: {} vs {num}", store.name(id), a.data()[k]);
                assert!(a.data()[k] != 0.0);
            }
        }
    }
}
