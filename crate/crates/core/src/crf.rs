//! Linear-chain CRF: emission scores, log-partition by the forward
//! recursion, negative log-likelihood with exact marginal gradients, and
//! Viterbi decoding with optional BIOES transition constraints.

use crate::autodiff::{log_sum_exp, Graph, Tensor, Var};
use crate::corpus::{Prefix, Tag};
use crate::error::{shape_err, Error, Result};

/// Plain-value view of the CRF scoring parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfScores<'a> {
    /// `L × L`, row = previous tag, column = next tag.
    pub transitions: &'a [f64],
    pub start: &'a [f64],
    pub stop: &'a [f64],
}

impl CrfScores<'_> {
    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &Tensor) -> Result<(usize, usize)> {
        let l = self.num_tags();
        if self.stop.len() != l || self.transitions.len() != l * l {
            return Err(shape_err("crf", "inconsistent transition/start/stop sizes"));
        }
        if emissions.cols() != l {
            return Err(shape_err("crf", format!("emissions have {} tags, CRF has {l}", emissions.cols())));
        }
        let n = emissions.rows();
        if n == 0 {
            return Err(shape_err("crf", "empty sequence"));
        }
        Ok((n, l))
    }

    fn trans(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_tags() + to]
    }

    /// Score of one complete tag path.
    pub fn path_score(&self, emissions: &Tensor, path: &[usize]) -> Result<f64> {
        let (n, l) = self.check(emissions)?;
        if path.len() != n {
            return Err(Error::Alignment(format!("path length {} vs {n}", path.len())));
        }
        if let Some(bad) = path.iter().find(|&&y| y >= l) {
            return Err(shape_err("crf", format!("tag index {bad} out of {l}")));
        }
        // Same accumulation order as the forward recursion.
        let mut s = self.start[path[0]] + emissions.get(0, path[0]);
        for i in 1..n {
            s = s + self.trans(path[i - 1], path[i]) + emissions.get(i, path[i]);
        }
        Ok(s + self.stop[path[n - 1]])
    }
}

/// `s_i = W_c o_i + b_c` for every row of `o` (`n × d_o`); `w_c` is `L × d_o`.
pub fn emissions(o: &Tensor, w_c: &Tensor, b_c: &Tensor) -> Result<Tensor> {
    let (n, d) = (o.rows(), o.cols());
    let l = w_c.rows();
    if w_c.cols() != d || b_c.len() != l {
        return Err(shape_err("emissions", format!("o {n}x{d}, W_c {l}x{}, b_c {}", w_c.cols(), b_c.len())));
    }
    let mut out = Vec::with_capacity(n * l);
    for i in 0..n {
        for y in 0..l {
            let dot: f64 = o.row(i).iter().zip(w_c.row(y)).map(|(a, b)| a * b).sum();
            out.push(dot + b_c.data()[y]);
        }
    }
    Tensor::matrix(n, l, out)
}

fn forward_table(emissions: &Tensor, p: &CrfScores<'_>) -> Result<Vec<Vec<f64>>> {
    let (n, l) = p.check(emissions)?;
    let mut alpha = vec![(0..l).map(|y| p.start[y] + emissions.get(0, y)).collect::<Vec<_>>()];
    let mut buf = vec![0.0; l];
    for i in 1..n {
        let prev = &alpha[i - 1];
        let row = (0..l)
            .map(|y| {
                for (yp, b) in buf.iter_mut().enumerate() {
                    *b = prev[yp] + p.trans(yp, y);
                }
                log_sum_exp(&buf) + emissions.get(i, y)
            })
            .collect();
        alpha.push(row);
    }
    Ok(alpha)
}

fn backward_table(emissions: &Tensor, p: &CrfScores<'_>) -> Vec<Vec<f64>> {
    let (n, l) = (emissions.rows(), p.num_tags());
    let mut beta = vec![vec![0.0; l]; n];
    beta[n - 1] = p.stop.to_vec();
    let mut buf = vec![0.0; l];
    for i in (0..n - 1).rev() {
        for y in 0..l {
            for (yn, b) in buf.iter_mut().enumerate() {
                *b = p.trans(y, yn) + emissions.get(i + 1, yn) + beta[i + 1][yn];
            }
            beta[i][y] = log_sum_exp(&buf);
        }
    }
    beta
}

/// Log of the summed exponentiated scores of all `L^n` paths.
pub fn log_partition(emissions: &Tensor, p: &CrfScores<'_>) -> Result<f64> {
    let alpha = forward_table(emissions, p)?;
    let last = alpha.last().unwrap();
    let terminal: Vec<f64> = last.iter().zip(p.stop).map(|(a, s)| a + s).collect();
    Ok(log_sum_exp(&terminal))
}

/// `log Z - score(gold)`.
pub fn nll(emissions: &Tensor, gold: &[usize], p: &CrfScores<'_>) -> Result<f64> {
    let gold_score = p.path_score(emissions, gold)?;
    Ok(log_partition(emissions, p)? - gold_score)
}

/// NLL and its gradients with respect to emissions, transitions, start and stop.
pub struct NllGrad {
    pub loss: f64,
    pub d_emissions: Tensor,
    pub d_transitions: Tensor,
    pub d_start: Tensor,
    pub d_stop: Tensor,
}

/// Gradients are expected feature counts under the model minus the gold counts,
/// obtained from forward-backward marginals.
pub fn nll_with_grad(emissions: &Tensor, gold: &[usize], p: &CrfScores<'_>) -> Result<NllGrad> {
    let gold_score = p.path_score(emissions, gold)?;
    let (n, l) = p.check(emissions)?;
    let alpha = forward_table(emissions, p)?;
    let beta = backward_table(emissions, p);
    let terminal: Vec<f64> = alpha[n - 1].iter().zip(p.stop).map(|(a, s)| a + s).collect();
    let log_z = log_sum_exp(&terminal);

    let mut d_em = vec![0.0; n * l];
    for i in 0..n {
        for y in 0..l {
            d_em[i * l + y] = (alpha[i][y] + beta[i][y] - log_z).exp();
        }
        d_em[i * l + gold[i]] -= 1.0;
    }
    let mut d_tr = vec![0.0; l * l];
    for i in 1..n {
        for yp in 0..l {
            for y in 0..l {
                d_tr[yp * l + y] +=
                    (alpha[i - 1][yp] + p.trans(yp, y) + emissions.get(i, y) + beta[i][y] - log_z)
                        .exp();
            }
        }
        d_tr[gold[i - 1] * l + gold[i]] -= 1.0;
    }
    let mut d_start: Vec<f64> = (0..l)
        .map(|y| (p.start[y] + emissions.get(0, y) + beta[0][y] - log_z).exp())
        .collect();
    d_start[gold[0]] -= 1.0;
    let mut d_stop: Vec<f64> = (0..l)
        .map(|y| (alpha[n - 1][y] + p.stop[y] - log_z).exp())
        .collect();
    d_stop[gold[n - 1]] -= 1.0;

    Ok(NllGrad {
        loss: log_z - gold_score,
        d_emissions: Tensor::matrix(n, l, d_em)?,
        d_transitions: Tensor::matrix(l, l, d_tr)?,
        d_start: Tensor::row_vector(d_start),
        d_stop: Tensor::row_vector(d_stop),
    })
}

/// Graph handles of the CRF's trainable tensors.
#[derive(Debug, Clone, Copy)]
pub struct CrfVars {
    pub transitions: Var,
    pub start: Var,
    pub stop: Var,
}

/// Records the NLL of `gold` as a differentiable scalar node.
pub fn nll_node(g: &mut Graph<'_>, emissions: Var, vars: CrfVars, gold: &[usize]) -> Result<Var> {
    let result = {
        let p = CrfScores {
            transitions: g.value(vars.transitions).data(),
            start: g.value(vars.start).data(),
            stop: g.value(vars.stop).data(),
        };
        nll_with_grad(g.value(emissions), gold, &p)?
    };
    let reshape = |t: Tensor, like: &Tensor| Tensor::new(like.shape().to_vec(), t.into_data());
    let d_tr = reshape(result.d_transitions, g.value(vars.transitions))?;
    let d_start = reshape(result.d_start, g.value(vars.start))?;
    let d_stop = reshape(result.d_stop, g.value(vars.stop))?;
    g.custom_scalar(
        result.loss,
        vec![
            (emissions, result.d_emissions),
            (vars.transitions, d_tr),
            (vars.start, d_start),
            (vars.stop, d_stop),
        ],
    )
}

/// Allowed-transition structure of a BIOES label set; `-inf` marks a
/// forbidden move.
#[derive(Debug, Clone, PartialEq)]
pub struct BioesConstraints {
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl BioesConstraints {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> BioesConstraints {
        let tags: Vec<Option<Tag>> = labels.iter().map(|l| Tag::parse(l.as_ref()).ok()).collect();
        let l = tags.len();
        let mask = |ok: bool| if ok { 0.0 } else { f64::NEG_INFINITY };
        let opens = |t: &Option<Tag>| t.as_ref().is_some_and(|t| matches!(t.prefix, Prefix::B | Prefix::I));
        let begins = |t: &Option<Tag>| {
            t.as_ref().is_some_and(|t| matches!(t.prefix, Prefix::O | Prefix::B | Prefix::S))
        };
        let mut transitions = vec![0.0; l * l];
        for (a, ta) in tags.iter().enumerate() {
            for (b, tb) in tags.iter().enumerate() {
                let ok = if opens(ta) {
                    let (ta, tb) = (ta.as_ref().unwrap(), tb.as_ref());
                    tb.is_some_and(|tb| {
                        matches!(tb.prefix, Prefix::I | Prefix::E) && tb.label == ta.label
                    })
                } else {
                    begins(tb)
                };
                transitions[a * l + b] = mask(ok);
            }
        }
        BioesConstraints {
            transitions,
            start: tags.iter().map(|t| mask(begins(t))).collect(),
            stop: tags
                .iter()
                .map(|t| mask(t.as_ref().is_some_and(|t| matches!(t.prefix, Prefix::O | Prefix::E | Prefix::S))))
                .collect(),
        }
    }
}

/// Highest-scoring path. With `constraints`, forbidden BIOES moves are
/// excluded; if that leaves no path, decoding falls back to unconstrained.
pub fn viterbi(emissions: &Tensor, p: &CrfScores<'_>, constraints: Option<&BioesConstraints>) -> Result<Vec<usize>> {
    let (n, l) = p.check(emissions)?;
    let (trans, start, stop): (Vec<f64>, Vec<f64>, Vec<f64>) = match constraints {
        Some(c) => {
            if c.start.len() != l {
                return Err(shape_err("viterbi", "constraint size mismatch"));
            }
            (
                p.transitions.iter().zip(&c.transitions).map(|(a, b)| a + b).collect(),
                p.start.iter().zip(&c.start).map(|(a, b)| a + b).collect(),
                p.stop.iter().zip(&c.stop).map(|(a, b)| a + b).collect(),
            )
        }
        None => (p.transitions.to_vec(), p.start.to_vec(), p.stop.to_vec()),
    };

    let mut score: Vec<f64> = (0..l).map(|y| start[y] + emissions.get(0, y)).collect();
    let mut back = vec![vec![0usize; l]; n];
    for i in 1..n {
        let mut next = vec![f64::NEG_INFINITY; l];
        for y in 0..l {
            let mut best = (f64::NEG_INFINITY, 0);
            for yp in 0..l {
                let s = score[yp] + trans[yp * l + y];
                if s > best.0 {
                    best = (s, yp);
                }
            }
            next[y] = best.0 + emissions.get(i, y);
            back[i][y] = best.1;
        }
        score = next;
    }
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for y in 0..l {
        let s = score[y] + stop[y];
        if s > best.0 {
            best = (s, y);
        }
    }
    if best.1 == usize::MAX {
        if constraints.is_some() {
            return viterbi(emissions, p, None);
        }
        best.1 = 0;
    }
    let mut path = vec![best.1; n];
    for i in (1..n).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{GraphMode, ParameterStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Inst {
        em: Tensor,
        tr: Vec<f64>,
        st: Vec<f64>,
        sp: Vec<f64>,
    }

    impl Inst {
        fn random(n: usize, l: usize, rng: &mut ChaCha8Rng) -> Inst {
            let mut r = |k: usize| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
            Inst {
                em: Tensor::matrix(n, l, r(n * l)).unwrap(),
                tr: r(l * l),
                st: r(l),
                sp: r(l),
            }
        }

        fn scores(&self) -> CrfScores<'_> {
            CrfScores {
                transitions: &self.tr,
                start: &self.st,
                stop: &self.sp,
            }
        }
    }

    fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| (0..l).map(move |y| [p.clone(), vec![y]].concat()))
                .collect();
        }
        out
    }

    #[test]
    fn uniform_single_position() {
        let em = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let z = [0.0, 0.0];
        let tr = [0.0; 4];
        let p = CrfScores { transitions: &tr, start: &z, stop: &z };
        assert!((log_partition(&em, &p).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((nll(&em, &[1], &p).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn integer_scores_match_enumeration() {
        let em = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.0]).unwrap();
        let tr = [2.0, -1.0, 0.0, 1.0];
        let st = [1.0, 0.0];
        let sp = [0.0, -3.0];
        let p = CrfScores { transitions: &tr, start: &st, stop: &sp };
        let brute: Vec<f64> = all_paths(2, 2).iter().map(|q| p.path_score(&em, q).unwrap()).collect();
        let expect = brute.iter().map(|s| s.exp()).sum::<f64>().ln();
        assert!((log_partition(&em, &p).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn emission_shift_adds_n_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = Inst::random(4, 3, &mut rng);
        let base = log_partition(&inst.em, &inst.scores()).unwrap();
        let shifted = Tensor::matrix(4, 3, inst.em.data().iter().map(|x| x + 0.75).collect()).unwrap();
        let z = log_partition(&shifted, &inst.scores()).unwrap();
        assert!((z - base - 4.0 * 0.75).abs() < 1e-12);
    }

    #[test]
    fn dominant_gold_has_tiny_loss() {
        let em = Tensor::matrix(3, 3, vec![
            100.0, -100.0, -100.0, -100.0, 100.0, -100.0, -100.0, -100.0, 100.0,
        ])
        .unwrap();
        let tr = [0.0; 9];
        let z = [0.0; 3];
        let p = CrfScores { transitions: &tr, start: &z, stop: &z };
        assert!(nll(&em, &[0, 1, 2], &p).unwrap() < 1e-3);
    }

    #[test]
    fn single_label_loss_is_zero() {
        let em = Tensor::matrix(3, 1, vec![0.3, -1.2, 4.0]).unwrap();
        let p = CrfScores { transitions: &[0.5], start: &[1.0], stop: &[-2.0] };
        assert_eq!(nll(&em, &[0, 0, 0], &p).unwrap(), 0.0);
    }

    #[test]
    fn emissions_examples() {
        let o = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let w = Tensor::matrix(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let b = Tensor::vector(vec![0.25, -1.0]);
        let s = emissions(&o, &w, &b).unwrap();
        assert_eq!(s.data(), &[1.0 - 3.0 + 0.25, 3.0 - 1.0, 0.25, -1.0]);
        let zw = Tensor::zeros(&[2, 3]);
        let zb = Tensor::zeros(&[2]);
        assert!(emissions(&o, &zw, &zb).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(emissions(&o, &Tensor::zeros(&[2, 2]), &zb).is_err());
    }

    #[test]
    fn normalization_over_all_gold_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (n, l) in [(1, 3), (3, 3), (5, 4), (4, 2)] {
            let inst = Inst::random(n, l, &mut rng);
            let total: f64 = all_paths(n, l)
                .iter()
                .map(|q| (-nll(&inst.em, q, &inst.scores()).unwrap()).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "{total}");
        }
    }

    #[test]
    fn viterbi_matches_enumeration_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let (n, l) = (rng.gen_range(1..=4), rng.gen_range(1..=3));
            let inst = Inst::random(n, l, &mut rng);
            let p = inst.scores();
            let paths = all_paths(n, l);
            let scores: Vec<f64> = paths.iter().map(|q| p.path_score(&inst.em, q).unwrap()).collect();
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z = log_partition(&inst.em, &p).unwrap();
            assert!(scores.iter().all(|s| *s <= z + 1e-12));
            let v = viterbi(&inst.em, &p, None).unwrap();
            assert_eq!(p.path_score(&inst.em, &v).unwrap(), best);
            for q in &paths {
                assert!(nll(&inst.em, q, &p).unwrap() >= -1e-9);
            }
        }
    }

    #[test]
    fn argmax_per_position_without_transitions() {
        let em = Tensor::matrix(3, 3, vec![5.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 5.0, 0.0]).unwrap();
        let tr = [0.0; 9];
        let z = [0.0; 3];
        let p = CrfScores { transitions: &tr, start: &z, stop: &z };
        assert_eq!(viterbi(&em, &p, None).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn constraints_forbid_invalid_moves() {
        let labels = ["O", "B-PER", "I-PER", "E-PER", "S-PER", "B-LOC", "I-LOC", "E-LOC", "S-LOC"];
        let c = BioesConstraints::new(&labels);
        let idx = |t: &str| labels.iter().position(|l| *l == t).unwrap();
        let allowed = |a: &str, b: &str| c.transitions[idx(a) * labels.len() + idx(b)] == 0.0;
        assert!(!allowed("B-PER", "B-LOC"));
        assert!(!allowed("O", "I-PER"));
        assert!(!allowed("B-PER", "E-LOC"));
        assert!(allowed("B-PER", "E-PER"));
        assert!(allowed("E-PER", "S-LOC"));
        assert!(c.start[idx("I-PER")].is_infinite());
        assert!(c.stop[idx("B-PER")].is_infinite());
        assert_eq!(c.stop[idx("S-LOC")], 0.0);
    }

    #[test]
    fn graph_node_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, l) = (4, 3);
        let gold = [2, 0, 1, 1];
        let mut store = ParameterStore::new();
        let em = store.add("em", Tensor::uniform(&[n, l], -1.0, 1.0, &mut rng)).unwrap();
        let tr = store.add("tr", Tensor::uniform(&[l, l], -1.0, 1.0, &mut rng)).unwrap();
        let st = store.add("st", Tensor::uniform(&[l], -1.0, 1.0, &mut rng)).unwrap();
        let sp = store.add("sp", Tensor::uniform(&[l], -1.0, 1.0, &mut rng)).unwrap();
        let loss_of = |s: &ParameterStore| {
            let p = CrfScores {
                transitions: s.value(tr).data(),
                start: s.value(st).data(),
                stop: s.value(sp).data(),
            };
            nll(s.value(em), &gold, &p).unwrap()
        };
        let mut g = Graph::new(&store, GraphMode::Eval);
        let vars = CrfVars { transitions: g.param(tr), start: g.param(st), stop: g.param(sp) };
        let ev = g.param(em);
        let loss = nll_node(&mut g, ev, vars, &gold).unwrap();
        assert!((g.value(loss).item() - loss_of(&store)).abs() < 1e-12);
        let grads = g.backward(loss).unwrap();
        let h = 1e-5;
        for id in [em, tr, st, sp] {
            let a = grads.get(id);
            for k in 0..a.len() {
                let mut plus = store.clone();
                plus.value_mut(id).data_mut()[k] += h;
                let mut minus = store.clone();
                minus.value_mut(id).data_mut()[k] -= h;
                let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let rel = (a.data()[k] - num).abs() / a.data()[k].abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-4, "{} {k}: {} vs {num}", store.name(id), a.data()[k]);
            }
        }
    }
}
