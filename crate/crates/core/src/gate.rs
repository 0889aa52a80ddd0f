//! Gate fusion of context and augmented vectors, and the output projection.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParameterStore, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// `W_1`, `W_2` (`d × d`) and `b_g` (`d`).
#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    pub w1: ParamId,
    pub w2: ParamId,
    pub bias: ParamId,
}

impl GateParams {
    pub fn new(store: &mut ParameterStore, d: usize, rng: &mut impl Rng) -> Result<GateParams> {
        Ok(GateParams {
            w1: store.add("gate.w1", Tensor::xavier(d, d, rng))?,
            w2: store.add("gate.w2", Tensor::xavier(d, d, rng))?,
            bias: store.add("gate.bias", Tensor::zeros(&[d]))?,
        })
    }

    pub fn bind(store: &ParameterStore) -> Result<GateParams> {
        let get = |n: &str| store.id(n).ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {n}")));
        Ok(GateParams {
            w1: get("gate.w1")?,
            w2: get("gate.w2")?,
            bias: get("gate.bias")?,
        })
    }
}

/// Result of fusion over a sentence.
pub struct Fused {
    /// `n × 2d`: `[g ∘ h] ⊕ [(1 - g) ∘ v]`.
    pub u: Var,
    /// `n × d` gate activations.
    pub gate: Var,
}

/// Test hook replacing the learned gate with a constant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GateOverride {
    #[default]
    Learned,
    Fixed(f64),
}

/// `g = σ(W_1 h + W_2 v + b_g)`, `u = [g ∘ h] ⊕ [(1 - g) ∘ v]`, row-wise.
pub fn fuse(g: &mut Graph<'_>, h: Var, v: Var, params: &GateParams, hook: GateOverride) -> Result<Fused> {
    if g.shape(h) != g.shape(v) {
        return Err(shape_err("fuse", format!("h {:?} vs v {:?}", g.shape(h), g.shape(v))));
    }
    let (n, d) = g.shape(h);
    let gate = match hook {
        GateOverride::Fixed(c) => g.constant(Tensor::filled(&[n, d], c)),
        GateOverride::Learned => {
            let (w1, w2, b) = (g.param(params.w1), g.param(params.w2), g.param(params.bias));
            let a = g.matmul_nt(h, w1)?;
            let c = g.matmul_nt(v, w2)?;
            let s = g.add(a, c)?;
            let s = g.add_row(s, b)?;
            g.sigmoid(s)
        }
    };
    let keep = g.mul(gate, h)?;
    let rest = g.one_minus(gate);
    let aug = g.mul(rest, v)?;
    let u = g.concat_cols(&[keep, aug])?;
    Ok(Fused { u, gate })
}

/// Ungated concatenation `u = h ⊕ v`; the gate is reported as all ones.
pub fn no_gate_fuse(g: &mut Graph<'_>, h: Var, v: Var) -> Result<Fused> {
    if g.shape(h) != g.shape(v) {
        return Err(shape_err("no_gate_fuse", format!("h {:?} vs v {:?}", g.shape(h), g.shape(v))));
    }
    let (n, d) = g.shape(h);
    let u = g.concat_cols(&[h, v])?;
    let gate = g.constant(Tensor::filled(&[n, d], 1.0));
    Ok(Fused { u, gate })
}

/// `o = W_u u` per row, with `W_u` stored as `d_o × 2d`.
pub fn project(g: &mut Graph<'_>, u: Var, w_u: Var) -> Result<Var> {
    let ((_, uw), (_, ww)) = (g.shape(u), g.shape(w_u));
    if uw != ww {
        return Err(shape_err("project", format!("u width {uw}, W_u width {ww}")));
    }
    g.matmul_nt(u, w_u)
}
