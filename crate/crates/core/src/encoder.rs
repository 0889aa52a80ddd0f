//! Context encoder: a transformer whose self-attention scores depend on the
//! signed distance between tokens, so both direction and distance are
//! visible to every head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParameterStore, Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    /// Per-head width. When absent, `model_dim / heads`.
    #[serde(default)]
    pub head_dim: Option<usize>,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            heads: 8,
            model_dim: 128,
            head_dim: None,
            ff_dim: 256,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    /// 12 heads of width 12; the 144-wide concatenation is projected back to 128.
    pub fn twelve_head() -> Self {
        EncoderConfig {
            heads: 12,
            head_dim: Some(12),
            ..EncoderConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim.unwrap_or(self.model_dim / self.heads.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(Error::Config("encoder dims and heads must be positive".into()));
        }
        if self.head_dim.is_none() && self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by {} heads; set head_dim explicitly",
                self.model_dim, self.heads
            )));
        }
        if self.head_dim() == 0 {
            return Err(Error::Config("head_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Sinusoidal encodings of signed offsets `-(n-1) ..= n-1`; row `t + n - 1`
/// holds offset `t`. Even columns are sines (odd in `t`), odd columns cosines.
pub fn relative_table(n: usize, dim: usize) -> Tensor {
    let width = 2 * n - 1;
    let mut data = Vec::with_capacity(width * dim);
    for row in 0..width {
        let t = row as f64 - (n as f64 - 1.0);
        for c in 0..dim {
            let freq = 10000f64.powf(-((c / 2 * 2) as f64) / dim as f64);
            data.push(if c % 2 == 0 { (t * freq).sin() } else { (t * freq).cos() });
        }
    }
    Tensor::matrix(width, dim, data).unwrap()
}

/// Attention with relative positions, for one head:
/// `score(i,j) = q_i·k_j + q_i·r_{i-j} + u·k_j + w·r_{i-j}` (no scaling),
/// `out = softmax(score) · v`. Returns the output and the attention weights.
#[allow(clippy::too_many_arguments)]
pub fn relative_attention(
    g: &mut Graph<'_>,
    q: Var,
    k: Var,
    v: Var,
    u: Var,
    w: Var,
    rel: Var,
    dropout: f64,
) -> Result<(Var, Var)> {
    let (n, dh) = g.shape(q);
    if g.shape(k) != (n, dh) || g.shape(v).0 != n {
        return Err(shape_err("relative_attention", "q, k, v disagree"));
    }
    if g.shape(rel) != (2 * n - 1, dh) {
        return Err(shape_err(
            "relative_attention",
            format!("relative table {:?}, expected ({}, {dh})", g.shape(rel), 2 * n - 1),
        ));
    }
    let qu = g.add_row(q, u)?;
    let content = g.matmul_nt(qu, k)?;
    let qw = g.add_row(q, w)?;
    let by_offset = g.matmul_nt(qw, rel)?;
    let position = g.rel_shift(by_offset)?;
    let scores = g.add(content, position)?;
    let weights = g.softmax(scores);
    let dropped = g.dropout(weights, dropout);
    let out = g.matmul(dropped, v)?;
    Ok((out, weights))
}

#[derive(Debug, Clone)]
struct LayerParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    u: ParamId,
    w: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff1: ParamId,
    ff1_bias: ParamId,
    ff2: ParamId,
    ff2_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    input_dim: usize,
    input_w: ParamId,
    input_b: ParamId,
    layers: Vec<LayerParams>,
}

const LN_EPS: f64 = 1e-5;

impl Encoder {
    /// Registers freshly initialized encoder parameters under `prefix`.
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        config: &EncoderConfig,
        input_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Encoder> {
        config.validate()?;
        let d = config.model_dim;
        let hd = config.heads * config.head_dim();
        let dh = config.head_dim();
        let mut add = |name: String, t: Tensor| store.add(format!("{prefix}.{name}"), t);
        let input_w = add("input.w".into(), Tensor::xavier(d, input_dim, rng))?;
        let input_b = add("input.b".into(), Tensor::zeros(&[d]))?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let bound = (1.0 / dh as f64).sqrt();
            layers.push(LayerParams {
                wq: add(format!("layer{l}.wq"), Tensor::xavier(hd, d, rng))?,
                wk: add(format!("layer{l}.wk"), Tensor::xavier(hd, d, rng))?,
                wv: add(format!("layer{l}.wv"), Tensor::xavier(hd, d, rng))?,
                u: add(format!("layer{l}.u"), Tensor::uniform(&[config.heads, dh], -bound, bound, rng))?,
                w: add(format!("layer{l}.w"), Tensor::uniform(&[config.heads, dh], -bound, bound, rng))?,
                wo: add(format!("layer{l}.wo"), Tensor::xavier(d, hd, rng))?,
                bo: add(format!("layer{l}.bo"), Tensor::zeros(&[d]))?,
                ln1_gain: add(format!("layer{l}.ln1.gain"), Tensor::filled(&[d], 1.0))?,
                ln1_bias: add(format!("layer{l}.ln1.bias"), Tensor::zeros(&[d]))?,
                ff1: add(format!("layer{l}.ff1.w"), Tensor::xavier(config.ff_dim, d, rng))?,
                ff1_bias: add(format!("layer{l}.ff1.b"), Tensor::zeros(&[config.ff_dim]))?,
                ff2: add(format!("layer{l}.ff2.w"), Tensor::xavier(d, config.ff_dim, rng))?,
                ff2_bias: add(format!("layer{l}.ff2.b"), Tensor::zeros(&[d]))?,
                ln2_gain: add(format!("layer{l}.ln2.gain"), Tensor::filled(&[d], 1.0))?,
                ln2_bias: add(format!("layer{l}.ln2.bias"), Tensor::zeros(&[d]))?,
            });
        }
        Ok(Encoder {
            config: config.clone(),
            input_dim,
            input_w,
            input_b,
            layers,
        })
    }

    /// Re-binds to parameters already present in `store` (e.g. from a checkpoint).
    pub fn bind(store: &ParameterStore, prefix: &str, config: &EncoderConfig, input_dim: usize) -> Result<Encoder> {
        config.validate()?;
        let get = |name: String| {
            let full = format!("{prefix}.{name}");
            store
                .id(&full)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {full}")))
        };
        let layers = (0..config.layers)
            .map(|l| {
                Ok(LayerParams {
                    wq: get(format!("layer{l}.wq"))?,
                    wk: get(format!("layer{l}.wk"))?,
                    wv: get(format!("layer{l}.wv"))?,
                    u: get(format!("layer{l}.u"))?,
                    w: get(format!("layer{l}.w"))?,
                    wo: get(format!("layer{l}.wo"))?,
                    bo: get(format!("layer{l}.bo"))?,
                    ln1_gain: get(format!("layer{l}.ln1.gain"))?,
                    ln1_bias: get(format!("layer{l}.ln1.bias"))?,
                    ff1: get(format!("layer{l}.ff1.w"))?,
                    ff1_bias: get(format!("layer{l}.ff1.b"))?,
                    ff2: get(format!("layer{l}.ff2.w"))?,
                    ff2_bias: get(format!("layer{l}.ff2.b"))?,
                    ln2_gain: get(format!("layer{l}.ln2.gain"))?,
                    ln2_bias: get(format!("layer{l}.ln2.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let enc = Encoder {
            config: config.clone(),
            input_dim,
            input_w: get("input.w".into())?,
            input_b: get("input.b".into())?,
            layers,
        };
        if store.value(enc.input_w).shape() != [config.model_dim, input_dim] {
            return Err(Error::Format("encoder input projection has the wrong shape".into()));
        }
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Every parameter owned by the encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.input_w, self.input_b];
        for l in &self.layers {
            ids.extend([
                l.wq, l.wk, l.wv, l.u, l.w, l.wo, l.bo, l.ln1_gain, l.ln1_bias, l.ff1, l.ff1_bias,
                l.ff2, l.ff2_bias, l.ln2_gain, l.ln2_bias,
            ]);
        }
        ids
    }

    /// `H = CE(E)` for an `n × input_dim` embedding matrix.
    pub fn encode(&self, g: &mut Graph<'_>, e: Var) -> Result<Var> {
        Ok(self.encode_traced(g, e)?.0)
    }

    /// Like [`Encoder::encode`], also returning every head's attention weights
    /// (layer-major).
    pub fn encode_traced(&self, g: &mut Graph<'_>, e: Var) -> Result<(Var, Vec<Var>)> {
        let (n, d_in) = g.shape(e);
        if n == 0 || d_in != self.input_dim {
            return Err(shape_err(
                "encode",
                format!("input {n}x{d_in}, expected n≥1 x {}", self.input_dim),
            ));
        }
        let (w_in, b_in) = (g.param(self.input_w), g.param(self.input_b));
        let mut x = g.linear(e, w_in, Some(b_in))?;
        let mut attention = Vec::new();
        if self.layers.is_empty() {
            return Ok((x, attention));
        }
        let dh = self.config.head_dim();
        let rel = g.constant(relative_table(n, dh));
        let rate = self.config.dropout;
        for layer in &self.layers {
            let (wq, wk, wv) = (g.param(layer.wq), g.param(layer.wk), g.param(layer.wv));
            let q_all = g.matmul_nt(x, wq)?;
            let k_all = g.matmul_nt(x, wk)?;
            let v_all = g.matmul_nt(x, wv)?;
            let (u_all, w_all) = (g.param(layer.u), g.param(layer.w));
            let mut heads = Vec::with_capacity(self.config.heads);
            for h in 0..self.config.heads {
                let q = g.slice_cols(q_all, h * dh, dh)?;
                let k = g.slice_cols(k_all, h * dh, dh)?;
                let v = g.slice_cols(v_all, h * dh, dh)?;
                let u = g.select_rows(u_all, &[h])?;
                let w = g.select_rows(w_all, &[h])?;
                let (out, weights) = relative_attention(g, q, k, v, u, w, rel, rate)?;
                heads.push(out);
                attention.push(weights);
            }
            let concat = g.concat_cols(&heads)?;
            let (wo, bo) = (g.param(layer.wo), g.param(layer.bo));
            let attended = g.linear(concat, wo, Some(bo))?;
            let res = g.add(x, attended)?;
            x = self.norm(g, res, layer.ln1_gain, layer.ln1_bias)?;

            let (f1, f1b) = (g.param(layer.ff1), g.param(layer.ff1_bias));
            let hidden = g.linear(x, f1, Some(f1b))?;
            let hidden = g.relu(hidden);
            let (f2, f2b) = (g.param(layer.ff2), g.param(layer.ff2_bias));
            let ff = g.linear(hidden, f2, Some(f2b))?;
            let ff = g.dropout(ff, rate);
            let res = g.add(x, ff)?;
            x = self.norm(g, res, layer.ln2_gain, layer.ln2_bias)?;
        }
        Ok((x, attention))
    }

    fn norm(&self, g: &mut Graph<'_>, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let normed = g.layer_norm(x, LN_EPS);
        let (gv, bv) = (g.param(gain), g.param(bias));
        let scaled = g.mul_row(normed, gv)?;
        g.add_row(scaled, bv)
    }
}
