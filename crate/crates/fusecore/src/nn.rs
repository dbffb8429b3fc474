//! Transformer building blocks shared by the video encoder, the fusion
//! module, and the language model: parameter bundles plus the attention
//! and feed-forward forward passes, all expressed in tape operations so
//! gradients flow automatically.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{ParamStore, Parameter, Tape, Tensor};

pub const INIT_STD: f64 = 0.02;

pub fn gaussian_param(
    store: &mut ParamStore,
    rng: &mut Rng,
    name: &str,
    shape: &[usize],
    std: f64,
) -> Result<Parameter> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.normal_scaled(std)).collect();
    store.create(name, shape, data)
}

pub fn const_param(
    store: &mut ParamStore,
    name: &str,
    shape: &[usize],
    value: f64,
) -> Result<Parameter> {
    let n: usize = shape.iter().product();
    store.create(name, shape, vec![value; n])
}

/// Layer-norm gain/bias pair.
#[derive(Clone)]
pub struct Norm {
    pub gain: Parameter,
    pub bias: Parameter,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Norm> {
        Ok(Norm {
            gain: const_param(store, &format!("{name}.gain"), &[dim], 1.0)?,
            bias: const_param(store, &format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.layer_norm(x, &self.gain.value(), &self.bias.value())
    }
}

/// Projection matrices for one multi-head attention block. Queries are
/// projected from `d_model`; keys and values from `d_kv` (which differs
/// from `d_model` in cross-attention over visual tokens).
#[derive(Clone)]
pub struct AttnWeights {
    pub w_q: Parameter,
    pub w_k: Parameter,
    pub w_v: Parameter,
    pub w_o: Parameter,
    pub heads: usize,
}

/// Variance-preserving width for a linear layer's weights.
pub fn fan_in_std(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

impl AttnWeights {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        d_model: usize,
        d_kv: usize,
        heads: usize,
    ) -> Result<AttnWeights> {
        assert!(d_model % heads == 0, "heads must divide d_model");
        Ok(AttnWeights {
            w_q: gaussian_param(store, rng, &format!("{name}.w_q"), &[d_model, d_model], fan_in_std(d_model))?,
            w_k: gaussian_param(store, rng, &format!("{name}.w_k"), &[d_kv, d_model], fan_in_std(d_kv))?,
            w_v: gaussian_param(store, rng, &format!("{name}.w_v"), &[d_kv, d_model], fan_in_std(d_kv))?,
            w_o: gaussian_param(store, rng, &format!("{name}.w_o"), &[d_model, d_model], fan_in_std(d_model))?,
            heads,
        })
    }
}

/// Head-split scaled dot-product attention over already-projected
/// query/key/value matrices. Returns the merged head outputs (before any
/// output projection) and each head's attention weight matrix.
pub fn attention_core(
    tape: &Tape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    causal: bool,
) -> Result<(Tensor, Vec<Tensor>)> {
    let d_model = q.cols();
    let d_head = d_model / heads;
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    let mut head_weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * d_head, d_head)?;
        let kh = tape.slice_cols(k, h * d_head, d_head)?;
        let vh = tape.slice_cols(v, h * d_head, d_head)?;
        let scores = tape.scale(&tape.matmul(&qh, &tape.transpose(&kh))?, scale);
        let attn = if causal {
            tape.causal_softmax_rows(&scores)?
        } else {
            tape.softmax_rows(&scores)
        };
        head_outputs.push(tape.matmul(&attn, &vh)?);
        head_weights.push(attn);
    }
    let head_refs: Vec<&Tensor> = head_outputs.iter().collect();
    Ok((tape.concat_cols(&head_refs)?, head_weights))
}

/// Scaled dot-product multi-head attention. Returns the pre-residual
/// output (after the output projection) together with each head's
/// attention weight matrix.
pub fn attention_with_weights(
    tape: &Tape,
    queries: &Tensor,
    keys_values: &Tensor,
    w: &AttnWeights,
    causal: bool,
) -> Result<(Tensor, Vec<Tensor>)> {
    let q = tape.matmul(queries, &w.w_q.value())?;
    let k = tape.matmul(keys_values, &w.w_k.value())?;
    let v = tape.matmul(keys_values, &w.w_v.value())?;
    let (merged, head_weights) = attention_core(tape, &q, &k, &v, w.heads, causal)?;
    let out = tape.matmul(&merged, &w.w_o.value())?;
    Ok((out, head_weights))
}

pub fn attention(
    tape: &Tape,
    queries: &Tensor,
    keys_values: &Tensor,
    w: &AttnWeights,
    causal: bool,
) -> Result<Tensor> {
    Ok(attention_with_weights(tape, queries, keys_values, w, causal)?.0)
}

/// Two-layer feed-forward block with GELU.
#[derive(Clone)]
pub struct Ffn {
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
}

impl Ffn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        d_model: usize,
        d_hidden: usize,
    ) -> Result<Ffn> {
        Ok(Ffn {
            w1: gaussian_param(store, rng, &format!("{name}.w1"), &[d_model, d_hidden], fan_in_std(d_model))?,
            b1: const_param(store, &format!("{name}.b1"), &[d_hidden], 0.0)?,
            w2: gaussian_param(store, rng, &format!("{name}.w2"), &[d_hidden, d_model], fan_in_std(d_hidden))?,
            b2: const_param(store, &format!("{name}.b2"), &[d_model], 0.0)?,
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = tape.add_bias(&tape.matmul(x, &self.w1.value())?, &self.b1.value())?;
        let h = tape.gelu(&h);
        tape.add_bias(&tape.matmul(&h, &self.w2.value())?, &self.b2.value())
    }
}
