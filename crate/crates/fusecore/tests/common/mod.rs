//! Shared oracles for integration tests. Everything here is written
//! against the mathematical definitions, independent of the library's
//! forward/backward implementations.

#![allow(dead_code)]

use fusecore::rng::Rng;
use fusecore::tensor::{Tape, Tensor};

/// Evaluate a scalar-valued graph builder on plain input buffers.
fn eval_scalar<F>(build: &F, inputs: &[(Vec<usize>, Vec<f64>)]) -> f64
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let tape = Tape::inference();
    let tensors: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| Tensor::new(shape, data.clone()).unwrap())
        .collect();
    build(&tape, &tensors).item()
}

/// Compare reverse-mode gradients of a scalar-valued function against
/// central finite differences, elementwise, for every input.
///
/// The comparison is `|analytic - numeric| <= rel_tol * max(|analytic|,
/// |numeric|, 1.0)`.
pub fn check_gradients<F>(
    label: &str,
    inputs: &[(Vec<usize>, Vec<f64>)],
    eps: f64,
    rel_tol: f64,
    build: F,
) where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| Tensor::leaf(shape, data.clone()).unwrap())
        .collect();
    let out = build(&tape, &leaves);
    assert!(out.is_scalar(), "{label}: gradient check root must be scalar");
    tape.backward(&out).unwrap();

    for (i, (_, data)) in inputs.iter().enumerate() {
        let analytic = leaves[i]
            .grad()
            .unwrap_or_else(|| vec![0.0; data.len()]);
        for j in 0..data.len() {
            let mut plus = inputs.to_vec();
            plus[i].1[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].1[j] -= eps;
            let numeric = (eval_scalar(&build, &plus) - eval_scalar(&build, &minus)) / (2.0 * eps);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() <= rel_tol * denom,
                "{label}: input {i} element {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

/// Random tensor entries in roughly [-1, 1].
pub fn random_data(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()
}

/// Naive ijk triple-loop matrix product, the reference for `matmul`.
pub fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Compare reverse-mode gradients of named parameters against central
/// finite differences of a scalar forward function that re-reads the
/// parameter store on every call.
pub fn check_param_gradients<F>(
    label: &str,
    store: &fusecore::tensor::ParamStore,
    eps: f64,
    rel_tol: f64,
    forward: F,
) where
    F: Fn(&Tape) -> Tensor,
{
    let tape = Tape::new();
    let out = forward(&tape);
    assert!(out.is_scalar(), "{label}: forward must produce a scalar");
    store.zero_grads();
    tape.backward(&out).unwrap();

    for param in store.iter() {
        if param.frozen() {
            continue;
        }
        let name = param.name();
        let base = param.value().data().to_vec();
        let analytic = param.grad().unwrap_or_else(|| vec![0.0; base.len()]);
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += eps;
            param.set_data(plus);
            let f_plus = forward(&Tape::inference()).item();
            let mut minus = base.clone();
            minus[j] -= eps;
            param.set_data(minus);
            let f_minus = forward(&Tape::inference()).item();
            param.set_data(base.clone());
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() <= rel_tol * denom,
                "{label}: {name}[{j}]: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

// ── Metric oracles (independent brute-force implementations) ────────

use std::collections::{HashMap, HashSet};

fn gram_key(tokens: &[String]) -> String {
    tokens.join("\u{1}")
}

pub fn count_grams(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    if tokens.len() < n {
        return out;
    }
    for i in 0..=tokens.len() - n {
        *out.entry(gram_key(&tokens[i..i + n])).or_insert(0) += 1;
    }
    out
}

/// BLEU from the definition: string-keyed counts, explicit clipping,
/// explicit brevity penalty, 1e-9 smoothing of zero precisions.
pub fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut hyp_total_len = 0usize;
    let mut ref_total_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        hyp_total_len += h.len();
        ref_total_len += r.len();
    }
    if hyp_total_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders_used = 0usize;
    for n in 1..=4 {
        let mut clipped = 0usize;
        let mut total = 0usize;
        for (h, r) in hyps.iter().zip(refs) {
            let hc = count_grams(h, n);
            let rc = count_grams(r, n);
            for (gram, c) in &hc {
                let limit = rc.get(gram).copied().unwrap_or(0);
                clipped += (*c).min(limit);
                total += c;
            }
        }
        if total == 0 {
            continue;
        }
        orders_used += 1;
        let p = if clipped == 0 {
            1e-9
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    if orders_used == 0 {
        return 0.0;
    }
    let gm = (log_sum / orders_used as f64).exp();
    let bp = if hyp_total_len >= ref_total_len {
        1.0
    } else {
        (1.0 - ref_total_len as f64 / hyp_total_len as f64).exp()
    };
    bp * gm
}

fn lcs_memo(
    a: &[String],
    b: &[String],
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize), usize>,
) -> usize {
    if i == 0 || j == 0 {
        return 0;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let v = if a[i - 1] == b[j - 1] {
        lcs_memo(a, b, i - 1, j - 1, memo) + 1
    } else {
        lcs_memo(a, b, i - 1, j, memo).max(lcs_memo(a, b, i, j - 1, memo))
    };
    memo.insert((i, j), v);
    v
}

/// LCS F-measure via a memoized recursion (quadratic table).
pub fn rouge_l_oracle(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_memo(h, r, h.len(), r.len(), &mut HashMap::new()) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / h.len() as f64;
    let rec = lcs / r.len() as f64;
    let beta2 = 1.2f64 * 1.2;
    (1.0 + beta2) * p * rec / (rec + beta2 * p)
}

/// TF-IDF cosine via dense vectors over the explicit n-gram union.
pub fn cider_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Vec<f64> {
    let n_docs = refs.len() as f64;
    let mut scores = vec![0.0; hyps.len()];
    for n in 1..=4 {
        let mut df: HashMap<String, usize> = HashMap::new();
        for r in refs {
            let grams: HashSet<String> = count_grams(r, n).into_keys().collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (k, (h, r)) in hyps.iter().zip(refs).enumerate() {
            let hc = count_grams(h, n);
            let rc = count_grams(r, n);
            let mut union: Vec<&String> = hc
                .keys()
                .chain(rc.keys())
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            union.sort();
            let h_total: usize = hc.values().sum();
            let r_total: usize = rc.values().sum();
            let mut hv = Vec::with_capacity(union.len());
            let mut rv = Vec::with_capacity(union.len());
            for g in &union {
                let idf = (n_docs / df.get(*g).copied().unwrap_or(0).max(1) as f64).ln();
                let ht = if h_total == 0 {
                    0.0
                } else {
                    hc.get(*g).copied().unwrap_or(0) as f64 / h_total as f64
                };
                let rt = if r_total == 0 {
                    0.0
                } else {
                    rc.get(*g).copied().unwrap_or(0) as f64 / r_total as f64
                };
                hv.push(ht * idf);
                rv.push(rt * idf);
            }
            let mut dot = 0.0;
            let mut hn = 0.0;
            let mut rn = 0.0;
            for i in 0..union.len() {
                dot += hv[i] * rv[i];
                hn += hv[i] * hv[i];
                rn += rv[i] * rv[i];
            }
            if hn > 0.0 && rn > 0.0 {
                scores[k] += dot / (hn.sqrt() * rn.sqrt());
            }
        }
    }
    scores.iter().map(|s| 10.0 * s / 4.0).collect()
}

/// Random word sequence from a fixed pool.
pub fn random_sentence(rng: &mut Rng, pool: &[&str], min_len: usize, max_len: usize) -> Vec<String> {
    let len = min_len + rng.below(max_len - min_len + 1);
    (0..len).map(|_| pool[rng.below(pool.len())].to_string()).collect()
}

// ── Parameterized-module gradient checks ────────────────────────────
//
// Each runs `instances` random cases of one trainable surface against
// central finite differences (eps 1e-5, rel tol 1e-4; the deep fusion
// composite uses 1e-3).

use fusecore::fusion::{FusionConfig, FusionCore};
use fusecore::nn::{attention, AttnWeights};
use fusecore::reasoner::{DecoderLm, LmConfig, TokenSequence};
use fusecore::tensor::ParamStore;
use fusecore::training::sequence_loss;

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, random_data(rng, n)).unwrap()
}

pub fn check_attention_gradients(instances: usize) {
    let mut rng = Rng::new(601);
    for i in 0..instances {
        let mut store = ParamStore::new();
        let w = AttnWeights::new(&mut store, &mut rng, "attn", 8, 6, 2).unwrap();
        let n_q = 1 + rng.below(3);
        let n_v = 1 + rng.below(4);
        let queries = random_tensor(&mut rng, &[n_q, 8]);
        let kv = random_tensor(&mut rng, &[n_v, 6]);
        let cot = random_tensor(&mut rng, &[n_q, 8]);
        check_param_gradients(
            &format!("attention[{i}]"),
            &store,
            GRAD_EPS,
            GRAD_TOL,
            |tape| {
                let out = attention(tape, &queries, &kv, &w, false).unwrap();
                tape.sum(&tape.mul(&out, &cot).unwrap())
            },
        );
    }
}

pub fn check_layer_norm_gradients(instances: usize) {
    let mut rng = Rng::new(603);
    for i in 0..instances {
        let mut store = ParamStore::new();
        let d = 3 + rng.below(5);
        let n = 1 + rng.below(3);
        let gain = store.create("ln.gain", &[d], random_data(&mut rng, d)).unwrap();
        let bias = store.create("ln.bias", &[d], random_data(&mut rng, d)).unwrap();
        let x = random_tensor(&mut rng, &[n, d]);
        let cot = random_tensor(&mut rng, &[n, d]);
        check_param_gradients(
            &format!("layer_norm[{i}]"),
            &store,
            GRAD_EPS,
            GRAD_TOL,
            |tape| {
                let out = tape.layer_norm(&x, &gain.value(), &bias.value()).unwrap();
                tape.sum(&tape.mul(&out, &cot).unwrap())
            },
        );
    }
}

pub fn check_projection_gradients(instances: usize) {
    let mut rng = Rng::new(605);
    for i in 0..instances {
        let mut store = ParamStore::new();
        let (d_in, d_out) = (2 + rng.below(4), 2 + rng.below(4));
        let w = store
            .create("proj.w", &[d_in, d_out], random_data(&mut rng, d_in * d_out))
            .unwrap();
        let b = store.create("proj.b", &[d_out], random_data(&mut rng, d_out)).unwrap();
        let n = 1 + rng.below(3);
        let x = random_tensor(&mut rng, &[n, d_in]);
        let cot = random_tensor(&mut rng, &[n, d_out]);
        check_param_gradients(
            &format!("projection[{i}]"),
            &store,
            GRAD_EPS,
            GRAD_TOL,
            |tape| {
                let out = tape
                    .add_bias(&tape.matmul(&x, &w.value()).unwrap(), &b.value())
                    .unwrap();
                tape.sum(&tape.mul(&out, &cot).unwrap())
            },
        );
    }
}

/// Tiny language model; the loss path exercises the embedding, the
/// causal blocks, and the tied output head.
pub fn check_lm_head_gradients(instances: usize) {
    let mut rng = Rng::new(607);
    for i in 0..instances {
        let mut store = ParamStore::new();
        let cfg = LmConfig {
            vocab_size: 9,
            d_model: 8,
            layers: 1,
            heads: 2,
            max_len: 16,
            ffn_mult: 2,
        };
        let lm = DecoderLm::new(cfg, &mut store, &mut rng).unwrap();
        let fused = fusecore::fusion::FusedEmbeddings {
            tokens: random_tensor(&mut rng, &[2, 8]),
        };
        let len = 3 + rng.below(3);
        let mut ids = vec![1u32]; // <bos>
        let mut mask = vec![false];
        for _ in 0..len {
            ids.push(3 + rng.below(6) as u32);
            mask.push(true);
        }
        ids.push(2); // <eos>
        mask.push(true);
        let text = TokenSequence::new(ids, mask).unwrap();
        check_param_gradients(
            &format!("lm_head[{i}]"),
            &store,
            GRAD_EPS,
            GRAD_TOL,
            |tape| sequence_loss(tape, &lm, &fused, &text).unwrap(),
        );
    }
}

/// Adapted linear layers: base frozen, low-rank pair trainable.
pub fn check_lora_gradients(instances: usize) {
    let mut rng = Rng::new(609);
    for i in 0..instances {
        let mut store = ParamStore::new();
        let mut lin =
            fusecore::reasoner::AdaptedLinear::new(&mut store, &mut rng, "lin", 6, 5).unwrap();
        lin.attach_lora(&mut store, &mut rng, 2, 4.0).unwrap();
        // Make the adapter active so both factors matter.
        let up = store.get("lin.lora_up").unwrap();
        up.set_data(random_data(&mut rng, 2 * 5));
        let x = random_tensor(&mut rng, &[3, 6]);
        let cot = random_tensor(&mut rng, &[3, 5]);
        check_param_gradients(&format!("lora[{i}]"), &store, GRAD_EPS, GRAD_TOL, |tape| {
            let out = lin.forward(tape, &x).unwrap();
            tape.sum(&tape.mul(&out, &cot).unwrap())
        });
        // The frozen base must accumulate nothing.
        assert!(store.get("lin").unwrap().grad().is_none());
    }
}

/// Full fusion stack (self-attention, cross-attention, feed-forward,
/// norms, projection) against finite differences at the composite
/// tolerance.
pub fn check_fusion_composite_gradients(instances: usize) {
    let mut rng = Rng::new(611);
    for i in 0..instances {
        let mut store = ParamStore::new();
        let cfg = FusionConfig {
            queries: 2,
            d_model: 8,
            layers: 1,
            heads: 2,
            vision_dim: 6,
            lm_dim: 5,
            ffn_mult: 2,
        };
        let core = FusionCore::new(cfg, &mut store, &mut rng).unwrap();
        let n_v = 1 + rng.below(4);
        let vision = random_tensor(&mut rng, &[n_v, 6]);
        let cot = random_tensor(&mut rng, &[2, 5]);
        check_param_gradients(
            &format!("fusion_composite[{i}]"),
            &store,
            GRAD_EPS,
            1e-3,
            |tape| {
                let fused = core.fuse_tokens(tape, &vision).unwrap();
                tape.sum(&tape.mul(&fused.tokens, &cot).unwrap())
            },
        );
    }
}
