//! Decoder-only causal language model over position-encoded embedding
//! rows. The input sequence is the fused video tokens followed by text
//! token embeddings; the output head is tied to the embedding table.
//! Every linear layer is adaptable with low-rank pairs.

use crate::error::{FuseError, Result};
use crate::fusion::FusedEmbeddings;
use crate::nn::{attention_core, gaussian_param, Norm, INIT_STD};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Parameter, Tape, Tensor};

use super::lora::AdaptedLinear;
use super::vocab::BOS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
}

/// Token ids paired with a per-position loss mask. In training sequences
/// the mask is true only on positions whose prediction should be
/// penalized (response tokens, never the prompt or the padding).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, loss_mask: Vec<bool>) -> Result<TokenSequence> {
        if ids.len() != loss_mask.len() {
            return Err(FuseError::contract(format!(
                "token sequence: {} ids vs {} mask entries",
                ids.len(),
                loss_mask.len()
            )));
        }
        Ok(TokenSequence { ids, loss_mask })
    }

    /// A generation prompt: nothing is loss-masked in.
    pub fn prompt(ids: Vec<u32>) -> TokenSequence {
        let mask = vec![false; ids.len()];
        TokenSequence { ids, loss_mask: mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

struct LmBlock {
    norm1: Norm,
    w_q: AdaptedLinear,
    w_k: AdaptedLinear,
    w_v: AdaptedLinear,
    w_o: AdaptedLinear,
    norm2: Norm,
    ffn_w1: AdaptedLinear,
    ffn_b1: Parameter,
    ffn_w2: AdaptedLinear,
    ffn_b2: Parameter,
}

pub struct DecoderLm {
    cfg: LmConfig,
    /// `[vocab, d_model]`; also the output head (tied weights).
    embed: Parameter,
    pos: Parameter,
    blocks: Vec<LmBlock>,
    final_norm: Norm,
}

impl DecoderLm {
    pub fn new(cfg: LmConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<DecoderLm> {
        if cfg.d_model % cfg.heads != 0 {
            return Err(FuseError::Config("lm heads must divide d_model".into()));
        }
        let d = cfg.d_model;
        let embed = gaussian_param(store, rng, "lm.embed", &[cfg.vocab_size, d], INIT_STD)?;
        let pos = gaussian_param(store, rng, "lm.pos", &[cfg.max_len, d], INIT_STD)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let name = format!("lm.block{i}");
            blocks.push(LmBlock {
                norm1: Norm::new(store, &format!("{name}.norm1"), d)?,
                w_q: AdaptedLinear::new(store, rng, &format!("{name}.attn.w_q"), d, d)?,
                w_k: AdaptedLinear::new(store, rng, &format!("{name}.attn.w_k"), d, d)?,
                w_v: AdaptedLinear::new(store, rng, &format!("{name}.attn.w_v"), d, d)?,
                w_o: AdaptedLinear::new(store, rng, &format!("{name}.attn.w_o"), d, d)?,
                norm2: Norm::new(store, &format!("{name}.norm2"), d)?,
                ffn_w1: AdaptedLinear::new(store, rng, &format!("{name}.ffn.w1"), d, d * cfg.ffn_mult)?,
                ffn_b1: crate::nn::const_param(store, &format!("{name}.ffn.b1"), &[d * cfg.ffn_mult], 0.0)?,
                ffn_w2: AdaptedLinear::new(store, rng, &format!("{name}.ffn.w2"), d * cfg.ffn_mult, d)?,
                ffn_b2: crate::nn::const_param(store, &format!("{name}.ffn.b2"), &[d], 0.0)?,
            });
        }
        let final_norm = Norm::new(store, "lm.final_norm", d)?;
        Ok(DecoderLm {
            cfg,
            embed,
            pos,
            blocks,
            final_norm,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    pub fn embedding(&self) -> &Parameter {
        &self.embed
    }

    /// Embedding rows for a list of token ids (no positions added).
    pub fn embed_tokens(&self, tape: &Tape, ids: &[u32]) -> Result<Tensor> {
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(FuseError::contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        tape.select_rows(&self.embed.value(), &rows)
    }

    /// Position embedding rows `start..start + len`.
    pub fn position_rows(&self, tape: &Tape, start: usize, len: usize) -> Result<Tensor> {
        if start + len > self.cfg.max_len {
            return Err(FuseError::contract(format!(
                "positions {start}..{} exceed maximum {}",
                start + len,
                self.cfg.max_len
            )));
        }
        let rows: Vec<usize> = (start..start + len).collect();
        tape.select_rows(&self.pos.value(), &rows)
    }

    /// Assemble the model input: fused video rows, then prompt token
    /// embeddings, with position embeddings added across the whole
    /// combined sequence. Returns the input matrix and the combined loss
    /// mask (false on every video row).
    pub fn build_input(
        &self,
        tape: &Tape,
        fused: &FusedEmbeddings,
        prompt: &TokenSequence,
    ) -> Result<(Tensor, Vec<bool>)> {
        if prompt.is_empty() || prompt.ids[0] != BOS {
            return Err(FuseError::contract(
                "prompt must be non-empty and begin with <bos>",
            ));
        }
        let total = fused.count() + prompt.len();
        if total > self.cfg.max_len {
            return Err(FuseError::contract(format!(
                "sequence length {total} exceeds maximum {}",
                self.cfg.max_len
            )));
        }
        let tokens = self.embed_tokens(tape, &prompt.ids)?;
        let rows = tape.concat_rows(&[&fused.tokens, &tokens])?;
        let pos_rows: Vec<usize> = (0..total).collect();
        let pos = tape.select_rows(&self.pos.value(), &pos_rows)?;
        let e_input = tape.add(&rows, &pos)?;
        let mut mask = vec![false; fused.count()];
        mask.extend_from_slice(&prompt.loss_mask);
        Ok((e_input, mask))
    }

    /// Causal transformer forward over position-encoded embedding rows;
    /// position `t`'s logits depend only on rows `<= t`.
    pub fn forward_logits(&self, tape: &Tape, e_input: &Tensor) -> Result<Tensor> {
        if e_input.rows() > self.cfg.max_len {
            return Err(FuseError::contract(format!(
                "sequence length {} exceeds maximum {}",
                e_input.rows(),
                self.cfg.max_len
            )));
        }
        let mut x = e_input.clone();
        for block in &self.blocks {
            let normed = block.norm1.forward(tape, &x)?;
            let q = block.w_q.forward(tape, &normed)?;
            let k = block.w_k.forward(tape, &normed)?;
            let v = block.w_v.forward(tape, &normed)?;
            let (merged, _) = attention_core(tape, &q, &k, &v, self.cfg.heads, true)?;
            let attn_out = block.w_o.forward(tape, &merged)?;
            x = tape.add(&x, &attn_out)?;

            let normed = block.norm2.forward(tape, &x)?;
            let h = tape.add_bias(&block.ffn_w1.forward(tape, &normed)?, &block.ffn_b1.value())?;
            let h = tape.gelu(&h);
            let ffn_out = tape.add_bias(&block.ffn_w2.forward(tape, &h)?, &block.ffn_b2.value())?;
            x = tape.add(&x, &ffn_out)?;
        }
        let h = self.final_norm.forward(tape, &x)?;
        tape.matmul(&h, &tape.transpose(&self.embed.value()))
    }

    fn adapted_mut(&mut self) -> Vec<&mut AdaptedLinear> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.w_q);
            out.push(&mut b.w_k);
            out.push(&mut b.w_v);
            out.push(&mut b.w_o);
            out.push(&mut b.ffn_w1);
            out.push(&mut b.ffn_w2);
        }
        out
    }

    /// Names of every adaptable linear layer.
    pub fn linear_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for l in [&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.ffn_w1, &b.ffn_w2] {
                out.push(l.name().to_string());
            }
        }
        out
    }

    /// Attach low-rank adapters to the named target matrices, freezing
    /// their base weights. Unknown names are rejected.
    pub fn apply_lora(
        &mut self,
        store: &mut ParamStore,
        targets: &[String],
        rank: usize,
        alpha: f64,
        rng: &mut Rng,
    ) -> Result<()> {
        let known = self.linear_names();
        for t in targets {
            if !known.contains(t) {
                return Err(FuseError::contract(format!("unknown adapter target {t:?}")));
            }
        }
        for lin in self.adapted_mut() {
            if targets.iter().any(|t| t == lin.name()) {
                lin.attach_lora(store, rng, rank, alpha)?;
            }
        }
        Ok(())
    }

    /// Adapters on every linear layer.
    pub fn apply_lora_all(
        &mut self,
        store: &mut ParamStore,
        rank: usize,
        alpha: f64,
        rng: &mut Rng,
    ) -> Result<()> {
        let all = self.linear_names();
        self.apply_lora(store, &all, rank, alpha, rng)
    }

    /// Fold every adapter into its base weight. Rejected when nothing is
    /// adapted.
    pub fn merge_lora(&mut self, store: &mut ParamStore) -> Result<()> {
        if !self.has_lora() {
            return Err(FuseError::contract("model has no adapters to merge"));
        }
        for lin in self.adapted_mut() {
            if lin.has_lora() {
                lin.merge_lora(store)?;
            }
        }
        Ok(())
    }

    pub fn has_lora(&self) -> bool {
        self.blocks.iter().any(|b| {
            [&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.ffn_w1, &b.ffn_w2]
                .iter()
                .any(|l| l.has_lora())
        })
    }
}
