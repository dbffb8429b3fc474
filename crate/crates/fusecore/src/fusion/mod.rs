//! Fusion of visual tokens into a fixed budget of language-space
//! embeddings: a bank of learnable query vectors runs through stacked
//! blocks of self-attention (queries attending to queries), cross
//! attention (queries attending to all vision tokens), and a
//! feed-forward layer, then a learned affine projection into the
//! language model's embedding dimension. The output row count equals the
//! query count no matter how long the video was, and because vision
//! tokens carry no positional encoding here, it is invariant to their
//! order.

use crate::error::{FuseError, Result};
use crate::nn::{attention, gaussian_param, AttnWeights, Ffn, Norm, INIT_STD};
use crate::perception::VisionTokens;
use crate::rng::Rng;
use crate::tensor::{ParamStore, Parameter, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionConfig {
    /// Number of learnable query tokens.
    pub queries: usize,
    /// Width of the query stream.
    pub d_model: usize,
    /// Number of fusion blocks.
    pub layers: usize,
    pub heads: usize,
    /// Width of incoming vision tokens.
    pub vision_dim: usize,
    /// Width of the language model embeddings the output is projected to.
    pub lm_dim: usize,
    pub ffn_mult: usize,
}

/// The learnable query embeddings.
pub struct QueryBank {
    pub queries: Parameter,
}

impl QueryBank {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, count: usize, dim: usize) -> Result<QueryBank> {
        Ok(QueryBank {
            queries: gaussian_param(store, rng, "fusion.queries", &[count, dim], INIT_STD)?,
        })
    }
}

pub struct FusionLayer {
    norm_self: Norm,
    self_attn: AttnWeights,
    norm_cross: Norm,
    cross_attn: AttnWeights,
    norm_ffn: Norm,
    ffn: Ffn,
}

/// The fused video representation: exactly `queries` rows in the LM
/// embedding space.
#[derive(Clone)]
pub struct FusedEmbeddings {
    pub tokens: Tensor,
}

impl FusedEmbeddings {
    pub fn count(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

pub struct FusionCore {
    cfg: FusionConfig,
    pub bank: QueryBank,
    layers: Vec<FusionLayer>,
    final_norm: Norm,
    proj_w: Parameter,
    proj_b: Parameter,
}

impl FusionCore {
    pub fn new(cfg: FusionConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<FusionCore> {
        if cfg.layers == 0 {
            return Err(FuseError::Config("fusion needs at least one layer".into()));
        }
        if cfg.d_model % cfg.heads != 0 {
            return Err(FuseError::Config("fusion heads must divide d_model".into()));
        }
        let bank = QueryBank::new(store, rng, cfg.queries, cfg.d_model)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let name = format!("fusion.layer{i}");
            layers.push(FusionLayer {
                norm_self: Norm::new(store, &format!("{name}.norm_self"), cfg.d_model)?,
                self_attn: AttnWeights::new(
                    store,
                    rng,
                    &format!("{name}.self_attn"),
                    cfg.d_model,
                    cfg.d_model,
                    cfg.heads,
                )?,
                norm_cross: Norm::new(store, &format!("{name}.norm_cross"), cfg.d_model)?,
                cross_attn: AttnWeights::new(
                    store,
                    rng,
                    &format!("{name}.cross_attn"),
                    cfg.d_model,
                    cfg.vision_dim,
                    cfg.heads,
                )?,
                norm_ffn: Norm::new(store, &format!("{name}.norm_ffn"), cfg.d_model)?,
                ffn: Ffn::new(
                    store,
                    rng,
                    &format!("{name}.ffn"),
                    cfg.d_model,
                    cfg.d_model * cfg.ffn_mult,
                )?,
            });
        }
        let final_norm = Norm::new(store, "fusion.final_norm", cfg.d_model)?;
        // Near-zero projection: the fused prefix starts out almost silent
        // and grows as alignment training finds signal, instead of
        // perturbing the frozen language model from step one.
        let proj_w = gaussian_param(store, rng, "fusion.proj.w", &[cfg.d_model, cfg.lm_dim], 1e-3)?;
        let proj_b = crate::nn::const_param(store, "fusion.proj.b", &[cfg.lm_dim], 0.0)?;
        Ok(FusionCore {
            cfg,
            bank,
            layers,
            final_norm,
            proj_w,
            proj_b,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    /// Pre-norm cross-attention sublayer: queries attend over every
    /// vision token, with a residual connection around the block.
    pub fn cross_attend(&self, tape: &Tape, queries: &Tensor, vision: &Tensor, layer_idx: usize) -> Result<Tensor> {
        let layer = &self.layers[layer_idx];
        let normed = layer.norm_cross.forward(tape, queries)?;
        let out = attention(tape, &normed, vision, &layer.cross_attn, false)?;
        tape.add(queries, &out)
    }

    /// Project compressed query states into the LM embedding space.
    pub fn project_to_llm(&self, tape: &Tape, q_out: &Tensor) -> Result<Tensor> {
        tape.add_bias(&tape.matmul(q_out, &self.proj_w.value())?, &self.proj_b.value())
    }

    /// Run the full fusion stack over a video's vision tokens.
    pub fn fuse(&self, tape: &Tape, vision: &VisionTokens) -> Result<FusedEmbeddings> {
        self.fuse_tokens(tape, &vision.combined)
    }

    /// As [`fuse`](Self::fuse), over a raw `[n, vision_dim]` matrix.
    pub fn fuse_tokens(&self, tape: &Tape, vision: &Tensor) -> Result<FusedEmbeddings> {
        if vision.cols() != self.cfg.vision_dim {
            return Err(FuseError::shape(
                "fuse",
                &[self.cfg.queries, self.cfg.vision_dim],
                vision.shape(),
            ));
        }
        let mut x = self.bank.queries.value();
        for (i, layer) in self.layers.iter().enumerate() {
            let normed = layer.norm_self.forward(tape, &x)?;
            let self_out = attention(tape, &normed, &normed, &layer.self_attn, false)?;
            x = tape.add(&x, &self_out)?;
            x = self.cross_attend(tape, &x, vision, i)?;
            let ffn_out = layer.ffn.forward(tape, &layer.norm_ffn.forward(tape, &x)?)?;
            x = tape.add(&x, &ffn_out)?;
        }
        let tokens = self.project_to_llm(tape, &self.final_norm.forward(tape, &x)?)?;
        Ok(FusedEmbeddings { tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_core(queries: usize, lm_dim: usize) -> (ParamStore, FusionCore) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(31);
        let cfg = FusionConfig {
            queries,
            d_model: 16,
            layers: 2,
            heads: 4,
            vision_dim: 12,
            lm_dim,
            ffn_mult: 2,
        };
        let core = FusionCore::new(cfg, &mut store, &mut rng).unwrap();
        (store, core)
    }

    fn random_vision(seed: u64, rows: usize, dim: usize) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::new(&[rows, dim], (0..rows * dim).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn output_has_fixed_query_budget() {
        let (_s, core) = toy_core(8, 24);
        let tape = Tape::inference();
        for rows in [1usize, 5, 40] {
            let vision = random_vision(rows as u64, rows, 12);
            let fused = core.fuse_tokens(&tape, &vision).unwrap();
            assert_eq!(fused.tokens.shape(), &[8, 24]);
        }
    }

    #[test]
    fn paper_sized_bank_produces_contracted_shape() {
        // 32 queries projected into a 512-wide embedding space.
        let mut store = ParamStore::new();
        let mut rng = Rng::new(33);
        let cfg = FusionConfig {
            queries: 32,
            d_model: 64,
            layers: 2,
            heads: 4,
            vision_dim: 12,
            lm_dim: 512,
            ffn_mult: 2,
        };
        let core = FusionCore::new(cfg, &mut store, &mut rng).unwrap();
        let tape = Tape::inference();
        let fused = core.fuse_tokens(&tape, &random_vision(2, 6, 12)).unwrap();
        assert_eq!(fused.tokens.shape(), &[32, 512]);
    }

    #[test]
    fn zero_layer_config_rejected() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(35);
        let cfg = FusionConfig {
            queries: 4,
            d_model: 16,
            layers: 0,
            heads: 4,
            vision_dim: 12,
            lm_dim: 24,
            ffn_mult: 2,
        };
        assert!(FusionCore::new(cfg, &mut store, &mut rng).is_err());
    }

    #[test]
    fn permuting_vision_rows_leaves_output_unchanged() {
        let (_s, core) = toy_core(8, 24);
        let tape = Tape::inference();
        let vision = random_vision(7, 9, 12);
        let base = core.fuse_tokens(&tape, &vision).unwrap();

        let mut rng = Rng::new(8);
        let mut perm: Vec<usize> = (0..9).collect();
        rng.shuffle(&mut perm);
        let mut data = Vec::with_capacity(9 * 12);
        for &r in &perm {
            data.extend_from_slice(vision.row(r));
        }
        let permuted = Tensor::new(&[9, 12], data).unwrap();
        let out = core.fuse_tokens(&tape, &permuted).unwrap();
        for (a, b) in base.tokens.data().iter().zip(out.tokens.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn projection_is_affine() {
        let (_s, core) = toy_core(4, 10);
        let tape = Tape::inference();
        let zeros = Tensor::zeros(&[4, 16]);
        let out = core.project_to_llm(&tape, &zeros).unwrap();
        // Zero input, zero bias -> zero output.
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_fusion_parameter_receives_gradient() {
        let (store, core) = toy_core(4, 10);
        let tape = Tape::new();
        let vision = random_vision(11, 5, 12);
        let fused = core.fuse_tokens(&tape, &vision).unwrap();
        // Generic downstream loss: sum of squares of the fused tokens.
        let sq = tape.mul(&fused.tokens, &fused.tokens).unwrap();
        let loss = tape.sum(&sq);
        tape.backward(&loss).unwrap();
        for p in store.iter() {
            let grad = p.grad().unwrap_or_default();
            let nonzero = grad.iter().any(|&g| g != 0.0);
            assert!(nonzero, "parameter {} has no gradient", p.name());
        }
    }
}
