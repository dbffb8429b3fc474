//! The assembled video reasoner: encoder, fusion module, language model,
//! and tokenizer behind one parameter store, plus the inference path
//! (extract features, fuse, build the prompt, generate) and per-option
//! likelihood scoring for multiple-choice evaluation.

use serde::{Deserialize, Serialize};

use crate::datasynth::Mcq;
use crate::error::{FuseError, Result};
use crate::fusion::{FusedEmbeddings, FusionConfig, FusionCore};
use crate::perception::{masks_from_frame, ClipPlan, EncoderConfig, ObjectMask, Video, VideoEncoder};
use crate::reasoner::{
    generate, DecoderLm, GenerationConfig, LmConfig, TaskKind, TokenSequence, Vocabulary, BOS, EOS,
};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tape, Tensor};

/// Every dimension of the assembled model. Serialized into checkpoints
/// so a saved model can be reconstructed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Square frame edge (height = width).
    pub frame: usize,
    pub channels: usize,
    pub patch_size: usize,
    /// Frames per video.
    pub frames: usize,
    pub clips: usize,
    pub frames_per_clip: usize,
    pub encoder_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub queries: usize,
    pub fusion_dim: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub lm_dim: usize,
    pub lm_layers: usize,
    pub lm_heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
}

impl ModelDims {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            height: self.frame,
            width: self.frame,
            channels: self.channels,
            patch_size: self.patch_size,
            feature_dim: self.encoder_dim,
            layers: self.encoder_layers,
            heads: self.encoder_heads,
            max_frames: self.frames,
            ffn_mult: self.ffn_mult,
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            queries: self.queries,
            d_model: self.fusion_dim,
            layers: self.fusion_layers,
            heads: self.fusion_heads,
            vision_dim: self.encoder_dim,
            lm_dim: self.lm_dim,
            ffn_mult: self.ffn_mult,
        }
    }

    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            vocab_size,
            d_model: self.lm_dim,
            layers: self.lm_layers,
            heads: self.lm_heads,
            max_len: self.max_len,
            ffn_mult: self.ffn_mult,
        }
    }
}

/// Encoder, fusion core, and language model over one parameter store.
pub struct Pipeline {
    pub dims: ModelDims,
    pub store: ParamStore,
    pub encoder: VideoEncoder,
    pub fusion: FusionCore,
    pub lm: DecoderLm,
    pub vocab: Vocabulary,
    /// Highest completed training stage (0 = untrained).
    pub trained_stage: u8,
    /// (rank, alpha) once adapters are attached.
    pub lora_setup: Option<(usize, f64)>,
    /// Whether the language model received its text-only warmup.
    pub lm_warmed: bool,
    pub init_seed: u64,
}

impl Pipeline {
    pub fn new(dims: ModelDims, init_seed: u64) -> Result<Pipeline> {
        let vocab = Vocabulary::closed();
        let mut store = ParamStore::new();
        let mut rng = Rng::stream(init_seed, "init");
        let encoder = VideoEncoder::new(dims.encoder_config(), &mut store, &mut rng)?;
        let fusion = FusionCore::new(dims.fusion_config(), &mut store, &mut rng)?;
        let lm = DecoderLm::new(dims.lm_config(vocab.size()), &mut store, &mut rng)?;
        Ok(Pipeline {
            dims,
            store,
            encoder,
            fusion,
            lm,
            vocab,
            trained_stage: 0,
            lora_setup: None,
            lm_warmed: false,
            init_seed,
        })
    }

    /// Attach low-rank adapters to every language-model linear layer.
    pub fn attach_lora(&mut self, rank: usize, alpha: f64) -> Result<()> {
        let mut rng = Rng::stream(self.init_seed, "lora");
        self.lm.apply_lora_all(&mut self.store, rank, alpha, &mut rng)?;
        self.lora_setup = Some((rank, alpha));
        Ok(())
    }

    pub fn clip_plan(&self, video: &Video) -> Result<ClipPlan> {
        if video.height() != self.dims.frame || video.width() != self.dims.frame {
            return Err(FuseError::contract(format!(
                "video is {}x{}, model expects {}x{}",
                video.height(),
                video.width(),
                self.dims.frame,
                self.dims.frame
            )));
        }
        ClipPlan::new(
            video.frame_count(),
            self.dims.clips,
            self.dims.frames_per_clip,
            self.dims.patch_size,
        )
    }

    /// Recover keyframe object masks from rendered pixels.
    pub fn masks_for_video(&self, video: &Video, plan: &ClipPlan) -> Vec<ObjectMask> {
        let mut masks = Vec::new();
        for &k in &plan.keyframe_indices {
            masks.extend(masks_from_frame(video, k));
        }
        masks
    }

    /// Run perception on an inference tape, yielding constant vision
    /// tokens (the encoder is frozen in both training stages, so these
    /// are computed once per video and reused across steps).
    pub fn vision_tokens(&self, video: &Video, masks: &[ObjectMask]) -> Result<Tensor> {
        let tape = Tape::inference();
        let plan = self.clip_plan(video)?;
        Ok(self.encoder.perceive(&tape, video, &plan, masks)?.combined)
    }

    /// Fused embeddings for a video, inference mode.
    pub fn fused_for_video(&self, video: &Video, masks: &[ObjectMask]) -> Result<FusedEmbeddings> {
        let vision = self.vision_tokens(video, masks)?;
        self.fusion.fuse_tokens(&Tape::inference(), &vision)
    }

    /// Token ids of a task prompt: `<bos>` followed by the template text.
    pub fn prompt_ids(&self, task: TaskKind) -> Vec<u32> {
        let mut ids = vec![BOS];
        ids.extend(self.vocab.tokenize(task.template().text));
        ids
    }

    /// Token ids of an explicit instruction (e.g. a question).
    pub fn instruction_ids(&self, instruction: &str) -> Vec<u32> {
        let mut ids = vec![BOS];
        ids.extend(self.vocab.tokenize(instruction));
        ids
    }

    /// Full inference path: perceive, fuse, prompt, generate, detokenize.
    pub fn generate_text(
        &self,
        video: &Video,
        masks: &[ObjectMask],
        task: TaskKind,
        cfg: &GenerationConfig,
    ) -> Result<String> {
        let fused = self.fused_for_video(video, masks)?;
        let ids = generate(&self.lm, &fused, &self.prompt_ids(task), cfg)?;
        Ok(self.vocab.detokenize(&ids))
    }

    /// Mean masked cross-entropy of `option` as the response to
    /// `question`, under the current model. Lower is more likely.
    pub fn option_loss(&self, fused: &FusedEmbeddings, question: &str, option: &str) -> Result<f64> {
        let tape = Tape::inference();
        let q_ids = self.instruction_ids(question);
        let o_ids = self.vocab.tokenize(option);
        let mut ids = q_ids.clone();
        ids.extend_from_slice(&o_ids);
        ids.push(EOS);
        // Target mask: true on the option tokens and the terminal <eos>.
        let mut mask = vec![false; ids.len()];
        for m in mask.iter_mut().skip(q_ids.len()) {
            *m = true;
        }
        let text = TokenSequence::new(ids, mask)?;
        let loss = crate::training::sequence_loss(&tape, &self.lm, fused, &text)?;
        Ok(loss.item())
    }

    /// Answer a multiple-choice question by likelihood: index of the
    /// option with the lowest per-token loss (lowest index on ties).
    pub fn answer_mcq(&self, fused: &FusedEmbeddings, mcq: &Mcq) -> Result<usize> {
        let mut best = 0usize;
        let mut best_loss = f64::INFINITY;
        for (i, option) in mcq.options.iter().enumerate() {
            let loss = self.option_loss(fused, &mcq.question, option)?;
            if loss < best_loss {
                best_loss = loss;
                best = i;
            }
        }
        Ok(best)
    }
}

/// Toy dimensions used by tests and the default configuration.
pub fn toy_dims() -> ModelDims {
    ModelDims {
        frame: 32,
        channels: 3,
        patch_size: 8,
        frames: 16,
        clips: 4,
        frames_per_clip: 4,
        encoder_dim: 64,
        encoder_layers: 2,
        encoder_heads: 4,
        queries: 8,
        fusion_dim: 64,
        fusion_layers: 2,
        fusion_heads: 4,
        lm_dim: 128,
        lm_layers: 2,
        lm_heads: 4,
        max_len: 256,
        ffn_mult: 2,
    }
}
