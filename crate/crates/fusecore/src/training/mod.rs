//! Two-stage training: alignment (only the fusion module learns, on
//! caption pairs) followed by instruction tuning (fusion plus low-rank
//! adapters on the language model, on instruction/response pairs). The
//! loop is single-threaded and fully deterministic under a seed, and the
//! whole run state (parameters, optimizer moments, schedule, batch RNG,
//! epoch cursor) round-trips through checkpoints bit-exactly.

mod checkpoint;
mod loss;
mod optim;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use loss::{lm_loss, sequence_loss, stage1_text, stage2_text, text_only_loss};
pub use optim::{AdamWConfig, Moments, OptimizerState};
pub use schedule::LrSchedule;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasynth::{read_video, simulate, Record};
use crate::error::{FuseError, Result};
use crate::perception::synthetic_mask_oracle;
use crate::pipeline::Pipeline;
use crate::reasoner::TokenSequence;
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tape, Tensor};

/// Hyperparameters for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub floor_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Mid-run checkpoint cadence; 0 saves only the final state.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl StageConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.warmup_steps, self.steps, self.base_lr, self.floor_lr)
    }
}

/// Everything the loop needs besides the parameters themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: u8,
    pub step: u64,
    pub optimizer: OptimizerState,
    pub schedule: LrSchedule,
    pub rng: Rng,
    pub epoch_order: Vec<u32>,
    pub epoch_pos: u64,
}

impl TrainState {
    pub fn fresh(stage: u8, cfg: &StageConfig) -> Result<TrainState> {
        Ok(TrainState {
            stage,
            step: 0,
            optimizer: OptimizerState::new(cfg.adamw()),
            schedule: cfg.schedule()?,
            rng: Rng::stream(cfg.seed, "batches"),
            epoch_order: Vec::new(),
            epoch_pos: 0,
        })
    }
}

/// Freeze everything but what the stage trains: stage 1 trains only the
/// fusion module; stage 2 trains the fusion module and any low-rank
/// adapter parameters, with encoder and language-model bases frozen.
pub fn apply_freeze_plan(stage: u8, store: &ParamStore) {
    for p in store.iter() {
        let name = p.name();
        let trainable = name.starts_with("fusion.") || (stage >= 2 && name.contains(".lora_"));
        p.set_frozen(!trainable);
    }
}

/// Text corpus for the language-model warmup: captions, instruction +
/// response pairs, and question + answer lines for every seed in the
/// range. The range must be disjoint from all dataset splits.
pub fn warmup_texts(
    vocab: &crate::reasoner::Vocabulary,
    seeds: &crate::datasynth::SeedRange,
    video_steps: usize,
) -> Vec<TokenSequence> {
    use crate::datasynth::{make_mcq, narrate};
    use crate::reasoner::TaskKind;
    let mut texts = Vec::new();
    for seed in seeds.iter() {
        let sim = simulate(seed, video_steps);
        let n = narrate(&sim);
        let mcq = make_mcq(&sim, &mut Rng::stream(seed, "mcq"));
        texts.push(stage1_text(vocab, &n.caption));
        texts.push(stage1_text(
            vocab,
            &format!("{} {}", TaskKind::Reasoning.template().text, n.explanation),
        ));
        texts.push(stage1_text(
            vocab,
            &format!("{} {}", TaskKind::Prediction.template().text, n.prediction),
        ));
        texts.push(stage1_text(
            vocab,
            &format!("{} {}.", mcq.question, n.prediction_lead),
        ));
    }
    texts
}

/// Train only the language model on text (no video prefix). This is the
/// stand-in for starting from a pretrained language backbone: it runs
/// once, before stage 1, and the resulting weights are frozen through
/// both fusion stages.
pub fn lm_warmup(
    pipeline: &mut Pipeline,
    texts: &[TokenSequence],
    cfg: &StageConfig,
) -> Result<Vec<StepLog>> {
    if texts.is_empty() {
        return Err(FuseError::InvalidBatch("warmup corpus is empty".into()));
    }
    for p in pipeline.store.iter() {
        let trainable = p.name().starts_with("lm.");
        p.set_frozen(!trainable);
    }
    let mut state = TrainState::fresh(0, cfg)?;
    let mut logs = Vec::new();
    while state.step < cfg.steps {
        let t0 = std::time::Instant::now();
        let lr = state.schedule.lr(state.step);
        let batch = next_batch(&mut state, texts.len(), cfg.batch_size)?;
        let tape = Tape::new();
        pipeline.store.zero_grads();
        let inv = 1.0 / batch.len() as f64;
        let mut total: Option<Tensor> = None;
        for idx in batch {
            let loss = text_only_loss(&tape, &pipeline.lm, &texts[idx])?;
            let scaled = tape.scale(&loss, inv);
            total = Some(match total {
                None => scaled,
                Some(acc) => tape.add(&acc, &scaled)?,
            });
        }
        let total = total.expect("non-empty batch");
        tape.backward(&total)?;
        if cfg.clip_norm > 0.0 {
            OptimizerState::clip_global_norm(&pipeline.store, cfg.clip_norm);
        }
        state.optimizer.apply(&pipeline.store, lr);
        logs.push(StepLog {
            step: state.step,
            lr,
            loss: total.item(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        state.step += 1;
    }
    Ok(logs)
}

/// One training example: precomputed (frozen-encoder) vision tokens plus
/// the target text.
pub struct TrainSample {
    pub vision: Tensor,
    pub text: TokenSequence,
}

/// Assemble training samples from dataset records: read the video
/// sidecar, regenerate ground-truth masks from the record's seed, run
/// the frozen encoder once, and build the stage's text sequence.
pub fn build_samples(
    pipeline: &Pipeline,
    records: &[Record],
    data_dir: &Path,
    stage: u8,
) -> Result<Vec<TrainSample>> {
    records
        .iter()
        .map(|record| {
            let video = read_video(&data_dir.join(&record.video_path))?;
            let plan = pipeline.clip_plan(&video)?;
            let sim = simulate(record.seed, video.frame_count());
            let mut masks = Vec::new();
            for &k in &plan.keyframe_indices {
                masks.extend(synthetic_mask_oracle(&sim.trajectory[k], k));
            }
            let vision = pipeline.vision_tokens(&video, &masks)?;
            let text = match stage {
                1 => stage1_text(&pipeline.vocab, &record.caption),
                2 => stage2_text(&pipeline.vocab, &record.instruction, &record.response),
                other => {
                    return Err(FuseError::Config(format!("unknown stage {other}")));
                }
            };
            Ok(TrainSample { vision, text })
        })
        .collect()
}

/// Validate stage order, attach adapters for stage 2, and apply the
/// freeze plan. `lora` is (rank, alpha) for stage 2; `allow_stage_skip`
/// is the explicit escape hatch for running stage 2 from scratch.
pub fn prepare_stage(
    pipeline: &mut Pipeline,
    stage: u8,
    cfg: &StageConfig,
    lora: Option<(usize, f64)>,
    allow_stage_skip: bool,
) -> Result<TrainState> {
    match stage {
        1 => {}
        2 => {
            if pipeline.trained_stage < 1 && !allow_stage_skip {
                return Err(FuseError::contract(
                    "stage 2 requires a stage-1 checkpoint (or an explicit stage-order override)",
                ));
            }
            if let Some((rank, alpha)) = lora {
                if !pipeline.lm.has_lora() {
                    pipeline.attach_lora(rank, alpha)?;
                }
            }
        }
        other => return Err(FuseError::Config(format!("unknown stage {other}"))),
    }
    apply_freeze_plan(stage, &pipeline.store);
    TrainState::fresh(stage, cfg)
}

fn next_batch(state: &mut TrainState, n: usize, batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        if state.epoch_pos as usize >= state.epoch_order.len() {
            state.epoch_order = (0..n as u32).collect();
            state.rng.shuffle(&mut state.epoch_order);
            state.epoch_pos = 0;
        }
        let idx = state.epoch_order[state.epoch_pos as usize] as usize;
        if idx >= n {
            return Err(FuseError::contract(
                "epoch cursor does not match the dataset (resumed with different data?)",
            ));
        }
        out.push(idx);
        state.epoch_pos += 1;
    }
    Ok(out)
}

/// Per-step record of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: f64,
}

/// Run (or resume) a stage until `cfg.steps` optimizer steps have been
/// taken. Returns one log entry per step executed in this call.
pub fn train_stage(
    pipeline: &mut Pipeline,
    state: &mut TrainState,
    samples: &[TrainSample],
    cfg: &StageConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<StepLog>> {
    if samples.is_empty() {
        return Err(FuseError::InvalidBatch("training dataset is empty".into()));
    }
    let mut logs = Vec::new();
    while state.step < cfg.steps {
        let t0 = std::time::Instant::now();
        let lr = state.schedule.lr(state.step);
        let batch = next_batch(state, samples.len(), cfg.batch_size)?;

        let tape = Tape::new();
        pipeline.store.zero_grads();
        let inv = 1.0 / batch.len() as f64;
        let mut total: Option<Tensor> = None;
        for idx in batch {
            let sample = &samples[idx];
            let fused = pipeline.fusion.fuse_tokens(&tape, &sample.vision)?;
            let loss = sequence_loss(&tape, &pipeline.lm, &fused, &sample.text)?;
            let scaled = tape.scale(&loss, inv);
            total = Some(match total {
                None => scaled,
                Some(acc) => tape.add(&acc, &scaled)?,
            });
        }
        let total = total.expect("non-empty batch");
        tape.backward(&total)?;
        if cfg.clip_norm > 0.0 {
            OptimizerState::clip_global_norm(&pipeline.store, cfg.clip_norm);
        }
        state.optimizer.apply(&pipeline.store, lr);

        logs.push(StepLog {
            step: state.step,
            lr,
            loss: total.item(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        state.step += 1;

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps
            {
                save_checkpoint(&stage_checkpoint_path(dir, state.stage, Some(state.step)), pipeline, state)?;
            }
        }
    }
    pipeline.trained_stage = pipeline.trained_stage.max(state.stage);
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&stage_checkpoint_path(dir, state.stage, None), pipeline, state)?;
    }
    Ok(logs)
}

/// `dir/stage{N}_step{K}.fckp` for mid-run saves, `dir/stage{N}.fckp`
/// for the final state.
pub fn stage_checkpoint_path(dir: &Path, stage: u8, step: Option<u64>) -> PathBuf {
    match step {
        Some(s) => dir.join(format!("stage{stage}_step{s}.fckp")),
        None => dir.join(format!("stage{stage}.fckp")),
    }
}
