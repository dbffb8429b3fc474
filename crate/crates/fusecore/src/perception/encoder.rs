//! Patch-transformer clip encoder. Each clip's frames are cut into
//! square patches, linearly embedded, tagged with learned spatial and
//! absolute-temporal position embeddings, prefixed with a learned
//! summary token, and run through pre-norm transformer blocks with full
//! attention across all patches of all sampled frames. The final summary
//! row is the clip feature; the remaining rows are per-patch features
//! used for mask pooling.

use crate::error::{FuseError, Result};
use crate::nn::{attention, fan_in_std, gaussian_param, AttnWeights, Ffn, Norm, INIT_STD};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tape, Tensor};

use super::{build_vision_tokens, split_clips, Clip, ClipPlan, ObjectMask, Video, VisionTokens};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub feature_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Size of the absolute-frame-index embedding table; must cover the
    /// longest video the encoder will see.
    pub max_frames: usize,
    pub ffn_mult: usize,
}

impl EncoderConfig {
    pub fn patches_per_row(&self) -> usize {
        self.width / self.patch_size
    }

    pub fn patches_per_col(&self) -> usize {
        self.height / self.patch_size
    }

    pub fn patches_per_frame(&self) -> usize {
        self.patches_per_row() * self.patches_per_col()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    fn validate(&self) -> Result<()> {
        if self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return Err(FuseError::Config(format!(
                "frame size {}x{} not divisible by patch size {}",
                self.height, self.width, self.patch_size
            )));
        }
        if self.feature_dim % self.heads != 0 {
            return Err(FuseError::Config(
                "encoder heads must divide feature_dim".into(),
            ));
        }
        if self.layers == 0 {
            return Err(FuseError::Config("encoder needs at least one block".into()));
        }
        Ok(())
    }
}

struct EncoderBlock {
    norm1: Norm,
    attn: AttnWeights,
    norm2: Norm,
    ffn: Ffn,
}

pub struct VideoEncoder {
    cfg: EncoderConfig,
    patch_w: crate::tensor::Parameter,
    patch_b: crate::tensor::Parameter,
    pos_spatial: crate::tensor::Parameter,
    pos_temporal: crate::tensor::Parameter,
    cls: crate::tensor::Parameter,
    blocks: Vec<EncoderBlock>,
    final_norm: Norm,
}

impl VideoEncoder {
    pub fn new(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<VideoEncoder> {
        cfg.validate()?;
        let d = cfg.feature_dim;
        let patch_w = gaussian_param(store, rng, "encoder.patch_embed.w", &[cfg.patch_dim(), d], fan_in_std(cfg.patch_dim()))?;
        let patch_b = crate::nn::const_param(store, "encoder.patch_embed.b", &[d], 0.0)?;
        let pos_spatial =
            gaussian_param(store, rng, "encoder.pos_spatial", &[cfg.patches_per_frame(), d], INIT_STD)?;
        let pos_temporal =
            gaussian_param(store, rng, "encoder.pos_temporal", &[cfg.max_frames, d], INIT_STD)?;
        let cls = gaussian_param(store, rng, "encoder.cls", &[1, d], INIT_STD)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let name = format!("encoder.block{i}");
            blocks.push(EncoderBlock {
                norm1: Norm::new(store, &format!("{name}.norm1"), d)?,
                attn: AttnWeights::new(store, rng, &format!("{name}.attn"), d, d, cfg.heads)?,
                norm2: Norm::new(store, &format!("{name}.norm2"), d)?,
                ffn: Ffn::new(store, rng, &format!("{name}.ffn"), d, d * cfg.ffn_mult)?,
            });
        }
        let final_norm = Norm::new(store, "encoder.final_norm", d)?;
        Ok(VideoEncoder {
            cfg,
            patch_w,
            patch_b,
            pos_spatial,
            pos_temporal,
            cls,
            blocks,
            final_norm,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Flatten a clip into one row per patch, frame-major.
    fn patchify(&self, clip: &Clip) -> Result<Tensor> {
        let cfg = &self.cfg;
        let (p, c) = (cfg.patch_size, cfg.channels);
        let frames = clip.frame_indices.len();
        let per_frame = cfg.patches_per_frame();
        let mut data = Vec::with_capacity(frames * per_frame * cfg.patch_dim());
        let src = clip.frames.data();
        let frame_stride = cfg.height * cfg.width * c;
        for f in 0..frames {
            for pr in 0..cfg.patches_per_col() {
                for pc in 0..cfg.patches_per_row() {
                    for dy in 0..p {
                        let y = pr * p + dy;
                        let row_base = f * frame_stride + (y * cfg.width + pc * p) * c;
                        data.extend_from_slice(&src[row_base..row_base + p * c]);
                    }
                }
            }
        }
        Tensor::new(&[frames * per_frame, cfg.patch_dim()], data)
    }

    /// Full token matrix for one clip: summary row first, then
    /// `frames x patches` feature rows, all post final normalization.
    pub fn clip_tokens(&self, tape: &Tape, clip: &Clip) -> Result<Tensor> {
        let cfg = &self.cfg;
        if let Some(&bad) = clip
            .frame_indices
            .iter()
            .find(|&&f| f >= cfg.max_frames)
        {
            return Err(FuseError::contract(format!(
                "frame index {bad} exceeds temporal embedding table of {}",
                cfg.max_frames
            )));
        }
        let per_frame = cfg.patches_per_frame();
        let frames = clip.frame_indices.len();

        let patches = self.patchify(clip)?;
        let embedded = tape.add_bias(&tape.matmul(&patches, &self.patch_w.value())?, &self.patch_b.value())?;

        let spatial_idx: Vec<usize> = (0..frames).flat_map(|_| 0..per_frame).collect();
        let temporal_idx: Vec<usize> = clip
            .frame_indices
            .iter()
            .flat_map(|&af| std::iter::repeat_n(af, per_frame))
            .collect();
        let spatial = tape.select_rows(&self.pos_spatial.value(), &spatial_idx)?;
        let temporal = tape.select_rows(&self.pos_temporal.value(), &temporal_idx)?;
        let located = tape.add(&tape.add(&embedded, &spatial)?, &temporal)?;

        let mut x = tape.concat_rows(&[&self.cls.value(), &located])?;
        for block in &self.blocks {
            let normed = block.norm1.forward(tape, &x)?;
            let attn_out = attention(tape, &normed, &normed, &block.attn, false)?;
            x = tape.add(&x, &attn_out)?;
            let ffn_out = block.ffn.forward(tape, &block.norm2.forward(tape, &x)?)?;
            x = tape.add(&x, &ffn_out)?;
        }
        self.final_norm.forward(tape, &x)
    }

    /// The clip's summary feature, `[1, feature_dim]`.
    pub fn encode_clip(&self, tape: &Tape, clip: &Clip) -> Result<Tensor> {
        let tokens = self.clip_tokens(tape, clip)?;
        tape.select_rows(&tokens, &[0])
    }

    /// Global tokens for every clip of a video: `[clips, feature_dim]`.
    pub fn encode_video(&self, tape: &Tape, video: &Video, plan: &ClipPlan) -> Result<Tensor> {
        let clips = split_clips(video, plan)?;
        let globals: Vec<Tensor> = clips
            .iter()
            .map(|clip| self.encode_clip(tape, clip))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = globals.iter().collect();
        tape.concat_rows(&refs)
    }

    /// Pool per-patch features under each object mask. A patch belongs to
    /// a mask when its center pixel (offset patch_size/2) does; a mask
    /// covering no patch center falls back to the patch with the largest
    /// pixel overlap (lowest patch index on ties).
    pub fn extract_object_tokens(
        &self,
        tape: &Tape,
        video: &Video,
        plan: &ClipPlan,
        masks: &[ObjectMask],
    ) -> Result<Option<Tensor>> {
        if masks.is_empty() {
            return Ok(None);
        }
        let cfg = &self.cfg;
        let clips = split_clips(video, plan)?;
        let mut clip_cache: Vec<Option<Tensor>> = vec![None; clips.len()];
        let mut pooled = Vec::with_capacity(masks.len());
        for mask in masks {
            let Some((clip_idx, slot)) = plan.locate_frame(mask.frame_index) else {
                return Err(FuseError::contract(format!(
                    "mask frame {} is not a sampled keyframe",
                    mask.frame_index
                )));
            };
            if mask.height != cfg.height || mask.width != cfg.width {
                return Err(FuseError::contract("mask grid does not match video"));
            }
            if clip_cache[clip_idx].is_none() {
                clip_cache[clip_idx] = Some(self.clip_tokens(tape, &clips[clip_idx])?);
            }
            let tokens = clip_cache[clip_idx].as_ref().unwrap();

            let member_patches = self.patches_in_mask(mask);
            let per_frame = cfg.patches_per_frame();
            let base = 1 + slot * per_frame; // skip summary row
            let rows: Vec<usize> = member_patches.iter().map(|&p| base + p).collect();
            let selected = tape.select_rows(tokens, &rows)?;
            pooled.push(tape.mean_rows(&selected));
        }
        let refs: Vec<&Tensor> = pooled.iter().collect();
        Ok(Some(tape.concat_rows(&refs)?))
    }

    /// Patch indices whose centers lie in the mask, with the
    /// maximal-overlap fallback.
    fn patches_in_mask(&self, mask: &ObjectMask) -> Vec<usize> {
        let cfg = &self.cfg;
        let p = cfg.patch_size;
        let half = p / 2;
        let mut members = Vec::new();
        for pr in 0..cfg.patches_per_col() {
            for pc in 0..cfg.patches_per_row() {
                if mask.contains(pr * p + half, pc * p + half) {
                    members.push(pr * cfg.patches_per_row() + pc);
                }
            }
        }
        if !members.is_empty() {
            return members;
        }
        let mut best = (0usize, 0usize);
        for pr in 0..cfg.patches_per_col() {
            for pc in 0..cfg.patches_per_row() {
                let mut overlap = 0;
                for dy in 0..p {
                    for dx in 0..p {
                        if mask.contains(pr * p + dy, pc * p + dx) {
                            overlap += 1;
                        }
                    }
                }
                let idx = pr * cfg.patches_per_row() + pc;
                if overlap > best.1 {
                    best = (idx, overlap);
                }
            }
        }
        vec![best.0]
    }

    /// Run the full perception stage: global clip tokens plus pooled
    /// object tokens, stacked global-first.
    pub fn perceive(
        &self,
        tape: &Tape,
        video: &Video,
        plan: &ClipPlan,
        masks: &[ObjectMask],
    ) -> Result<VisionTokens> {
        let global = self.encode_video(tape, video, plan)?;
        let objects = self.extract_object_tokens(tape, video, plan, masks)?;
        build_vision_tokens(global, objects)
    }
}
