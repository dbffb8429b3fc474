//! Video perception: clip partitioning, the patch-transformer encoder
//! producing one global token per clip, and mask-pooled object tokens.
//! The outputs are stacked into a single visual token matrix whose row
//! count is `clips + objects`.

mod encoder;
mod masks;

pub use encoder::{EncoderConfig, VideoEncoder};
pub use masks::{masks_from_frame, synthetic_mask_oracle};

use crate::error::{FuseError, Result};
use crate::tensor::Tensor;

/// A video as a dense `[T, H, W, C]` tensor with values in `[0, 1]`.
#[derive(Clone)]
pub struct Video {
    frames: Tensor,
}

impl Video {
    pub fn new(t: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Video> {
        if t == 0 {
            return Err(FuseError::contract("video needs at least one frame"));
        }
        if c != 1 && c != 3 {
            return Err(FuseError::contract(format!("channel count {c} not in {{1, 3}}")));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(FuseError::contract("video values must lie in [0, 1]"));
        }
        Ok(Video {
            frames: Tensor::new(&[t, h, w, c], data)?,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn data(&self) -> &[f64] {
        self.frames.data()
    }

    /// Flat pixel data of one frame.
    pub fn frame(&self, t: usize) -> &[f64] {
        let stride = self.height() * self.width() * self.channels();
        &self.frames.data()[t * stride..(t + 1) * stride]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> &[f64] {
        let c = self.channels();
        let base = ((t * self.height() + y) * self.width() + x) * c;
        &self.frames.data()[base..base + c]
    }
}

/// How a video is cut into clips, which frames each clip samples, and
/// which frame of each clip is its keyframe (the middle sampled frame).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPlan {
    pub clip_count: usize,
    pub frames_per_clip: usize,
    pub patch_size: usize,
    /// Sampled absolute frame indices, one list per clip.
    pub sampled_indices: Vec<Vec<usize>>,
    pub keyframe_indices: Vec<usize>,
}

impl ClipPlan {
    /// Partition `frame_count` frames into `clip_count` contiguous,
    /// non-overlapping segments and sample `frames_per_clip` frames per
    /// segment at uniform stride (endpoints included).
    pub fn new(
        frame_count: usize,
        clip_count: usize,
        frames_per_clip: usize,
        patch_size: usize,
    ) -> Result<ClipPlan> {
        if clip_count == 0 || frames_per_clip == 0 {
            return Err(FuseError::contract("clip plan needs positive counts"));
        }
        if frame_count < clip_count * frames_per_clip {
            return Err(FuseError::contract(format!(
                "insufficient frames: {frame_count} < {clip_count} clips x {frames_per_clip} frames"
            )));
        }
        let mut sampled_indices = Vec::with_capacity(clip_count);
        let mut keyframe_indices = Vec::with_capacity(clip_count);
        for i in 0..clip_count {
            let start = i * frame_count / clip_count;
            let end = (i + 1) * frame_count / clip_count;
            let len = end - start;
            let picks: Vec<usize> = (0..frames_per_clip)
                .map(|j| {
                    if frames_per_clip == 1 {
                        start
                    } else {
                        let pos = j as f64 * (len - 1) as f64 / (frames_per_clip - 1) as f64;
                        start + (pos + 0.5).floor() as usize
                    }
                })
                .collect();
            keyframe_indices.push(picks[frames_per_clip / 2]);
            sampled_indices.push(picks);
        }
        Ok(ClipPlan {
            clip_count,
            frames_per_clip,
            patch_size,
            sampled_indices,
            keyframe_indices,
        })
    }

    /// Clip index and within-clip slot of a keyframe.
    pub fn locate_frame(&self, frame_index: usize) -> Option<(usize, usize)> {
        for (clip, picks) in self.sampled_indices.iter().enumerate() {
            if let Some(slot) = picks.iter().position(|&f| f == frame_index) {
                return Some((clip, slot));
            }
        }
        None
    }
}

/// One clip: the sampled frames and their absolute indices (the absolute
/// indices drive temporal position embeddings, so clips remain
/// distinguishable after any downstream order-insensitive pooling).
#[derive(Clone)]
pub struct Clip {
    pub frame_indices: Vec<usize>,
    pub frames: Tensor,
}

/// Cut a video according to a plan.
pub fn split_clips(video: &Video, plan: &ClipPlan) -> Result<Vec<Clip>> {
    if video.frame_count() < plan.clip_count * plan.frames_per_clip {
        return Err(FuseError::contract(format!(
            "insufficient frames: {} < {} clips x {} frames",
            video.frame_count(),
            plan.clip_count,
            plan.frames_per_clip
        )));
    }
    let (h, w, c) = (video.height(), video.width(), video.channels());
    plan.sampled_indices
        .iter()
        .map(|picks| {
            let mut data = Vec::with_capacity(picks.len() * h * w * c);
            for &f in picks {
                data.extend_from_slice(video.frame(f));
            }
            Ok(Clip {
                frame_indices: picks.clone(),
                frames: Tensor::new(&[picks.len(), h, w, c], data)?,
            })
        })
        .collect()
}

/// A boolean pixel mask for one object in one frame.
#[derive(Debug, Clone)]
pub struct ObjectMask {
    pub frame_index: usize,
    pub object_id: usize,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl ObjectMask {
    pub fn new(
        frame_index: usize,
        object_id: usize,
        height: usize,
        width: usize,
        mask: Vec<bool>,
    ) -> Result<ObjectMask> {
        if mask.len() != height * width {
            return Err(FuseError::contract("mask size does not match grid"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(FuseError::contract("object mask has no pixels"));
        }
        Ok(ObjectMask {
            frame_index,
            object_id,
            height,
            width,
            mask,
        })
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Global clip tokens stacked above object tokens.
#[derive(Clone)]
pub struct VisionTokens {
    pub global: Tensor,
    pub objects: Option<Tensor>,
    pub combined: Tensor,
}

impl VisionTokens {
    pub fn rows(&self) -> usize {
        self.combined.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.combined.cols()
    }
}

/// Stack `[clips x d]` global tokens on top of `[objects x d]` object
/// tokens. With no objects the combined matrix is the global one.
pub fn build_vision_tokens(global: Tensor, objects: Option<Tensor>) -> Result<VisionTokens> {
    let combined = match &objects {
        Some(obj) => {
            if obj.cols() != global.cols() {
                return Err(FuseError::shape(
                    "build_vision_tokens",
                    global.shape(),
                    obj.shape(),
                ));
            }
            let tape = crate::tensor::Tape::inference();
            tape.concat_rows(&[&global, obj])?
        }
        None => global.clone(),
    };
    Ok(VisionTokens {
        global,
        objects,
        combined,
    })
}
