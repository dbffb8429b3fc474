//! Dataset emission. Each split is a line-delimited record file headed
//! by a metadata line, with video tensors in sidecar binaries:
//!
//! - record file: first line `{"format":"fusecore-dataset","version":1,...}`,
//!   then one JSON record per line with fields
//!   `{seed, video_path, caption, instruction, response, mcq}`.
//! - video file: magic `FVID`, four little-endian u32 dims `[T, H, W, C]`,
//!   then `T*H*W*C` little-endian f64 values in row-major order.
//!
//! Splits draw from disjoint seed ranges; overlapping ranges are rejected
//! before anything is written.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::perception::Video;
use crate::reasoner::TaskKind;
use crate::rng::Rng;

use super::narrate::{make_mcq, narrate, Mcq};
use super::render::render;
use super::sim::simulate;

pub const VIDEO_MAGIC: &[u8; 4] = b"FVID";
pub const DATASET_FORMAT: &str = "fusecore-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Seeds `[start, start + count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    pub fn new(start: u64, count: u64) -> SeedRange {
        SeedRange { start, count }
    }

    pub fn end(&self) -> u64 {
        self.start + self.count
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.count > 0 && other.count > 0 && self.start < other.end() && other.start < self.end()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> {
        self.start..self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetConfig {
    pub out_dir: PathBuf,
    pub stage1: SeedRange,
    pub stage2: SeedRange,
    pub eval: SeedRange,
    /// Frames per video.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqField {
    pub question: String,
    pub options: Vec<String>,
    pub answer: usize,
}

impl From<Mcq> for McqField {
    fn from(m: Mcq) -> McqField {
        McqField {
            question: m.question,
            options: m.options.to_vec(),
            answer: m.answer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub seed: u64,
    pub video_path: String,
    pub caption: String,
    pub instruction: String,
    pub response: String,
    pub mcq: McqField,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitHeader {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub count: u64,
    pub steps: usize,
}

/// Build the full record for one seed. Even seeds carry the reasoning
/// instruction with the explanation as response; odd seeds carry the
/// prediction instruction with the extrapolation as response.
pub fn build_record(seed: u64, steps: usize) -> Record {
    let sim = simulate(seed, steps);
    let narration = narrate(&sim);
    let mut mcq_rng = Rng::stream(seed, "mcq");
    let mcq = make_mcq(&sim, &mut mcq_rng);
    let (task, response) = if seed % 2 == 0 {
        (TaskKind::Reasoning, narration.explanation.clone())
    } else {
        (TaskKind::Prediction, narration.prediction.clone())
    };
    Record {
        seed,
        video_path: format!("videos/sample_{seed:06}.fvid"),
        caption: narration.caption,
        instruction: task.template().text.to_string(),
        response,
        mcq: mcq.into(),
    }
}

/// Serialize a video to the sidecar binary format.
pub fn write_video(path: &Path, video: &Video) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(VIDEO_MAGIC)?;
    for dim in [
        video.frame_count(),
        video.height(),
        video.width(),
        video.channels(),
    ] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in video.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_video(path: &Path) -> Result<Video> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[0..4] != VIDEO_MAGIC {
        return Err(FuseError::Format(format!(
            "{} is not a video tensor file",
            path.display()
        )));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 4 + i * 4;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let numel: usize = dims.iter().product();
    let expect = 20 + numel * 8;
    if bytes.len() != expect {
        return Err(FuseError::Format(format!(
            "{}: expected {expect} bytes for dims {dims:?}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Video::new(dims[0], dims[1], dims[2], dims[3], data)
}

fn write_split(dir: &Path, name: &str, range: &SeedRange, steps: usize) -> Result<()> {
    let header = SplitHeader {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        split: name.to_string(),
        count: range.count,
        steps,
    };
    let file = fs::File::create(dir.join(format!("{name}.jsonl")))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for seed in range.iter() {
        let record = build_record(seed, steps);
        let video = render(&simulate(seed, steps))?;
        write_video(&dir.join(&record.video_path), &video)?;
        writeln!(w, "{}", serde_json::to_string(&record)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Emit stage1 / stage2 / eval splits plus video sidecars.
pub fn emit_dataset(cfg: &DatasetConfig) -> Result<()> {
    let ranges = [
        ("stage1", &cfg.stage1),
        ("stage2", &cfg.stage2),
        ("eval", &cfg.eval),
    ];
    for (i, (na, ra)) in ranges.iter().enumerate() {
        for (nb, rb) in ranges.iter().skip(i + 1) {
            if ra.overlaps(rb) {
                return Err(FuseError::Config(format!(
                    "seed ranges for {na} and {nb} overlap"
                )));
            }
        }
    }
    if cfg.steps == 0 {
        return Err(FuseError::Config("videos need at least one frame".into()));
    }
    fs::create_dir_all(cfg.out_dir.join("videos"))?;
    for (name, range) in ranges {
        write_split(&cfg.out_dir, name, range, cfg.steps)?;
    }
    Ok(())
}

/// Read a split file back: header plus records.
pub fn read_records(path: &Path) -> Result<(SplitHeader, Vec<Record>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| FuseError::Format(format!("{}: empty split file", path.display())))?;
    let header: SplitHeader = serde_json::from_str(header_line)?;
    if header.format != DATASET_FORMAT {
        return Err(FuseError::Format(format!(
            "{}: unexpected format {:?}",
            path.display(),
            header.format
        )));
    }
    let records: Vec<Record> = lines
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    if records.len() as u64 != header.count {
        return Err(FuseError::Format(format!(
            "{}: header claims {} records, found {}",
            path.display(),
            header.count,
            records.len()
        )));
    }
    Ok((header, records))
}
