//! Evaluation runs and report files. A report is line-delimited JSON:
//! a header line, one record per sample, and a trailing summary line.
//! Corpus scores are recomputable from the per-sample records (BLEU from
//! the aggregated n-gram statistics carried on each record).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasynth::{read_records, read_video, simulate, Mcq};
use crate::error::{FuseError, Result};
use crate::perception::synthetic_mask_oracle;
use crate::pipeline::Pipeline;
use crate::reasoner::{generate, GenerationConfig};
use crate::reasoner::Vocabulary;

use super::metrics::{
    accuracy_mcq, bleu_from_stats, bleu_pair_stats, cider, metric_tokens, rouge_l, BleuStats,
};

pub const REPORT_FORMAT: &str = "fusecore-eval-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub seed: u64,
    pub reference: String,
    pub hypothesis: String,
    pub bleu_stats: BleuStats,
    pub rouge_l: f64,
    pub cider: f64,
    pub mcq_prediction: usize,
    pub mcq_answer: usize,
}

/// Corpus-level scores. The fields for metrics that need external
/// linguistic or model resources are reserved and stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub accuracy: f64,
    pub bleu: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor: Option<f64>,
    pub bert_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub checkpoint: String,
    pub strategy: String,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub samples: Vec<SampleScore>,
    pub summary: EvalSummary,
}

/// Text metrics over aligned hypothesis/reference strings.
pub struct TextScores {
    pub per_sample: Vec<(BleuStats, f64, f64)>,
    pub bleu: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

pub fn score_texts(vocab: &Vocabulary, hypotheses: &[String], references: &[String]) -> Result<TextScores> {
    if hypotheses.len() != references.len() || hypotheses.is_empty() {
        return Err(FuseError::InvalidBatch(format!(
            "scoring {} hypotheses against {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let hyp_tokens: Vec<Vec<String>> = hypotheses.iter().map(|h| metric_tokens(vocab, h)).collect();
    let ref_tokens: Vec<Vec<String>> = references.iter().map(|r| metric_tokens(vocab, r)).collect();
    let stats: Vec<BleuStats> = hyp_tokens
        .iter()
        .zip(&ref_tokens)
        .map(|(h, r)| bleu_pair_stats(h, r))
        .collect();
    let rouge: Vec<f64> = hyp_tokens
        .iter()
        .zip(&ref_tokens)
        .map(|(h, r)| rouge_l(h, r))
        .collect();
    let cider_scores = cider(&hyp_tokens, &ref_tokens)?;
    let n = hypotheses.len() as f64;
    Ok(TextScores {
        bleu: bleu_from_stats(&stats),
        rouge_l: rouge.iter().sum::<f64>() / n,
        cider: cider_scores.iter().sum::<f64>() / n,
        per_sample: stats
            .into_iter()
            .zip(rouge)
            .zip(cider_scores)
            .map(|((s, r), c)| (s, r, c))
            .collect(),
    })
}

/// Generate one hypothesis per record of a split, score every metric,
/// and assemble the report.
pub fn run_eval(
    pipeline: &Pipeline,
    data_dir: &Path,
    split: &str,
    gen_cfg: &GenerationConfig,
    checkpoint_label: &str,
) -> Result<EvalReport> {
    gen_cfg.validate()?;
    let (_, records) = read_records(&data_dir.join(format!("{split}.jsonl")))?;
    if records.len() < 2 {
        return Err(FuseError::InvalidBatch(format!(
            "split {split:?} has {} records; evaluation needs at least 2",
            records.len()
        )));
    }
    let mut hypotheses = Vec::with_capacity(records.len());
    let mut references = Vec::with_capacity(records.len());
    let mut mcq_preds = Vec::with_capacity(records.len());
    let mut mcq_answers = Vec::with_capacity(records.len());
    for record in &records {
        let video = read_video(&data_dir.join(&record.video_path))?;
        let plan = pipeline.clip_plan(&video)?;
        let sim = simulate(record.seed, video.frame_count());
        let mut masks = Vec::new();
        for &k in &plan.keyframe_indices {
            masks.extend(synthetic_mask_oracle(&sim.trajectory[k], k));
        }
        let fused = pipeline.fused_for_video(&video, &masks)?;
        let prompt = pipeline.instruction_ids(&record.instruction);
        let ids = generate(&pipeline.lm, &fused, &prompt, gen_cfg)?;
        hypotheses.push(pipeline.vocab.detokenize(&ids));
        references.push(record.response.clone());

        let mcq = Mcq {
            question: record.mcq.question.clone(),
            options: [
                record.mcq.options[0].clone(),
                record.mcq.options[1].clone(),
                record.mcq.options[2].clone(),
                record.mcq.options[3].clone(),
            ],
            answer: record.mcq.answer,
        };
        mcq_preds.push(pipeline.answer_mcq(&fused, &mcq)?);
        mcq_answers.push(record.mcq.answer);
    }
    let text = score_texts(&pipeline.vocab, &hypotheses, &references)?;
    let accuracy = accuracy_mcq(&mcq_preds, &mcq_answers)?;
    let samples: Vec<SampleScore> = records
        .iter()
        .enumerate()
        .map(|(i, record)| SampleScore {
            seed: record.seed,
            reference: references[i].clone(),
            hypothesis: hypotheses[i].clone(),
            bleu_stats: text.per_sample[i].0,
            rouge_l: text.per_sample[i].1,
            cider: text.per_sample[i].2,
            mcq_prediction: mcq_preds[i],
            mcq_answer: mcq_answers[i],
        })
        .collect();
    Ok(EvalReport {
        header: ReportHeader {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            split: split.to_string(),
            checkpoint: checkpoint_label.to_string(),
            strategy: format!("{:?}", gen_cfg.strategy).to_lowercase(),
            top_p: gen_cfg.top_p,
            temperature: gen_cfg.temperature,
            seed: gen_cfg.seed,
        },
        summary: EvalSummary {
            samples: records.len(),
            accuracy,
            bleu: text.bleu,
            rouge_l: text.rouge_l,
            cider: text.cider,
            meteor: None,
            bert_score: None,
        },
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: EvalSummary,
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", serde_json::to_string(&report.header)?)?;
    for sample in &report.samples {
        writeln!(w, "{}", serde_json::to_string(sample)?)?;
    }
    writeln!(
        w,
        "{}",
        serde_json::to_string(&SummaryLine { summary: report.summary.clone() })?
    )?;
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: ReportHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| FuseError::Format("empty report".into()))?,
    )?;
    if header.format != REPORT_FORMAT {
        return Err(FuseError::Format(format!("unexpected format {:?}", header.format)));
    }
    let mut samples = Vec::new();
    let mut summary = None;
    for line in lines {
        if let Ok(s) = serde_json::from_str::<SummaryLine>(line) {
            summary = Some(s.summary);
        } else {
            samples.push(serde_json::from_str::<SampleScore>(line)?);
        }
    }
    let summary = summary.ok_or_else(|| FuseError::Format("report missing summary".into()))?;
    Ok(EvalReport { header, samples, summary })
}
