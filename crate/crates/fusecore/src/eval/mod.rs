//! Automatic evaluation: multiple-choice accuracy plus n-gram and LCS
//! text metrics, and report generation over model outputs.

mod metrics;
mod report;

pub use metrics::{
    accuracy_mcq, bleu, bleu_from_stats, bleu_pair_stats, cider, metric_tokens, rouge_l,
    BleuStats, MAX_NGRAM,
};
pub use report::{
    read_report, run_eval, score_texts, write_report, EvalReport, EvalSummary, ReportHeader,
    SampleScore, TextScores, REPORT_FORMAT, REPORT_VERSION,
};
