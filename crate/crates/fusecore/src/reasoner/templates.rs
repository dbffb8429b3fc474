//! Task prompt templates, stored as plain-text assets. The caption task
//! conditions on the video alone (its template is empty), matching the
//! alignment-stage training format so caption generation and alignment
//! training see identical inputs.

use crate::error::{FuseError, Result};

pub const REASONING_PROMPT: &str = include_str!("../../assets/prompt_reasoning.txt");
pub const PREDICTION_PROMPT: &str = include_str!("../../assets/prompt_prediction.txt");
pub const CAPTION_PROMPT: &str = include_str!("../../assets/prompt_caption.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Caption,
    Reasoning,
    Prediction,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Caption => "caption",
            TaskKind::Reasoning => "reasoning",
            TaskKind::Prediction => "prediction",
        }
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        match s {
            "caption" => Ok(TaskKind::Caption),
            "reasoning" => Ok(TaskKind::Reasoning),
            "prediction" => Ok(TaskKind::Prediction),
            other => Err(FuseError::Config(format!(
                "unknown task {other:?}; expected caption | reasoning | prediction"
            ))),
        }
    }

    pub fn template(self) -> PromptTemplate {
        PromptTemplate {
            name: self,
            text: match self {
                TaskKind::Caption => CAPTION_PROMPT,
                TaskKind::Reasoning => REASONING_PROMPT,
                TaskKind::Prediction => PREDICTION_PROMPT,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub name: TaskKind,
    pub text: &'static str,
}
