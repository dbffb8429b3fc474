//! Autoregressive decoding: greedy argmax, nucleus (top-p) sampling, and
//! length-normalized beam search. Generation stops at `<eos>` or after
//! `max_new_tokens`. Greedy ties break toward the lowest token id, and
//! the other strategies order candidates the same way, so beam width 1
//! reproduces greedy exactly and sampling is deterministic under a seed.

use crate::error::{FuseError, Result};
use crate::fusion::FusedEmbeddings;
use crate::rng::Rng;
use crate::tensor::Tape;

use super::lm::{DecoderLm, TokenSequence};
use super::vocab::EOS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Nucleus,
    Beam,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "nucleus" => Ok(Strategy::Nucleus),
            "beam" => Ok(Strategy::Beam),
            other => Err(FuseError::Config(format!(
                "unknown strategy {other:?}; expected greedy | nucleus | beam"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub strategy: Strategy,
    pub top_p: f64,
    pub temperature: f64,
    pub beam_width: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            strategy: Strategy::Greedy,
            top_p: 0.9,
            temperature: 1.0,
            beam_width: 3,
            max_new_tokens: 48,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(FuseError::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.temperature <= 0.0 {
            return Err(FuseError::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.beam_width == 0 {
            return Err(FuseError::Config("beam width must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(FuseError::Config("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Logits of the next token after `prompt_ids ++ generated`.
fn next_logits(
    lm: &DecoderLm,
    fused: &FusedEmbeddings,
    prompt_ids: &[u32],
    generated: &[u32],
) -> Result<Vec<f64>> {
    let tape = Tape::inference();
    let mut ids = prompt_ids.to_vec();
    ids.extend_from_slice(generated);
    let (e_input, _) = lm.build_input(&tape, fused, &TokenSequence::prompt(ids))?;
    let logits = lm.forward_logits(&tape, &e_input)?;
    Ok(logits.row(logits.rows() - 1).to_vec())
}

/// Argmax with ties broken toward the lowest token id.
fn greedy_pick(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Sample from the smallest probability prefix reaching `top_p`.
fn nucleus_pick(logits: &[f64], top_p: f64, temperature: f64, rng: &mut Rng) -> u32 {
    let mut probs: Vec<f64> = logits.iter().map(|&x| x / temperature).collect();
    crate::tensor::softmax_inplace(&mut probs);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    let u = rng.uniform() * mass;
    let mut acc = 0.0;
    for &i in &kept {
        acc += probs[i];
        if u < acc {
            return i as u32;
        }
    }
    *kept.last().expect("nucleus keeps at least one token") as u32
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

#[derive(Clone)]
struct Beam {
    ids: Vec<u32>,
    logprob: f64,
    finished: bool,
}

impl Beam {
    fn score(&self) -> f64 {
        // Log-probability normalized by generated length (exponent 1).
        self.logprob / self.ids.len().max(1) as f64
    }
}

fn beam_search(
    lm: &DecoderLm,
    fused: &FusedEmbeddings,
    prompt_ids: &[u32],
    cfg: &GenerationConfig,
) -> Result<Vec<u32>> {
    let mut beams = vec![Beam { ids: Vec::new(), logprob: 0.0, finished: false }];
    for _ in 0..cfg.max_new_tokens {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates: Vec<Beam> = Vec::new();
        for beam in &beams {
            if beam.finished {
                candidates.push(beam.clone());
                continue;
            }
            let lp = log_softmax(&next_logits(lm, fused, prompt_ids, &beam.ids)?);
            for (tok, &l) in lp.iter().enumerate() {
                let mut ids = beam.ids.clone();
                ids.push(tok as u32);
                candidates.push(Beam {
                    ids,
                    logprob: beam.logprob + l,
                    finished: tok as u32 == EOS,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.score()
                .partial_cmp(&a.score())
                .expect("finite scores")
                .then_with(|| a.ids.cmp(&b.ids))
        });
        candidates.truncate(cfg.beam_width);
        beams = candidates;
    }
    Ok(beams.into_iter().next().expect("at least one beam").ids)
}

/// Generate a continuation of the prompt conditioned on the fused video
/// tokens. The returned ids include the terminal `<eos>` when generation
/// stopped on it.
pub fn generate(
    lm: &DecoderLm,
    fused: &FusedEmbeddings,
    prompt_ids: &[u32],
    cfg: &GenerationConfig,
) -> Result<Vec<u32>> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Beam => beam_search(lm, fused, prompt_ids, cfg),
        Strategy::Greedy | Strategy::Nucleus => {
            let mut rng = Rng::new(cfg.seed);
            let mut generated = Vec::new();
            for _ in 0..cfg.max_new_tokens {
                let logits = next_logits(lm, fused, prompt_ids, &generated)?;
                let next = match cfg.strategy {
                    Strategy::Greedy => greedy_pick(&logits),
                    Strategy::Nucleus => {
                        nucleus_pick(&logits, cfg.top_p, cfg.temperature, &mut rng)
                    }
                    Strategy::Beam => unreachable!(),
                };
                generated.push(next);
                if next == EOS {
                    break;
                }
            }
            Ok(generated)
        }
    }
}
