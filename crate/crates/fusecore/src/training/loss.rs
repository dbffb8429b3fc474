//! Language-modeling loss and training-sequence assembly.
//!
//! A training text is `[<bos>, tokens..., <eos>]` with a loss mask that
//! is true exactly on the tokens to be learned: the whole caption plus
//! `<eos>` in the alignment stage, only the response plus `<eos>` in the
//! instruction stage. The model input feeds everything but the last
//! token, and position `t`'s logits are scored against token `t+1`.

use crate::error::{FuseError, Result};
use crate::fusion::FusedEmbeddings;
use crate::reasoner::{DecoderLm, TokenSequence, Vocabulary, BOS, EOS};
use crate::tensor::{Tape, Tensor};

/// Mean masked next-token negative log-likelihood. `targets.ids[r]` is
/// the token that `logits` row `r` should predict; the caller has
/// already applied the shifted alignment.
pub fn lm_loss(tape: &Tape, logits: &Tensor, targets: &TokenSequence) -> Result<Tensor> {
    if logits.rows() != targets.len() {
        return Err(FuseError::contract(format!(
            "lm_loss: {} logit rows vs {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let ids: Vec<usize> = targets.ids.iter().map(|&t| t as usize).collect();
    tape.cross_entropy_rows(logits, &ids, &targets.loss_mask)
}

/// Alignment-stage text: learn every caption token and the terminal
/// `<eos>`; never learn to emit `<bos>`.
pub fn stage1_text(vocab: &Vocabulary, caption: &str) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend(vocab.tokenize(caption));
    ids.push(EOS);
    let mut mask = vec![true; ids.len()];
    mask[0] = false;
    TokenSequence::new(ids, mask).expect("lengths equal by construction")
}

/// Instruction-stage text: the instruction tokens are context only; the
/// loss covers the response tokens and the terminal `<eos>`.
pub fn stage2_text(vocab: &Vocabulary, instruction: &str, response: &str) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend(vocab.tokenize(instruction));
    let prompt_len = ids.len();
    ids.extend(vocab.tokenize(response));
    ids.push(EOS);
    let mut mask = vec![false; ids.len()];
    for m in mask.iter_mut().skip(prompt_len) {
        *m = true;
    }
    TokenSequence::new(ids, mask).expect("lengths equal by construction")
}

/// Next-token loss of a text alone (no video prefix); used to give the
/// language model basic command of the corpus grammar before the fusion
/// stages, standing in for a pretrained language backbone.
pub fn text_only_loss(tape: &Tape, lm: &DecoderLm, text: &TokenSequence) -> Result<Tensor> {
    if text.len() < 2 {
        return Err(FuseError::contract("training text needs at least two tokens"));
    }
    let n = text.len() - 1;
    let emb = lm.embed_tokens(tape, &text.ids[..n])?;
    let pos = lm.position_rows(tape, 0, n)?;
    let x = tape.add(&emb, &pos)?;
    let logits = lm.forward_logits(tape, &x)?;
    let targets: Vec<u32> = text.ids[1..].to_vec();
    let mask: Vec<bool> = text.loss_mask[1..].to_vec();
    lm_loss(tape, &logits, &TokenSequence::new(targets, mask)?)
}

/// Forward one training sequence: returns the mean masked loss over the
/// sequence's learnable positions.
pub fn sequence_loss(
    tape: &Tape,
    lm: &DecoderLm,
    fused: &FusedEmbeddings,
    text: &TokenSequence,
) -> Result<Tensor> {
    if text.len() < 2 {
        return Err(FuseError::contract("training text needs at least two tokens"));
    }
    let n_q = fused.count();
    // Feed everything but the final token.
    let input = TokenSequence::prompt(text.ids[..text.len() - 1].to_vec());
    let (e_input, _) = lm.build_input(tape, fused, &input)?;
    let logits = lm.forward_logits(tape, &e_input)?;

    // Row r predicts input position r+1. Text token j sits at input row
    // n_q + j, so its predictor is row n_q + j - 1.
    let total = logits.rows();
    let mut target_ids = vec![0u32; total];
    let mut mask = vec![false; total];
    for j in 1..text.len() {
        let row = n_q + j - 1;
        target_ids[row] = text.ids[j];
        mask[row] = text.loss_mask[j];
    }
    lm_loss(tape, &logits, &TokenSequence::new(target_ids, mask)?)
}
