//! Self-rationalizing student: factual + counterfactual training objective,
//! rationale-then-answer inference and forced-rationale prediction.

use serde::{Deserialize, Serialize};

use crate::backend::seq2seq::{fine_tune_seq2seq, masked_nll, Seq2SeqExample, Seq2SeqModel, Trained};
use crate::error::{Error, Result};
use crate::forge::{encoder_text, flatten, Mode, QAInstance, TrainingInstance, ANSWER_ANCHOR};
use crate::scalar::{argmax_lowest, Scalar};
use crate::vocab::FACTUAL_KEYWORD;

/// Answer recorded when the output has no parseable option after the anchor.
pub const INVALID_ANSWER: &str = "invalid";

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_target_tokens: usize,
    /// Multiplier on the counterfactual part of the objective (1 = plain sum).
    #[serde(default = "one")]
    pub counterfactual_weight: f64,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seeds: default_seeds(),
            epochs: 12,
            batch_size: 8,
            learning_rate: 0.5,
            max_target_tokens: 48,
            counterfactual_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.max_target_tokens == 0 {
            return Err(Error::Config(
                "epochs, batch_size and max_target_tokens must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.counterfactual_weight >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be positive and counterfactual_weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub factual_loss: f64,
    pub counterfactual_loss: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(factual_loss: f64, counterfactual_loss: f64) -> Self {
        LossReport {
            factual_loss,
            counterfactual_loss,
            total: factual_loss + counterfactual_loss,
        }
    }

    /// Component-wise mean; `total` stays the sum of the means.
    pub fn mean_of(reports: &[LossReport]) -> Self {
        if reports.is_empty() {
            return LossReport::new(0.0, 0.0);
        }
        let n = reports.len() as f64;
        LossReport::new(
            reports.iter().map(|r| r.factual_loss).sum::<f64>() / n,
            reports.iter().map(|r| r.counterfactual_loss).sum::<f64>() / n,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub rationale: String,
    pub answer: String,
    pub raw_output: String,
}

/// Masked mean token NLL of one instance under teacher forcing.
pub fn instance_loss<T: Scalar, M: Seq2SeqModel<T>>(model: &M, inst: &TrainingInstance) -> Result<T> {
    let ex = Seq2SeqExample::from_instance(model.vocab(), inst)?;
    let logits = model.teacher_forced_logits(&ex.encoder, &ex.target);
    masked_nll(&logits, &ex.target, &ex.mask)
}

fn batch_loss<T: Scalar, M: Seq2SeqModel<T>>(
    batch: &[TrainingInstance],
    model: &M,
    mode: Mode,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = T::zero();
    for inst in batch {
        if inst.mode != mode {
            return Err(Error::invalid(format!(
                "{}: {:?} instance in a {:?} batch",
                inst.id, inst.mode, mode
            )));
        }
        total += instance_loss(model, inst)?;
    }
    Ok(total / T::lit(batch.len() as f64))
}

/// Mean over instances of the per-token NLL of the whole target.
pub fn compute_factual_loss<T: Scalar, M: Seq2SeqModel<T>>(
    batch: &[TrainingInstance],
    model: &M,
) -> Result<T> {
    batch_loss(batch, model, Mode::Factual)
}

/// Mean over instances of the per-token NLL of the answer tokens only; the
/// rationale is teacher-forced and unsupervised.
pub fn compute_counterfactual_loss<T: Scalar, M: Seq2SeqModel<T>>(
    batch: &[TrainingInstance],
    model: &M,
) -> Result<T> {
    batch_loss(batch, model, Mode::Counterfactual)
}

/// Trains on the summed objective. Without counterfactual instances this is
/// the factual-only baseline.
pub fn train_student<T: Scalar>(
    forged: &[TrainingInstance],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained<T>> {
    if !forged.iter().any(|t| t.mode == Mode::Factual) {
        return Err(Error::invalid("student training needs factual instances"));
    }
    fine_tune_seq2seq(forged, cfg, seed)
}

fn greedy_continue<T: Scalar, M: Seq2SeqModel<T>>(
    model: &M,
    encoder: &[u32],
    mut prefix: Vec<u32>,
    max_len: usize,
) -> Vec<u32> {
    let eos = model.vocab().eos_id();
    while prefix.len() < max_len {
        let logits = model.next_token_logits(encoder, &prefix);
        match argmax_lowest(&logits) {
            Some(t) if t as u32 != eos => prefix.push(t as u32),
            _ => break,
        }
    }
    prefix
}

fn keyword_id<T: Scalar, M: Seq2SeqModel<T>>(model: &M) -> u32 {
    let v = model.vocab();
    v.id(FACTUAL_KEYWORD).unwrap_or(v.unk_id())
}

/// Option named after the anchor, matched case-insensitively; anything else
/// is the invalid sentinel.
fn parse_answer_tail(tail: &str, q: &QAInstance) -> String {
    let tail = tail.trim().trim_end_matches('.').trim();
    q.canonical_option(tail)
        .map(str::to_string)
        .unwrap_or_else(|| INVALID_ANSWER.to_string())
}

/// Splits `"{rationale} So the answer is {answer}"` at the first anchor.
pub fn parse_output(raw: &str, q: &QAInstance) -> (String, String) {
    match raw.find(ANSWER_ANCHOR) {
        Some(pos) => (
            raw[..pos].trim().to_string(),
            parse_answer_tail(&raw[pos + ANSWER_ANCHOR.len()..], q),
        ),
        None => (raw.trim().to_string(), INVALID_ANSWER.to_string()),
    }
}

/// Greedy rationale-then-answer generation from a `[Factual]` decoder start.
/// At most `max_target_tokens` tokens are generated (keyword included).
pub fn predict<T: Scalar, M: Seq2SeqModel<T>>(
    model: &M,
    q: &QAInstance,
    max_target_tokens: usize,
) -> Prediction {
    let vocab = model.vocab();
    let encoder = vocab.encode(&encoder_text(Mode::Factual, q));
    let out = greedy_continue(model, &encoder, vec![keyword_id(model)], max_target_tokens);
    let raw_output = vocab.decode(&out[1..]);
    let (rationale, answer) = parse_output(&raw_output, q);
    Prediction {
        rationale,
        answer,
        raw_output,
    }
}

/// Forces `"[Factual] " + rationale` into the decoder and parses the answer
/// from the generated continuation.
pub fn predict_with_forced_rationale<T: Scalar, M: Seq2SeqModel<T>>(
    model: &M,
    q: &QAInstance,
    rationale: &str,
    max_target_tokens: usize,
) -> Result<String> {
    let rationale = flatten(rationale);
    if rationale.is_empty() {
        return Err(Error::invalid("forced rationale is empty"));
    }
    let vocab = model.vocab();
    let mut prefix = vec![keyword_id(model)];
    prefix.extend(vocab.encode(&rationale));
    Ok(answer_after_forced_ids(model, q, prefix, max_target_tokens))
}

/// Like [`predict_with_forced_rationale`] with an already tokenized
/// rationale (used by the token-level perturbation analysis).
pub fn predict_with_forced_tokens<T: Scalar, M: Seq2SeqModel<T>>(
    model: &M,
    q: &QAInstance,
    rationale: &[u32],
    max_target_tokens: usize,
) -> Result<String> {
    if rationale.is_empty() {
        return Err(Error::invalid("forced rationale is empty"));
    }
    let mut prefix = vec![keyword_id(model)];
    prefix.extend_from_slice(rationale);
    Ok(answer_after_forced_ids(model, q, prefix, max_target_tokens))
}

fn answer_after_forced_ids<T: Scalar, M: Seq2SeqModel<T>>(
    model: &M,
    q: &QAInstance,
    prefix: Vec<u32>,
    max_target_tokens: usize,
) -> String {
    let vocab = model.vocab();
    let encoder = vocab.encode(&encoder_text(Mode::Factual, q));
    let forced = prefix.len();
    let out = greedy_continue(model, &encoder, prefix, max_target_tokens);
    let continuation = vocab.decode(&out[forced..]);
    match continuation.find(ANSWER_ANCHOR) {
        Some(pos) => parse_answer_tail(&continuation[pos + ANSWER_ANCHOR.len()..], q),
        None => INVALID_ANSWER.to_string(),
    }
}
