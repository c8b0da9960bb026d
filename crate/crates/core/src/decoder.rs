//! Rationale generation from a teacher: greedy decoding and contrastive
//! decoding against a perturbed answer.
//!
//! The contrastive score of token `t` is
//! `log P(t | gold) + G(t)` with growth `G(t) = log P(t | gold) - log P(t | perturbed)`,
//! where both contexts share the same prompt demonstrations and the same
//! generated prefix and differ only in the answer slot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{check_full_vocab, LogProbProvider, ScoringContext, TokenDistribution};
use crate::error::{Error, Result};
use crate::forge::{render_prompt, Demonstration, QAInstance};
use crate::scalar::{argmax_lowest, Scalar};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    CdEmpty,
    CdWrong,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::CdEmpty => "cd-empty",
            Strategy::CdWrong => "cd-wrong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_stops")]
    pub stop_sequences: Vec<String>,
    /// `None` scores the full vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_top_k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_tokens() -> usize {
    64
}

fn default_stops() -> Vec<String> {
    vec!["\n\n".into(), "Q:".into()]
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::CdWrong,
            max_tokens: default_max_tokens(),
            stop_sequences: default_stops(),
            candidate_top_k: None,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        DecodeConfig {
            strategy,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if self.stop_sequences.is_empty() || self.stop_sequences.iter().any(String::is_empty) {
            return Err(Error::Config("stop_sequences must be non-empty strings".into()));
        }
        if self.candidate_top_k == Some(0) {
            return Err(Error::Config("candidate_top_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    Empty,
    Wrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerOrigin {
    Empty,
    Flipped,
    SampledIncorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedAnswer {
    pub text: String,
    pub origin: AnswerOrigin,
}

/// Perturbation of the instance's gold answer.
pub fn perturb_answer<R: Rng + ?Sized>(
    q: &QAInstance,
    mode: PerturbMode,
    rng: &mut R,
) -> Result<PerturbedAnswer> {
    perturb_against(&q.options, &q.gold_answer, mode, rng)
}

/// Perturbation of an arbitrary conditioning answer: the empty string, the
/// other option of a two-option task, or a uniformly drawn other option.
pub fn perturb_against<R: Rng + ?Sized>(
    options: &[String],
    answer: &str,
    mode: PerturbMode,
    rng: &mut R,
) -> Result<PerturbedAnswer> {
    match mode {
        PerturbMode::Empty => Ok(PerturbedAnswer {
            text: String::new(),
            origin: AnswerOrigin::Empty,
        }),
        PerturbMode::Wrong => {
            let others: Vec<&String> = options.iter().filter(|o| o.as_str() != answer).collect();
            if options.len() < 2 || others.is_empty() {
                return Err(Error::invalid("a wrong answer needs at least two options"));
            }
            if options.len() == 2 {
                Ok(PerturbedAnswer {
                    text: others[0].clone(),
                    origin: AnswerOrigin::Flipped,
                })
            } else {
                let i = rng.gen_range(0..others.len());
                Ok(PerturbedAnswer {
                    text: others[i].clone(),
                    origin: AnswerOrigin::SampledIncorrect,
                })
            }
        }
    }
}

/// Highest log-probability token, lowest id on ties.
pub fn greedy_step<T: Scalar>(dist: &TokenDistribution<T>) -> Result<u32> {
    argmax_lowest(dist.as_slice())
        .map(|i| i as u32)
        .ok_or(Error::EmptyDistribution)
}

fn aligned<T: Scalar>(gold: &TokenDistribution<T>, pert: &TokenDistribution<T>) -> Result<()> {
    if gold.vocab_size() != pert.vocab_size() {
        return Err(Error::invalid(format!(
            "distributions over different vocabularies ({} vs {})",
            gold.vocab_size(),
            pert.vocab_size()
        )));
    }
    Ok(())
}

/// `log P(t | gold) - log P(t | perturbed)`.
pub fn plausibility_growth<T: Scalar>(
    gold: &TokenDistribution<T>,
    pert: &TokenDistribution<T>,
    t: u32,
) -> Result<T> {
    aligned(gold, pert)?;
    let g = gold.logprob(t).ok_or(Error::TokenOutOfSupport(t))?;
    let p = pert.logprob(t).ok_or(Error::TokenOutOfSupport(t))?;
    Ok(g - p)
}

/// `log P(t | gold) + G(t)`.
pub fn contrastive_score<T: Scalar>(
    gold: &TokenDistribution<T>,
    pert: &TokenDistribution<T>,
    t: u32,
) -> Result<T> {
    let g = gold.logprob(t).ok_or(Error::TokenOutOfSupport(t))?;
    if g == T::neg_infinity() {
        return Ok(T::neg_infinity());
    }
    Ok(g + plausibility_growth(gold, pert, t)?)
}

/// Argmax of the contrastive score over `candidates`, lowest id on ties.
pub fn contrastive_step<T: Scalar>(
    gold: &TokenDistribution<T>,
    pert: &TokenDistribution<T>,
    candidates: &[u32],
) -> Result<u32> {
    aligned(gold, pert)?;
    let mut best: Option<(u32, T)> = None;
    for &t in candidates {
        let s = contrastive_score(gold, pert, t)?;
        let s = if s.is_nan() { T::neg_infinity() } else { s };
        best = match best {
            Some((bt, bs)) if s < bs || (s == bs && t > bt) => Some((bt, bs)),
            _ => Some((t, s)),
        };
    }
    best.map(|(t, _)| t).ok_or(Error::EmptyCandidates)
}

/// The whole vocabulary, or the `k` most probable tokens under `gold`
/// (lowest id first among equals), returned in ascending id order.
pub fn candidate_set<T: Scalar>(gold: &TokenDistribution<T>, top_k: Option<usize>) -> Vec<u32> {
    let n = gold.vocab_size() as u32;
    match top_k {
        None => (0..n).collect(),
        Some(k) if k as u32 >= n => (0..n).collect(),
        Some(k) => {
            let lp = gold.as_slice();
            let mut ids: Vec<u32> = (0..n).collect();
            ids.sort_by(|&a, &b| {
                lp[b as usize]
                    .partial_cmp(&lp[a as usize])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            ids.truncate(k);
            ids.sort_unstable();
            ids
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub greedy_logprob: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRationale {
    pub text: String,
    pub token_ids: Vec<u32>,
    pub per_step_scores: Vec<StepScore>,
    pub strategy: Strategy,
}

/// Decodes a rationale for `answer` until a stop sequence, `<eos>` or
/// `max_tokens`. A stop sequence is cut from the text together with the
/// token that completed it.
pub fn generate_rationale<T, P>(
    provider: &P,
    q: &QAInstance,
    answer: &str,
    demos: &[Demonstration],
    cfg: &DecodeConfig,
) -> Result<GeneratedRationale>
where
    T: Scalar,
    P: LogProbProvider<T> + ?Sized,
{
    cfg.validate()?;
    let prompt = render_prompt(demos, q, answer)?.into_string();
    let perturbed_prompt = match cfg.strategy {
        Strategy::Greedy => None,
        Strategy::CdEmpty => Some(render_prompt(demos, q, "")?.into_string()),
        Strategy::CdWrong => {
            let mut rng = rng_for(cfg.seed, &q.id);
            let wrong = perturb_against(&q.options, answer, PerturbMode::Wrong, &mut rng)?;
            Some(render_prompt(demos, q, &wrong.text)?.into_string())
        }
    };
    let vocab = provider.vocab();
    let eos = vocab.eos_id();
    let mut tokens: Vec<u32> = Vec::new();
    let mut scores: Vec<StepScore> = Vec::new();
    let mut stopped_text: Option<String> = None;

    let abort = |tokens: &[u32], e: Error| Error::DecodeAborted {
        partial: vocab.decode(tokens),
        token_ids: tokens.to_vec(),
        source: Box::new(e),
    };
    let score = |ctx: ScoringContext| -> Result<TokenDistribution<T>> {
        let d = provider.next_token_logprobs(&ctx)?;
        check_full_vocab(&d, vocab)?;
        Ok(d)
    };

    while tokens.len() < cfg.max_tokens {
        let gold = score(ScoringContext::new(prompt.clone(), tokens.clone()))
            .map_err(|e| abort(&tokens, e))?;
        let (tok, step) = match &perturbed_prompt {
            None => {
                let t = greedy_step(&gold).map_err(|e| abort(&tokens, e))?;
                let lp = gold.logprob(t).unwrap_or(T::neg_infinity()).as_f64();
                (t, StepScore { greedy_logprob: lp, growth: 0.0 })
            }
            Some(pp) => {
                let pert = score(ScoringContext::new(pp.clone(), tokens.clone()))
                    .map_err(|e| abort(&tokens, e))?;
                let cands = candidate_set(&gold, cfg.candidate_top_k);
                let t = contrastive_step(&gold, &pert, &cands).map_err(|e| abort(&tokens, e))?;
                let growth = plausibility_growth(&gold, &pert, t).map_err(|e| abort(&tokens, e))?;
                let lp = gold.logprob(t).unwrap_or(T::neg_infinity()).as_f64();
                (t, StepScore { greedy_logprob: lp, growth: growth.as_f64() })
            }
        };
        if tok == eos {
            break;
        }
        tokens.push(tok);
        scores.push(step);
        let text = vocab.decode(&tokens);
        let stop_at = cfg
            .stop_sequences
            .iter()
            .filter_map(|s| text.find(s.as_str()))
            .min();
        if let Some(pos) = stop_at {
            tokens.pop();
            scores.pop();
            stopped_text = Some(text[..pos].trim_end().to_string());
            break;
        }
    }
    let text = stopped_text.unwrap_or_else(|| vocab.decode(&tokens));
    Ok(GeneratedRationale {
        text,
        token_ids: tokens,
        per_step_scores: scores,
        strategy: cfg.strategy,
    })
}
