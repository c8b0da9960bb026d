//! Next-token probability providers and the trainable sequence-to-sequence
//! model used for students and simulators.

mod bigram;
mod cache;
mod remote;
pub mod seq2seq;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_softmax_in_place, log_sum_exp, Scalar};
use crate::synthetic::WorldConfig;
use crate::vocab::Vocab;

pub use bigram::BigramProvider;
pub use cache::CachedProvider;
pub use remote::{RemoteProvider, ENDPOINT_ENV, TOKEN_ENV};

/// Dense next-token log-probabilities over the provider's full vocabulary.
///
/// Index `i` holds `ln P(token i | context)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution<T> {
    logprobs: Vec<T>,
}

impl<T: Scalar> TokenDistribution<T> {
    /// Validates normalization (log-sum-exp = 0) and non-positivity.
    pub fn from_logprobs(logprobs: Vec<T>) -> Result<Self> {
        if logprobs.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let slack = T::lit(1e-9);
        for (i, &lp) in logprobs.iter().enumerate() {
            if lp.is_nan() || lp > slack {
                return Err(Error::InvalidDistribution(format!(
                    "logprob[{i}] = {lp} is not a log-probability"
                )));
            }
        }
        let lse = log_sum_exp(&logprobs);
        if !(lse.abs() <= T::normalization_tolerance()) {
            return Err(Error::InvalidDistribution(format!(
                "log-sum-exp is {lse}, expected 0"
            )));
        }
        Ok(TokenDistribution { logprobs })
    }

    /// Log-softmax of unnormalized scores.
    pub fn from_logits(logits: &[T]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let mut lp = logits.to_vec();
        log_softmax_in_place(&mut lp);
        Self::from_logprobs(lp)
    }

    /// Normalizes a vector of probabilities (need not sum to one).
    pub fn from_probs(probs: &[T]) -> Result<Self> {
        let total = probs.iter().fold(T::zero(), |a, &p| a + p);
        if probs.is_empty() || !(total > T::zero()) {
            return Err(Error::EmptyDistribution);
        }
        Self::from_logprobs(probs.iter().map(|&p| (p / total).ln()).collect())
    }

    pub fn vocab_size(&self) -> usize {
        self.logprobs.len()
    }

    pub fn logprob(&self, token: u32) -> Option<T> {
        self.logprobs.get(token as usize).copied()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.logprobs
    }

    pub fn log_sum_exp(&self) -> T {
        log_sum_exp(&self.logprobs)
    }

    /// Same distribution in another precision.
    pub fn cast<U: Scalar>(&self) -> TokenDistribution<U> {
        TokenDistribution {
            logprobs: self.logprobs.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// The conditioning of one decoding step: the rendered prompt plus the
/// tokens generated so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoringContext {
    pub prompt_text: String,
    pub prefix_tokens: Vec<u32>,
}

impl ScoringContext {
    pub fn new(prompt_text: impl Into<String>, prefix_tokens: Vec<u32>) -> Self {
        ScoringContext {
            prompt_text: prompt_text.into(),
            prefix_tokens,
        }
    }

    /// Full text submitted to a provider. The decoded prefix is always a
    /// suffix of it.
    pub fn context_text(&self, vocab: &Vocab) -> String {
        if self.prefix_tokens.is_empty() {
            return self.prompt_text.clone();
        }
        let prefix = vocab.decode(&self.prefix_tokens);
        let mut text = String::with_capacity(self.prompt_text.len() + prefix.len() + 1);
        text.push_str(&self.prompt_text);
        if !prefix.starts_with('\n') {
            text.push(' ');
        }
        text.push_str(&prefix);
        text
    }
}

/// A source of next-token log-distributions. The provider owns the tokenizer.
///
/// Implementations must be deterministic: identical contexts yield identical
/// distributions.
pub trait LogProbProvider<T: Scalar>: Send + Sync {
    /// Stable identity used in cache keys.
    fn identity(&self) -> String;

    fn vocab(&self) -> &Vocab;

    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>>;
}

impl<T: Scalar, P: LogProbProvider<T> + ?Sized> LogProbProvider<T> for &P {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        (**self).next_token_logprobs(ctx)
    }
}

impl<T: Scalar, P: LogProbProvider<T> + ?Sized> LogProbProvider<T> for Box<P> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        (**self).next_token_logprobs(ctx)
    }
}

impl<T: Scalar, P: LogProbProvider<T> + ?Sized> LogProbProvider<T> for Arc<P> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        (**self).next_token_logprobs(ctx)
    }
}

/// Checks that a provider answered with the full vocabulary.
pub(crate) fn check_full_vocab<T: Scalar>(
    dist: &TokenDistribution<T>,
    vocab: &Vocab,
) -> Result<()> {
    if dist.vocab_size() != vocab.len() {
        return Err(Error::PartialVocabulary {
            got: dist.vocab_size(),
            expected: vocab.len(),
        });
    }
    Ok(())
}

/// Returns the same distribution for every context.
#[derive(Debug, Clone)]
pub struct ConstantProvider<T> {
    vocab: Vocab,
    dist: TokenDistribution<T>,
}

impl<T: Scalar> ConstantProvider<T> {
    pub fn new(vocab: Vocab, dist: TokenDistribution<T>) -> Result<Self> {
        check_full_vocab(&dist, &vocab)?;
        Ok(ConstantProvider { vocab, dist })
    }
}

impl<T: Scalar> LogProbProvider<T> for ConstantProvider<T> {
    fn identity(&self) -> String {
        "constant".into()
    }
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }
    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        if ctx.prompt_text.is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        Ok(self.dist.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    LocalToy,
    Remote,
}

/// Which local model backs a `local-toy` provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ToyModel {
    /// Add-`smoothing` bigram model estimated from a text corpus.
    Bigram { corpus_path: PathBuf, smoothing: f64 },
    /// Answer-conditioned teacher over a generated synthetic world.
    Synthetic { world: WorldConfig },
}

/// Opaque credential. Never serialized or printed.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Secret(s.into())
    }
    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Filled from the environment, never from config files.
    #[serde(skip)]
    pub credentials: Option<Secret>,
    /// Token list of the remote model as a JSON array of strings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub request_timeout: f64,
}

fn default_timeout() -> f64 {
    30.0
}

impl ProviderConfig {
    pub fn local(toy: ToyModel) -> Self {
        ProviderConfig {
            kind: ProviderKind::LocalToy,
            toy: Some(toy),
            endpoint: None,
            credentials: None,
            vocab_path: None,
            cache_path: None,
            request_timeout: default_timeout(),
        }
    }

    /// Pulls endpoint and credential from the environment when unset.
    pub fn with_env(mut self) -> Self {
        if self.kind == ProviderKind::Remote {
            if self.endpoint.is_none() {
                self.endpoint = std::env::var(ENDPOINT_ENV).ok();
            }
            if self.credentials.is_none() {
                self.credentials = std::env::var(TOKEN_ENV).ok().map(Secret::new);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.request_timeout > 0.0) {
            return Err(Error::Config("request_timeout must be positive".into()));
        }
        match self.kind {
            ProviderKind::Remote => {
                if self.endpoint.is_none() {
                    return Err(Error::Config(format!(
                        "remote provider requires an endpoint (config or ${ENDPOINT_ENV})"
                    )));
                }
                if self.vocab_path.is_none() {
                    return Err(Error::Config("remote provider requires vocab_path".into()));
                }
            }
            ProviderKind::LocalToy => {
                if self.toy.is_none() {
                    return Err(Error::Config("local-toy provider requires a toy model".into()));
                }
            }
        }
        Ok(())
    }
}
