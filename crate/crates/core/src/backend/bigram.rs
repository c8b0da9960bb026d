use std::marker::PhantomData;

use sha2::{Digest, Sha256};

use super::{LogProbProvider, ScoringContext, TokenDistribution};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::{words, Vocab};

/// Add-`smoothing` bigram model. The next-token distribution depends only on
/// the last word of the context text; an empty context uses the `<bos>` row.
#[derive(Debug, Clone)]
pub struct BigramProvider<T> {
    vocab: Vocab,
    rows: Vec<TokenDistribution<f64>>,
    identity: String,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> BigramProvider<T> {
    pub fn from_corpus(corpus: &str, smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0) {
            return Err(Error::invalid("bigram smoothing must be positive"));
        }
        let vocab = Vocab::from_texts([corpus]);
        let ids = vocab.encode(corpus);
        if ids.is_empty() {
            return Err(Error::invalid("bigram corpus is empty"));
        }
        let n = vocab.len();
        let mut counts = vec![vec![0usize; n]; n];
        counts[vocab.bos_id() as usize][ids[0] as usize] += 1;
        for pair in ids.windows(2) {
            counts[pair[0] as usize][pair[1] as usize] += 1;
        }
        let rows = counts
            .iter()
            .map(|row| {
                let probs: Vec<f64> = row.iter().map(|&c| c as f64 + smoothing).collect();
                TokenDistribution::from_probs(&probs)
            })
            .collect::<Result<Vec<_>>>()?;
        let digest = Sha256::digest(corpus.as_bytes());
        let identity = format!("bigram:{}:{smoothing}", hex::encode(&digest[..8]));
        Ok(BigramProvider {
            vocab,
            rows,
            identity,
            _scalar: PhantomData,
        })
    }

    /// Distribution following `token`.
    pub fn row(&self, token: u32) -> Option<TokenDistribution<T>> {
        self.rows.get(token as usize).map(|d| d.cast())
    }
}

impl<T: Scalar> LogProbProvider<T> for BigramProvider<T> {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        if ctx.prompt_text.is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        let text = ctx.context_text(&self.vocab);
        let last = words(&text)
            .last()
            .map(|w| self.vocab.id(w).unwrap_or(self.vocab.unk_id()))
            .unwrap_or(self.vocab.bos_id());
        Ok(self.rows[last as usize].cast())
    }
}
