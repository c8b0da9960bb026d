use std::marker::PhantomData;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_full_vocab, LogProbProvider, ScoringContext, Secret, TokenDistribution};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::Vocab;

pub const ENDPOINT_ENV: &str = "DISTILL_TEACHER_ENDPOINT";
pub const TOKEN_ENV: &str = "DISTILL_TEACHER_TOKEN";

#[derive(Debug, Serialize)]
pub(crate) struct ScoreRequest<'a> {
    pub context_text: &'a str,
    /// 0 requests the full vocabulary.
    pub top_n: usize,
}

#[derive(Debug, Deserialize)]
pub(crate) struct ScoreResponse {
    pub logprobs: Vec<f64>,
}

/// HTTP scorer: `POST {endpoint}` with `{"context_text", "top_n": 0}`,
/// answered by `{"logprobs": [..]}` dense over the shared vocabulary.
pub struct RemoteProvider<T> {
    endpoint: String,
    credentials: Option<Secret>,
    vocab: Vocab,
    agent: ureq::Agent,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> RemoteProvider<T> {
    pub fn new(
        endpoint: impl Into<String>,
        credentials: Option<Secret>,
        vocab: Vocab,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteProvider {
            endpoint: endpoint.into(),
            credentials,
            vocab,
            agent,
            _scalar: PhantomData,
        }
    }

    /// Reads a JSON array of tokens, indexed by id.
    pub fn load_vocab(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = serde_json::from_str(&text)?;
        Vocab::try_from(tokens).map_err(|m| Error::Config(format!("{}: {m}", path.display())))
    }
}

fn transport(err: ureq::Error) -> Error {
    let retryable = matches!(
        err,
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed
    );
    Error::Transport {
        message: err.to_string(),
        retryable,
    }
}

impl<T: Scalar> LogProbProvider<T> for RemoteProvider<T> {
    fn identity(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        if ctx.prompt_text.is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        let text = ctx.context_text(&self.vocab);
        let mut req = self.agent.post(&self.endpoint);
        if let Some(secret) = &self.credentials {
            req = req.header("Authorization", &format!("Bearer {}", secret.expose()));
        }
        let mut resp = req
            .send_json(ScoreRequest {
                context_text: &text,
                top_n: 0,
            })
            .map_err(transport)?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Error::Transport {
                message: format!("HTTP {status} from {}", self.endpoint),
                retryable: status >= 500 || status == 429,
            });
        }
        let body: ScoreResponse = resp.body_mut().read_json().map_err(transport)?;
        if body.logprobs.len() != self.vocab.len() {
            return Err(Error::PartialVocabulary {
                got: body.logprobs.len(),
                expected: self.vocab.len(),
            });
        }
        let dist = TokenDistribution::from_logprobs(
            body.logprobs.into_iter().map(T::lit).collect(),
        )?;
        check_full_vocab(&dist, &self.vocab)?;
        Ok(dist)
    }
}
