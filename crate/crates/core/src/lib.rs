//! Chain-of-thought distillation: contrastive rationale decoding from a
//! teacher, factual plus counterfactual student training, and faithfulness
//! evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for common use.

pub mod backend;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod forge;
pub mod ingest;
pub mod pipeline;
pub mod scalar;
pub mod student;
pub mod synthetic;
pub mod util;
pub mod vocab;

pub use backend::seq2seq::{Seq2SeqModel, TinySeq2Seq};
pub use backend::{LogProbProvider, ProviderConfig, ScoringContext, TokenDistribution};
pub use decoder::{generate_rationale, DecodeConfig, Strategy};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use forge::{QAInstance, TrainingInstance};
pub use scalar::Scalar;
pub use student::TrainConfig;
pub use vocab::Vocab;

pub type LogProbs = TokenDistribution<f64>;
pub type LogProbs32 = TokenDistribution<f32>;
pub type Student = TinySeq2Seq<f64>;
pub type Student32 = TinySeq2Seq<f32>;
