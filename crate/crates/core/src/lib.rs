//! Unlikelihood and block-loss training for a small autoregressive language
//! model, with candidate extraction, decoding, metrics and post-hoc dedup.

pub mod candidates;
pub mod corpus;
pub mod decoding;
pub mod dedup;
mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod perf;
pub mod rng;
pub mod tokenizer;

pub use candidates::{BlocklistAutomaton, CandidateSchedule, CandidateSource};
pub use corpus::{CorpusSample, SynthConfig};
pub use decoding::{DecodeConfig, Strategy};
pub use dedup::{DedupConfig, KeepPolicy, Linkage};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{ModelConfig, ModelParams, Objective, TrainPlan};
pub use objectives::{DistributionSequence, LossValue, ObjectiveConfig};
pub use tokenizer::{TokenId, TokenSequence, Vocab};
