//! Iterative optimisation of contextual prompt templates.
//!
//! A run scores a manual pool of templates by mean ROUGE-L F1 over a fixed
//! dataset sample, selects exemplars with a feeder method, then repeatedly
//! meta-prompts a chat model for new templates, scores them, and picks the
//! next exemplars with a propagation method. Every batch is persisted to a
//! run directory and summarised by mean, max and pairwise similarity.

pub mod dataset;
pub mod engine;
pub mod gateway;
pub mod regeneration;
pub mod report;
pub mod rouge;
pub mod similarity;
pub mod types;

pub use dataset::{EvalSample, TaskRecord};
pub use gateway::{ChatClient, ChatRequest, ChatResponse, GatewayError, HttpClient, HttpConfig, ScriptedClient};
pub use regeneration::{MetaPrompt, PoolLabel, TemplatePool};
pub use rouge::RougeScore;
pub use similarity::SimilarityRatio;
pub use types::{
    batch_stats, rank, BatchStats, Combo, FeederKind, Generation, Origin, PromptTemplate, PropagationKind, RunConfig,
    ScoredTemplate, TaskKind,
};
