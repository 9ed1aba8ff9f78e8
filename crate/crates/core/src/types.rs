//! Domain types shared by every stage of an optimisation run, plus the two
//! primitives everything else leans on: ranking and batch statistics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker inserted by the task-prompt renderer in front of a record's context.
/// A template that already carries it has had a context rendered into it.
pub(crate) const RENDERED_CONTEXT_MARKER: &str = "\n\nContext:\n";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("template text is empty")]
    EmptyTemplate,
    #[error("template text contains a rendered context block")]
    RenderedContext,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid run configuration: {0}")]
    Config(String),
}

/// Where a template came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "iteration")]
pub enum Origin {
    Manual,
    Generated(u32),
}

/// An instruction with the task context masked out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    id: String,
    text: String,
    origin: Origin,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>, origin: Origin) -> Result<Self, TypeError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TypeError::EmptyTemplate);
        }
        if text.contains(RENDERED_CONTEXT_MARKER) {
            return Err(TypeError::RenderedContext);
        }
        Ok(Self {
            id: id.into(),
            text,
            origin,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }
}

/// A template together with its per-datapoint ROUGE-L F1 scores.
///
/// Templates whose score was supplied from outside (a manual pool with known
/// scores) carry an empty `point_scores`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTemplate {
    pub template: PromptTemplate,
    pub point_scores: Vec<f64>,
    pub mean_score: f64,
    /// At least one datapoint failed at the gateway and was scored 0.
    #[serde(default)]
    pub degraded: bool,
}

impl ScoredTemplate {
    /// Builds a scored template whose mean is the arithmetic mean of `point_scores`.
    /// An empty score list yields a mean of 0.
    pub fn from_points(template: PromptTemplate, point_scores: Vec<f64>) -> Self {
        let mean_score = mean(&point_scores).unwrap_or(0.0);
        Self {
            template,
            point_scores,
            mean_score,
            degraded: false,
        }
    }

    pub fn with_supplied_score(template: PromptTemplate, mean_score: f64) -> Self {
        Self {
            template,
            point_scores: Vec::new(),
            mean_score,
            degraded: false,
        }
    }

    pub fn text(&self) -> &str {
        self.template.text()
    }

    pub fn id(&self) -> &str {
        self.template.id()
    }
}

/// One batch of scored templates: the feeder output (index -1) or the batch
/// generated at iteration `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub index: i64,
    pub members: Vec<ScoredTemplate>,
    pub batch_mean: f64,
    pub batch_max: f64,
    pub batch_similarity: Option<f64>,
}

impl Generation {
    /// Ranks `members` and computes the batch statistics with `pair_similarity`.
    pub fn new<F>(index: i64, members: Vec<ScoredTemplate>, pair_similarity: F) -> Result<Self, TypeError>
    where
        F: Fn(&str, &str) -> f64,
    {
        let members = rank(members);
        let stats = batch_stats(&members, pair_similarity)?;
        Ok(Self {
            index,
            members,
            batch_mean: stats.mean,
            batch_max: stats.max,
            batch_similarity: stats.similarity,
        })
    }

    pub fn stats(&self) -> BatchStats {
        BatchStats {
            mean: self.batch_mean,
            max: self.batch_max,
            similarity: self.batch_similarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    QuestionAnswering,
    Summarisation,
    DialogueSummarisation,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::QuestionAnswering => "question_answering",
            TaskKind::Summarisation => "summarisation",
            TaskKind::DialogueSummarisation => "dialogue_summarisation",
        }
    }

    /// Human-readable description used in meta-prompts.
    pub fn description(self) -> &'static str {
        match self {
            TaskKind::QuestionAnswering => "question answering from a given context",
            TaskKind::Summarisation => "summarisation of a given document",
            TaskKind::DialogueSummarisation => "summarisation of a given dialogue",
        }
    }

    pub fn has_query(self) -> bool {
        matches!(self, TaskKind::QuestionAnswering)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "question_answering" | "qa" => Ok(TaskKind::QuestionAnswering),
            "summarisation" | "summarization" => Ok(TaskKind::Summarisation),
            "dialogue_summarisation" | "dialogue_summarization" | "dialogue" => Ok(TaskKind::DialogueSummarisation),
            other => Err(TypeError::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeederKind {
    /// Top n.
    TopN,
    /// Top n followed by bottom n.
    TopAndBottomN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationKind {
    /// Whole concatenated history.
    Concatenate,
    /// Feeder-style sampling from the concatenated history.
    Resample,
}

/// Feeder × propagation combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Combo {
    #[serde(rename = "faPa")]
    FaPa,
    #[serde(rename = "fbPa")]
    FbPa,
    #[serde(rename = "faPb")]
    FaPb,
    #[serde(rename = "fbPb")]
    FbPb,
}

impl Combo {
    pub const ALL: [Combo; 4] = [Combo::FaPa, Combo::FbPa, Combo::FaPb, Combo::FbPb];

    pub fn feeder(self) -> FeederKind {
        match self {
            Combo::FaPa | Combo::FaPb => FeederKind::TopN,
            Combo::FbPa | Combo::FbPb => FeederKind::TopAndBottomN,
        }
    }

    pub fn propagation(self) -> PropagationKind {
        match self {
            Combo::FaPa | Combo::FbPa => PropagationKind::Concatenate,
            Combo::FaPb | Combo::FbPb => PropagationKind::Resample,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Combo::FaPa => "faPa",
            Combo::FbPa => "fbPa",
            Combo::FaPb => "faPb",
            Combo::FbPb => "fbPb",
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combo {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Combo::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| TypeError::Config(format!("unknown combo `{s}`")))
    }
}

/// Iteration cap for concatenating propagation; the meta-prompt grows with
/// every iteration and runs into the model's context limit.
pub const MAX_CONCATENATE_ITERATIONS: u32 = 10;

pub const DEFAULT_GENERATION_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_ANSWER_MAX_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskKind,
    pub combo: Combo,
    pub n: usize,
    pub batch_size: usize,
    pub iterations: u32,
    pub sample_size: usize,
    pub temperature: f64,
    pub model_name: String,
    pub seed: u64,
    pub meta_prompt_token_budget: usize,
    pub generation_max_tokens: u32,
    pub answer_max_tokens: u32,
}

impl RunConfig {
    pub fn new(task: TaskKind, combo: Combo, n: usize) -> Self {
        Self {
            task,
            combo,
            n,
            batch_size: 10,
            iterations: 10,
            sample_size: 10,
            temperature: 1.0,
            model_name: "gpt-3.5-turbo".to_owned(),
            seed: 0,
            meta_prompt_token_budget: 12_000,
            generation_max_tokens: DEFAULT_GENERATION_MAX_TOKENS,
            answer_max_tokens: DEFAULT_ANSWER_MAX_TOKENS,
        }
    }

    /// Checks the configuration on its own, without the manual pool.
    pub fn validate(&self) -> Result<(), TypeError> {
        let fail = |msg: String| Err(TypeError::Config(msg));
        if self.n == 0 {
            return fail("n must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if self.sample_size == 0 {
            return fail("sample size must be positive".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 || self.temperature > 2.0 {
            return fail(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.meta_prompt_token_budget == 0 {
            return fail("meta-prompt token budget must be positive".into());
        }
        if self.generation_max_tokens == 0 || self.answer_max_tokens == 0 {
            return fail("max output tokens must be positive".into());
        }
        if self.combo.propagation() == PropagationKind::Concatenate && self.iterations > MAX_CONCATENATE_ITERATIONS {
            return fail(format!(
                "combo {} concatenates the full history and is capped at {} iterations (got {})",
                self.combo, MAX_CONCATENATE_ITERATIONS, self.iterations
            ));
        }
        Ok(())
    }

    /// Full validation including the feeder's size requirement on the manual pool.
    pub fn validate_with_pool(&self, manual_pool_size: usize) -> Result<(), TypeError> {
        self.validate()?;
        let needed = match self.combo.feeder() {
            FeederKind::TopN => self.n,
            FeederKind::TopAndBottomN => 2 * self.n,
        };
        if needed > manual_pool_size {
            return Err(TypeError::Config(format!(
                "combo {} with n = {} needs {} manual templates, pool has {}",
                self.combo, self.n, needed, manual_pool_size
            )));
        }
        Ok(())
    }
}

/// Sorts by mean score, best first. Ties keep their original order.
pub fn rank(mut templates: Vec<ScoredTemplate>) -> Vec<ScoredTemplate> {
    // sort_by is stable
    templates.sort_by(|a, b| b.mean_score.total_cmp(&a.mean_score));
    templates
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean: f64,
    pub max: f64,
    /// Mean pairwise similarity; `None` for batches with fewer than two members.
    pub similarity: Option<f64>,
}

/// Mean and max of member scores, and the mean of `pair_similarity` over all
/// unordered pairs of member texts.
pub fn batch_stats<F>(members: &[ScoredTemplate], pair_similarity: F) -> Result<BatchStats, TypeError>
where
    F: Fn(&str, &str) -> f64,
{
    let scores: Vec<f64> = members.iter().map(|m| m.mean_score).collect();
    let mean = mean(&scores).ok_or(TypeError::EmptyBatch)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let similarity = if members.len() < 2 {
        None
    } else {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                total += pair_similarity(a.text(), b.text());
                pairs += 1;
            }
        }
        Some(total / pairs as f64)
    };

    Ok(BatchStats { mean, max, similarity })
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
