//! Run orchestration and persistence.
//!
//! A run scores the manual pool, applies the feeder, then for each iteration
//! builds a meta-prompt from the propagation pool, asks the model for new
//! templates, scores them on the shared sample and records the batch.
//!
//! Run directory layout:
//!
//! ```text
//! config.json            resolved RunConfig
//! sample.json            sampled record ids, seed and source digest
//! manual.json            scored manual pool
//! generations/-1.json    feeder output
//! generations/<i>.json   batch generated at iteration i
//! metrics.csv            label,mean,max,similarity (Sm, Sf, 0..I-1)
//! status.json            completed | failed with reason
//! meta/timestamps.json   wall-clock start/finish (the only non-deterministic file)
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, EvalSample, TaskRecord};
use crate::gateway::{ChatClient, ChatRequest, GatewayError};
use crate::regeneration::{
    self, build_meta_prompt, parse_generation, propagate_a, propagate_b, PoolLabel, RegenError, TemplatePool,
};
use crate::rouge::rouge_l;
use crate::similarity::symmetric_ratio;
use crate::types::{
    batch_stats, BatchStats, Generation, Origin, PromptTemplate, PropagationKind, RunConfig, ScoredTemplate, TypeError,
};

/// Attempts per iteration before an unparseable generation aborts the run.
pub const PARSE_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] TypeError),
    #[error(transparent)]
    Manual(#[from] ManualError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Regeneration(#[from] RegenError),
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("template `{id}`: every datapoint failed ({reason})")]
    TemplateFailed { id: String, reason: String },
    #[error("iteration {iteration}: generation unparseable after {attempts} attempts")]
    Unparseable { iteration: u32, attempts: u32 },
    #[error("iteration {iteration}: no generated template could be evaluated")]
    EmptyGeneration { iteration: u32 },
    #[error("run directory {path} already exists and is not empty")]
    RunDirExists { path: PathBuf },
    #[error("persistence failed for {path}: {source}")]
    Persist {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("run already finished")]
    Finished,
}

impl EngineError {
    /// True for errors caused by the configuration or inputs rather than the run itself.
    pub fn is_usage(&self) -> bool {
        matches!(self, EngineError::Config(_) | EngineError::Manual(_))
    }
}

// ---------------------------------------------------------------------------
// Manual templates file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualTemplate {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_score: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ManualError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: template `{id}`: {reason}")]
    Invalid { line: usize, id: String, reason: String },
    #[error("line {line}: duplicate template id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("manual template file has no templates")]
    Empty,
}

impl ManualError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ManualError::Syntax { line, .. }
            | ManualError::Schema { line, .. }
            | ManualError::Invalid { line, .. }
            | ManualError::DuplicateId { line, .. } => Some(*line),
            _ => None,
        }
    }
}

pub fn load_manual_templates(path: &Path) -> Result<Vec<ManualTemplate>, ManualError> {
    let text = fs::read_to_string(path).map_err(|source| ManualError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_manual_templates(&text)
}

pub fn parse_manual_templates(text: &str) -> Result<Vec<ManualTemplate>, ManualError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let t: ManualTemplate = serde_json::from_str(raw).map_err(|e| {
            if e.classify() == serde_json::error::Category::Data {
                ManualError::Schema {
                    line,
                    message: e.to_string(),
                }
            } else {
                ManualError::Syntax {
                    line,
                    message: e.to_string(),
                }
            }
        })?;
        let invalid = |reason: String| ManualError::Invalid {
            line,
            id: t.id.clone(),
            reason,
        };
        if t.id.trim().is_empty() {
            return Err(invalid("id is empty".into()));
        }
        if let Err(e) = PromptTemplate::new(t.id.clone(), t.text.clone(), Origin::Manual) {
            return Err(invalid(e.to_string()));
        }
        if let Some(s) = t.mean_score {
            if !(0.0..=1.0).contains(&s) {
                return Err(invalid(format!("mean_score {s} outside [0, 1]")));
            }
        }
        if !ids.insert(t.id.clone()) {
            return Err(ManualError::DuplicateId { line, id: t.id });
        }
        out.push(t);
    }
    if out.is_empty() {
        return Err(ManualError::Empty);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Template text, a blank line, the context, and the question when present.
pub fn render_task_prompt(template: &PromptTemplate, record: &TaskRecord) -> String {
    let mut out = format!("{}\n\nContext:\n{}", template.text(), record.context);
    if let Some(query) = &record.query {
        out.push_str("\n\nQuestion:\n");
        out.push_str(query);
    }
    out
}

fn answer_request(prompt: String, config: &RunConfig) -> ChatRequest {
    ChatRequest {
        model_name: config.model_name.clone(),
        system_text: None,
        user_text: prompt,
        temperature: config.temperature,
        max_output_tokens: config.answer_max_tokens,
    }
}

/// Scores for one template plus the raw answers behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateEvaluation {
    pub scored: ScoredTemplate,
    /// One per sample record; `None` where the gateway failed.
    pub answers: Vec<Option<String>>,
    pub cache_hit: bool,
}

/// Mean ROUGE-L F1 of `template` over `sample`. A point whose gateway call
/// fails scores 0 and marks the result degraded; if every point fails the
/// template itself fails.
pub fn evaluate_template(
    template: &PromptTemplate,
    sample: &EvalSample,
    client: &dyn ChatClient,
    config: &RunConfig,
) -> Result<ScoredTemplate, EngineError> {
    let mut results = evaluate_batch(std::slice::from_ref(template), sample, client, config);
    results.pop().expect("one result per template").map(|e| e.scored)
}

/// Evaluates templates with up to `client.max_in_flight()` concurrent calls.
/// Jobs are issued template-major, record-minor; with one in flight that is
/// exactly the call order.
pub fn evaluate_batch(
    templates: &[PromptTemplate],
    sample: &EvalSample,
    client: &dyn ChatClient,
    config: &RunConfig,
) -> Vec<Result<TemplateEvaluation, EngineError>> {
    let points = sample.records.len();
    let jobs = templates.len() * points;
    let slots: Mutex<Vec<Option<Result<String, GatewayError>>>> = Mutex::new(vec![None; jobs]);
    let next = AtomicUsize::new(0);
    let workers = client.max_in_flight().clamp(1, jobs.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = next.fetch_add(1, Ordering::SeqCst);
                if job >= jobs {
                    break;
                }
                let (t, r) = (job / points, job % points);
                let prompt = render_task_prompt(&templates[t], &sample.records[r]);
                let result = client.complete(&answer_request(prompt, config)).map(|resp| resp.text);
                slots.lock().expect("slots lock")[job] = Some(result);
            });
        }
    });

    let mut slots = slots.into_inner().expect("slots lock").into_iter();
    templates
        .iter()
        .map(|template| {
            let mut scores = Vec::with_capacity(points);
            let mut answers = Vec::with_capacity(points);
            let mut last_error = None;
            for record in &sample.records {
                match slots.next().flatten().expect("every job ran") {
                    Ok(answer) => {
                        scores.push(rouge_l(&answer, &record.reference).f1);
                        answers.push(Some(answer));
                    }
                    Err(e) => {
                        scores.push(0.0);
                        answers.push(None);
                        last_error = Some(e);
                    }
                }
            }
            if answers.iter().all(Option::is_none) {
                let reason = last_error.map_or_else(|| "empty sample".to_owned(), |e| e.to_string());
                return Err(EngineError::TemplateFailed {
                    id: template.id().to_owned(),
                    reason,
                });
            }
            let mut scored = ScoredTemplate::from_points(template.clone(), scores);
            scored.degraded = last_error.is_some();
            Ok(TemplateEvaluation {
                scored,
                answers,
                cache_hit: false,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persisted records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub sample_size: usize,
    pub source_digest: String,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedTemplate {
    pub id: String,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualRecord {
    pub pool: TemplatePool,
    pub batch_mean: f64,
    pub batch_max: f64,
    pub batch_similarity: Option<f64>,
    pub answers: BTreeMap<String, Vec<Option<String>>>,
}

/// Everything logged for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: i64,
    /// Exemplars shown in the meta-prompt (0 for the feeder batch).
    pub exemplar_count: usize,
    /// Exemplars removed to fit the token budget.
    pub dropped_exemplars: usize,
    pub meta_prompt: Option<String>,
    /// Raw model output of every generation attempt, in order.
    pub raw_outputs: Vec<String>,
    pub parse_attempts: u32,
    pub discarded: Vec<DiscardedTemplate>,
    pub cache_hits: Vec<String>,
    pub generation: Generation,
    pub answers: BTreeMap<String, Vec<Option<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum RunStatus {
    Running,
    Completed,
    Failed(String),
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub mean: f64,
    pub max: f64,
    pub similarity: Option<f64>,
}

impl MetricsRow {
    fn new(label: impl Into<String>, stats: BatchStats) -> Self {
        Self {
            label: label.into(),
            mean: stats.mean,
            max: stats.max,
            similarity: stats.similarity,
        }
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const TIMESTAMPS_FILE: &str = "meta/timestamps.json";

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), EngineError> {
    let persist = |e: csv::Error| EngineError::Persist {
        path: path.to_owned(),
        source: e.into(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(persist)?;
    for row in rows {
        writer.serialize(row).map_err(persist)?;
    }
    writer.flush().map_err(|source| EngineError::Persist {
        path: path.to_owned(),
        source,
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Single-writer handle on a fresh run directory.
#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    /// Creates the directory; refuses to reuse one that already has content.
    pub fn create(root: &Path) -> Result<Self, EngineError> {
        if root.exists() {
            let occupied = fs::read_dir(root)
                .map_err(|source| EngineError::Persist {
                    path: root.to_owned(),
                    source,
                })?
                .next()
                .is_some();
            if occupied {
                return Err(EngineError::RunDirExists { path: root.to_owned() });
            }
        }
        let store = Self { root: root.to_owned() };
        for dir in [root.to_owned(), root.join("generations"), root.join("meta")] {
            fs::create_dir_all(&dir).map_err(|source| EngineError::Persist { path: dir, source })?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), EngineError> {
        let path = self.root.join(rel);
        let mut text = serde_json::to_string_pretty(value).expect("run records serialise");
        text.push('\n');
        fs::write(&path, text).map_err(|source| EngineError::Persist { path, source })
    }

    pub fn write_metrics(&self, rows: &[MetricsRow]) -> Result<(), EngineError> {
        write_metrics(&self.root.join(METRICS_FILE), rows)
    }
}

// ---------------------------------------------------------------------------
// Run state and engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub config: RunConfig,
    pub sample: Option<EvalSample>,
    pub manual_pool: Option<TemplatePool>,
    /// S_-1, stored as generation index -1.
    pub feeder_pool: Option<Generation>,
    pub generations: Vec<Generation>,
    /// Per-iteration logs, parallel to `generations`.
    pub records: Vec<GenerationRecord>,
    pub status: RunStatus,
}

impl RunState {
    pub fn metrics(&self) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        if let Some(pool) = &self.manual_pool {
            if let Ok(stats) = batch_stats(pool.entries(), symmetric_ratio) {
                rows.push(MetricsRow::new("Sm", stats));
            }
        }
        if let Some(feeder) = &self.feeder_pool {
            rows.push(MetricsRow::new("Sf", feeder.stats()));
        }
        for g in &self.generations {
            rows.push(MetricsRow::new(g.index.to_string(), g.stats()));
        }
        rows
    }

    /// Feeder output followed by every generated batch.
    pub fn history(&self) -> Vec<Generation> {
        self.feeder_pool.iter().chain(&self.generations).cloned().collect()
    }
}

#[derive(Debug, Clone)]
struct CachedEvaluation {
    point_scores: Vec<f64>,
    degraded: bool,
    answers: Vec<Option<String>>,
}

pub struct Engine<'a> {
    client: &'a dyn ChatClient,
    store: RunStore,
    state: RunState,
    /// Keyed by (sample digest, template text).
    cache: HashMap<(String, String), CachedEvaluation>,
    started_at: String,
}

impl<'a> Engine<'a> {
    /// Validates the configuration, creates the run directory and writes `config.json`.
    pub fn new(config: RunConfig, client: &'a dyn ChatClient, run_dir: &Path) -> Result<Self, EngineError> {
        config.validate()?;
        let store = RunStore::create(run_dir)?;
        store.write_json(CONFIG_FILE, &config)?;
        Ok(Self {
            client,
            store,
            state: RunState {
                config,
                sample: None,
                manual_pool: None,
                feeder_pool: None,
                generations: Vec::new(),
                records: Vec::new(),
                status: RunStatus::Running,
            },
            cache: HashMap::new(),
            started_at: now(),
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn run_dir(&self) -> &Path {
        self.store.root()
    }

    /// Samples the dataset, scores the manual pool and applies the feeder.
    pub fn prepare(&mut self, manual: &[ManualTemplate], dataset_path: &Path) -> Result<(), EngineError> {
        let config = self.state.config.clone();
        config.validate_with_pool(manual.len())?;

        let records = dataset::load(dataset_path, config.task)?;
        let sample = dataset::sample(&records, config.sample_size, config.seed)?;
        self.store.write_json(
            "sample.json",
            &SampleRecord {
                seed: sample.seed,
                sample_size: sample.len(),
                source_digest: sample.source_digest.clone(),
                ids: sample.ids().into_iter().map(str::to_owned).collect(),
            },
        )?;
        self.state.sample = Some(sample);

        let templates = manual
            .iter()
            .map(|m| PromptTemplate::new(m.id.clone(), m.text.clone(), Origin::Manual))
            .collect::<Result<Vec<_>, _>>()?;
        let to_score: Vec<PromptTemplate> = templates
            .iter()
            .zip(manual)
            .filter(|(_, m)| m.mean_score.is_none())
            .map(|(t, _)| t.clone())
            .collect();
        let (evaluated, _) = self.evaluate(&to_score);
        let mut evaluated = evaluated.into_iter();
        let mut answers = BTreeMap::new();
        let mut entries = Vec::with_capacity(manual.len());
        for (template, m) in templates.into_iter().zip(manual) {
            match m.mean_score {
                Some(score) => entries.push(ScoredTemplate::with_supplied_score(template, score)),
                None => {
                    let eval = evaluated.next().expect("one evaluation per unscored template")?;
                    answers.insert(template.id().to_owned(), eval.answers);
                    entries.push(eval.scored);
                }
            }
        }
        let pool = TemplatePool::new(entries, PoolLabel::Manual)?;
        let stats = batch_stats(pool.entries(), symmetric_ratio)?;
        self.store.write_json(
            "manual.json",
            &ManualRecord {
                pool: pool.clone(),
                batch_mean: stats.mean,
                batch_max: stats.max,
                batch_similarity: stats.similarity,
                answers,
            },
        )?;

        let feeder = regeneration::feed(&pool, config.combo.feeder(), config.n)?;
        let feeder_gen = Generation::new(-1, feeder.into_entries(), symmetric_ratio)?;
        self.store.write_json(
            "generations/-1.json",
            &GenerationRecord {
                index: -1,
                exemplar_count: 0,
                dropped_exemplars: 0,
                meta_prompt: None,
                raw_outputs: Vec::new(),
                parse_attempts: 0,
                discarded: Vec::new(),
                cache_hits: Vec::new(),
                generation: feeder_gen.clone(),
                answers: BTreeMap::new(),
            },
        )?;
        self.state.manual_pool = Some(pool);
        self.state.feeder_pool = Some(feeder_gen);
        self.store.write_metrics(&self.state.metrics())?;
        info!(
            "prepared run in {}: {} manual templates, S_-1 of {}",
            self.store.root().display(),
            manual.len(),
            self.state.feeder_pool.as_ref().map_or(0, |g| g.members.len())
        );
        Ok(())
    }

    /// Exemplar pool for the next iteration under the configured propagation method.
    pub fn exemplar_pool(&self) -> Result<TemplatePool, EngineError> {
        let history = self.state.history();
        let config = &self.state.config;
        Ok(match config.combo.propagation() {
            PropagationKind::Concatenate => propagate_a(&history)?,
            PropagationKind::Resample => propagate_b(&history, config.combo.feeder(), config.n)?,
        })
    }

    /// Runs the next iteration and persists its batch.
    pub fn run_iteration(&mut self) -> Result<&Generation, EngineError> {
        if self.state.status != RunStatus::Running {
            return Err(EngineError::Finished);
        }
        let iteration = self.state.generations.len() as u32;
        if iteration >= self.state.config.iterations {
            return Err(EngineError::Finished);
        }
        let config = self.state.config.clone();
        let pool = self.exemplar_pool()?;
        let meta = build_meta_prompt(&pool, config.batch_size, config.meta_prompt_token_budget, config.task)?;
        let meta_text = meta.render();
        let request = ChatRequest {
            model_name: config.model_name.clone(),
            system_text: None,
            user_text: meta_text.clone(),
            temperature: config.temperature,
            max_output_tokens: config.generation_max_tokens,
        };

        let mut raw_outputs = Vec::new();
        let mut parsed = None;
        for attempt in 1..=PARSE_ATTEMPTS {
            let response = self.client.complete(&request)?;
            let outcome = parse_generation(&response.text, config.batch_size, iteration);
            raw_outputs.push(response.text);
            match outcome {
                Ok(templates) => {
                    parsed = Some(templates);
                    break;
                }
                Err(e) => warn!("iteration {iteration}: attempt {attempt}: {e}"),
            }
        }
        let parse_attempts = raw_outputs.len() as u32;
        let templates = parsed.ok_or(EngineError::Unparseable {
            iteration,
            attempts: parse_attempts,
        })?;

        let (results, cache_hits) = self.evaluate(&templates);
        let mut members = Vec::new();
        let mut answers = BTreeMap::new();
        let mut discarded = Vec::new();
        for (template, result) in templates.iter().zip(results) {
            match result {
                Ok(eval) => {
                    answers.insert(template.id().to_owned(), eval.answers);
                    members.push(eval.scored);
                }
                Err(e) => discarded.push(DiscardedTemplate {
                    id: template.id().to_owned(),
                    text: template.text().to_owned(),
                    reason: e.to_string(),
                }),
            }
        }
        if members.is_empty() {
            return Err(EngineError::EmptyGeneration { iteration });
        }
        if !discarded.is_empty() {
            warn!("iteration {iteration}: discarded {} templates", discarded.len());
        }
        let generation = Generation::new(i64::from(iteration), members, symmetric_ratio)?;
        let record = GenerationRecord {
            index: generation.index,
            exemplar_count: meta.exemplars.len(),
            dropped_exemplars: meta.dropped,
            meta_prompt: Some(meta_text),
            raw_outputs,
            parse_attempts,
            discarded,
            cache_hits,
            generation: generation.clone(),
            answers,
        };
        self.store
            .write_json(&format!("generations/{iteration}.json"), &record)?;
        self.state.generations.push(generation);
        self.state.records.push(record);
        self.store.write_metrics(&self.state.metrics())?;
        info!(
            "iteration {iteration}: mean {:.3}, max {:.3}",
            self.state.generations[iteration as usize].batch_mean, self.state.generations[iteration as usize].batch_max
        );
        Ok(&self.state.generations[iteration as usize])
    }

    /// Evaluates templates, reusing cached scores for texts already seen in
    /// this run. Returns results in input order and the ids served from cache.
    fn evaluate(
        &mut self,
        templates: &[PromptTemplate],
    ) -> (Vec<Result<TemplateEvaluation, EngineError>>, Vec<String>) {
        let sample = self.state.sample.as_ref().expect("sample drawn before evaluation");
        let digest = sample.source_digest.clone();
        let key = |text: &str| (digest.clone(), text.to_owned());

        let mut fresh: Vec<PromptTemplate> = Vec::new();
        let mut fresh_texts = HashSet::new();
        for t in templates {
            if !self.cache.contains_key(&key(t.text())) && fresh_texts.insert(t.text().to_owned()) {
                fresh.push(t.clone());
            }
        }
        let mut failed: HashMap<String, String> = HashMap::new();
        for (t, result) in fresh
            .iter()
            .zip(evaluate_batch(&fresh, sample, self.client, &self.state.config))
        {
            match result {
                Ok(eval) => {
                    let cached = CachedEvaluation {
                        point_scores: eval.scored.point_scores,
                        degraded: eval.scored.degraded,
                        answers: eval.answers,
                    };
                    self.cache.insert(key(t.text()), cached);
                }
                Err(e) => {
                    failed.insert(t.text().to_owned(), e.to_string());
                }
            }
        }

        let mut hits = Vec::new();
        let results = templates
            .iter()
            .map(|t| {
                if let Some(reason) = failed.get(t.text()) {
                    return Err(EngineError::TemplateFailed {
                        id: t.id().to_owned(),
                        reason: reason.clone(),
                    });
                }
                let cached = &self.cache[&key(t.text())];
                let cache_hit = !fresh_texts.remove(t.text());
                if cache_hit {
                    hits.push(t.id().to_owned());
                }
                let mut scored = ScoredTemplate::from_points(t.clone(), cached.point_scores.clone());
                scored.degraded = cached.degraded;
                Ok(TemplateEvaluation {
                    scored,
                    answers: cached.answers.clone(),
                    cache_hit,
                })
            })
            .collect();
        (results, hits)
    }

    pub fn complete(mut self) -> Result<RunState, EngineError> {
        self.state.status = RunStatus::Completed;
        self.finish()?;
        Ok(self.state)
    }

    /// Records the failure and persists whatever the run has produced.
    pub fn fail(mut self, reason: String) -> RunState {
        warn!("run failed: {reason}");
        self.state.status = RunStatus::Failed(reason);
        if let Err(e) = self.finish() {
            warn!("could not persist failed run: {e}");
            if let RunStatus::Failed(reason) = &mut self.state.status {
                reason.push_str(&format!("; {e}"));
            }
        }
        self.state
    }

    fn finish(&self) -> Result<(), EngineError> {
        self.store.write_metrics(&self.state.metrics())?;
        self.store.write_json("status.json", &self.state.status)?;
        let mut stamps = BTreeMap::new();
        stamps.insert("started_at", self.started_at.clone());
        stamps.insert("finished_at", now());
        self.store.write_json(TIMESTAMPS_FILE, &stamps)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Runs a complete optimisation into `run_dir`.
///
/// Configuration problems are returned as errors before anything is written.
/// Failures after the run directory exists are recorded in the returned
/// state's status, with all partial results persisted.
pub fn run(
    config: RunConfig,
    manual: &[ManualTemplate],
    dataset_path: &Path,
    client: &dyn ChatClient,
    run_dir: &Path,
) -> Result<RunState, EngineError> {
    config.validate_with_pool(manual.len())?;
    let mut engine = Engine::new(config, client, run_dir)?;
    if let Err(e) = engine.prepare(manual, dataset_path) {
        return Ok(engine.fail(e.to_string()));
    }
    while engine.state().generations.len() < engine.state().config.iterations as usize {
        if let Err(e) = engine.run_iteration() {
            return Ok(engine.fail(e.to_string()));
        }
    }
    engine.complete()
}
