//! Feeder and propagation methods, meta-prompt construction, and parsing of
//! generated template batches.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::estimate_tokens;
use crate::types::{rank, FeederKind, Generation, Origin, PromptTemplate, ScoredTemplate, TaskKind};

/// Instruction asset with `{task}` and `{count}` placeholders.
pub const META_PROMPT_TEMPLATE: &str = include_str!("../assets/meta_prompt.txt");
pub const META_PROMPT_VERSION: u32 = 1;

pub const TEMPLATE_PREFIX: &str = "TEMPLATE:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegenError {
    #[error("feeder needs {needed} templates, pool has {available}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("n must be positive")]
    ZeroN,
    #[error("duplicate template id `{0}` in pool")]
    DuplicateId(String),
    #[error("empty exemplar pool")]
    EmptyPool,
    #[error("token budget {budget} too small: instruction plus one exemplar needs {needed}")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("unparseable generation")]
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "set", content = "iteration")]
pub enum PoolLabel {
    Manual,
    Feeder,
    Iteration(u32),
    Cumulative,
}

impl fmt::Display for PoolLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolLabel::Manual => f.write_str("S_m"),
            PoolLabel::Feeder => f.write_str("S_f"),
            PoolLabel::Iteration(i) => write!(f, "S_{i}"),
            PoolLabel::Cumulative => f.write_str("cumulative"),
        }
    }
}

/// Scored templates kept best-first with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatePool {
    entries: Vec<ScoredTemplate>,
    label: PoolLabel,
}

impl TemplatePool {
    pub fn new(entries: Vec<ScoredTemplate>, label: PoolLabel) -> Result<Self, RegenError> {
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.id()) {
                return Err(RegenError::DuplicateId(e.id().to_owned()));
            }
        }
        Ok(Self {
            entries: rank(entries),
            label,
        })
    }

    pub fn entries(&self) -> &[ScoredTemplate] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ScoredTemplate> {
        self.entries
    }

    pub fn label(&self) -> PoolLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn relabel(entries: Vec<ScoredTemplate>, label: PoolLabel) -> Self {
        // entries come from an already ranked pool, order is preserved
        Self { entries, label }
    }
}

/// Top `n` of the pool.
pub fn feed_a(pool: &TemplatePool, n: usize) -> Result<TemplatePool, RegenError> {
    if n == 0 {
        return Err(RegenError::ZeroN);
    }
    if n > pool.len() {
        return Err(RegenError::PoolTooSmall {
            needed: n,
            available: pool.len(),
        });
    }
    Ok(TemplatePool::relabel(pool.entries[..n].to_vec(), PoolLabel::Feeder))
}

/// Top `n` followed by bottom `n`; requires `2n <= |pool|` so the halves are disjoint.
pub fn feed_b(pool: &TemplatePool, n: usize) -> Result<TemplatePool, RegenError> {
    if n == 0 {
        return Err(RegenError::ZeroN);
    }
    if 2 * n > pool.len() {
        return Err(RegenError::PoolTooSmall {
            needed: 2 * n,
            available: pool.len(),
        });
    }
    let len = pool.len();
    let mut entries = pool.entries[..n].to_vec();
    entries.extend_from_slice(&pool.entries[len - n..]);
    Ok(TemplatePool::relabel(entries, PoolLabel::Feeder))
}

pub fn feed(pool: &TemplatePool, kind: FeederKind, n: usize) -> Result<TemplatePool, RegenError> {
    match kind {
        FeederKind::TopN => feed_a(pool, n),
        FeederKind::TopAndBottomN => feed_b(pool, n),
    }
}

/// Every template seen so far, deduplicated by exact text (highest score
/// wins, earliest on ties), ranked best-first.
pub fn propagate_a(history: &[Generation]) -> Result<TemplatePool, RegenError> {
    if history.is_empty() {
        return Err(RegenError::EmptyPool);
    }
    let mut entries: Vec<ScoredTemplate> = Vec::new();
    let mut by_text: HashMap<&str, usize> = HashMap::new();
    for member in history.iter().flat_map(|g| &g.members) {
        match by_text.get(member.text()) {
            Some(&at) => {
                if member.mean_score > entries[at].mean_score {
                    entries[at] = member.clone();
                }
            }
            None => {
                by_text.insert(member.text(), entries.len());
                entries.push(member.clone());
            }
        }
    }
    TemplatePool::new(entries, PoolLabel::Cumulative)
}

/// The feeder method applied to the cumulative pool.
pub fn propagate_b(history: &[Generation], feeder: FeederKind, n: usize) -> Result<TemplatePool, RegenError> {
    feed(&propagate_a(history)?, feeder, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPrompt {
    pub instruction_text: String,
    /// Best first.
    pub exemplars: Vec<Exemplar>,
    pub requested_count: usize,
    /// Exemplars removed to fit the token budget.
    pub dropped: usize,
}

impl MetaPrompt {
    pub fn render(&self) -> String {
        render_meta_prompt(&self.instruction_text, &self.exemplars)
    }

    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.render())
    }
}

fn render_meta_prompt(instruction: &str, exemplars: &[Exemplar]) -> String {
    let mut out = String::from(instruction.trim_end());
    out.push_str("\n\n");
    for ex in exemplars {
        out.push_str(&format!("SCORE: {:.3}\nPROMPT: {}\n\n", ex.score, ex.text));
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

pub fn instruction_text(task: TaskKind, requested_count: usize) -> String {
    META_PROMPT_TEMPLATE
        .replace("{task}", task.description())
        .replace("{count}", &requested_count.to_string())
}

/// Builds the meta-prompt, dropping the lowest-ranked exemplars until the
/// estimated size fits `budget` tokens.
pub fn build_meta_prompt(
    pool: &TemplatePool,
    requested_count: usize,
    budget: usize,
    task: TaskKind,
) -> Result<MetaPrompt, RegenError> {
    if pool.is_empty() {
        return Err(RegenError::EmptyPool);
    }
    let instruction_text = instruction_text(task, requested_count);
    let mut exemplars: Vec<Exemplar> = pool
        .entries()
        .iter()
        .map(|e| Exemplar {
            text: e.text().to_owned(),
            score: e.mean_score,
        })
        .collect();

    let total = exemplars.len();
    while !exemplars.is_empty() && estimate_tokens(&render_meta_prompt(&instruction_text, &exemplars)) > budget {
        exemplars.pop();
    }
    if exemplars.is_empty() {
        let needed = estimate_tokens(&render_meta_prompt(&instruction_text, &pool_head(pool)));
        return Err(RegenError::BudgetTooSmall { budget, needed });
    }
    Ok(MetaPrompt {
        instruction_text,
        dropped: total - exemplars.len(),
        exemplars,
        requested_count,
    })
}

fn pool_head(pool: &TemplatePool) -> Vec<Exemplar> {
    pool.entries()
        .iter()
        .take(1)
        .map(|e| Exemplar {
            text: e.text().to_owned(),
            score: e.mean_score,
        })
        .collect()
}

/// Renders templates in the `TEMPLATE:` line format the meta-prompt asks for.
pub fn render_templates<S: AsRef<str>>(texts: &[S]) -> String {
    texts
        .iter()
        .map(|t| format!("{TEMPLATE_PREFIX} {}\n", t.as_ref()))
        .collect()
}

/// Extracts up to `requested_count` templates from raw model output.
///
/// Lines starting with `TEMPLATE:` win; if there are none, numbered or dashed
/// list items are used instead. Exact duplicates and empty texts are dropped.
pub fn parse_generation(raw: &str, requested_count: usize, iteration: u32) -> Result<Vec<PromptTemplate>, RegenError> {
    let lines: Vec<&str> = raw.lines().map(str::trim).collect();

    let tagged: Vec<&str> = lines
        .iter()
        .filter_map(|line| {
            let body = strip_list_marker(line).map_or(*line, str::trim_start);
            strip_prefix_ci(body, TEMPLATE_PREFIX)
        })
        .collect();
    let candidates = if tagged.is_empty() {
        lines.iter().filter_map(|line| strip_list_marker(line)).collect()
    } else {
        tagged
    };

    let mut seen = HashSet::new();
    let mut templates = Vec::new();
    for text in candidates {
        let text = text.trim();
        if text.is_empty() || !seen.insert(text) {
            continue;
        }
        let id = format!("i{iteration}-{:02}", templates.len() + 1);
        if let Ok(t) = PromptTemplate::new(id, text, Origin::Generated(iteration)) {
            templates.push(t);
        }
        if templates.len() == requested_count {
            break;
        }
    }
    if templates.is_empty() {
        Err(RegenError::Unparseable)
    } else {
        Ok(templates)
    }
}

fn strip_prefix_ci<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    let head = line.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &line[prefix.len()..])
}

/// `1. x`, `2) x`, `- x` -> `x`.
fn strip_list_marker(line: &str) -> Option<&str> {
    if let Some(rest) = line.strip_prefix("- ") {
        return Some(rest);
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix('.')
        .or_else(|| rest.strip_prefix(')'))
        .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::symmetric_ratio;
    use proptest::prelude::*;

    fn scored(id: &str, text: &str, score: f64) -> ScoredTemplate {
        ScoredTemplate::with_supplied_score(PromptTemplate::new(id, text, Origin::Manual).unwrap(), score)
    }

    fn pool_of(scores: &[f64]) -> TemplatePool {
        let entries = scores
            .iter()
            .enumerate()
            .map(|(i, s)| scored(&format!("m{i}"), &format!("template {i}"), *s))
            .collect();
        TemplatePool::new(entries, PoolLabel::Manual).unwrap()
    }

    fn scores(pool: &TemplatePool) -> Vec<f64> {
        pool.entries().iter().map(|e| e.mean_score).collect()
    }

    fn ids(pool: &TemplatePool) -> Vec<&str> {
        pool.entries().iter().map(|e| e.id()).collect()
    }

    fn generation(index: i64, members: Vec<ScoredTemplate>) -> Generation {
        Generation::new(index, members, symmetric_ratio).unwrap()
    }

    #[test]
    fn feed_a_examples() {
        let pool = pool_of(&[0.9, 0.7, 0.5, 0.3]);
        assert_eq!(scores(&feed_a(&pool, 2).unwrap()), vec![0.9, 0.7]);
        assert_eq!(feed_a(&pool, 4).unwrap().entries(), pool.entries());
        assert_eq!(feed_a(&pool, 2).unwrap().label(), PoolLabel::Feeder);
        assert_eq!(
            feed_a(&pool, 5),
            Err(RegenError::PoolTooSmall {
                needed: 5,
                available: 4
            })
        );
        assert_eq!(feed_a(&pool, 0), Err(RegenError::ZeroN));

        let tied = pool_of(&[0.5, 0.5, 0.4]);
        assert_eq!(ids(&feed_a(&tied, 1).unwrap()), ["m0"]);
    }

    #[test]
    fn feed_b_examples() {
        let pool = pool_of(&[0.9, 0.7, 0.5, 0.3]);
        assert_eq!(scores(&feed_b(&pool, 1).unwrap()), vec![0.9, 0.3]);
        assert_eq!(scores(&feed_b(&pool, 2).unwrap()), vec![0.9, 0.7, 0.5, 0.3]);
        assert!(feed_b(&pool, 3).is_err());

        let six = pool_of(&[0.6, 0.5, 0.4, 0.3, 0.2, 0.1]);
        assert_eq!(ids(&feed_b(&six, 2).unwrap()), ["m0", "m1", "m4", "m5"]);
    }

    #[test]
    fn pool_rejects_duplicate_ids() {
        let entries = vec![scored("a", "x", 0.1), scored("a", "y", 0.2)];
        assert_eq!(
            TemplatePool::new(entries, PoolLabel::Manual),
            Err(RegenError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn propagate_a_examples() {
        let s = generation(
            -1,
            (0..4)
                .map(|i| scored(&format!("f{i}"), &format!("f{i}"), 0.1 * i as f64))
                .collect(),
        );
        let single = propagate_a(std::slice::from_ref(&s)).unwrap();
        assert_eq!(scores(&single), vec![0.30000000000000004, 0.2, 0.1, 0.0]);
        assert_eq!(single.label(), PoolLabel::Cumulative);

        let g0 = generation(
            0,
            (0..4)
                .map(|i| scored(&format!("g{i}"), &format!("g{i}"), 0.05 + 0.1 * i as f64))
                .collect(),
        );
        let both = propagate_a(&[s.clone(), g0]).unwrap();
        assert_eq!(both.len(), 8);
        assert!(scores(&both).windows(2).all(|w| w[0] >= w[1]));

        let g1 = generation(1, vec![scored("d1", "dup", 0.3)]);
        let g2 = generation(2, vec![scored("d2", "dup", 0.5)]);
        let dedup = propagate_a(&[g1, g2]).unwrap();
        assert_eq!(dedup.len(), 1);
        assert_eq!(dedup.entries()[0].mean_score, 0.5);
        assert_eq!(dedup.entries()[0].id(), "d2");

        assert_eq!(propagate_a(&[]), Err(RegenError::EmptyPool));
    }

    #[test]
    fn propagate_b_examples() {
        let a = generation(
            -1,
            (0..4)
                .map(|i| scored(&format!("a{i}"), &format!("a{i}"), 0.8 - 0.1 * i as f64))
                .collect(),
        );
        let b = generation(
            0,
            (0..4)
                .map(|i| scored(&format!("b{i}"), &format!("b{i}"), 0.75 - 0.1 * i as f64))
                .collect(),
        );
        let history = [a.clone(), b];
        let all = propagate_a(&history).unwrap();
        let top = propagate_b(&history, FeederKind::TopN, 4).unwrap();
        assert_eq!(top.entries(), &all.entries()[..4]);
        let ends = propagate_b(&history, FeederKind::TopAndBottomN, 2).unwrap();
        let expect: Vec<_> = [0, 1, 6, 7].iter().map(|&i| all.entries()[i].clone()).collect();
        assert_eq!(ends.entries(), expect.as_slice());
        assert_eq!(ends.label(), PoolLabel::Feeder);

        let reemit = propagate_b(std::slice::from_ref(&a), FeederKind::TopAndBottomN, 2).unwrap();
        assert_eq!(reemit.entries(), a.members.as_slice());
    }

    #[test]
    fn meta_prompt_keeps_best_first() {
        let pool = pool_of(&[0.2, 0.8]);
        let meta = build_meta_prompt(&pool, 5, 100_000, TaskKind::Summarisation).unwrap();
        assert_eq!(meta.exemplars.len(), 2);
        assert_eq!(meta.dropped, 0);
        assert_eq!(meta.exemplars[0].score, 0.8);
        let text = meta.render();
        assert!(text.contains("SCORE: 0.800\nPROMPT: template 1"));
        assert!(text.find("0.800").unwrap() < text.find("0.200").unwrap());
        assert!(text.contains("5 new prompt templates"));
        assert!(text.contains("summarisation"));
        assert!(text.contains(TEMPLATE_PREFIX));
        assert!(!text.contains("{task}") && !text.contains("{count}"));
    }

    #[test]
    fn meta_prompt_truncates_to_budget() {
        let pool = pool_of(&[0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5, 0.45]);
        let instruction = instruction_text(TaskKind::QuestionAnswering, 10);
        let six: Vec<Exemplar> = pool.entries()[..6]
            .iter()
            .map(|e| Exemplar {
                text: e.text().into(),
                score: e.mean_score,
            })
            .collect();
        let budget = estimate_tokens(&render_meta_prompt(&instruction, &six));
        let meta = build_meta_prompt(&pool, 10, budget, TaskKind::QuestionAnswering).unwrap();
        assert_eq!(meta.exemplars.len(), 6);
        assert_eq!(meta.dropped, 4);
        assert!(meta.estimated_tokens() <= budget);
        assert_eq!(meta.exemplars[0].score, 0.9);

        assert!(matches!(
            build_meta_prompt(&pool, 10, 10, TaskKind::QuestionAnswering),
            Err(RegenError::BudgetTooSmall { budget: 10, .. })
        ));
    }

    #[test]
    fn meta_prompt_is_deterministic() {
        let pool = pool_of(&[0.4, 0.1, 0.9]);
        let a = build_meta_prompt(&pool, 3, 5000, TaskKind::DialogueSummarisation).unwrap();
        let b = build_meta_prompt(&pool, 3, 5000, TaskKind::DialogueSummarisation).unwrap();
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn parse_dedups() {
        let got = parse_generation("TEMPLATE: Answer concisely.\nTEMPLATE: Answer concisely.", 10, 0).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].text(), "Answer concisely.");
        assert_eq!(got[0].origin(), Origin::Generated(0));
    }

    #[test]
    fn parse_falls_back_to_lists() {
        let got = parse_generation("1. Do X\n2. Do Y", 10, 3).unwrap();
        let texts: Vec<_> = got.iter().map(|t| t.text()).collect();
        assert_eq!(texts, ["Do X", "Do Y"]);
        let got = parse_generation("Here you go:\n- First\n3) Third\n", 10, 3).unwrap();
        let texts: Vec<_> = got.iter().map(|t| t.text()).collect();
        assert_eq!(texts, ["First", "Third"]);
    }

    #[test]
    fn parse_prefers_tagged_lines_and_caps_count() {
        let raw = "Sure!\n1. TEMPLATE: a\n  TEMPLATE:   b  \n- not tagged\nTEMPLATE: c\n";
        let got = parse_generation(raw, 2, 1).unwrap();
        let texts: Vec<_> = got.iter().map(|t| t.text()).collect();
        assert_eq!(texts, ["a", "b"]);
        assert_eq!(got[1].id(), "i1-02");
    }

    #[test]
    fn parse_rejects_prose() {
        assert_eq!(
            parse_generation("no lists here at all", 10, 0),
            Err(RegenError::Unparseable)
        );
        assert_eq!(parse_generation("TEMPLATE:   \n", 10, 0), Err(RegenError::Unparseable));
        assert_eq!(parse_generation("2024 was a year", 10, 0), Err(RegenError::Unparseable));
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(texts in prop::collection::vec("[A-Za-z][A-Za-z ,.]{0,30}[a-z.]", 1..12)) {
            let mut seen = HashSet::new();
            let texts: Vec<String> = texts.into_iter().map(|t| t.trim().to_owned()).filter(|t| seen.insert(t.clone())).collect();
            let parsed = parse_generation(&render_templates(&texts), texts.len(), 0).unwrap();
            let got: Vec<_> = parsed.iter().map(|t| t.text().to_owned()).collect();
            prop_assert_eq!(got, texts);
        }

        #[test]
        fn exemplar_scores_non_increasing(raw in prop::collection::vec(0u32..1000, 1..25), budget in 400usize..3000) {
            let scores: Vec<f64> = raw.iter().map(|s| *s as f64 / 1000.0).collect();
            let pool = pool_of(&scores);
            if let Ok(meta) = build_meta_prompt(&pool, 10, budget, TaskKind::QuestionAnswering) {
                prop_assert!(meta.exemplars.windows(2).all(|w| w[0].score >= w[1].score));
                prop_assert!(meta.estimated_tokens() <= budget);
                prop_assert_eq!(meta.exemplars.len() + meta.dropped, pool.len());
            }
        }
    }
}
