#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use promptforge::dataset;
use promptforge::rouge::tokenize;
use promptforge::{ChatClient, ChatRequest, ChatResponse, GatewayError, TaskKind};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Deterministic stand-in for a chat model.
///
/// Meta-prompts get `batch` templates echoing the best exemplar with a
/// `level <iteration + 1>` suffix. Task prompts are answered with the first
/// `level` reference tokens, so higher levels score higher.
pub struct RuleClient {
    references: HashMap<String, String>,
    batch: usize,
    in_flight: usize,
    generation_calls: Mutex<usize>,
    /// Every response, in the order it was produced.
    pub transcript: Mutex<Vec<String>>,
}

impl RuleClient {
    pub fn new(dataset_path: &Path, task: TaskKind, batch: usize) -> Self {
        let references = dataset::load(dataset_path, task)
            .unwrap()
            .into_iter()
            .map(|r| (r.context, r.reference))
            .collect();
        Self {
            references,
            batch,
            in_flight: 1,
            generation_calls: Mutex::new(0),
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn with_in_flight(mut self, n: usize) -> Self {
        self.in_flight = n;
        self
    }

    pub fn transcript(&self) -> Vec<String> {
        self.transcript.lock().unwrap().clone()
    }

    fn generate(&self, meta: &str) -> String {
        let mut calls = self.generation_calls.lock().unwrap();
        let iteration = *calls;
        *calls += 1;
        let best = meta
            .lines()
            .find_map(|l| l.strip_prefix("PROMPT: "))
            .expect("meta-prompt has exemplars");
        let base = best.split(" level ").next().unwrap();
        (0..self.batch)
            .map(|j| format!("TEMPLATE: {base} level {} variant {j}\n", iteration + 1))
            .collect()
    }

    fn answer(&self, prompt: &str) -> String {
        let (template, rest) = prompt.split_once("\n\nContext:\n").expect("task prompt");
        let context = rest.split("\n\nQuestion:\n").next().unwrap();
        let reference = &self.references[context];
        let tokens = tokenize(reference);
        let take = level(template).min(tokens.len());
        let mut words: Vec<String> = tokens[..take].to_vec();
        words.extend(std::iter::repeat_n("zzz".to_owned(), tokens.len() - take));
        words.join(" ")
    }
}

pub fn level(template: &str) -> usize {
    match template.split(" level ").nth(1) {
        Some(rest) => rest.split_whitespace().next().unwrap().parse().unwrap(),
        None => template.len() % 3,
    }
}

pub fn is_meta_prompt(text: &str) -> bool {
    text.starts_with("You are improving prompt templates")
}

impl ChatClient for RuleClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let text = if is_meta_prompt(&request.user_text) {
            self.generate(&request.user_text)
        } else {
            self.answer(&request.user_text)
        };
        self.transcript.lock().unwrap().push(text.clone());
        Ok(ChatResponse {
            text,
            prompt_token_estimate: 0,
            latency: Duration::ZERO,
        })
    }

    fn max_in_flight(&self) -> usize {
        self.in_flight
    }
}

/// Relative path -> bytes of every file under `root`, skipping the timestamps file.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                if rel != "meta/timestamps.json" {
                    out.push((rel, std::fs::read(&path).unwrap()));
                }
            }
        }
    }
    out.sort();
    out
}
