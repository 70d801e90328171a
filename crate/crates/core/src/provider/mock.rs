//! Deterministic mock backends: a FIFO scripted backend for exact-control
//! tests and an oracle judge that ranks candidates by hidden ground-truth
//! scores, optionally noised per (actor, candidate).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::lexical::approx_token_count;
use crate::provider::{
    BackendError, CallContext, ChatBackend, ChatTranscript, CompletionParams, CompletionResult,
};

/// One scripted outcome: a reply to serve or a transient failure to raise.
#[derive(Debug, Clone)]
pub enum ScriptEntry {
    Reply(String),
    TransientFailure(String),
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>) -> Self {
        ScriptEntry::Reply(text.into())
    }

    pub fn fail(msg: impl Into<String>) -> Self {
        ScriptEntry::TransientFailure(msg.into())
    }
}

#[derive(Deserialize)]
struct ScriptLine {
    #[serde(default)]
    reply: Option<String>,
    #[serde(default)]
    fail: Option<String>,
}

/// Serves scripted entries in FIFO order. An under-supplied script raises a
/// test-configuration error instead of fabricating text, and replies depend
/// on call order, so this backend demands serial execution.
pub struct ScriptedBackend {
    queue: Mutex<std::collections::VecDeque<ScriptEntry>>,
    calls: Mutex<u64>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend { queue: Mutex::new(entries.into()), calls: Mutex::new(0) }
    }

    /// Loads a script from line-delimited JSON: `{"reply": "..."}` or
    /// `{"fail": "message"}` per line.
    pub fn from_jsonl(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(line)
                .map_err(|e| format!("{}: line {}: {e}", path.display(), idx + 1))?;
            match (parsed.reply, parsed.fail) {
                (Some(reply), None) => entries.push(ScriptEntry::Reply(reply)),
                (None, Some(msg)) => entries.push(ScriptEntry::TransientFailure(msg)),
                _ => {
                    return Err(format!(
                        "{}: line {}: expected exactly one of `reply` or `fail`",
                        path.display(),
                        idx + 1
                    ))
                }
            }
        }
        Ok(ScriptedBackend::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        _params: &CompletionParams,
        _ctx: &CallContext,
    ) -> Result<CompletionResult, BackendError> {
        let mut calls = self.calls.lock().expect("call counter lock");
        *calls += 1;
        let call = *calls;
        drop(calls);
        let entry = self.queue.lock().expect("script lock").pop_front();
        match entry {
            Some(ScriptEntry::Reply(text)) => Ok(CompletionResult {
                prompt_tokens: approx_token_count(&transcript.rendered()) as u64,
                completion_tokens: approx_token_count(&text) as u64,
                text,
            }),
            Some(ScriptEntry::TransientFailure(msg)) => Err(BackendError::Transient(msg)),
            None => Err(BackendError::ScriptExhausted { call }),
        }
    }

    fn id(&self) -> String {
        "mock:scripted".into()
    }

    fn requires_serial(&self) -> bool {
        true
    }
}

/// Candidate-id markers embedded by the prompt templates.
fn id_marker_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[ID:\s*([^\]]+?)\s*\]").expect("static regex"))
}

/// A judge backend that answers selection prompts with the top-5 candidates
/// by hidden ground-truth score, scoring prompts with a scaled 1-10 rating,
/// and qualitative prompts with canned deterministic text.
///
/// With `sigma > 0`, Gaussian noise is added to each hidden score before
/// ranking, drawn deterministically per (actor, candidate id), so distinct
/// agents and plans disagree while repeated identical calls do not.
pub struct OracleBackend {
    hidden: BTreeMap<String, f64>,
    sigma: f64,
    seed: u64,
    selection_size: usize,
}

impl OracleBackend {
    pub fn new(hidden: BTreeMap<String, f64>, sigma: f64, seed: u64) -> Self {
        OracleBackend { hidden, sigma, seed, selection_size: 5 }
    }

    /// Hidden scores drawn uniformly per id from the seed; used when no
    /// explicit ground truth is supplied (e.g. CLI runs).
    pub fn from_seed<I, S>(ids: I, seed: u64, sigma: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sorted: Vec<String> = ids.into_iter().map(Into::into).collect();
        sorted.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = sorted.into_iter().map(|id| (id, rng.gen::<f64>())).collect();
        OracleBackend::new(hidden, sigma, seed)
    }

    pub fn hidden_scores(&self) -> &BTreeMap<String, f64> {
        &self.hidden
    }

    /// True top-k by hidden score, descending, ties by ascending id.
    pub fn hidden_top(&self, k: usize) -> Vec<String> {
        let mut ranked: Vec<(&String, &f64)> = self.hidden.iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
        ranked.into_iter().take(k).map(|(id, _)| id.clone()).collect()
    }

    fn noise(&self, actor: &str, id: &str) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(actor.as_bytes());
        hasher.update([0u8]);
        hasher.update(id.as_bytes());
        let digest = hasher.finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(word);
        let z: f64 = rng.sample(StandardNormal);
        self.sigma * z
    }

    fn extract_candidates(&self, prompt: &str) -> Result<Vec<String>, BackendError> {
        let mut seen = std::collections::HashSet::new();
        let mut ids = Vec::new();
        for cap in id_marker_regex().captures_iter(prompt) {
            let id = cap[1].to_string();
            if !self.hidden.contains_key(&id) {
                return Err(BackendError::OracleConfig(format!(
                    "prompt mentions unknown id `{id}`"
                )));
            }
            if seen.insert(id.clone()) {
                ids.push(id);
            }
        }
        if ids.is_empty() {
            return Err(BackendError::OracleConfig("prompt lists no candidate ids".into()));
        }
        Ok(ids)
    }

    fn select(&self, prompt: &str, actor: &str) -> Result<String, BackendError> {
        let ids = self.extract_candidates(prompt)?;
        let mut noisy: Vec<(String, f64)> = ids
            .into_iter()
            .map(|id| {
                let score = self.hidden[&id] + self.noise(actor, &id);
                (id, score)
            })
            .collect();
        noisy.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let picked: Vec<String> =
            noisy.into_iter().take(self.selection_size).map(|(id, _)| id).collect();
        Ok(format!(
            "I compared the candidates against the project under detection.\nSELECTED: {}",
            picked.join("; ")
        ))
    }

    fn score(&self, prompt: &str, actor: &str) -> Result<String, BackendError> {
        let ids = self.extract_candidates(prompt)?;
        let mean: f64 = ids.iter().map(|id| self.hidden[id]).sum::<f64>() / ids.len() as f64;
        let (lo, hi) = self
            .hidden
            .values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let scaled = if hi > lo { (mean - lo) / (hi - lo) } else { 0.5 };
        let raw = 1.0 + 9.0 * scaled + self.noise(actor, "__score__");
        let score = raw.round().clamp(1.0, 10.0) as i64;
        Ok(format!("The overlap with the references is substantial.\nSCORE: {score}"))
    }
}

impl ChatBackend for OracleBackend {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        _params: &CompletionParams,
        ctx: &CallContext,
    ) -> Result<CompletionResult, BackendError> {
        let prompt = transcript.rendered();
        let text = if prompt.contains("PAIR:") {
            // Span-comparison prompts: the oracle has no text knowledge, so
            // it reports no confident pairs (a valid, flagged outcome).
            "NONE".to_string()
        } else if prompt.contains("SCORE:") {
            self.score(&prompt, &ctx.actor)?
        } else if prompt.contains("SELECTED:") {
            self.select(&prompt, &ctx.actor)?
        } else {
            "The proposals overlap in their aims, technical approach, and intended outcomes."
                .to_string()
        };
        Ok(CompletionResult {
            prompt_tokens: approx_token_count(&prompt) as u64,
            completion_tokens: approx_token_count(&text) as u64,
            text,
        })
    }

    fn id(&self) -> String {
        format!("mock:oracle(seed={},sigma={})", self.seed, self.sigma)
    }
}
