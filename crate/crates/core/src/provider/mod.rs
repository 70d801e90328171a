//! Chat-completion abstraction: one front door with retry, a global
//! in-flight-call bound, per-stage token accounting, and journaling.
//!
//! Backends implement [`ChatBackend`]; deterministic mocks live in
//! [`mock`], the HTTP client in [`http`].

pub mod http;
pub mod mock;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::{CallLog, CallRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::System => write!(f, "system"),
            Role::User => write!(f, "user"),
            Role::Assistant => write!(f, "assistant"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Ordered conversation; non-empty, first message from system or user.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatTranscript {
    messages: Vec<ChatMessage>,
}

impl ChatTranscript {
    pub fn new(messages: Vec<ChatMessage>) -> Result<Self, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::InvalidTranscript("transcript is empty".into()));
        }
        if messages[0].role == Role::Assistant {
            return Err(ProviderError::InvalidTranscript(
                "first message must be from system or user".into(),
            ));
        }
        Ok(ChatTranscript { messages })
    }

    /// Single user message, the common case for templated prompts.
    pub fn from_user(content: impl Into<String>) -> Self {
        ChatTranscript {
            messages: vec![ChatMessage { role: Role::User, content: content.into() }],
        }
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        self.messages.push(ChatMessage { role, content: content.into() });
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    /// Flat text view, used by mocks for parsing and token accounting.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&format!("[{}]\n{}\n", m.role, m.content));
        }
        out
    }
}

/// Pipeline stage a call is accounted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Debate,
    Feedback,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Debate => write!(f, "debate"),
            Stage::Feedback => write!(f, "feedback"),
        }
    }
}

/// Who is speaking and under which stage; the actor tag keys mock-judge
/// noise and journal entries.
#[derive(Debug, Clone)]
pub struct CallContext {
    pub stage: Stage,
    pub actor: String,
}

impl CallContext {
    pub fn new(stage: Stage, actor: impl Into<String>) -> Self {
        CallContext { stage, actor: actor.into() }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_reply_tokens: usize,
    pub seed: Option<u64>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams { temperature: 0.7, max_reply_tokens: 2048, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Errors surfaced by individual backends. Only `Transient` is retried.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("context overflow: {tokens} tokens exceeds limit {limit}")]
    ContextOverflow { tokens: u64, limit: u64 },
    #[error("script exhausted at call #{call}: no reply queued")]
    ScriptExhausted { call: u64 },
    #[error("oracle configuration error: {0}")]
    OracleConfig(String),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempts: {}", history.join("; "))]
    Unavailable { attempts: u32, history: Vec<String> },
    #[error("context overflow: {tokens} tokens exceeds limit {limit}")]
    ContextOverflow { tokens: u64, limit: u64 },
    #[error("test configuration error: script exhausted at call #{call}")]
    ScriptExhausted { call: u64 },
    #[error("oracle configuration error: {0}")]
    OracleConfig(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    #[error("journal write failed: {0}")]
    Journal(#[from] std::io::Error),
}

impl ProviderError {
    /// Configuration errors must abort a run instead of being absorbed by
    /// per-agent or per-plan fallbacks.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            ProviderError::ScriptExhausted { .. }
                | ProviderError::OracleConfig(_)
                | ProviderError::InvalidTranscript(_)
                | ProviderError::Journal(_)
        )
    }
}

/// A chat-completion backend. `requires_serial` marks backends whose replies
/// depend on call order (the scripted mock), forcing sequential execution.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &CompletionParams,
        ctx: &CallContext,
    ) -> Result<CompletionResult, BackendError>;

    fn id(&self) -> String;

    fn requires_serial(&self) -> bool {
        false
    }
}

/// Retry policy for transient transport failures: exponential backoff
/// starting at `base_delay` (1s/2s/4s under the defaults).
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Zero-delay policy for tests.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO }
    }

    fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

/// Token usage for one accounting stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub calls: u64,
}

impl StageUsage {
    fn record(&mut self, result: &CompletionResult) {
        self.prompt_tokens += result.prompt_tokens;
        self.completion_tokens += result.completion_tokens;
        self.total_tokens += result.prompt_tokens + result.completion_tokens;
        self.calls += 1;
    }
}

/// Immutable snapshot of the ledger, embedded in reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub debate: StageUsage,
    pub feedback: StageUsage,
}

impl UsageSnapshot {
    pub fn total_tokens(&self) -> u64 {
        self.debate.total_tokens + self.feedback.total_tokens
    }

    pub fn total_calls(&self) -> u64 {
        self.debate.calls + self.feedback.calls
    }
}

/// Thread-safe, monotone per-stage token counters.
#[derive(Clone, Default)]
pub struct UsageLedger {
    inner: Arc<Mutex<UsageSnapshot>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: Stage, result: &CompletionResult) {
        let mut inner = self.inner.lock().expect("ledger lock");
        match stage {
            Stage::Debate => inner.debate.record(result),
            Stage::Feedback => inner.feedback.record(result),
        }
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        *self.inner.lock().expect("ledger lock")
    }
}

/// Counting semaphore bounding in-flight provider calls.
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        assert!(permits > 0, "semaphore needs at least one permit");
        Semaphore { permits: Mutex::new(permits), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore lock");
        *permits += 1;
        self.semaphore.cv.notify_one();
    }
}

/// The provider handle shared by all pipeline stages: retry + semaphore +
/// ledger + optional call journaling around a backend.
pub struct Provider {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    ledger: UsageLedger,
    semaphore: Semaphore,
    call_log: Option<CallLog>,
}

impl Provider {
    pub fn new(backend: Arc<dyn ChatBackend>, retry: RetryPolicy, max_concurrent: usize) -> Self {
        Provider {
            backend,
            retry,
            ledger: UsageLedger::new(),
            semaphore: Semaphore::new(max_concurrent.max(1)),
            call_log: None,
        }
    }

    pub fn with_call_log(mut self, log: CallLog) -> Self {
        self.call_log = Some(log);
        self
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn id(&self) -> String {
        self.backend.id()
    }

    pub fn requires_serial(&self) -> bool {
        self.backend.requires_serial()
    }

    pub fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &CompletionParams,
        ctx: &CallContext,
    ) -> Result<CompletionResult, ProviderError> {
        let _permit = self.semaphore.acquire();
        let mut history = Vec::new();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.backend.complete(transcript, params, ctx) {
                Ok(result) => {
                    self.ledger.record(ctx.stage, &result);
                    if let Some(log) = &self.call_log {
                        log.append(&CallRecord {
                            stage: ctx.stage.to_string(),
                            actor: ctx.actor.clone(),
                            messages: transcript
                                .messages()
                                .iter()
                                .map(|m| (m.role.to_string(), m.content.clone()))
                                .collect(),
                            reply: result.text.clone(),
                            prompt_tokens: result.prompt_tokens,
                            completion_tokens: result.completion_tokens,
                            attempts: attempt,
                        })?;
                    }
                    return Ok(result);
                }
                Err(BackendError::Transient(msg)) => {
                    history.push(format!("attempt {attempt}: {msg}"));
                    if attempt >= self.retry.max_attempts {
                        return Err(ProviderError::Unavailable {
                            attempts: attempt,
                            history,
                        });
                    }
                    let delay = self.retry.delay_after(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(BackendError::ContextOverflow { tokens, limit }) => {
                    return Err(ProviderError::ContextOverflow { tokens, limit })
                }
                Err(BackendError::ScriptExhausted { call }) => {
                    return Err(ProviderError::ScriptExhausted { call })
                }
                Err(BackendError::OracleConfig(msg)) => {
                    return Err(ProviderError::OracleConfig(msg))
                }
                Err(BackendError::Fatal(msg)) => return Err(ProviderError::Fatal(msg)),
            }
        }
    }
}
