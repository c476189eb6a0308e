//! Synthetic corpus generation: HQ and QA rephrasing and two-stage textbook
//! generation against a chat-completion HTTP endpoint.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, CorpusFormat, CorpusHandle};
use crate::tokenizer::Tokenizer;

/// Source documents longer than this are truncated before rephrasing.
pub const MAX_SOURCE_TOKENS: usize = 2048;
pub const CHAPTERS_PER_BOOK: u32 = 10;
/// A book is kept when its outline and at least this many chapters pass.
pub const MIN_ACCEPTED_CHAPTERS: usize = 8;
pub const SLOT: &str = "[xxxx]";
const CHAPTER_SLOT: &str = "[chapter]";

const SYSTEM_TEXT: &str = "Provide direct and detailed response to the instructions without adding additional notes.";
const CHAPTER_SYSTEM_TEXT: &str = "Provide a direct and detailed response to the instructions without adding additional notes.";

const HQ_PATTERN: &str = "For the following document, regardless of its original content or formatting, write a full article of the same content in high quality English language as in texts on Wikipedia: [xxxx]. Provide the rephrased article without any additional notes. Long article with full length and complete details. Rephrased article:";
const QA_PATTERN: &str = "For the following document, regardless of its original content or formatting, convert it into a comprehensive list of question-answer pairs with multiple tags of \"Question:\" followed by \"Answer:\", where questions and answers cover complete information of the original document. Document: [xxxx].  Provide the converted question-answer pairs without any additional notes. Question-answer pairs with corresponding tags (\"Question:\", \"Answer:\"):";
const OUTLINE_PATTERN: &str = "Imagine you are a prolific author tasked with writing a textbook. You are working on writing a textbook involving the knowledge and information of the following text. Text: [xxxx]\n Your task is to write an outline for the textbook. Your target audiences are [audience]. The textbook has 10 chapters in total plus title, introduction, and appendices. Textbook outline:";
const CHAPTER_PATTERN: &str = "Imagine you are a prolific author tasked with writing a textbook. You are working on writing a textbook with the following outline.\n Outline: [xxxx] \n Your task is to write Chapter [chapter] of the textbook. Your target audiences are [audience]. Include exercises at the end of the chapter to test the reader's knowledge of the chapter and then provide reference answers to each question.";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown prompt kind {0}")]
    UnknownKind(String),
    #[error("unknown audience {0}")]
    UnknownAudience(String),
    #[error("{0} prompts need an audience")]
    MissingAudience(PromptKind),
    #[error("chapter prompts need a chapter index")]
    MissingChapterIndex,
    #[error("chapter index only applies to chapter prompts")]
    UnexpectedChapterIndex,
    #[error("chapter index {0} outside 1..=10")]
    ChapterOutOfRange(u32),
    #[error("source text is empty")]
    EmptySource,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("no accepted jobs to export")]
    NothingToExport,
    #[error("job ledger {path}: {message}")]
    Ledger { path: PathBuf, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptKind {
    #[serde(rename = "HQ")]
    Hq,
    #[serde(rename = "QA")]
    Qa,
    #[serde(rename = "TXBK_OUTLINE")]
    TxbkOutline,
    #[serde(rename = "TXBK_CHAPTER")]
    TxbkChapter,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Hq => "HQ",
            PromptKind::Qa => "QA",
            PromptKind::TxbkOutline => "TXBK_OUTLINE",
            PromptKind::TxbkChapter => "TXBK_CHAPTER",
        }
    }

    pub fn is_textbook(self) -> bool {
        matches!(self, PromptKind::TxbkOutline | PromptKind::TxbkChapter)
    }

    /// Approximate output length the prompt aims for, in tokens.
    pub fn target_tokens(self) -> usize {
        match self {
            PromptKind::Hq | PromptKind::Qa => 550,
            PromptKind::TxbkOutline | PromptKind::TxbkChapter => 450,
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s.to_ascii_uppercase().as_str() {
            "HQ" => Ok(PromptKind::Hq),
            "QA" => Ok(PromptKind::Qa),
            "TXBK_OUTLINE" => Ok(PromptKind::TxbkOutline),
            "TXBK_CHAPTER" => Ok(PromptKind::TxbkChapter),
            _ => Err(SynthError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    GradeSchool,
    College,
    Expert,
    General,
}

impl Audience {
    pub const ALL: [Audience; 4] = [Audience::GradeSchool, Audience::College, Audience::Expert, Audience::General];

    /// Wording used inside the textbook prompts.
    pub fn phrase(self) -> &'static str {
        match self {
            Audience::GradeSchool => "grade school students",
            Audience::College => "college students",
            Audience::Expert => "field experts",
            Audience::General => "general public",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Audience::GradeSchool => "grade_school",
            Audience::College => "college",
            Audience::Expert => "expert",
            Audience::General => "general",
        }
    }
}

impl fmt::Display for Audience {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Audience {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        Audience::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| SynthError::UnknownAudience(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub audience: Option<Audience>,
    pub system_text: String,
    /// Contains [`SLOT`] exactly once.
    pub user_text_pattern: String,
}

impl PromptTemplate {
    /// Textbook kinds require an audience; it is ignored for HQ and QA.
    pub fn new(kind: PromptKind, audience: Option<Audience>) -> Result<Self, SynthError> {
        let (system, pattern) = match kind {
            PromptKind::Hq => (SYSTEM_TEXT, HQ_PATTERN),
            PromptKind::Qa => (SYSTEM_TEXT, QA_PATTERN),
            PromptKind::TxbkOutline => (SYSTEM_TEXT, OUTLINE_PATTERN),
            PromptKind::TxbkChapter => (CHAPTER_SYSTEM_TEXT, CHAPTER_PATTERN),
        };
        let audience = if kind.is_textbook() { Some(audience.ok_or(SynthError::MissingAudience(kind))?) } else { None };
        let pattern = match audience {
            Some(a) => pattern.replace("[audience]", a.phrase()),
            None => pattern.to_string(),
        };
        Ok(Self { kind, audience, system_text: system.to_string(), user_text_pattern: pattern })
    }
}

/// Instantiate a template: returns the (system, user) message pair.
pub fn render_prompt(template: &PromptTemplate, source: &str, chapter: Option<u32>) -> Result<(String, String), SynthError> {
    if source.trim().is_empty() {
        return Err(SynthError::EmptySource);
    }
    let pattern = match (template.kind, chapter) {
        (PromptKind::TxbkChapter, None) => return Err(SynthError::MissingChapterIndex),
        (PromptKind::TxbkChapter, Some(c)) if !(1..=CHAPTERS_PER_BOOK).contains(&c) => return Err(SynthError::ChapterOutOfRange(c)),
        (PromptKind::TxbkChapter, Some(c)) => template.user_text_pattern.replace(CHAPTER_SLOT, &c.to_string()),
        (_, Some(_)) => return Err(SynthError::UnexpectedChapterIndex),
        (_, None) => template.user_text_pattern.clone(),
    };
    let (head, tail) = pattern.split_once(SLOT).expect("template has a slot");
    Ok((template.system_text.clone(), format!("{head}{source}{tail}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each further failure.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Environment variable holding a bearer token.
    pub api_key_env: Option<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "generator".into(),
            temperature: 0.7,
            top_p: 0.95,
            max_new_tokens: 2048,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            api_key_env: None,
        }
    }
}

impl GenerationConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.temperature >= 0.0) {
            v.push(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            v.push(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.max_in_flight < 1 {
            v.push("max_in_flight must be >= 1".into());
        }
        if self.retry.max_attempts < 1 {
            v.push("retry.max_attempts must be >= 1".into());
        }
        if self.max_new_tokens < 1 {
            v.push("max_new_tokens must be >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidConfig(v.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl FilterPolicy {
    pub fn new(min_tokens: usize, max_tokens: usize) -> Result<Self, SynthError> {
        if min_tokens == 0 || min_tokens >= max_tokens {
            return Err(SynthError::InvalidConfig(format!("filter bounds must satisfy 0 < {min_tokens} < {max_tokens}")));
        }
        Ok(Self { min_tokens, max_tokens })
    }

    /// Minimum 50 tokens, maximum four times the kind's target length.
    pub fn for_kind(kind: PromptKind) -> Self {
        Self { min_tokens: 50, max_tokens: 4 * kind.target_tokens() }
    }

    /// `Err` carries the rejection reason.
    pub fn check(&self, token_count: usize) -> Result<(), String> {
        if token_count < self.min_tokens {
            Err(format!("too short: {token_count} < {} tokens", self.min_tokens))
        } else if token_count > self.max_tokens {
            Err(format!("too long: {token_count} > {} tokens", self.max_tokens))
        } else {
            Ok(())
        }
    }
}

/// Per-kind filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSet {
    pub hq: FilterPolicy,
    pub qa: FilterPolicy,
    pub outline: FilterPolicy,
    pub chapter: FilterPolicy,
}

impl Default for FilterSet {
    fn default() -> Self {
        Self {
            hq: FilterPolicy::for_kind(PromptKind::Hq),
            qa: FilterPolicy::for_kind(PromptKind::Qa),
            outline: FilterPolicy::for_kind(PromptKind::TxbkOutline),
            chapter: FilterPolicy::for_kind(PromptKind::TxbkChapter),
        }
    }
}

impl FilterSet {
    pub fn uniform(policy: FilterPolicy) -> Self {
        Self { hq: policy, qa: policy, outline: policy, chapter: policy }
    }

    pub fn get(&self, kind: PromptKind) -> FilterPolicy {
        match kind {
            PromptKind::Hq => self.hq,
            PromptKind::Qa => self.qa,
            PromptKind::TxbkOutline => self.outline,
            PromptKind::TxbkChapter => self.chapter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Done,
    Filtered,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        self != JobStatus::Pending
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub source_doc_id: String,
    pub kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audience: Option<Audience>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub book_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chapter: Option<u32>,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<usize>,
    /// Why the job was filtered or failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub attempt_count: u32,
    /// The source was cut to fit [`MAX_SOURCE_TOKENS`].
    #[serde(default)]
    pub source_truncated: bool,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
}

impl GenerationJob {
    fn pending(job_id: String, source_doc_id: &str, kind: PromptKind, config: &GenerationConfig) -> Self {
        Self {
            job_id,
            source_doc_id: source_doc_id.to_string(),
            kind,
            audience: None,
            book_id: None,
            chapter: None,
            status: JobStatus::Pending,
            output_text: None,
            output_tokens: None,
            reason: None,
            attempt_count: 0,
            source_truncated: false,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            top_p: config.top_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body sent to the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(config: &GenerationConfig, system: String, user: String) -> Self {
        Self {
            model: config.model_name.clone(),
            messages: vec![ChatMessage { role: "system".into(), content: system }, ChatMessage { role: "user".into(), content: user }],
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_new_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndpointError {
    /// Transport errors, 429 and 5xx.
    #[error("retryable: {0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatEndpoint: Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

impl<F> ChatEndpoint for F
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        self(request)
    }
}

/// Blocking HTTP client for chat-completion style endpoints.
pub struct HttpEndpoint {
    url: String,
    bearer: Option<String>,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: &str, bearer: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(600)).build();
        Self { url: url.to_string(), bearer, agent }
    }

    /// Reads the bearer token from `config.api_key_env` when set.
    pub fn from_config(config: &GenerationConfig) -> Result<Self, SynthError> {
        let bearer = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| SynthError::InvalidConfig(format!("environment variable {var} is not set")))?),
            None => None,
        };
        Ok(Self::new(&config.endpoint_url, bearer))
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(request) {
            Ok(resp) => {
                let body: serde_json::Value = resp.into_json().map_err(|e| EndpointError::Retryable(format!("reading body: {e}")))?;
                body.pointer("/choices/0/message/content")
                    .and_then(|c| c.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| EndpointError::Fatal("response has no choices[0].message.content".into()))
            }
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => Err(EndpointError::Retryable(format!("HTTP {code}"))),
            Err(ureq::Error::Status(code, _)) => Err(EndpointError::Fatal(format!("HTTP {code}"))),
            Err(e) => Err(EndpointError::Retryable(e.to_string())),
        }
    }
}

/// Caps concurrent calls into an endpoint.
pub struct Bounded<'a> {
    inner: &'a dyn ChatEndpoint,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<'a> Bounded<'a> {
    pub fn new(inner: &'a dyn ChatEndpoint, limit: usize) -> Self {
        Self { inner, limit: limit.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }
}

impl ChatEndpoint for Bounded<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        let out = self.inner.complete(request);
        *self.in_flight.lock().unwrap() -= 1;
        self.freed.notify_one();
        out
    }
}

/// Returns the final result and the number of attempts made.
pub fn complete_with_retry(endpoint: &dyn ChatEndpoint, request: &ChatRequest, policy: &RetryPolicy) -> (Result<String, String>, u32) {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match endpoint.complete(request) {
            Ok(text) => return (Ok(text), attempt),
            Err(EndpointError::Fatal(e)) => return (Err(e), attempt),
            Err(EndpointError::Retryable(e)) if attempt >= policy.max_attempts => {
                return (Err(format!("giving up after {attempt} attempts: {e}")), attempt)
            }
            Err(EndpointError::Retryable(e)) => {
                log::warn!("attempt {attempt} failed: {e}");
                let delay = policy.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
    }
}

/// Cut `text` to at most `limit` tokens, ending at the last sentence
/// boundary (`.`, `!` or `?`) inside the limit when there is one.
pub fn truncate_source(text: &str, tokenizer: &dyn Tokenizer, limit: usize) -> (String, bool) {
    let tokens = tokenizer.tokenize(text);
    if tokens.len() <= limit {
        return (text.to_string(), false);
    }
    let end = tokens[limit - 1].span.end;
    let cut = tokens[..limit]
        .iter()
        .rev()
        .find(|t| matches!(t.piece.as_str(), "." | "!" | "?"))
        .map_or(end, |t| t.span.end);
    (text[..cut].to_string(), true)
}

/// Shared context for running jobs.
pub struct Generator<'a> {
    pub config: &'a GenerationConfig,
    pub filters: &'a FilterSet,
    pub endpoint: &'a dyn ChatEndpoint,
    pub tokenizer: &'a dyn Tokenizer,
    pub store: Option<&'a JobStore>,
}

impl Generator<'_> {
    fn execute(&self, mut job: GenerationJob, template: &PromptTemplate, source: &str, chapter: Option<u32>) -> Result<GenerationJob, SynthError> {
        if let Some(prev) = self.store.and_then(|s| s.terminal(&job.job_id)) {
            return Ok(prev);
        }
        if let Some(store) = self.store {
            store.record(&job)?;
        }
        let (system, user) = render_prompt(template, source, chapter)?;
        let request = ChatRequest::new(self.config, system, user);
        let (result, attempts) = complete_with_retry(self.endpoint, &request, &self.config.retry);
        job.attempt_count = attempts;
        match result {
            Ok(text) => {
                let n = self.tokenizer.count(&text);
                job.output_tokens = Some(n);
                match self.filters.get(job.kind).check(n) {
                    Ok(()) => job.status = JobStatus::Done,
                    Err(reason) => {
                        job.status = JobStatus::Filtered;
                        job.reason = Some(reason);
                    }
                }
                job.output_text = Some(text);
            }
            Err(e) => {
                job.status = JobStatus::Failed;
                job.reason = Some(e);
            }
        }
        if let Some(store) = self.store {
            store.record(&job)?;
        }
        Ok(job)
    }

    pub fn rephrase(&self, doc_id: &str, text: &str, kind: PromptKind) -> Result<GenerationJob, SynthError> {
        if kind.is_textbook() {
            return Err(SynthError::UnknownKind(format!("{kind} is not a rephrasing kind")));
        }
        let template = PromptTemplate::new(kind, None)?;
        let (source, truncated) = truncate_source(text, self.tokenizer, MAX_SOURCE_TOKENS);
        let mut job = GenerationJob::pending(format!("{kind}:{doc_id}"), doc_id, kind, self.config);
        job.source_truncated = truncated;
        self.execute(job, &template, &source, None)
    }

    /// Outline first, then ten chapters each conditioned on the whole outline.
    /// A failed or filtered outline ends the book.
    pub fn textbook(&self, doc_id: &str, text: &str, audience: Audience, cancel: Option<&AtomicBool>) -> Result<Book, SynthError> {
        let book_id = format!("TXBK:{audience}:{doc_id}");
        let (source, truncated) = truncate_source(text, self.tokenizer, MAX_SOURCE_TOKENS);
        let job = |kind, suffix: String, chapter| {
            let mut j = GenerationJob::pending(format!("{book_id}:{suffix}"), doc_id, kind, self.config);
            j.audience = Some(audience);
            j.book_id = Some(book_id.clone());
            j.chapter = chapter;
            j.source_truncated = truncated;
            j
        };
        let outline = self.execute(job(PromptKind::TxbkOutline, "outline".into(), None), &PromptTemplate::new(PromptKind::TxbkOutline, Some(audience))?, &source, None)?;
        let mut jobs = vec![outline.clone()];
        if outline.status == JobStatus::Done {
            let outline_text = outline.output_text.as_deref().unwrap_or_default();
            let template = PromptTemplate::new(PromptKind::TxbkChapter, Some(audience))?;
            for c in 1..=CHAPTERS_PER_BOOK {
                if cancel.is_some_and(|f| f.load(Ordering::SeqCst)) {
                    break;
                }
                jobs.push(self.execute(job(PromptKind::TxbkChapter, format!("ch{c:02}"), Some(c)), &template, outline_text, Some(c))?);
            }
        }
        Ok(Book::from_jobs(book_id, jobs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Book {
    pub book_id: String,
    /// Outline first, then chapters in order.
    pub jobs: Vec<GenerationJob>,
    pub accepted: bool,
    /// Outline passed but too few chapters did.
    pub partial: bool,
}

impl Book {
    pub fn from_jobs(book_id: String, jobs: Vec<GenerationJob>) -> Self {
        let (accepted, partial) = book_verdict(&jobs);
        Self { book_id, jobs, accepted, partial }
    }
}

fn book_verdict(jobs: &[GenerationJob]) -> (bool, bool) {
    let outline_ok = jobs.iter().any(|j| j.kind == PromptKind::TxbkOutline && j.status == JobStatus::Done);
    let chapters = jobs.iter().filter(|j| j.kind == PromptKind::TxbkChapter && j.status == JobStatus::Done).count();
    let accepted = outline_ok && chapters >= MIN_ACCEPTED_CHAPTERS;
    (accepted, outline_ok && !accepted)
}

/// Append-only jsonl ledger of job state transitions.
pub struct JobStore {
    path: PathBuf,
    file: Mutex<File>,
    latest: Mutex<HashMap<String, GenerationJob>>,
}

impl JobStore {
    /// Opens (or creates) a ledger and replays it. A torn final line from an
    /// interrupted write is discarded.
    pub fn open(path: &Path) -> Result<Self, SynthError> {
        let mut latest = HashMap::new();
        if path.exists() {
            let mut text = fs::read_to_string(path)?;
            if !text.is_empty() && !text.ends_with('\n') {
                text.truncate(text.rfind('\n').map_or(0, |i| i + 1));
                fs::write(path, &text)?;
            }
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let job: GenerationJob = serde_json::from_str(line).map_err(|e| SynthError::Ledger { path: path.to_path_buf(), message: e.to_string() })?;
                latest.insert(job.job_id.clone(), job);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file), latest: Mutex::new(latest) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, job: &GenerationJob) -> Result<(), SynthError> {
        let mut line = serde_json::to_string(job).expect("job serializes");
        line.push('\n');
        {
            let mut f = self.file.lock().unwrap();
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.latest.lock().unwrap().insert(job.job_id.clone(), job.clone());
        Ok(())
    }

    pub fn terminal(&self, job_id: &str) -> Option<GenerationJob> {
        self.latest.lock().unwrap().get(job_id).filter(|j| j.status.is_terminal()).cloned()
    }

    /// Latest state of every job, ordered by id.
    pub fn jobs(&self) -> Vec<GenerationJob> {
        let mut v: Vec<_> = self.latest.lock().unwrap().values().cloned().collect();
        v.sort_by(|a, b| a.job_id.cmp(&b.job_id));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GenerationTask {
    Rephrase { doc_id: String, text: String, kind: PromptKind },
    Textbook { doc_id: String, text: String, audience: Audience },
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    /// Every job touched by the sweep, in task order.
    pub jobs: Vec<GenerationJob>,
    pub books: Vec<Book>,
    pub interrupted: bool,
}

/// Run tasks with at most `config.max_in_flight` concurrent endpoint calls.
/// With a store, finished jobs are skipped and pending ones rerun.
pub fn run_sweep(
    tasks: &[GenerationTask],
    config: &GenerationConfig,
    filters: &FilterSet,
    endpoint: &dyn ChatEndpoint,
    tokenizer: &dyn Tokenizer,
    store: Option<&JobStore>,
    cancel: Option<Arc<AtomicBool>>,
) -> Result<SweepReport, SynthError> {
    config.validate()?;
    let bounded = Bounded::new(endpoint, config.max_in_flight);
    let gen = Generator { config, filters, endpoint: &bounded, tokenizer, store };
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<(Vec<GenerationJob>, Option<Book>), SynthError>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let cancelled = || cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));
    std::thread::scope(|s| {
        for _ in 0..config.max_in_flight.min(tasks.len()).max(1) {
            s.spawn(|| loop {
                if cancelled() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { return };
                let out = match task {
                    GenerationTask::Rephrase { doc_id, text, kind } => gen.rephrase(doc_id, text, *kind).map(|j| (vec![j], None)),
                    GenerationTask::Textbook { doc_id, text, audience } => {
                        gen.textbook(doc_id, text, *audience, cancel.as_deref()).map(|b| (b.jobs.clone(), Some(b)))
                    }
                };
                let failed = out.is_err();
                *slots[i].lock().unwrap() = Some(out);
                if failed {
                    return;
                }
            });
        }
    });
    let mut report = SweepReport::default();
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(Ok((jobs, book))) => {
                report.jobs.extend(jobs);
                report.books.extend(book);
            }
            Some(Err(e)) => return Err(e),
            None => report.interrupted = true,
        }
    }
    report.interrupted |= cancelled();
    Ok(report)
}

/// One exported document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: String,
    pub text: String,
    pub source_id: String,
    pub kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audience: Option<Audience>,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub tokenizer_id: String,
    pub doc_count: usize,
    pub total_tokens: u64,
    pub kind_counts: BTreeMap<String, usize>,
    pub books_accepted: usize,
    pub books_rejected: usize,
}

/// Path of the manifest written next to an exported corpus.
pub fn manifest_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    corpus_path.with_file_name(name)
}

/// Jobs that make it into the exported corpus: done HQ/QA jobs and the done
/// chapters of accepted books. Outlines are never exported.
pub fn exportable(jobs: &[GenerationJob]) -> Vec<&GenerationJob> {
    let mut books: BTreeMap<&str, Vec<GenerationJob>> = BTreeMap::new();
    for j in jobs.iter().filter(|j| j.kind.is_textbook()) {
        if let Some(b) = &j.book_id {
            books.entry(b).or_default().push(j.clone());
        }
    }
    let accepted: HashMap<&str, bool> = books.iter().map(|(b, js)| (*b, book_verdict(js).0)).collect();
    jobs.iter()
        .filter(|j| j.status == JobStatus::Done && j.output_text.is_some())
        .filter(|j| match j.kind {
            PromptKind::Hq | PromptKind::Qa => true,
            PromptKind::TxbkOutline => false,
            PromptKind::TxbkChapter => j.book_id.as_deref().and_then(|b| accepted.get(b)).copied().unwrap_or(false),
        })
        .collect()
}

/// Write accepted outputs as a jsonl corpus plus a generation manifest and
/// return the handle obtained by ingesting the result.
pub fn export(jobs: &[GenerationJob], out_path: &Path, config: &GenerationConfig, tokenizer: &dyn Tokenizer) -> Result<CorpusHandle, SynthError> {
    let keep = exportable(jobs);
    if keep.is_empty() {
        return Err(SynthError::NothingToExport);
    }
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    let mut kind_counts = BTreeMap::new();
    for j in &keep {
        let rec = ExportRecord {
            id: j.job_id.clone(),
            text: j.output_text.clone().unwrap_or_default(),
            source_id: j.source_doc_id.clone(),
            kind: j.kind,
            audience: j.audience,
            model_name: j.model_name.clone(),
            temperature: j.temperature,
            top_p: j.top_p,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
        *kind_counts.entry(j.kind.to_string()).or_insert(0) += 1;
    }
    fs::write(out_path, out)?;
    let label = out_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "synthetic".into());
    let handle = corpus::ingest(out_path, CorpusFormat::Jsonl, &label, tokenizer)?.handle;

    let mut books: BTreeMap<&str, Vec<GenerationJob>> = BTreeMap::new();
    for j in jobs.iter().filter(|j| j.kind.is_textbook()) {
        if let Some(b) = &j.book_id {
            books.entry(b).or_default().push(j.clone());
        }
    }
    let books_accepted = books.values().filter(|js| book_verdict(js).0).count();
    let manifest = GenerationManifest {
        config_digest: config.digest(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        tokenizer_id: tokenizer.id().to_string(),
        doc_count: handle.doc_count as usize,
        total_tokens: handle.total_tokens,
        kind_counts,
        books_accepted,
        books_rejected: books.len() - books_accepted,
    };
    fs::write(manifest_path(out_path), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WordPunctTokenizer;

    fn words(n: usize) -> String {
        vec!["word"; n].join(" ")
    }

    fn gen<'a>(config: &'a GenerationConfig, filters: &'a FilterSet, endpoint: &'a dyn ChatEndpoint) -> Generator<'a> {
        Generator { config, filters, endpoint, tokenizer: &WordPunctTokenizer, store: None }
    }

    #[test]
    fn hq_prompt_prefix() {
        let t = PromptTemplate::new(PromptKind::Hq, None).unwrap();
        let (sys, user) = render_prompt(&t, "X", None).unwrap();
        assert_eq!(sys, "Provide direct and detailed response to the instructions without adding additional notes.");
        assert!(user.starts_with("For the following document, regardless of its original content or formatting, write a full article"));
        assert!(user.contains("Wikipedia: X. Provide"));
    }

    #[test]
    fn qa_prompt_text() {
        let t = PromptTemplate::new(PromptKind::Qa, None).unwrap();
        let (_, user) = render_prompt(&t, "X", None).unwrap();
        assert!(user.contains("convert it into a comprehensive list of question-answer pairs"));
        assert!(user.contains("Document: X.  Provide"));
    }

    #[test]
    fn chapter_prompt_substitutions() {
        let t = PromptTemplate::new(PromptKind::TxbkChapter, Some(Audience::GradeSchool)).unwrap();
        let (sys, user) = render_prompt(&t, "OUTLINE", Some(3)).unwrap();
        assert!(sys.starts_with("Provide a direct"));
        assert!(user.contains("write Chapter 3 of the textbook"));
        assert!(user.contains("grade school students"));
        assert!(user.contains("outline.\n Outline: OUTLINE \n Your task"));
        let college = PromptTemplate::new(PromptKind::TxbkChapter, Some(Audience::College)).unwrap();
        assert!(render_prompt(&college, "O", Some(1)).unwrap().1.contains("Your target audiences are college students."));
    }

    #[test]
    fn prompt_errors() {
        let ch = PromptTemplate::new(PromptKind::TxbkChapter, Some(Audience::Expert)).unwrap();
        assert!(matches!(render_prompt(&ch, "o", None), Err(SynthError::MissingChapterIndex)));
        assert!(matches!(render_prompt(&ch, "o", Some(11)), Err(SynthError::ChapterOutOfRange(11))));
        assert!(matches!(render_prompt(&ch, "o", Some(0)), Err(SynthError::ChapterOutOfRange(0))));
        let hq = PromptTemplate::new(PromptKind::Hq, None).unwrap();
        assert!(matches!(render_prompt(&hq, "o", Some(1)), Err(SynthError::UnexpectedChapterIndex)));
        assert!(matches!(render_prompt(&hq, "  ", None), Err(SynthError::EmptySource)));
        assert!(matches!(PromptTemplate::new(PromptKind::TxbkOutline, None), Err(SynthError::MissingAudience(_))));
        assert!(matches!("XYZ".parse::<PromptKind>(), Err(SynthError::UnknownKind(_))));
    }

    #[test]
    fn source_slot_filled_verbatim() {
        let t = PromptTemplate::new(PromptKind::TxbkOutline, Some(Audience::General)).unwrap();
        let src = "contains [xxxx] and [chapter] literally";
        let (_, user) = render_prompt(&t, src, None).unwrap();
        assert!(user.contains(&format!("Text: {src}\n Your task")));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = GenerationConfig::default();
        assert_eq!((c.temperature, c.top_p), (0.7, 0.95));
        assert!(c.validate().is_ok());
        let bad = GenerationConfig { temperature: -1.0, top_p: 0.0, max_in_flight: 0, ..c };
        assert_eq!(bad.violations().len(), 3);
    }

    #[test]
    fn filter_defaults() {
        assert_eq!(FilterPolicy::for_kind(PromptKind::Hq), FilterPolicy { min_tokens: 50, max_tokens: 2200 });
        assert_eq!(FilterPolicy::for_kind(PromptKind::TxbkChapter).max_tokens, 1800);
        assert!(FilterPolicy::new(50, 50).is_err());
        assert!(FilterPolicy::new(0, 5).is_err());
    }

    #[test]
    fn rephrase_statuses() {
        let cfg = GenerationConfig { retry: RetryPolicy { max_attempts: 3, backoff_ms: 0 }, ..Default::default() };
        let filters = FilterSet::default();
        let long = |_: &ChatRequest| Ok::<_, EndpointError>(words(600));
        let job = gen(&cfg, &filters, &long).rephrase("d1", "some text.", PromptKind::Hq).unwrap();
        assert_eq!(job.status, JobStatus::Done);
        assert_eq!(job.output_tokens, Some(600));

        let short = |_: &ChatRequest| Ok::<_, EndpointError>(words(10));
        let job = gen(&cfg, &filters, &short).rephrase("d1", "some text.", PromptKind::Qa).unwrap();
        assert_eq!(job.status, JobStatus::Filtered);

        let calls = AtomicUsize::new(0);
        let down = |_: &ChatRequest| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err::<String, _>(EndpointError::Retryable("HTTP 500".into()))
        };
        let job = gen(&cfg, &filters, &down).rephrase("d1", "some text.", PromptKind::Hq).unwrap();
        assert_eq!(job.status, JobStatus::Failed);
        assert_eq!(job.attempt_count, 3);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert!(job.reason.is_some());
    }

    #[test]
    fn truncation_at_sentence_boundary() {
        let tok = WordPunctTokenizer;
        let text = "one two three. four five six. seven eight";
        let (cut, truncated) = truncate_source(text, &tok, 8);
        assert!(truncated);
        assert_eq!(cut, "one two three. four five six.");
        assert_eq!(truncate_source(text, &tok, 7).0, "one two three.");
        let (same, t) = truncate_source(text, &tok, 100);
        assert!(!t);
        assert_eq!(same, text);
        let (hard, _) = truncate_source("a b c d e", &tok, 3);
        assert_eq!(hard, "a b c");
    }

    #[test]
    fn textbook_flow() {
        let cfg = GenerationConfig { retry: RetryPolicy { max_attempts: 1, backoff_ms: 0 }, ..Default::default() };
        let filters = FilterSet::default();
        let ok = |_: &ChatRequest| Ok::<_, EndpointError>(words(300));
        let book = gen(&cfg, &filters, &ok).textbook("s", "seed text.", Audience::College, None).unwrap();
        assert_eq!(book.jobs.len(), 11);
        assert!(book.jobs.iter().all(|j| j.status == JobStatus::Done));
        assert!(book.accepted && !book.partial);

        let no_outline = |r: &ChatRequest| {
            if r.messages[1].content.contains("Textbook outline:") {
                Err(EndpointError::Fatal("HTTP 400".into()))
            } else {
                Ok(words(300))
            }
        };
        let book = gen(&cfg, &filters, &no_outline).textbook("s", "seed text.", Audience::College, None).unwrap();
        assert_eq!(book.jobs.len(), 1);
        assert_eq!(book.jobs[0].status, JobStatus::Failed);
        assert!(!book.accepted);

        let two_short = |r: &ChatRequest| {
            let u = &r.messages[1].content;
            if u.contains("Chapter 4 ") || u.contains("Chapter 9 ") {
                Ok(words(5))
            } else {
                Ok(words(300))
            }
        };
        let book = gen(&cfg, &filters, &two_short).textbook("s", "seed text.", Audience::Expert, None).unwrap();
        assert_eq!(book.jobs.iter().filter(|j| j.status == JobStatus::Filtered).count(), 2);
        assert!(book.accepted);
        assert!(!book.partial);
    }

    #[test]
    fn export_keeps_done_jobs_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerationConfig::default();
        let mk = |id: &str, status, n| GenerationJob {
            status,
            output_text: Some(words(n)),
            output_tokens: Some(n),
            ..GenerationJob::pending(id.into(), "src", PromptKind::Hq, &cfg)
        };
        let jobs = vec![mk("a", JobStatus::Done, 60), mk("b", JobStatus::Done, 70), mk("c", JobStatus::Done, 80), mk("d", JobStatus::Filtered, 3)];
        let path = dir.path().join("hq.jsonl");
        let h = export(&jobs, &path, &cfg, &WordPunctTokenizer).unwrap();
        assert_eq!(h.doc_count, 3);
        assert_eq!(h.total_tokens, 210);
        let m: GenerationManifest = serde_json::from_str(&fs::read_to_string(manifest_path(&path)).unwrap()).unwrap();
        assert_eq!(m.kind_counts["HQ"], 3);
        assert_eq!(m.config_digest, cfg.digest());
        assert!(matches!(export(&jobs[3..], &path, &cfg, &WordPunctTokenizer), Err(SynthError::NothingToExport)));
    }

    #[test]
    fn store_replays_and_drops_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jobs.jsonl");
        let cfg = GenerationConfig::default();
        {
            let store = JobStore::open(&path).unwrap();
            let mut j = GenerationJob::pending("HQ:a".into(), "a", PromptKind::Hq, &cfg);
            store.record(&j).unwrap();
            j.status = JobStatus::Done;
            j.output_text = Some("x".into());
            store.record(&j).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"job_id\":\"HQ:b\",\"sta").unwrap();
        drop(f);
        let store = JobStore::open(&path).unwrap();
        assert_eq!(store.jobs().len(), 1);
        assert_eq!(store.terminal("HQ:a").unwrap().status, JobStatus::Done);
        assert!(fs::read_to_string(&path).unwrap().ends_with('\n'));
    }
}
