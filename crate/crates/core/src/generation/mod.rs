//! Text generation clients: the request type, the prompt templates, an
//! OpenAI-style HTTP client and deterministic offline stubs.

mod http;
pub mod stub;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::error::{Error, Result};

pub use http::{ClientConfig, HttpGenerator, HttpTransport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("http status {status}: {body}")]
    Transport { status: u16, body: String },
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("request timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no response available for prompt: {0}")]
    Unavailable(String),
}

impl GenError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GenError::Transport { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            GenError::Connection(_) | GenError::Timeout => true,
            GenError::Protocol(_) | GenError::Unavailable(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f32,
    pub stop: Option<Vec<String>>,
    /// Ordinal of this draw among repeated identical prompts. Not sent over the
    /// wire; stubs use it to stay pure functions of the request.
    pub sample_index: u32,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Result<Self> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(Error::Invalid("generation prompt is empty".into()));
        }
        Ok(GenerationRequest {
            prompt,
            max_tokens: 256,
            temperature: 0.0,
            stop: None,
            sample_index: 0,
        })
    }

    pub fn with_temperature(mut self, temperature: f32) -> Result<Self> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(Error::Invalid(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Result<Self> {
        if max_tokens == 0 {
            return Err(Error::Invalid("max_tokens must be positive".into()));
        }
        self.max_tokens = max_tokens;
        Ok(self)
    }

    pub fn with_stop(mut self, stop: Vec<String>) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn with_sample_index(mut self, sample_index: u32) -> Self {
        self.sample_index = sample_index;
        self
    }
}

/// Anything that turns a prompt into text. Implementations must be shareable across threads.
pub trait Generator: Send + Sync {
    /// Returns the first candidate's text, untrimmed.
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError>;
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for std::sync::Arc<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        (**self).generate(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptTask {
    Rewrite,
    Atomize,
    Question,
}

impl PromptTask {
    pub fn template(self) -> &'static str {
        match self {
            PromptTask::Rewrite => REWRITE_TEMPLATE,
            PromptTask::Atomize => ATOMIZE_TEMPLATE,
            PromptTask::Question => QUESTION_TEMPLATE,
        }
    }
}

const REWRITE_TEMPLATE: &str =
    "Please write a full sentence answer to the following question. {query}";
const ATOMIZE_TEMPLATE: &str = "Please breakdown the following paragraph into stand-alone atomic facts. Return each fact on a new line. {chunk}";
const QUESTION_TEMPLATE: &str =
    "Generate a single closed-answer question using: {chunk}\nThe answer should be present in: {atom}";

/// Substitutes `{name}` placeholders in one pass; slot values are never re-scanned.
pub fn render_prompt(task: PromptTask, slots: &[(&str, &str)]) -> Result<String> {
    let template = task.template();
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .expect("templates are well formed");
        let name = &rest[open + 1..close];
        let value = slots
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Invalid(format!("prompt slot `{name}` missing")))?;
        out.push_str(value);
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Recovers the task and slot values from a rendered prompt.
pub fn parse_prompt(prompt: &str) -> Option<(PromptTask, Vec<(&'static str, &str)>)> {
    const QUESTION_SPLIT: &str = "\nThe answer should be present in: ";
    if let Some(query) = prompt.strip_prefix(&REWRITE_TEMPLATE[..REWRITE_TEMPLATE.len() - 7]) {
        return Some((PromptTask::Rewrite, vec![("query", query)]));
    }
    if let Some(chunk) = prompt.strip_prefix(&ATOMIZE_TEMPLATE[..ATOMIZE_TEMPLATE.len() - 7]) {
        return Some((PromptTask::Atomize, vec![("chunk", chunk)]));
    }
    let head = "Generate a single closed-answer question using: ";
    let body = prompt.strip_prefix(head)?;
    let split = body.rfind(QUESTION_SPLIT)?;
    Some((
        PromptTask::Question,
        vec![
            ("chunk", &body[..split]),
            ("atom", &body[split + QUESTION_SPLIT.len()..]),
        ],
    ))
}

/// Attempt count and geometric backoff between attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `backoff_base * 2^retry`.
    pub fn delay(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << retry.min(20))
    }

    /// Runs `attempt` until it succeeds, fails with a non-retryable error, or
    /// `max_retries` retries are spent.
    pub fn run<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, GenError>,
        mut sleep: impl FnMut(Duration),
    ) -> Result<T, GenError> {
        let mut retry = 0;
        loop {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && retry < self.max_retries => {
                    let delay = self.delay(retry);
                    log::debug!("retrying after {delay:?}: {e}");
                    sleep(delay);
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        InFlightLimit {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightPermit { limit: self }
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.limit.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.limit.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn rewrite_prompt_is_exact() {
        let p = render_prompt(PromptTask::Rewrite, &[("query", "Q?")]).unwrap();
        assert_eq!(
            p,
            "Please write a full sentence answer to the following question. Q?"
        );
    }

    #[test]
    fn atomize_and_question_prompts() {
        let p = render_prompt(PromptTask::Atomize, &[("chunk", "C")]).unwrap();
        let facts = p.find("stand-alone atomic facts").unwrap();
        assert!(p.rfind('C').unwrap() > facts);
        assert!(p.ends_with(" C"));

        let p = render_prompt(PromptTask::Question, &[("chunk", "C"), ("atom", "A")]).unwrap();
        assert!(p.contains("single closed-answer question"));
        assert!(p.contains("using: C\n"));
        assert!(p.ends_with("present in: A"));
    }

    #[test]
    fn missing_slot_is_named() {
        let err = render_prompt(PromptTask::Question, &[("chunk", "C")]).unwrap_err();
        assert!(err.to_string().contains("`atom`"));
    }

    #[test]
    fn slot_values_are_not_rescanned() {
        let p = render_prompt(PromptTask::Question, &[("chunk", "{atom}"), ("atom", "A")]).unwrap();
        assert!(p.contains("using: {atom}\n"));
    }

    #[test]
    fn parse_inverts_render() {
        for (task, slots) in [
            (PromptTask::Rewrite, vec![("query", "Who? Me.")]),
            (PromptTask::Atomize, vec![("chunk", "Line one.\nLine two.")]),
            (PromptTask::Question, vec![("chunk", "Some text."), ("atom", "An atom.")]),
        ] {
            let p = render_prompt(task, &slots).unwrap();
            let (t, parsed) = parse_prompt(&p).unwrap();
            assert_eq!(t, task);
            assert_eq!(parsed, slots);
        }
        assert!(parse_prompt("hello").is_none());
    }

    #[test]
    fn request_validation() {
        assert!(GenerationRequest::new("  ").is_err());
        let r = GenerationRequest::new("p").unwrap();
        assert!(r.clone().with_temperature(2.5).is_err());
        assert!(r.clone().with_temperature(-0.1).is_err());
        assert!(r.clone().with_max_tokens(0).is_err());
        assert_eq!(r.with_temperature(2.0).unwrap().temperature, 2.0);
    }

    #[test]
    fn backoff_is_geometric_and_bounded() {
        let policy = RetryPolicy {
            max_retries: 4,
            backoff_base: Duration::from_millis(10),
        };
        let mut calls = 0;
        let mut slept = Vec::new();
        let out: Result<(), _> = policy.run(
            || {
                calls += 1;
                Err(GenError::Transport {
                    status: 503,
                    body: String::new(),
                })
            },
            |d| slept.push(d),
        );
        assert!(out.is_err());
        assert_eq!(calls, 5);
        let ms: Vec<u128> = slept.iter().map(|d| d.as_millis()).collect();
        assert_eq!(ms, [10, 20, 40, 80]);
    }

    #[test]
    fn non_retryable_errors_stop_immediately() {
        let policy = RetryPolicy {
            max_retries: 5,
            backoff_base: Duration::from_millis(1),
        };
        let mut calls = 0;
        let out: Result<(), _> = policy.run(
            || {
                calls += 1;
                Err(GenError::Transport {
                    status: 400,
                    body: String::new(),
                })
            },
            |_| {},
        );
        assert!(out.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn permits_bound_concurrency() {
        let limit = Arc::new(InFlightLimit::new(3));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..12 {
                let (limit, active, peak) = (limit.clone(), active.clone(), peak.clone());
                s.spawn(move || {
                    let _p = limit.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
