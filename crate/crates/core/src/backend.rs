//! Uniform streaming-generation interface: live chat-completion
//! backends with per-token top-k logprobs, a deterministic fixture
//! backend, and a record/replay wrapper.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::confidence::TokenEvent;
use crate::error::{Error, Result};

/// Parameters of one generation request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    #[serde(default)]
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub top_logprobs_k: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be >= 1"));
        }
        if self.top_logprobs_k == 0 || self.top_logprobs_k > 20 {
            return Err(Error::invalid("top_logprobs_k must be in 1..=20"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Cancelled,
}

/// One item of a generation stream: a token or the terminal marker.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamEvent {
    Token(TokenEvent),
    Done { finish_reason: FinishReason },
}

/// Cooperative cancellation for a stream; may be invoked from another
/// thread than the consumer.
#[derive(Debug, Clone, Default)]
pub struct CancelHandle(Arc<AtomicBool>);

impl CancelHandle {
    pub fn new() -> Self {
        CancelHandle(Arc::new(AtomicBool::new(false)))
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// A pull-based token stream. Yields zero or more `Token` events and
/// exactly one terminal `Done`, always last.
pub struct TokenStream {
    inner: Box<dyn Iterator<Item = Result<StreamEvent>> + Send>,
    cancel: CancelHandle,
    done: bool,
}

impl TokenStream {
    pub fn new(
        inner: Box<dyn Iterator<Item = Result<StreamEvent>> + Send>,
        cancel: CancelHandle,
    ) -> Self {
        TokenStream { inner, cancel, done: false }
    }

    pub fn cancel_handle(&self) -> CancelHandle {
        self.cancel.clone()
    }
}

impl Iterator for TokenStream {
    type Item = Result<StreamEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.inner.next();
        match &item {
            Some(Ok(StreamEvent::Done { .. })) | Some(Err(_)) | None => self.done = true,
            _ => {}
        }
        item
    }
}

/// A generation backend producing cancellable token streams.
pub trait GenerationBackend: Send + Sync {
    fn stream_generate(&self, req: &GenerationRequest) -> Result<TokenStream>;
}

/// Recorded event wire form: `{"t","lp","topk"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEvent {
    #[serde(rename = "t")]
    pub token_text: String,
    #[serde(rename = "lp")]
    pub chosen_logprob: f64,
    pub topk: Vec<f64>,
}

impl FixtureEvent {
    pub fn to_token_event(&self) -> TokenEvent {
        TokenEvent {
            token_text: self.token_text.clone(),
            chosen_logprob: self.chosen_logprob,
            topk_logprobs: self.topk.clone(),
        }
    }

    pub fn from_token_event(e: &TokenEvent) -> Self {
        FixtureEvent {
            token_text: e.token_text.clone(),
            chosen_logprob: e.chosen_logprob,
            topk: e.topk_logprobs.clone(),
        }
    }
}

/// One recorded trace, replayable byte-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFixture {
    pub fixture_id: String,
    pub prompt_key: String,
    pub events: Vec<FixtureEvent>,
    pub finish: FinishReason,
}

impl TraceFixture {
    fn validate(&self) -> std::result::Result<(), String> {
        for (i, ev) in self.events.iter().enumerate() {
            ev.to_token_event()
                .validate()
                .map_err(|e| format!("event {i}: {e}"))?;
        }
        Ok(())
    }
}

/// Deterministic backend replaying recorded fixtures. Requests map to
/// fixtures by prompt key; among multiple fixtures for one prompt, the
/// request seed rotates round-robin.
pub struct FixtureBackend {
    fixtures: HashMap<String, Vec<TraceFixture>>,
}

impl FixtureBackend {
    pub fn new(fixtures: Vec<TraceFixture>) -> Result<Self> {
        if fixtures.is_empty() {
            return Err(Error::Load { line: 0, msg: "no fixtures".to_string() });
        }
        let mut map: HashMap<String, Vec<TraceFixture>> = HashMap::new();
        for f in fixtures {
            map.entry(f.prompt_key.clone()).or_default().push(f);
        }
        Ok(FixtureBackend { fixtures: map })
    }

    /// Loads a line-delimited JSON fixture file, validating each trace.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut fixtures = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fixture: TraceFixture = serde_json::from_str(line)
                .map_err(|e| Error::Load { line: i + 1, msg: e.to_string() })?;
            fixture
                .validate()
                .map_err(|msg| Error::Load { line: i + 1, msg })?;
            fixtures.push(fixture);
        }
        FixtureBackend::new(fixtures)
    }
}

impl GenerationBackend for FixtureBackend {
    fn stream_generate(&self, req: &GenerationRequest) -> Result<TokenStream> {
        req.validate()?;
        let matching = self
            .fixtures
            .get(&req.user_prompt)
            .ok_or_else(|| Error::Backend(format!("unknown prompt {:?}", req.user_prompt)))?;
        let idx = (req.seed.unwrap_or(0) as usize) % matching.len();
        let fixture = matching[idx].clone();
        let cancel = CancelHandle::new();
        let iter = FixtureIter {
            fixture,
            pos: 0,
            max_tokens: req.max_tokens,
            cancel: cancel.clone(),
            finished: false,
        };
        Ok(TokenStream::new(Box::new(iter), cancel))
    }
}

struct FixtureIter {
    fixture: TraceFixture,
    pos: usize,
    max_tokens: usize,
    cancel: CancelHandle,
    finished: bool,
}

impl Iterator for FixtureIter {
    type Item = Result<StreamEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        if self.cancel.is_cancelled() {
            self.finished = true;
            return Some(Ok(StreamEvent::Done { finish_reason: FinishReason::Cancelled }));
        }
        if self.pos >= self.max_tokens {
            self.finished = true;
            return Some(Ok(StreamEvent::Done { finish_reason: FinishReason::Length }));
        }
        if self.pos >= self.fixture.events.len() {
            self.finished = true;
            return Some(Ok(StreamEvent::Done { finish_reason: self.fixture.finish }));
        }
        let event = self.fixture.events[self.pos].to_token_event();
        self.pos += 1;
        Some(Ok(StreamEvent::Token(event)))
    }
}

/// Wraps a backend, persisting every consumed stream as a replayable
/// fixture. A sink write failure leaves the stream unaffected.
pub struct RecordingBackend {
    inner: Box<dyn GenerationBackend>,
    sink: Arc<Mutex<std::fs::File>>,
    counter: AtomicU64,
    path: PathBuf,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn GenerationBackend>, sink_path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(sink_path)?;
        Ok(RecordingBackend {
            inner,
            sink: Arc::new(Mutex::new(file)),
            counter: AtomicU64::new(0),
            path: sink_path.to_path_buf(),
        })
    }
}

impl GenerationBackend for RecordingBackend {
    fn stream_generate(&self, req: &GenerationRequest) -> Result<TokenStream> {
        let stream = self.inner.stream_generate(req)?;
        let cancel = stream.cancel_handle();
        let id = self.counter.fetch_add(1, Ordering::Relaxed);
        let recorder = RecordingIter {
            inner: stream,
            events: Vec::new(),
            prompt_key: req.user_prompt.clone(),
            fixture_id: format!("rec-{id}"),
            sink: self.sink.clone(),
            sink_path: self.path.clone(),
        };
        Ok(TokenStream::new(Box::new(recorder), cancel))
    }
}

struct RecordingIter {
    inner: TokenStream,
    events: Vec<FixtureEvent>,
    prompt_key: String,
    fixture_id: String,
    sink: Arc<Mutex<std::fs::File>>,
    sink_path: PathBuf,
}

impl RecordingIter {
    fn flush(&mut self, finish: FinishReason) {
        let fixture = TraceFixture {
            fixture_id: std::mem::take(&mut self.fixture_id),
            prompt_key: std::mem::take(&mut self.prompt_key),
            events: std::mem::take(&mut self.events),
            finish,
        };
        let line = match serde_json::to_string(&fixture) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("warning: failed to serialize fixture: {e}");
                return;
            }
        };
        let mut file = self.sink.lock().unwrap();
        if let Err(e) = writeln!(file, "{line}") {
            eprintln!("warning: failed to record fixture to {}: {e}", self.sink_path.display());
        }
    }
}

impl Iterator for RecordingIter {
    type Item = Result<StreamEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.inner.next();
        match &item {
            Some(Ok(StreamEvent::Token(ev))) => {
                self.events.push(FixtureEvent::from_token_event(ev));
            }
            Some(Ok(StreamEvent::Done { finish_reason })) => {
                self.flush(*finish_reason);
            }
            _ => {}
        }
        item
    }
}

#[cfg(feature = "live")]
pub use live::{LiveBackend, LiveConfig};

#[cfg(feature = "live")]
mod live {
    //! Chat-completions streaming client with per-token logprobs.
    //!
    //! Early stopping is client-side: cancelling drops the connection.
    //! Token accounting counts tokens received, which can slightly
    //! undercount server-side generation.

    use std::io::{BufRead, BufReader};

    use serde::Deserialize;

    use super::*;

    /// Live endpoint configuration.
    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct LiveConfig {
        pub url: String,
        pub model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        pub api_key_env: Option<String>,
    }

    pub struct LiveBackend {
        cfg: LiveConfig,
        api_key: Option<String>,
        client: reqwest::blocking::Client,
    }

    impl LiveBackend {
        pub fn new(cfg: LiveConfig) -> Result<Self> {
            let api_key = match &cfg.api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    Error::Backend(format!("environment variable {var} not set"))
                })?),
                None => None,
            };
            Ok(LiveBackend {
                cfg,
                api_key,
                client: reqwest::blocking::Client::new(),
            })
        }
    }

    #[derive(Deserialize)]
    struct Chunk {
        choices: Vec<Choice>,
    }

    #[derive(Deserialize)]
    struct Choice {
        #[serde(default)]
        finish_reason: Option<String>,
        #[serde(default)]
        logprobs: Option<Logprobs>,
    }

    #[derive(Deserialize)]
    struct Logprobs {
        #[serde(default)]
        content: Vec<TokenLogprob>,
    }

    #[derive(Deserialize)]
    struct TokenLogprob {
        token: String,
        logprob: f64,
        #[serde(default)]
        top_logprobs: Vec<Candidate>,
    }

    #[derive(Deserialize)]
    struct Candidate {
        logprob: f64,
    }

    impl GenerationBackend for LiveBackend {
        fn stream_generate(&self, req: &GenerationRequest) -> Result<TokenStream> {
            req.validate()?;
            let body = serde_json::json!({
                "model": self.cfg.model,
                "messages": [
                    {"role": "system", "content": req.system_prompt},
                    {"role": "user", "content": req.user_prompt},
                ],
                "temperature": req.temperature,
                "top_p": req.top_p,
                "max_tokens": req.max_tokens,
                "stream": true,
                "logprobs": true,
                "top_logprobs": req.top_logprobs_k,
                "seed": req.seed,
            });
            let url = format!(
                "{}/chat/completions",
                self.cfg.url.trim_end_matches('/')
            );
            let mut builder = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let resp = builder
                .send()
                .map_err(|e| Error::Backend(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(Error::Backend(format!("backend returned HTTP {}", resp.status())));
            }
            let cancel = CancelHandle::new();
            let iter = SseIter {
                reader: BufReader::new(resp),
                cancel: cancel.clone(),
                tokens: 0,
                max_tokens: req.max_tokens,
                saw_candidates: false,
                finished: false,
            };
            Ok(TokenStream::new(Box::new(iter), cancel))
        }
    }

    struct SseIter {
        reader: BufReader<reqwest::blocking::Response>,
        cancel: CancelHandle,
        tokens: usize,
        max_tokens: usize,
        saw_candidates: bool,
        finished: bool,
    }

    impl Iterator for SseIter {
        type Item = Result<StreamEvent>;

        fn next(&mut self) -> Option<Self::Item> {
            if self.finished {
                return None;
            }
            loop {
                if self.cancel.is_cancelled() {
                    self.finished = true;
                    return Some(Ok(StreamEvent::Done {
                        finish_reason: FinishReason::Cancelled,
                    }));
                }
                let mut line = String::new();
                match self.reader.read_line(&mut line) {
                    Ok(0) => {
                        self.finished = true;
                        return Some(Ok(StreamEvent::Done { finish_reason: FinishReason::Stop }));
                    }
                    Ok(_) => {}
                    Err(e) => {
                        self.finished = true;
                        return Some(Err(Error::Backend(e.to_string())));
                    }
                }
                let Some(data) = line.trim().strip_prefix("data:") else {
                    continue;
                };
                let data = data.trim();
                if data == "[DONE]" {
                    self.finished = true;
                    return Some(Ok(StreamEvent::Done { finish_reason: FinishReason::Stop }));
                }
                let chunk: Chunk = match serde_json::from_str(data) {
                    Ok(c) => c,
                    Err(e) => {
                        self.finished = true;
                        return Some(Err(Error::Backend(format!("bad chunk: {e}"))));
                    }
                };
                let Some(choice) = chunk.choices.first() else {
                    continue;
                };
                if let Some(lp) = choice.logprobs.as_ref().and_then(|l| l.content.first()) {
                    if lp.top_logprobs.is_empty() {
                        self.finished = true;
                        return Some(Err(Error::Backend(
                            "backend does not emit candidate logprobs; confidence math requires them"
                                .to_string(),
                        )));
                    }
                    self.saw_candidates = true;
                    self.tokens += 1;
                    let topk: Vec<f64> = {
                        let mut v: Vec<f64> =
                            lp.top_logprobs.iter().map(|c| c.logprob.min(0.0)).collect();
                        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        v
                    };
                    let chosen = lp.logprob.min(*topk.first().unwrap_or(&0.0));
                    return Some(Ok(StreamEvent::Token(TokenEvent {
                        token_text: lp.token.clone(),
                        chosen_logprob: chosen,
                        topk_logprobs: topk,
                    })));
                }
                if let Some(reason) = &choice.finish_reason {
                    self.finished = true;
                    let finish = match reason.as_str() {
                        "length" => FinishReason::Length,
                        _ => {
                            if self.tokens >= self.max_tokens {
                                FinishReason::Length
                            } else {
                                FinishReason::Stop
                            }
                        }
                    };
                    return Some(Ok(StreamEvent::Done { finish_reason: finish }));
                }
            }
        }
    }
}
