//! Confidence-gated parallel reasoning: warm-up traces, a percentile
//! stop threshold, concurrent online traces with streaming early stop,
//! confidence-filtered voting, and exact budget accounting.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{
    FinishReason, GenerationBackend, GenerationRequest, StreamEvent,
};
use crate::confidence::{
    token_confidence, trace_stats, TraceConfidenceStats, WindowAccumulator, WindowConfig,
};
use crate::curation::ProblemRecord;
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::verify::{extract_answer, ExtractedAnswer, DEFAULT_REL_TOL};
use crate::vote::{vote, VoteTally, VotingStrategy};

/// How the warm-up percentile cut is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileSemantics {
    /// Aggressive: keep roughly the top eta percent of warm-up traces.
    KeepTopEta,
    /// Conservative: drop roughly the bottom eta percent.
    DropBottomEta,
}

/// Engine configuration. Defaults follow the standard operating point:
/// 512-trace budget, 16 warm-up traces, eta = 10, 2048-token windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepConfConfig {
    pub total_budget: usize,
    pub warmup_count: usize,
    pub eta: f64,
    pub window: WindowConfig,
    pub max_tokens_per_trace: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub percentile_semantics: PercentileSemantics,
    /// No stop checks before this many tokens.
    pub grace_tokens: usize,
    pub max_concurrency: usize,
    /// Candidate count for token confidence.
    pub confidence_top_k: usize,
    /// Token count of the tail-confidence statistic.
    pub tail_window: usize,
    pub strategies: Vec<VotingStrategy>,
    /// Disable to replay traces in full (baseline for savings accounting).
    pub early_stop: bool,
}

impl Default for DeepConfConfig {
    fn default() -> Self {
        DeepConfConfig {
            total_budget: 512,
            warmup_count: 16,
            eta: 10.0,
            window: WindowConfig::default(),
            max_tokens_per_trace: 65536,
            temperature: 0.6,
            top_p: 0.95,
            percentile_semantics: PercentileSemantics::KeepTopEta,
            grace_tokens: 2048,
            max_concurrency: 32,
            confidence_top_k: 20,
            tail_window: 2048,
            strategies: VotingStrategy::ALL.to_vec(),
            early_stop: true,
        }
    }
}

impl DeepConfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_count == 0 || self.warmup_count >= self.total_budget {
            return Err(Error::invalid("warmup_count must satisfy 0 < N_init < K"));
        }
        if !(self.eta > 0.0 && self.eta < 100.0) {
            return Err(Error::invalid("eta must be in (0, 100)"));
        }
        if self.grace_tokens == 0 {
            return Err(Error::invalid("grace_tokens must be >= 1"));
        }
        if self.window.window_size == 0 || self.window.stride == 0 {
            return Err(Error::invalid("window_size and stride must be >= 1"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid("top_p must be in (0, 1]"));
        }
        if self.confidence_top_k == 0 || self.confidence_top_k > 20 {
            return Err(Error::invalid("confidence_top_k must be in 1..=20"));
        }
        if self.max_concurrency == 0 {
            return Err(Error::invalid("max_concurrency must be >= 1"));
        }
        if self.max_tokens_per_trace == 0 {
            return Err(Error::invalid("max_tokens_per_trace must be >= 1"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("at least one voting strategy required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Completed,
    EarlyStopped,
    TruncatedAtMax,
    BackendFailed,
}

/// Full record of one generated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub status: TraceStatus,
    pub tokens_generated: usize,
    /// Absent only for traces that failed before producing a token.
    pub stats: Option<TraceConfidenceStats>,
    pub answer: Option<ExtractedAnswer>,
    pub text: String,
}

/// Token budget accounting for one run. Every generated token counts,
/// including tokens of early-stopped and failed traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RunLedger {
    pub tokens_warmup: u64,
    pub tokens_online: u64,
    pub tokens_total: u64,
    pub traces_launched: usize,
    pub traces_early_stopped: usize,
}

/// The stop threshold together with the warm-up values it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopThreshold {
    pub s: f64,
    pub source_min_confidences: Vec<f64>,
}

/// Result of one full adaptive-sampling run on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepConfResult {
    pub problem_id: String,
    /// Strategy name → tally, ordered by name.
    pub votes: BTreeMap<String, VoteTally>,
    pub ledger: RunLedger,
    pub traces: Vec<TraceRecord>,
    pub threshold: StopThreshold,
}

/// Nearest-rank percentile over the warm-up minimum window confidences.
///
/// With `keep_top_eta` the threshold sits at the ceil((100−eta)/100·N)-th
/// smallest value (1-indexed); with `drop_bottom_eta` at the
/// ceil(eta/100·N)-th smallest. The result is always a member of the
/// input list.
pub fn compute_threshold(
    warmup_mins: &[f64],
    eta: f64,
    semantics: PercentileSemantics,
) -> Result<StopThreshold> {
    if warmup_mins.is_empty() {
        return Err(Error::invalid("warmup_mins must be non-empty"));
    }
    if !(eta > 0.0 && eta < 100.0) {
        return Err(Error::invalid("eta must be in (0, 100)"));
    }
    let n = warmup_mins.len();
    let mut sorted = warmup_mins.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = match semantics {
        PercentileSemantics::KeepTopEta => 100.0 - eta,
        PercentileSemantics::DropBottomEta => eta,
    };
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    let rank = rank.clamp(1, n);
    Ok(StopThreshold { s: sorted[rank - 1], source_min_confidences: warmup_mins.to_vec() })
}

/// Streaming stop rule: stop once the grace period has elapsed and the
/// current window mean falls strictly below `s`.
pub fn should_stop(acc: &WindowAccumulator, s: f64, grace_tokens: usize) -> bool {
    acc.tokens_seen() >= grace_tokens as u64 && acc.mean() < s
}

/// Traces eligible to vote: completed, at or above the threshold, with
/// an extracted answer. Early-stopped traces never vote.
pub fn filter_for_voting(traces: &[TraceRecord], s: f64) -> Vec<TraceRecord> {
    traces
        .iter()
        .filter(|t| {
            t.status == TraceStatus::Completed
                && t.answer.is_some()
                && t.stats.as_ref().is_some_and(|st| st.min_window_confidence >= s)
        })
        .cloned()
        .collect()
}

/// Consumes one stream into a [`TraceRecord`], applying the streaming
/// stop rule when a threshold is given. The trace stops at the first
/// token index past the grace period whose window mean falls below the
/// threshold, and at no earlier index.
pub fn stream_trace(
    backend: &dyn GenerationBackend,
    trace_id: &str,
    prompt: &str,
    cfg: &DeepConfConfig,
    seed: u64,
    threshold: Option<f64>,
) -> TraceRecord {
    let failed = |tokens: usize, text: String| TraceRecord {
        trace_id: trace_id.to_string(),
        status: TraceStatus::BackendFailed,
        tokens_generated: tokens,
        stats: None,
        answer: None,
        text,
    };

    let req = GenerationRequest {
        system_prompt: String::new(),
        user_prompt: prompt.to_string(),
        temperature: cfg.temperature,
        top_p: cfg.top_p,
        max_tokens: cfg.max_tokens_per_trace,
        top_logprobs_k: cfg.confidence_top_k,
        seed: Some(seed),
    };
    let mut stream = match backend.stream_generate(&req) {
        Ok(s) => s,
        Err(_) => return failed(0, String::new()),
    };
    let cancel = stream.cancel_handle();

    let mut text = String::new();
    let mut confidences: Vec<f64> = Vec::new();
    let mut acc = WindowAccumulator::new(cfg.window.window_size);
    let mut stopped_early = false;
    let mut finish = FinishReason::Stop;

    for event in &mut stream {
        match event {
            Ok(StreamEvent::Token(tok)) => {
                let conf = match token_confidence(&tok, cfg.confidence_top_k.min(tok.topk_logprobs.len()))
                {
                    Ok(c) => c,
                    Err(_) => return failed(confidences.len(), text),
                };
                text.push_str(&tok.token_text);
                confidences.push(conf);
                acc.push(conf);
                if let Some(s) = threshold {
                    if !stopped_early && should_stop(&acc, s, cfg.grace_tokens) {
                        stopped_early = true;
                        cancel.cancel();
                    }
                }
            }
            Ok(StreamEvent::Done { finish_reason }) => {
                finish = finish_reason;
            }
            Err(_) => return failed(confidences.len(), text),
        }
    }

    if confidences.is_empty() {
        return failed(0, text);
    }
    let stats = match trace_stats(&confidences, &cfg.window, cfg.tail_window) {
        Ok(s) => s,
        Err(_) => return failed(confidences.len(), text),
    };
    let status = if stopped_early {
        TraceStatus::EarlyStopped
    } else {
        match finish {
            FinishReason::Stop => TraceStatus::Completed,
            FinishReason::Length => TraceStatus::TruncatedAtMax,
            FinishReason::Cancelled => TraceStatus::EarlyStopped,
        }
    };
    let answer = if status == TraceStatus::Completed { extract_answer(&text) } else { None };
    TraceRecord {
        trace_id: trace_id.to_string(),
        status,
        tokens_generated: confidences.len(),
        stats: Some(stats),
        answer,
        text,
    }
}

/// Runs a batch of traces with up to `max_concurrency` in flight.
/// Results come back in job order regardless of scheduling.
fn run_traces_concurrent(
    backend: &dyn GenerationBackend,
    jobs: &[(String, u64, Option<f64>)],
    prompt: &str,
    cfg: &DeepConfConfig,
) -> Vec<TraceRecord> {
    let slots: Mutex<Vec<Option<TraceRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = cfg.max_concurrency.min(jobs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (id, seed, threshold) = &jobs[i];
                let record = stream_trace(backend, id, prompt, cfg, *seed, *threshold);
                slots.lock().unwrap()[i] = Some(record);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

/// Runs the full adaptive-sampling algorithm on one problem.
///
/// Exactly `warmup_count` warm-up traces run without early stopping; the
/// stop threshold comes from their minimum window confidences; the
/// remaining budget runs with streaming early stop. Backend failures on
/// individual traces are tolerated; a run with zero usable traces fails.
pub fn deepconf_run(
    problem: &ProblemRecord,
    cfg: &DeepConfConfig,
    backend: &dyn GenerationBackend,
    run_seed: u64,
) -> Result<DeepConfResult> {
    cfg.validate()?;

    let warmup_jobs: Vec<(String, u64, Option<f64>)> = (0..cfg.warmup_count)
        .map(|i| {
            let id = format!("warmup-{i:04}");
            let seed = derive_seed(run_seed, &["trace", &problem.id, &id]);
            (id, seed, None)
        })
        .collect();
    let warmup = run_traces_concurrent(backend, &warmup_jobs, &problem.prompt, cfg);

    let warmup_mins: Vec<f64> = warmup
        .iter()
        .filter_map(|t| t.stats.as_ref().map(|s| s.min_window_confidence))
        .collect();
    if warmup_mins.is_empty() {
        return Err(Error::RunFailed("every warm-up trace failed".to_string()));
    }
    let threshold = compute_threshold(&warmup_mins, cfg.eta, cfg.percentile_semantics)?;
    let online_threshold = if cfg.early_stop { Some(threshold.s) } else { None };

    let online_count = cfg.total_budget - cfg.warmup_count;
    let online_jobs: Vec<(String, u64, Option<f64>)> = (0..online_count)
        .map(|i| {
            let id = format!("online-{i:04}");
            let seed = derive_seed(run_seed, &["trace", &problem.id, &id]);
            (id, seed, online_threshold)
        })
        .collect();
    let online = run_traces_concurrent(backend, &online_jobs, &problem.prompt, cfg);

    let tokens_warmup: u64 = warmup.iter().map(|t| t.tokens_generated as u64).sum();
    let tokens_online: u64 = online.iter().map(|t| t.tokens_generated as u64).sum();
    let mut traces = warmup;
    traces.extend(online);
    if traces.iter().all(|t| t.status == TraceStatus::BackendFailed) {
        return Err(Error::RunFailed("every trace failed".to_string()));
    }
    let ledger = RunLedger {
        tokens_warmup,
        tokens_online,
        tokens_total: tokens_warmup + tokens_online,
        traces_launched: traces.len(),
        traces_early_stopped: traces
            .iter()
            .filter(|t| t.status == TraceStatus::EarlyStopped)
            .count(),
    };

    let voters = filter_for_voting(&traces, threshold.s);
    let mut votes = BTreeMap::new();
    for strategy in &cfg.strategies {
        votes.insert(
            strategy.name().to_string(),
            vote(&voters, *strategy, DEFAULT_REL_TOL)?,
        );
    }

    Ok(DeepConfResult { problem_id: problem.id.clone(), votes, ledger, traces, threshold })
}
