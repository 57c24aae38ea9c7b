//! Token-level and windowed group confidence statistics.
//!
//! Confidence of a token is the negative mean log-probability over the
//! top-k candidate tokens; group confidence is the mean token confidence
//! over a sliding window of recent tokens. Both a batch form (whole trace
//! available) and a streaming form ([`WindowAccumulator`]) are provided,
//! and they agree at every prefix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One generated token with its chosen log-probability and the
/// log-probabilities of the top-k candidates (natural log, sorted
/// non-increasing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub token_text: String,
    pub chosen_logprob: f64,
    pub topk_logprobs: Vec<f64>,
}

impl TokenEvent {
    /// Checks the structural invariants: every logprob non-positive,
    /// candidates sorted non-increasing, chosen never above the best
    /// candidate.
    pub fn validate(&self) -> Result<()> {
        if self.topk_logprobs.is_empty() {
            return Err(Error::invalid("topk_logprobs must be non-empty"));
        }
        if self.chosen_logprob > 0.0 {
            return Err(Error::invalid("chosen_logprob must be <= 0"));
        }
        for pair in self.topk_logprobs.windows(2) {
            if pair[0] < pair[1] {
                return Err(Error::invalid("topk_logprobs must be non-increasing"));
            }
        }
        if self.topk_logprobs[0] > 0.0 {
            return Err(Error::invalid("topk_logprobs must be <= 0"));
        }
        if self.chosen_logprob > self.topk_logprobs[0] {
            return Err(Error::invalid("chosen_logprob exceeds best candidate"));
        }
        Ok(())
    }
}

/// Sliding-window parameters for group confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_size: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { window_size: 2048, stride: 1 }
    }
}

impl WindowConfig {
    pub fn new(window_size: usize, stride: usize) -> Result<Self> {
        if window_size == 0 || stride == 0 {
            return Err(Error::invalid("window_size and stride must be >= 1"));
        }
        Ok(WindowConfig { window_size, stride })
    }
}

/// Summary confidence statistics of one full trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfidenceStats {
    /// Mean token confidence over the whole trace.
    pub mean_token_confidence: f64,
    /// Mean window confidence over all windows.
    pub mean_window_confidence: f64,
    /// Minimum window confidence (the "lowest group confidence").
    pub min_window_confidence: f64,
    /// Mean token confidence over the final `tail_window` tokens.
    pub tail_confidence: f64,
    /// Mean of the lowest 10% of window confidences.
    pub bottom_decile_mean: f64,
    pub window_count: usize,
}

/// Token confidence: `-(1/k) * sum` of the k largest candidate
/// log-probabilities. Zero only when the top candidate has probability 1
/// and k = 1.
pub fn token_confidence(event: &TokenEvent, k: usize) -> Result<f64> {
    if k == 0 || k > event.topk_logprobs.len() {
        return Err(Error::invalid(format!(
            "k = {} outside 1..={} available candidates",
            k,
            event.topk_logprobs.len()
        )));
    }
    // topk is sorted descending, so the k largest are the first k.
    let sum: f64 = event.topk_logprobs[..k].iter().sum();
    Ok(-sum / k as f64)
}

/// Mean confidence of each sliding window at the configured stride.
///
/// A trace shorter than the window yields exactly one value, the mean of
/// the whole trace, so tiny fixtures still exercise the pipeline.
pub fn window_confidences(confidences: &[f64], cfg: &WindowConfig) -> Result<Vec<f64>> {
    if confidences.is_empty() {
        return Err(Error::invalid("confidences must be non-empty"));
    }
    let n = confidences.len();
    let w = cfg.window_size;
    if n < w {
        let mean = confidences.iter().sum::<f64>() / n as f64;
        return Ok(vec![mean]);
    }
    // Prefix sums keep this O(n) independent of the window size.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &c in confidences {
        acc += c;
        prefix.push(acc);
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + w <= n {
        out.push((prefix[start + w] - prefix[start]) / w as f64);
        start += cfg.stride;
    }
    Ok(out)
}

/// Full-trace statistics, computed exactly from [`window_confidences`].
pub fn trace_stats(
    confidences: &[f64],
    cfg: &WindowConfig,
    tail_window: usize,
) -> Result<TraceConfidenceStats> {
    if confidences.is_empty() {
        return Err(Error::invalid("confidences must be non-empty"));
    }
    if tail_window == 0 {
        return Err(Error::invalid("tail_window must be >= 1"));
    }
    let windows = window_confidences(confidences, cfg)?;
    let n = confidences.len();
    let mean_token = confidences.iter().sum::<f64>() / n as f64;
    let mean_window = windows.iter().sum::<f64>() / windows.len() as f64;
    let min_window = windows.iter().copied().fold(f64::INFINITY, f64::min);

    let tail_len = tail_window.min(n);
    let tail = confidences[n - tail_len..].iter().sum::<f64>() / tail_len as f64;

    let mut sorted = windows.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let decile_count = (windows.len() as f64 * 0.1).ceil().max(1.0) as usize;
    let bottom_decile = sorted[..decile_count].iter().sum::<f64>() / decile_count as f64;

    Ok(TraceConfidenceStats {
        mean_token_confidence: mean_token,
        mean_window_confidence: mean_window,
        min_window_confidence: min_window,
        tail_confidence: tail,
        bottom_decile_mean: bottom_decile,
        window_count: windows.len(),
    })
}

/// Streaming mean over the most recent `window_size` token confidences.
///
/// After any prefix of pushes, the reported mean equals the last element
/// of [`window_confidences`] on that prefix with stride 1.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    buf: Vec<f64>,
    window_size: usize,
    next: usize,
    sum: f64,
    tokens_seen: u64,
}

impl WindowAccumulator {
    pub fn new(window_size: usize) -> Self {
        assert!(window_size >= 1, "window_size must be >= 1");
        WindowAccumulator {
            buf: Vec::with_capacity(window_size.min(1 << 16)),
            window_size,
            next: 0,
            sum: 0.0,
            tokens_seen: 0,
        }
    }

    /// Pushes one token confidence and returns the current window mean.
    pub fn push(&mut self, confidence: f64) -> f64 {
        self.tokens_seen += 1;
        if self.buf.len() < self.window_size {
            self.buf.push(confidence);
            self.sum += confidence;
        } else {
            self.sum += confidence - self.buf[self.next];
            self.buf[self.next] = confidence;
            self.next = (self.next + 1) % self.window_size;
            // Periodic exact resync bounds running-sum drift.
            if self.tokens_seen % (self.window_size as u64) == 0 {
                self.sum = self.buf.iter().sum();
            }
        }
        self.mean()
    }

    /// Mean over the retained confidences; 0.0 before the first push.
    pub fn mean(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.sum / self.buf.len() as f64
        }
    }

    pub fn tokens_seen(&self) -> u64 {
        self.tokens_seen
    }
}
