//! Round-robin dispatch of code-execution requests across sandbox
//! endpoints, plus an in-process mock sandbox for desk-scale tests.
//!
//! Wire contract, one request per execution: `POST <endpoint>/run` with
//! JSON `{"language","code","stdin","time_limit_ms","memory_limit_mb"}`;
//! response JSON `{"status","stdout","stderr","duration_ms"}` with
//! status one of `ok | timeout | runtime_error | infra_error`. Pass/fail
//! against the expected output is decided by the gateway, comparing
//! whitespace-trimmed, line-ending-normalized stdout.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUPPORTED_LANGUAGES: &[&str] =
    &["python", "cpp", "c", "java", "javascript", "bash", "go"];

/// One code-execution request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecRequest {
    pub language: String,
    pub code: String,
    #[serde(default)]
    pub stdin: String,
    #[serde(default)]
    pub expected_stdout: String,
    #[serde(default = "default_time_limit")]
    pub time_limit_ms: u64,
    #[serde(default = "default_memory_limit")]
    pub memory_limit_mb: u64,
}

fn default_time_limit() -> u64 {
    10_000
}
fn default_memory_limit() -> u64 {
    1024
}

impl ExecRequest {
    fn validate(&self) -> Result<()> {
        if !SUPPORTED_LANGUAGES.contains(&self.language.as_str()) {
            return Err(Error::invalid(format!("unsupported language {:?}", self.language)));
        }
        if self.time_limit_ms == 0 || self.memory_limit_mb == 0 {
            return Err(Error::invalid("limits must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Pass,
    Fail,
    Timeout,
    RuntimeError,
    InfraError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
}

/// Request body of the sandbox wire contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub language: String,
    pub code: String,
    pub stdin: String,
    pub time_limit_ms: u64,
    pub memory_limit_mb: u64,
}

/// Sandbox verdict before output comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireStatus {
    Ok,
    Timeout,
    RuntimeError,
    InfraError,
}

/// Response body of the sandbox wire contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub status: WireStatus,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub duration_ms: u64,
}

/// Transport to one sandbox instance.
pub trait SandboxTransport: Send + Sync {
    fn run(&self, req: &WireRequest) -> std::result::Result<WireResponse, String>;
    fn name(&self) -> String {
        "sandbox".to_string()
    }
}

struct EndpointState {
    transport: Box<dyn SandboxTransport>,
    health: Mutex<Health>,
}

struct Health {
    healthy: bool,
    last_failure: Option<Instant>,
}

/// Round-robin dispatcher over sandbox endpoints, safe for concurrent
/// callers. Unhealthy endpoints are re-probed after `reprobe_after`.
pub struct ExecGateway {
    endpoints: Vec<EndpointState>,
    cursor: AtomicUsize,
    reprobe_after: Duration,
}

impl ExecGateway {
    pub fn new(transports: Vec<Box<dyn SandboxTransport>>) -> Result<Self> {
        if transports.is_empty() {
            return Err(Error::invalid("at least one sandbox endpoint required"));
        }
        Ok(ExecGateway {
            endpoints: transports
                .into_iter()
                .map(|transport| EndpointState {
                    transport,
                    health: Mutex::new(Health { healthy: true, last_failure: None }),
                })
                .collect(),
            cursor: AtomicUsize::new(0),
            reprobe_after: Duration::from_secs(30),
        })
    }

    pub fn with_reprobe_after(mut self, d: Duration) -> Self {
        self.reprobe_after = d;
        self
    }

    fn usable(&self, idx: usize) -> bool {
        let h = self.endpoints[idx].health.lock().unwrap();
        h.healthy
            || h.last_failure
                .is_some_and(|t| t.elapsed() >= self.reprobe_after)
    }

    fn mark(&self, idx: usize, ok: bool) {
        let mut h = self.endpoints[idx].health.lock().unwrap();
        h.healthy = ok;
        if !ok {
            h.last_failure = Some(Instant::now());
        }
    }

    /// Picks the next endpoint round-robin, skipping unhealthy ones.
    fn next_endpoint(&self) -> Option<usize> {
        let n = self.endpoints.len();
        for _ in 0..n {
            let idx = self.cursor.fetch_add(1, Ordering::Relaxed) % n;
            if self.usable(idx) {
                return Some(idx);
            }
        }
        None
    }

    /// Executes one request: round-robin endpoint choice, one retry on a
    /// different endpoint after an infrastructure error.
    pub fn execute(&self, req: &ExecRequest) -> Result<ExecResult> {
        req.validate()?;
        let wire = WireRequest {
            language: req.language.clone(),
            code: req.code.clone(),
            stdin: req.stdin.clone(),
            time_limit_ms: req.time_limit_ms,
            memory_limit_mb: req.memory_limit_mb,
        };
        let mut last_err = String::new();
        for attempt in 0..2 {
            let Some(idx) = self.next_endpoint() else {
                break;
            };
            match self.endpoints[idx].transport.run(&wire) {
                Ok(resp) if resp.status != WireStatus::InfraError => {
                    self.mark(idx, true);
                    return Ok(finalize(resp, &req.expected_stdout));
                }
                Ok(resp) => {
                    self.mark(idx, false);
                    last_err = format!("endpoint {idx} infra_error: {}", resp.stderr);
                }
                Err(e) => {
                    self.mark(idx, false);
                    last_err = format!("endpoint {idx} unreachable: {e}");
                }
            }
            let _ = attempt;
        }
        Err(Error::RewardUnavailable(if last_err.is_empty() {
            "no healthy sandbox endpoint".to_string()
        } else {
            last_err
        }))
    }
}

/// Trim + line-ending normalization, nothing float-aware.
fn normalize_output(s: &str) -> String {
    s.replace("\r\n", "\n")
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

fn finalize(resp: WireResponse, expected_stdout: &str) -> ExecResult {
    let status = match resp.status {
        WireStatus::Ok => {
            if normalize_output(&resp.stdout) == normalize_output(expected_stdout) {
                ExecStatus::Pass
            } else {
                ExecStatus::Fail
            }
        }
        WireStatus::Timeout => ExecStatus::Timeout,
        WireStatus::RuntimeError => ExecStatus::RuntimeError,
        WireStatus::InfraError => ExecStatus::InfraError,
    };
    ExecResult {
        status,
        stdout: resp.stdout,
        stderr: resp.stderr,
        duration_ms: resp.duration_ms,
    }
}

/// One scripted behavior of the mock sandbox: applies to any code that
/// contains `match` as a substring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScenario {
    #[serde(rename = "match")]
    pub match_substr: String,
    pub status: WireStatus,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
}

/// In-process sandbox implementing the wire contract from a scenario
/// list. The first matching scenario wins; unmatched code is a runtime
/// error.
pub struct MockSandbox {
    scenarios: Vec<MockScenario>,
    calls: std::sync::Arc<AtomicUsize>,
}

impl MockSandbox {
    pub fn new(scenarios: Vec<MockScenario>) -> Self {
        MockSandbox { scenarios, calls: std::sync::Arc::new(AtomicUsize::new(0)) }
    }

    /// Shared handle to the number of requests this sandbox has served.
    pub fn call_counter(&self) -> std::sync::Arc<AtomicUsize> {
        self.calls.clone()
    }

    /// Loads a scenario file: one JSON scenario per line.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut scenarios = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sc: MockScenario = serde_json::from_str(line).map_err(|e| Error::Load {
                line: i + 1,
                msg: e.to_string(),
            })?;
            scenarios.push(sc);
        }
        Ok(MockSandbox::new(scenarios))
    }
}

impl SandboxTransport for MockSandbox {
    fn run(&self, req: &WireRequest) -> std::result::Result<WireResponse, String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        for sc in &self.scenarios {
            if req.code.contains(&sc.match_substr) {
                return Ok(WireResponse {
                    status: sc.status,
                    stdout: sc.stdout.clone(),
                    stderr: sc.stderr.clone(),
                    duration_ms: 1,
                });
            }
        }
        Ok(WireResponse {
            status: WireStatus::RuntimeError,
            stdout: String::new(),
            stderr: "no scenario matched".to_string(),
            duration_ms: 1,
        })
    }
}

/// Echo sandbox: stdout equals stdin. Handy for pass/fail fixtures.
pub struct EchoSandbox {
    calls: std::sync::Arc<AtomicUsize>,
}

impl EchoSandbox {
    pub fn new() -> Self {
        EchoSandbox { calls: std::sync::Arc::new(AtomicUsize::new(0)) }
    }

    pub fn call_counter(&self) -> std::sync::Arc<AtomicUsize> {
        self.calls.clone()
    }
}

impl Default for EchoSandbox {
    fn default() -> Self {
        Self::new()
    }
}

impl SandboxTransport for EchoSandbox {
    fn run(&self, req: &WireRequest) -> std::result::Result<WireResponse, String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(WireResponse {
            status: WireStatus::Ok,
            stdout: req.stdin.clone(),
            stderr: String::new(),
            duration_ms: 1,
        })
    }
}

/// HTTP transport to a live sandbox instance.
#[cfg(feature = "live")]
pub struct HttpSandbox {
    base_url: String,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "live")]
impl HttpSandbox {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpSandbox {
            base_url: base_url.into(),
            client: reqwest::blocking::Client::new(),
        }
    }
}

#[cfg(feature = "live")]
impl SandboxTransport for HttpSandbox {
    fn run(&self, req: &WireRequest) -> std::result::Result<WireResponse, String> {
        let url = format!("{}/run", self.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(&url)
            .json(req)
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("sandbox returned HTTP {}", resp.status()));
        }
        resp.json::<WireResponse>().map_err(|e| e.to_string())
    }

    fn name(&self) -> String {
        self.base_url.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(code: &str, expected: &str) -> ExecRequest {
        ExecRequest {
            language: "python".into(),
            code: code.into(),
            stdin: String::new(),
            expected_stdout: expected.into(),
            time_limit_ms: 10_000,
            memory_limit_mb: 1024,
        }
    }

    fn scripted(m: &str, status: WireStatus, stdout: &str) -> MockScenario {
        MockScenario {
            match_substr: m.into(),
            status,
            stdout: stdout.into(),
            stderr: String::new(),
        }
    }

    #[test]
    fn pass_and_fail_by_output() {
        let gw = ExecGateway::new(vec![Box::new(MockSandbox::new(vec![scripted(
            "print",
            WireStatus::Ok,
            "42\n",
        )]))])
        .unwrap();
        assert_eq!(gw.execute(&req("print(42)", "42")).unwrap().status, ExecStatus::Pass);
        assert_eq!(gw.execute(&req("print(42)", "43")).unwrap().status, ExecStatus::Fail);
    }

    #[test]
    fn timeout_distinct_from_fail() {
        let gw = ExecGateway::new(vec![Box::new(MockSandbox::new(vec![scripted(
            "loop",
            WireStatus::Timeout,
            "",
        )]))])
        .unwrap();
        assert_eq!(gw.execute(&req("loop", "x")).unwrap().status, ExecStatus::Timeout);
    }

    #[test]
    fn round_robin_over_two_endpoints() {
        let e1 = EchoSandbox::new();
        let e2 = EchoSandbox::new();
        let (c1, c2) = (e1.call_counter(), e2.call_counter());
        let gw = ExecGateway::new(vec![Box::new(e1), Box::new(e2)]).unwrap();
        for _ in 0..4 {
            gw.execute(&req("code", "")).unwrap();
        }
        // dispatch sequence e1,e2,e1,e2
        assert_eq!(c1.load(Ordering::Relaxed), 2);
        assert_eq!(c2.load(Ordering::Relaxed), 2);
    }

    #[test]
    fn fairness_over_three_endpoints() {
        let sandboxes: Vec<EchoSandbox> = (0..3).map(|_| EchoSandbox::new()).collect();
        let counters: Vec<_> = sandboxes.iter().map(|s| s.call_counter()).collect();
        let gw = ExecGateway::new(
            sandboxes.into_iter().map(|s| Box::new(s) as Box<dyn SandboxTransport>).collect(),
        )
        .unwrap();
        let n = 10;
        for _ in 0..n {
            gw.execute(&req("code", "")).unwrap();
        }
        let counts: Vec<usize> = counters.iter().map(|c| c.load(Ordering::Relaxed)).collect();
        assert_eq!(counts.iter().sum::<usize>(), n);
        for c in counts {
            assert!(c == n / 3 || c == n / 3 + 1, "unfair count {c}");
        }
    }

    struct FailingSandbox;
    impl SandboxTransport for FailingSandbox {
        fn run(&self, _: &WireRequest) -> std::result::Result<WireResponse, String> {
            Err("connection refused".to_string())
        }
    }

    #[test]
    fn retry_on_infra_then_reward_unavailable() {
        // one dead endpoint + one live: the retry lands on the live one
        let gw = ExecGateway::new(vec![
            Box::new(FailingSandbox),
            Box::new(EchoSandbox::new()),
        ])
        .unwrap();
        assert_eq!(gw.execute(&req("c", "")).unwrap().status, ExecStatus::Pass);

        // all endpoints dead: distinct reward-unavailable error
        let gw = ExecGateway::new(vec![Box::new(FailingSandbox), Box::new(FailingSandbox)]).unwrap();
        match gw.execute(&req("c", "")) {
            Err(Error::RewardUnavailable(_)) => {}
            other => panic!("expected RewardUnavailable, got {other:?}"),
        }
    }

    #[test]
    fn malformed_request_rejected() {
        let gw = ExecGateway::new(vec![Box::new(EchoSandbox::new())]).unwrap();
        let mut r = req("c", "");
        r.language = "cobol".into();
        assert!(matches!(gw.execute(&r), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn output_normalization() {
        assert_eq!(normalize_output("  42 \r\n"), "42");
        assert_eq!(normalize_output("a \nb\t\n"), "a\nb");
    }
}
