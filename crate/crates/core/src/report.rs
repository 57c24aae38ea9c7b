//! Dataset-level evaluation runs and machine-readable reports: one
//! adaptive-sampling or pass@1 run per problem, JSONL + summary report
//! files, and plot-ready CSV emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{
    FinishReason, FixtureBackend, GenerationBackend, GenerationRequest, StreamEvent,
};
use crate::confidence::WindowConfig;
use crate::curation::{load_dataset, ProblemRecord};
use crate::deepconf::{deepconf_run, DeepConfConfig, PercentileSemantics};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::verify::{math_equivalent, math_reward, DEFAULT_REL_TOL};
use crate::vote::VotingStrategy;

/// Backend selection: a fixture file for deterministic runs, or a live
/// endpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub fixture: Option<PathBuf>,
    pub url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
}

/// Engine keys of the evaluation config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepConfKeys {
    pub k: usize,
    pub n_init: usize,
    pub eta: f64,
    pub window: usize,
    pub stride: usize,
    pub grace: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub semantics: PercentileSemantics,
    /// Run a second pass with early stopping disabled to measure savings.
    pub baseline: bool,
}

impl Default for DeepConfKeys {
    fn default() -> Self {
        let d = DeepConfConfig::default();
        DeepConfKeys {
            k: d.total_budget,
            n_init: d.warmup_count,
            eta: d.eta,
            window: d.window.window_size,
            stride: d.window.stride,
            grace: d.grace_tokens,
            max_tokens: d.max_tokens_per_trace,
            temperature: d.temperature,
            top_p: d.top_p,
            semantics: d.percentile_semantics,
            baseline: true,
        }
    }
}

impl DeepConfKeys {
    pub fn to_config(&self, strategies: &[VotingStrategy], workers: usize) -> DeepConfConfig {
        DeepConfConfig {
            total_budget: self.k,
            warmup_count: self.n_init,
            eta: self.eta,
            window: WindowConfig { window_size: self.window, stride: self.stride },
            max_tokens_per_trace: self.max_tokens,
            temperature: self.temperature,
            top_p: self.top_p,
            percentile_semantics: self.semantics,
            grace_tokens: self.grace,
            max_concurrency: workers,
            strategies: strategies.to_vec(),
            ..DeepConfConfig::default()
        }
    }
}

/// pass@1 keys of the evaluation config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Pass1Config {
    pub n: usize,
    pub max_tokens: usize,
}

impl Default for Pass1Config {
    fn default() -> Self {
        // standard contest preset: 16 responses, 65536 max tokens
        Pass1Config { n: 16, max_tokens: 65536 }
    }
}

/// The evaluation config file (a single JSON document).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub deepconf: DeepConfKeys,
    #[serde(default)]
    pub pass1: Pass1Config,
    /// Strategy names; empty means all five.
    #[serde(default)]
    pub voting: Vec<VotingStrategy>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Row label in plot data; defaults to the backend model name.
    #[serde(default)]
    pub label: Option<String>,
}

fn default_workers() -> usize {
    8
}

impl EvalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: EvalConfig = serde_json::from_str(&text)?;
        if !cfg.dataset.exists() {
            return Err(Error::invalid(format!("dataset {} does not exist", cfg.dataset.display())));
        }
        if let Some(f) = &cfg.backend.fixture {
            if !f.exists() {
                return Err(Error::invalid(format!("fixture {} does not exist", f.display())));
            }
        }
        Ok(cfg)
    }

    pub fn strategies(&self) -> Vec<VotingStrategy> {
        if self.voting.is_empty() {
            VotingStrategy::ALL.to_vec()
        } else {
            self.voting.clone()
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .or_else(|| self.backend.model.clone())
            .unwrap_or_else(|| "fixture".to_string())
    }

    pub fn build_backend(&self) -> Result<Box<dyn GenerationBackend>> {
        if let Some(fixture) = &self.backend.fixture {
            return Ok(Box::new(FixtureBackend::load(fixture)?));
        }
        #[cfg(feature = "live")]
        if let Some(url) = &self.backend.url {
            let cfg = crate::backend::LiveConfig {
                url: url.clone(),
                model: self
                    .backend
                    .model
                    .clone()
                    .ok_or_else(|| Error::invalid("backend.model required for live backend"))?,
                api_key_env: self.backend.api_key_env.clone(),
            };
            return Ok(Box::new(crate::backend::LiveBackend::new(cfg)?));
        }
        Err(Error::invalid("no backend configured (backend.fixture or backend.url)"))
    }
}

/// Per-problem outcome in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub id: String,
    /// Strategy → voted answer.
    pub voted: BTreeMap<String, String>,
    /// Strategy → whether the voted answer matches the ground truth.
    pub correct: BTreeMap<String, bool>,
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregate figures over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Strategy → accuracy in percent.
    pub accuracy: BTreeMap<String, f64>,
    pub tokens_total: u64,
    pub mean_tokens_per_problem: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_saved_vs_no_early_stop: Option<f64>,
    pub problems: usize,
    pub failures: usize,
}

/// Full report of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub problems: Vec<ProblemReport>,
    pub summary: Summary,
}

impl RunReport {
    /// Writes `problems.jsonl` and `summary.json` under `out_dir`,
    /// byte-identically for identical reports.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let mut lines = String::new();
        for p in &self.problems {
            lines.push_str(&serde_json::to_string(p)?);
            lines.push('\n');
        }
        std::fs::write(out_dir.join("problems.jsonl"), lines)?;
        std::fs::write(
            out_dir.join("summary.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn run_problems_concurrent<F>(problems: &[ProblemRecord], workers: usize, run: F) -> Vec<ProblemReport>
where
    F: Fn(&ProblemRecord) -> ProblemReport + Sync,
{
    let slots: Mutex<Vec<Option<ProblemReport>>> = Mutex::new(vec![None; problems.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = workers.min(problems.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= problems.len() {
                    break;
                }
                let report = run(&problems[i]);
                slots.lock().unwrap()[i] = Some(report);
            });
        }
    });
    let mut reports: Vec<ProblemReport> =
        slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect();
    reports.sort_by(|a, b| a.id.cmp(&b.id));
    reports
}

fn summarize(
    problems: &[ProblemReport],
    strategies: &[String],
    tokens_saved: Option<f64>,
) -> Summary {
    let total = problems.len();
    let mut accuracy = BTreeMap::new();
    for strategy in strategies {
        let correct = problems.iter().filter(|p| p.correct.get(strategy) == Some(&true)).count();
        let pct = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
        accuracy.insert(strategy.clone(), pct);
    }
    let tokens_total: u64 = problems.iter().map(|p| p.tokens).sum();
    Summary {
        accuracy,
        tokens_total,
        mean_tokens_per_problem: if total == 0 { 0.0 } else { tokens_total as f64 / total as f64 },
        tokens_saved_vs_no_early_stop: tokens_saved,
        problems: total,
        failures: problems.iter().filter(|p| p.error.is_some()).count(),
    }
}

fn failed_problem(id: &str, err: &Error) -> ProblemReport {
    ProblemReport {
        id: id.to_string(),
        voted: BTreeMap::new(),
        correct: BTreeMap::new(),
        tokens: 0,
        error: Some(err.to_string()),
    }
}

fn deepconf_pass(
    problems: &[ProblemRecord],
    cfg: &EvalConfig,
    engine_cfg: &DeepConfConfig,
    backend: &dyn GenerationBackend,
) -> Vec<ProblemReport> {
    run_problems_concurrent(problems, cfg.workers, |problem| {
        let seed = derive_seed(cfg.seed, &["problem", &problem.id]);
        match deepconf_run(problem, engine_cfg, backend, seed) {
            Ok(result) => {
                let mut voted = BTreeMap::new();
                let mut correct = BTreeMap::new();
                for (strategy, tally) in &result.votes {
                    voted.insert(strategy.clone(), tally.winner.clone());
                    let ok = problem
                        .ground_truth
                        .as_deref()
                        .map(|t| math_equivalent(&tally.winner, t, DEFAULT_REL_TOL))
                        .unwrap_or(false);
                    correct.insert(strategy.clone(), ok);
                }
                ProblemReport {
                    id: problem.id.clone(),
                    voted,
                    correct,
                    tokens: result.ledger.tokens_total,
                    error: None,
                }
            }
            Err(e) => failed_problem(&problem.id, &e),
        }
    })
}

/// Runs the adaptive-sampling engine over a dataset and assembles the
/// report. When `deepconf.baseline` is set, a second pass with early
/// stopping disabled measures the token savings percentage.
pub fn run_deepconf(cfg: &EvalConfig) -> Result<RunReport> {
    let problems = load_dataset(&cfg.dataset)?;
    if problems.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let backend = cfg.build_backend()?;
    let strategies = cfg.strategies();
    let engine_cfg = cfg.deepconf.to_config(&strategies, cfg.workers);
    engine_cfg.validate()?;

    let reports = deepconf_pass(&problems, cfg, &engine_cfg, backend.as_ref());

    let tokens_saved = if cfg.deepconf.baseline {
        let baseline_cfg = DeepConfConfig { early_stop: false, ..engine_cfg.clone() };
        let baseline = deepconf_pass(&problems, cfg, &baseline_cfg, backend.as_ref());
        let with: u64 = reports.iter().map(|p| p.tokens).sum();
        let without: u64 = baseline.iter().map(|p| p.tokens).sum();
        if without == 0 {
            None
        } else {
            Some(100.0 * (without.saturating_sub(with)) as f64 / without as f64)
        }
    } else {
        None
    };

    let names: Vec<String> = strategies.iter().map(|s| s.name().to_string()).collect();
    let summary = summarize(&reports, &names, tokens_saved);
    Ok(RunReport { label: cfg.label(), problems: reports, summary })
}

/// Runs n independent generations per problem and reports pass@1, the
/// mean per-sample correctness over all generations of all problems.
pub fn run_pass1(cfg: &EvalConfig) -> Result<RunReport> {
    let problems = load_dataset(&cfg.dataset)?;
    if problems.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if cfg.pass1.n == 0 {
        return Err(Error::invalid("pass1.n must be >= 1"));
    }
    let backend = cfg.build_backend()?;

    let reports = run_problems_concurrent(&problems, cfg.workers, |problem| {
        let truth = match problem.ground_truth.as_deref() {
            Some(t) => t,
            None => return failed_problem(&problem.id, &Error::invalid("missing ground truth")),
        };
        let mut correct = 0usize;
        let mut completed = 0usize;
        let mut tokens = 0u64;
        for i in 0..cfg.pass1.n {
            let seed = derive_seed(cfg.seed, &["pass1", &problem.id, &i.to_string()]);
            let req = GenerationRequest {
                system_prompt: String::new(),
                user_prompt: problem.prompt.clone(),
                temperature: cfg.deepconf.temperature,
                top_p: cfg.deepconf.top_p,
                max_tokens: cfg.pass1.max_tokens,
                top_logprobs_k: 1,
                seed: Some(seed),
            };
            let Ok(stream) = backend.stream_generate(&req) else { continue };
            let mut text = String::new();
            let mut ok_stream = true;
            for event in stream {
                match event {
                    Ok(StreamEvent::Token(tok)) => {
                        tokens += 1;
                        text.push_str(&tok.token_text);
                    }
                    Ok(StreamEvent::Done { finish_reason }) => {
                        if finish_reason == FinishReason::Cancelled {
                            ok_stream = false;
                        }
                    }
                    Err(_) => ok_stream = false,
                }
            }
            if !ok_stream {
                continue;
            }
            completed += 1;
            if let Ok((reward, _)) = math_reward(&text, truth, None) {
                if reward.value == 1.0 {
                    correct += 1;
                }
            }
        }
        let rate = 100.0 * correct as f64 / cfg.pass1.n as f64;
        let mut voted = BTreeMap::new();
        let mut correct_map = BTreeMap::new();
        voted.insert("pass@1".to_string(), format!("{rate:.4}"));
        correct_map.insert("pass@1".to_string(), correct == cfg.pass1.n);
        ProblemReport {
            id: problem.id.clone(),
            voted,
            correct: correct_map,
            tokens,
            error: if completed == cfg.pass1.n {
                None
            } else {
                Some(format!("{} of {} generations failed", cfg.pass1.n - completed, cfg.pass1.n))
            },
        }
    });

    // pass@1 is the mean per-sample rate, not the all-correct rate
    let mean_rate = reports
        .iter()
        .map(|p| p.voted.get("pass@1").and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0))
        .sum::<f64>()
        / reports.len() as f64;
    let names = vec!["pass@1".to_string()];
    let mut summary = summarize(&reports, &names, None);
    summary.accuracy.insert("pass@1".to_string(), mean_rate);
    Ok(RunReport { label: cfg.label(), problems: reports, summary })
}

/// Plot-ready CSV: one row per (report, strategy), columns
/// `model_label,accuracy,tokens_millions,strategy`, numbers rendered
/// with four fractional digits, rows ordered by (label, strategy).
pub fn emit_plot_data(reports: &[RunReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::invalid("at least one report required"));
    }
    let mut rows: Vec<(String, f64, f64, String)> = Vec::new();
    for report in reports {
        let tokens_millions = report.summary.tokens_total as f64 / 1.0e6;
        for (strategy, accuracy) in &report.summary.accuracy {
            rows.push((report.label.clone(), *accuracy, tokens_millions, strategy.clone()));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.3.cmp(&b.3)));
    let mut csv = String::from("model_label,accuracy,tokens_millions,strategy\n");
    for (label, accuracy, tokens, strategy) in rows {
        writeln!(csv, "{label},{accuracy:.4},{tokens:.4},{strategy}").expect("string write");
    }
    Ok(csv)
}
