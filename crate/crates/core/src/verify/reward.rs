//! Reward schemas: math, code, science and format, with domain dispatch.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::extract::extract_answer;
use super::{math_equivalent, DEFAULT_REL_TOL};
use crate::error::{Error, Result};
use crate::gateway::{ExecGateway, ExecRequest, ExecStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Math,
    Code,
    Science,
    Format,
}

/// A scalar reward. Math/code/format are binary; science is in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardValue {
    pub domain: Domain,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Tier1String,
    Tier1Numeric,
    Tier2Judge,
}

/// Outcome of a correctness decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub decided_by: DecidedBy,
    pub detail: String,
}

/// Semantic fallback verifier: scores (prompt, extracted answer, ground
/// truth) in [0, 1]. Live deployments back this with an LLM; tests use
/// the deterministic mock.
pub trait SemanticJudge: Send + Sync {
    fn judge(&self, prompt: &str, answer: &str, ground_truth: &str) -> f64;
}

/// Deterministic judge for tests: constant score, or a lookup table
/// keyed by (answer, ground truth).
pub struct MockJudge {
    constant: f64,
    table: Vec<((String, String), f64)>,
}

impl MockJudge {
    pub fn constant(score: f64) -> Self {
        MockJudge { constant: score, table: Vec::new() }
    }

    pub fn table(entries: Vec<((String, String), f64)>, fallback: f64) -> Self {
        MockJudge { constant: fallback, table: entries }
    }
}

impl SemanticJudge for MockJudge {
    fn judge(&self, _prompt: &str, answer: &str, ground_truth: &str) -> f64 {
        for ((a, t), score) in &self.table {
            if a == answer && t == ground_truth {
                return *score;
            }
        }
        self.constant
    }
}

/// Math reward with verdict: extraction, tier-1 string/numeric
/// equivalence, optional tier-2 judge fallback.
pub fn math_reward(
    response: &str,
    ground_truth: &str,
    judge: Option<&dyn SemanticJudge>,
) -> Result<(RewardValue, Verdict)> {
    if ground_truth.is_empty() {
        return Err(Error::invalid("ground_truth must be non-empty"));
    }
    let Some(answer) = extract_answer(response) else {
        return Ok((
            RewardValue { domain: Domain::Math, value: 0.0 },
            Verdict {
                correct: false,
                decided_by: DecidedBy::Tier1String,
                detail: "no-extractable-answer".to_string(),
            },
        ));
    };
    let (tier1_correct, decided_by) = tier1(&answer.raw, ground_truth);
    if tier1_correct {
        return Ok((
            RewardValue { domain: Domain::Math, value: 1.0 },
            Verdict {
                correct: true,
                decided_by,
                detail: format!("extracted {:?}", answer.raw),
            },
        ));
    }
    if let Some(judge) = judge {
        let score = judge.judge("", &answer.raw, ground_truth);
        let correct = score >= 0.5;
        return Ok((
            RewardValue { domain: Domain::Math, value: if correct { 1.0 } else { 0.0 } },
            Verdict {
                correct,
                decided_by: DecidedBy::Tier2Judge,
                detail: format!("judge score {score}"),
            },
        ));
    }
    Ok((
        RewardValue { domain: Domain::Math, value: 0.0 },
        Verdict { correct: false, decided_by, detail: format!("extracted {:?}", answer.raw) },
    ))
}

fn tier1(answer: &str, ground_truth: &str) -> (bool, DecidedBy) {
    use super::grammar::eval_expr;
    use super::normalize::normalize_math;
    let na = normalize_math(answer);
    let nb = normalize_math(ground_truth);
    if na == nb {
        return (true, DecidedBy::Tier1String);
    }
    if eval_expr(&na).is_some() && eval_expr(&nb).is_some() {
        (math_equivalent(answer, ground_truth, DEFAULT_REL_TOL), DecidedBy::Tier1Numeric)
    } else {
        (false, DecidedBy::Tier1String)
    }
}

/// Format reward: exactly one `<think>...</think>` block opening the
/// response, non-empty body, non-whitespace answer text after the close
/// tag, and no mixed-script text.
pub fn format_reward(response: &str) -> RewardValue {
    let value = if well_formed(response) && !mixed_script(response) { 1.0 } else { 0.0 };
    RewardValue { domain: Domain::Format, value }
}

fn well_formed(response: &str) -> bool {
    let opens = response.matches("<think>").count();
    let closes = response.matches("</think>").count();
    if opens != 1 || closes != 1 {
        return false;
    }
    let trimmed = response.trim_start();
    let Some(rest) = trimmed.strip_prefix("<think>") else {
        return false;
    };
    let Some(close) = rest.find("</think>") else {
        return false;
    };
    let body = &rest[..close];
    let after = &rest[close + "</think>".len()..];
    !body.trim().is_empty() && !after.trim().is_empty()
}

/// Dominant-script heuristic: fraction of letters outside the dominant
/// script above 0.10 counts as mixed-language output.
fn mixed_script(response: &str) -> bool {
    let mut counts = [0usize; 8];
    let mut total = 0usize;
    for c in response.chars().filter(|c| c.is_alphabetic()) {
        let bucket = match c as u32 {
            0x0041..=0x024F => 0, // Latin incl. extended
            0x0370..=0x03FF => 1, // Greek
            0x0400..=0x04FF => 2, // Cyrillic
            0x0590..=0x06FF => 3, // Hebrew/Arabic
            0x3040..=0x30FF => 4, // Kana
            0x4E00..=0x9FFF => 5, // Han
            0xAC00..=0xD7AF => 6, // Hangul
            _ => 7,
        };
        counts[bucket] += 1;
        total += 1;
    }
    if total == 0 {
        return false;
    }
    let dominant = *counts.iter().max().unwrap();
    (total - dominant) as f64 / total as f64 > 0.10
}

/// One stdin/stdout test case for code problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub stdin: String,
    pub stdout: String,
}

/// Code reward: extract the last fenced code block, detect its language,
/// sample up to `max_cases` test cases with the given seed, execute them
/// via the gateway; 1.0 only when every sampled case passes.
///
/// A sandbox outage surfaces as [`Error::RewardUnavailable`], never as a
/// 0.0 reward.
pub fn code_reward(
    response: &str,
    tests: &[TestCase],
    gateway: &ExecGateway,
    max_cases: usize,
    rng_seed: u64,
) -> Result<RewardValue> {
    if tests.is_empty() {
        return Err(Error::invalid("tests must be non-empty"));
    }
    if max_cases == 0 {
        return Err(Error::invalid("max_cases must be >= 1"));
    }
    let Some((language, code)) = extract_code_block(response) else {
        return Ok(RewardValue { domain: Domain::Code, value: 0.0 });
    };

    let selected: Vec<&TestCase> = if tests.len() > max_cases {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut idx = sample(&mut rng, tests.len(), max_cases).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &tests[i]).collect()
    } else {
        tests.iter().collect()
    };

    for case in selected {
        let result = gateway.execute(&ExecRequest {
            language: language.clone(),
            code: code.clone(),
            stdin: case.stdin.clone(),
            expected_stdout: case.stdout.clone(),
            time_limit_ms: 10_000,
            memory_limit_mb: 1024,
        })?;
        if result.status != ExecStatus::Pass {
            return Ok(RewardValue { domain: Domain::Code, value: 0.0 });
        }
    }
    Ok(RewardValue { domain: Domain::Code, value: 1.0 })
}

/// Last fenced code block with its detected language.
pub fn extract_code_block(response: &str) -> Option<(String, String)> {
    let mut last: Option<(String, String)> = None;
    let mut rest = response;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let nl = after.find('\n')?;
        let info = after[..nl].trim().to_string();
        let body_start = nl + 1;
        let Some(close) = after[body_start..].find("```") else {
            break;
        };
        let code = after[body_start..body_start + close].to_string();
        let lang = detect_language(&info, &code);
        last = Some((lang, code));
        rest = &after[body_start + close + 3..];
    }
    last
}

/// Language from the fence info string, falling back to keyword
/// heuristics over the supported set.
fn detect_language(info: &str, code: &str) -> String {
    let tag = info.split_whitespace().next().unwrap_or("").to_lowercase();
    match tag.as_str() {
        "python" | "py" | "python3" => return "python".into(),
        "cpp" | "c++" | "cxx" => return "cpp".into(),
        "c" => return "c".into(),
        "java" => return "java".into(),
        "javascript" | "js" | "node" => return "javascript".into(),
        "bash" | "sh" | "shell" => return "bash".into(),
        "go" | "golang" => return "go".into(),
        _ => {}
    }
    if code.contains("#include") {
        if code.contains("std::") || code.contains("using namespace") {
            "cpp".into()
        } else {
            "c".into()
        }
    } else if code.contains("public static void main") {
        "java".into()
    } else if code.contains("package main") || code.contains("func main") {
        "go".into()
    } else if code.contains("console.log") || code.contains("const ") && code.contains("=>") {
        "javascript".into()
    } else if code.starts_with("#!") && code.contains("sh") || code.contains("echo ") {
        "bash".into()
    } else {
        "python".into()
    }
}

/// One sample routed through the reward orchestration layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardSample {
    pub domain: Domain,
    #[serde(default)]
    pub prompt: String,
    pub response: String,
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub tests: Vec<TestCase>,
}

/// Reward orchestration: selects the schema per task domain and gates
/// every domain by the format reward.
pub struct RewardRouter {
    pub judge: Option<Box<dyn SemanticJudge>>,
    pub gateway: Option<Arc<ExecGateway>>,
    pub max_cases: usize,
    pub rng_seed: u64,
}

impl RewardRouter {
    pub fn dispatch(&self, sample: &RewardSample) -> Result<RewardValue> {
        let format = format_reward(&sample.response);
        let base = match sample.domain {
            Domain::Math => {
                let truth = sample
                    .ground_truth
                    .as_deref()
                    .ok_or_else(|| Error::invalid("math sample requires ground_truth"))?;
                math_reward(&sample.response, truth, self.judge.as_deref())?.0
            }
            Domain::Code => {
                let gateway = self
                    .gateway
                    .as_ref()
                    .ok_or_else(|| Error::invalid("code sample requires a gateway"))?;
                code_reward(&sample.response, &sample.tests, gateway, self.max_cases, self.rng_seed)?
            }
            Domain::Science => {
                let judge = self
                    .judge
                    .as_deref()
                    .ok_or_else(|| Error::invalid("science sample requires a judge"))?;
                let truth = sample
                    .ground_truth
                    .as_deref()
                    .ok_or_else(|| Error::invalid("science sample requires ground_truth"))?;
                let answer = extract_answer(&sample.response)
                    .map(|a| a.raw)
                    .unwrap_or_else(|| sample.response.clone());
                let score = judge.judge(&sample.prompt, &answer, truth).clamp(0.0, 1.0);
                RewardValue { domain: Domain::Science, value: score }
            }
            Domain::Format => {
                return Err(Error::invalid("dispatch domain must be math, code or science"))
            }
        };
        Ok(RewardValue { domain: base.domain, value: base.value * format.value })
    }
}
