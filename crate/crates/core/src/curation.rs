//! RL data preparation: deduplication, rollout-based difficulty
//! estimation, the pass-rate filtering rules, difficulty histograms, and
//! difficulty-aware mixture weighting.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{FinishReason, GenerationBackend, GenerationRequest, StreamEvent};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::verify::{extract_answer, math_reward, Domain, SemanticJudge, TestCase};

/// One dataset problem. Math/science problems carry a ground-truth
/// answer; code problems carry stdin/stdout test cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub prompt: String,
    #[serde(rename = "answer", default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<TestCase>,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_meta: Option<String>,
}

fn default_domain() -> Domain {
    Domain::Math
}

impl ProblemRecord {
    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::invalid(format!("problem {}: empty prompt", self.id)));
        }
        Ok(())
    }
}

/// Outcome of `n_rollouts` independent generations on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub n_rollouts: usize,
    pub n_correct: usize,
    pub n_truncated: usize,
    /// Most frequent canonical answer among incorrect, non-truncated
    /// rollouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_answer: Option<String>,
    #[serde(default)]
    pub majority_frequency: usize,
    pub pass_rate: f64,
    /// Rollouts lost to backend failures (excluded from `n_rollouts`).
    #[serde(default)]
    pub n_failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    EasyDrop,
    HardTruncatedSampledKeep,
    HardTruncatedDrop,
    HardMajorityDrop,
    DefaultKeep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub keep: bool,
    pub rule: FilterRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyClass {
    Hard,
    Medium,
    Easy,
}

/// Mixture weight assigned to one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeight {
    pub id: String,
    pub weight: f64,
}

/// Difficulty-weighting configuration. Hard weights must stay within
/// [1.25, 1.75]; easy weights are 0.5 (down-weight) or 0 (drop).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightsConfig {
    pub hard_weight: f64,
    pub easy_weight: f64,
    /// A record is hard when n_correct <= this count.
    pub hard_max_correct: usize,
    /// A record is easy when n_correct >= this count.
    pub easy_min_correct: usize,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig { hard_weight: 1.5, easy_weight: 0.5, hard_max_correct: 2, easy_min_correct: 7 }
    }
}

impl WeightsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1.25..=1.75).contains(&self.hard_weight) {
            return Err(Error::invalid("hard_weight must be in [1.25, 1.75]"));
        }
        if self.easy_weight != 0.5 && self.easy_weight != 0.0 {
            return Err(Error::invalid("easy_weight must be 0.5 or 0"));
        }
        if self.hard_max_correct >= self.easy_min_correct {
            return Err(Error::invalid("hard_max_correct must be below easy_min_correct"));
        }
        Ok(())
    }
}

/// Rollout generation parameters; defaults are the standard operating
/// point (8 rollouts, temperature 0.6, top-p 0.95, 32768 max tokens).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub n_rollouts: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub top_logprobs_k: usize,
    pub max_concurrency: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            n_rollouts: 8,
            temperature: 0.6,
            top_p: 0.95,
            max_tokens: 32768,
            top_logprobs_k: 1,
            max_concurrency: 8,
        }
    }
}

fn normalize_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Drops candidates whose normalized prompt (whitespace-collapsed,
/// casefolded) matches a reference prompt or an earlier candidate.
/// Survivors keep their input order.
pub fn dedup_exact(candidates: &[ProblemRecord], reference: &[String]) -> Vec<ProblemRecord> {
    let mut seen: HashSet<String> = reference.iter().map(|p| normalize_prompt(p)).collect();
    let mut survivors = Vec::new();
    for record in candidates {
        if seen.insert(normalize_prompt(&record.prompt)) {
            survivors.push(record.clone());
        }
    }
    survivors
}

enum RolloutOutcome {
    Correct,
    Truncated,
    Incorrect(Option<String>),
    Failed,
}

fn run_rollout(
    backend: &dyn GenerationBackend,
    problem: &ProblemRecord,
    cfg: &RolloutConfig,
    judge: Option<&dyn SemanticJudge>,
    seed: u64,
) -> RolloutOutcome {
    let req = GenerationRequest {
        system_prompt: String::new(),
        user_prompt: problem.prompt.clone(),
        temperature: cfg.temperature,
        top_p: cfg.top_p,
        max_tokens: cfg.max_tokens,
        top_logprobs_k: cfg.top_logprobs_k,
        seed: Some(seed),
    };
    let stream = match backend.stream_generate(&req) {
        Ok(s) => s,
        Err(_) => return RolloutOutcome::Failed,
    };
    let mut text = String::new();
    let mut finish = FinishReason::Stop;
    for event in stream {
        match event {
            Ok(StreamEvent::Token(tok)) => text.push_str(&tok.token_text),
            Ok(StreamEvent::Done { finish_reason }) => finish = finish_reason,
            Err(_) => return RolloutOutcome::Failed,
        }
    }
    if finish == FinishReason::Length {
        return RolloutOutcome::Truncated;
    }
    let truth = match &problem.ground_truth {
        Some(t) => t.clone(),
        None => return RolloutOutcome::Failed,
    };
    match math_reward(&text, &truth, judge) {
        Ok((reward, _)) if reward.value == 1.0 => RolloutOutcome::Correct,
        Ok(_) => RolloutOutcome::Incorrect(extract_answer(&text).map(|a| a.normalized)),
        Err(_) => RolloutOutcome::Failed,
    }
}

/// Generates `n_rollouts` independent solutions and scores them,
/// computing pass rate, truncation count, and the majority answer over
/// incorrect, non-truncated rollouts. Failed rollouts reduce the
/// effective count and are flagged via `n_failed`.
pub fn estimate_rollout_stats(
    problem: &ProblemRecord,
    backend: &dyn GenerationBackend,
    judge: Option<&dyn SemanticJudge>,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<RolloutStats> {
    if cfg.n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts must be >= 1"));
    }
    let seeds: Vec<u64> = (0..cfg.n_rollouts)
        .map(|i| derive_seed(seed, &["rollout", &problem.id, &i.to_string()]))
        .collect();
    let slots: Mutex<Vec<Option<RolloutOutcome>>> = Mutex::new((0..cfg.n_rollouts).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = cfg.max_concurrency.min(cfg.n_rollouts).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let outcome = run_rollout(backend, problem, cfg, judge, seeds[i]);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let outcomes: Vec<RolloutOutcome> =
        slots.into_inner().unwrap().into_iter().map(|o| o.unwrap()).collect();

    let mut n_correct = 0;
    let mut n_truncated = 0;
    let mut n_failed = 0;
    let mut wrong_answers: BTreeMap<String, usize> = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            RolloutOutcome::Correct => n_correct += 1,
            RolloutOutcome::Truncated => n_truncated += 1,
            RolloutOutcome::Failed => n_failed += 1,
            RolloutOutcome::Incorrect(answer) => {
                if let Some(key) = answer {
                    *wrong_answers.entry(key).or_insert(0) += 1;
                }
            }
        }
    }
    let n_effective = cfg.n_rollouts - n_failed;
    if n_effective == 0 {
        return Err(Error::RunFailed(format!("problem {}: every rollout failed", problem.id)));
    }
    // BTreeMap order makes the max deterministic on frequency ties.
    let majority = wrong_answers.iter().max_by_key(|(_, &c)| c);
    Ok(RolloutStats {
        n_rollouts: n_effective,
        n_correct,
        n_truncated,
        majority_answer: majority.map(|(k, _)| k.clone()),
        majority_frequency: majority.map(|(_, &c)| c).unwrap_or(0),
        pass_rate: n_correct as f64 / n_effective as f64,
        n_failed,
    })
}

/// The pass-rate filtering rule table.
///
/// 100% pass rate drops; 0% with every rollout truncated keeps with
/// probability `truncated_keep_rate` under the seeded generator; 0% with
/// a wrong-answer majority of 4 or more drops; everything else keeps.
pub fn apply_difficulty_filter(
    stats: &RolloutStats,
    rng_seed: u64,
    truncated_keep_rate: f64,
) -> FilterDecision {
    if stats.pass_rate == 1.0 {
        return FilterDecision { keep: false, rule: FilterRule::EasyDrop };
    }
    if stats.pass_rate == 0.0 {
        if stats.n_truncated == stats.n_rollouts {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            return if rng.gen::<f64>() < truncated_keep_rate {
                FilterDecision { keep: true, rule: FilterRule::HardTruncatedSampledKeep }
            } else {
                FilterDecision { keep: false, rule: FilterRule::HardTruncatedDrop }
            };
        }
        if stats.majority_frequency >= 4 {
            return FilterDecision { keep: false, rule: FilterRule::HardMajorityDrop };
        }
    }
    FilterDecision { keep: true, rule: FilterRule::DefaultKeep }
}

/// Bucket counts indexed by `n_correct` in `0..=n`. Inputs must share
/// one rollout count; empty input yields nine zero buckets (n = 8).
pub fn difficulty_histogram(all_stats: &[RolloutStats]) -> Result<Vec<usize>> {
    let n = match all_stats.first() {
        Some(s) => s.n_rollouts,
        None => return Ok(vec![0; 9]),
    };
    let mut buckets = vec![0usize; n + 1];
    for stats in all_stats {
        if stats.n_rollouts != n {
            return Err(Error::invalid("mixed rollout counts in histogram input"));
        }
        buckets[stats.n_correct] += 1;
    }
    Ok(buckets)
}

/// Difficulty class from the pass-rate thresholds.
pub fn classify(stats: &RolloutStats, cfg: &WeightsConfig) -> DifficultyClass {
    if stats.n_correct <= cfg.hard_max_correct {
        DifficultyClass::Hard
    } else if stats.n_correct >= cfg.easy_min_correct {
        DifficultyClass::Easy
    } else {
        DifficultyClass::Medium
    }
}

/// Maps each record to its mixture weight: hard → `hard_weight`,
/// medium → 1.0, easy → `easy_weight`.
pub fn apply_difficulty_weights(
    records: &[(String, RolloutStats)],
    cfg: &WeightsConfig,
) -> Result<Vec<MixtureWeight>> {
    cfg.validate()?;
    Ok(records
        .iter()
        .map(|(id, stats)| {
            let weight = match classify(stats, cfg) {
                DifficultyClass::Hard => cfg.hard_weight,
                DifficultyClass::Medium => 1.0,
                DifficultyClass::Easy => cfg.easy_weight,
            };
            MixtureWeight { id: id.clone(), weight }
        })
        .collect())
}

/// Reads a line-delimited JSON dataset, validating every record.
pub fn load_dataset(path: &std::path::Path) -> Result<Vec<ProblemRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ProblemRecord = serde_json::from_str(line)
            .map_err(|e| Error::Load { line: i + 1, msg: e.to_string() })?;
        record
            .validate()
            .map_err(|e| Error::Load { line: i + 1, msg: e.to_string() })?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::Load { line: i + 1, msg: format!("duplicate id {:?}", record.id) });
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FixtureBackend, FixtureEvent, TraceFixture};

    fn record(id: &str, prompt: &str) -> ProblemRecord {
        ProblemRecord {
            id: id.to_string(),
            prompt: prompt.to_string(),
            ground_truth: Some("42".to_string()),
            tests: Vec::new(),
            domain: Domain::Math,
            difficulty_meta: None,
        }
    }

    fn stats(n: usize, correct: usize, truncated: usize, majority: usize) -> RolloutStats {
        RolloutStats {
            n_rollouts: n,
            n_correct: correct,
            n_truncated: truncated,
            majority_answer: if majority > 0 { Some("5".to_string()) } else { None },
            majority_frequency: majority,
            pass_rate: correct as f64 / n as f64,
            n_failed: 0,
        }
    }

    #[test]
    fn dedup_collapses_whitespace_and_case() {
        let candidates = vec![record("a", "What  is 2+2?"), record("b", "fresh question")];
        let reference = vec!["what is 2+2?".to_string()];
        let survivors = dedup_exact(&candidates, &reference);
        assert_eq!(survivors.len(), 1);
        assert_eq!(survivors[0].id, "b");
    }

    #[test]
    fn dedup_empty_reference_keeps_order() {
        let candidates = vec![record("a", "one"), record("b", "two"), record("c", "three")];
        let survivors = dedup_exact(&candidates, &[]);
        let ids: Vec<&str> = survivors.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn dedup_intra_set_keeps_first() {
        let candidates = vec![record("a", "same Q"), record("b", "SAME  q"), record("c", "other")];
        let survivors = dedup_exact(&candidates, &[]);
        let ids: Vec<&str> = survivors.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
    }

    #[test]
    fn dedup_idempotent() {
        let candidates = vec![record("a", "same"), record("b", "same"), record("c", "other")];
        let once = dedup_exact(&candidates, &[]);
        let twice = dedup_exact(&once, &[]);
        assert_eq!(once, twice);
    }

    #[test]
    fn filter_easy_drop() {
        let d = apply_difficulty_filter(&stats(8, 8, 0, 0), 0, 0.05);
        assert!(!d.keep);
        assert_eq!(d.rule, FilterRule::EasyDrop);
    }

    #[test]
    fn filter_hard_majority_drop() {
        let d = apply_difficulty_filter(&stats(8, 0, 0, 5), 0, 0.05);
        assert!(!d.keep);
        assert_eq!(d.rule, FilterRule::HardMajorityDrop);

        let d = apply_difficulty_filter(&stats(8, 0, 0, 4), 0, 0.05);
        assert!(!d.keep);
    }

    #[test]
    fn filter_hard_low_majority_keeps() {
        let d = apply_difficulty_filter(&stats(8, 0, 0, 2), 0, 0.05);
        assert!(d.keep);
        assert_eq!(d.rule, FilterRule::DefaultKeep);
    }

    #[test]
    fn filter_medium_keeps() {
        let d = apply_difficulty_filter(&stats(8, 3, 0, 5), 0, 0.05);
        assert!(d.keep);
        assert_eq!(d.rule, FilterRule::DefaultKeep);
    }

    #[test]
    fn filter_all_truncated_sampled() {
        let s = stats(8, 0, 8, 0);
        let kept = (0..10_000u64)
            .filter(|&seed| apply_difficulty_filter(&s, seed, 0.05).keep)
            .count();
        let rate = kept as f64 / 10_000.0;
        assert!((rate - 0.05).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn filter_deterministic() {
        let s = stats(8, 0, 8, 0);
        for seed in 0..50 {
            assert_eq!(
                apply_difficulty_filter(&s, seed, 0.05),
                apply_difficulty_filter(&s, seed, 0.05)
            );
        }
    }

    #[test]
    fn histogram_counts() {
        let input = vec![stats(8, 0, 0, 2), stats(8, 0, 0, 1), stats(8, 8, 0, 0)];
        let h = difficulty_histogram(&input).unwrap();
        assert_eq!(h[0], 2);
        assert_eq!(h[8], 1);
        assert_eq!(h.iter().sum::<usize>(), 3);
    }

    #[test]
    fn histogram_empty_and_mixed() {
        assert_eq!(difficulty_histogram(&[]).unwrap(), vec![0; 9]);
        let mixed = vec![stats(8, 1, 0, 0), stats(4, 1, 0, 0)];
        assert!(difficulty_histogram(&mixed).is_err());
    }

    #[test]
    fn weights_per_class() {
        let cfg = WeightsConfig::default();
        let records = vec![
            ("hard".to_string(), stats(8, 2, 0, 0)),
            ("medium".to_string(), stats(8, 4, 0, 0)),
            ("easy".to_string(), stats(8, 7, 0, 0)),
        ];
        let weights = apply_difficulty_weights(&records, &cfg).unwrap();
        assert_eq!(weights[0].weight, 1.5);
        assert_eq!(weights[1].weight, 1.0);
        assert_eq!(weights[2].weight, 0.5);
    }

    #[test]
    fn weights_easy_drop_policy() {
        let cfg = WeightsConfig { easy_weight: 0.0, ..WeightsConfig::default() };
        let records = vec![("easy".to_string(), stats(8, 8, 0, 0))];
        assert_eq!(apply_difficulty_weights(&records, &cfg).unwrap()[0].weight, 0.0);
    }

    #[test]
    fn weights_reject_out_of_range() {
        let cfg = WeightsConfig { hard_weight: 2.0, ..WeightsConfig::default() };
        assert!(apply_difficulty_weights(&[], &cfg).is_err());
        let cfg = WeightsConfig { easy_weight: 0.3, ..WeightsConfig::default() };
        assert!(apply_difficulty_weights(&[], &cfg).is_err());
    }

    // --- rollout estimation against the fixture backend ---

    fn answer_fixture(id: &str, prompt: &str, answer: &str, truncated: bool) -> TraceFixture {
        TraceFixture {
            fixture_id: id.to_string(),
            prompt_key: prompt.to_string(),
            events: vec![FixtureEvent {
                token_text: format!("\\boxed{{{answer}}}"),
                chosen_logprob: -0.1,
                topk: vec![-0.1],
            }],
            finish: if truncated { FinishReason::Length } else { FinishReason::Stop },
        }
    }

    #[test]
    fn rollout_stats_scripted_counts() {
        // 8 fixtures rotate by seed; with 8 distinct derived seeds the
        // selection is seed % 8, so all indices may repeat — instead use
        // one fixture per index via distinct counts below.
        let mut fixtures = Vec::new();
        for i in 0..8 {
            // 3 correct, 5 incorrect (4x "5", 1x "9")
            let answer = match i {
                0 | 1 | 2 => "42",
                3..=6 => "5",
                _ => "9",
            };
            fixtures.push(answer_fixture(&format!("f{i}"), "p", answer, false));
        }
        let backend = FixtureBackend::new(fixtures).unwrap();
        let cfg = RolloutConfig { max_tokens: 10, ..RolloutConfig::default() };
        let problem = record("prob", "p");
        let s = estimate_rollout_stats(&problem, &backend, None, &cfg, 0).unwrap();
        assert_eq!(s.n_rollouts, 8);
        assert_eq!(s.n_correct + s.n_truncated + s.n_failed, s.n_correct + 0 + 0);
        // derived seeds hit fixtures pseudo-randomly; exact counts are
        // checked by replaying the per-seed selection
        let expected_correct = (0..8)
            .map(|i| derive_seed(0, &["rollout", "prob", &i.to_string()]) % 8)
            .filter(|&idx| idx <= 2)
            .count();
        assert_eq!(s.n_correct, expected_correct);
        assert!((s.pass_rate - s.n_correct as f64 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn rollout_stats_all_truncated() {
        let backend =
            FixtureBackend::new(vec![answer_fixture("f", "p", "42", true)]).unwrap();
        // max_tokens larger than the fixture still reports Length
        let cfg = RolloutConfig { max_tokens: 10, ..RolloutConfig::default() };
        let s = estimate_rollout_stats(&record("prob", "p"), &backend, None, &cfg, 1).unwrap();
        assert_eq!(s.n_truncated, 8);
        assert_eq!(s.n_correct, 0);
        assert!(s.majority_answer.is_none());
    }

    #[test]
    fn rollout_stats_majority_of_incorrect() {
        let fixtures = vec![answer_fixture("f", "p", "5", false)];
        let backend = FixtureBackend::new(fixtures).unwrap();
        let cfg = RolloutConfig { max_tokens: 10, ..RolloutConfig::default() };
        let s = estimate_rollout_stats(&record("prob", "p"), &backend, None, &cfg, 2).unwrap();
        assert_eq!(s.n_correct, 0);
        assert_eq!(s.majority_answer.as_deref(), Some("5"));
        assert_eq!(s.majority_frequency, 8);
    }

    #[test]
    fn rollout_failures_reduce_n() {
        // backend knows no fixture for this prompt: every rollout fails
        let backend =
            FixtureBackend::new(vec![answer_fixture("f", "other", "1", false)]).unwrap();
        let cfg = RolloutConfig::default();
        assert!(matches!(
            estimate_rollout_stats(&record("prob", "p"), &backend, None, &cfg, 0),
            Err(Error::RunFailed(_))
        ));
    }

    #[test]
    fn load_dataset_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"prompt\":\"p\",\"answer\":\"1\"}\n{\"id\":\"a\",\"prompt\":\"q\",\"answer\":\"2\"}\n",
        )
        .unwrap();
        match load_dataset(&path) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected load error, got {other:?}"),
        }
    }
}
