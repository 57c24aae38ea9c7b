//! Answer aggregation: equivalence-class grouping of extracted answers
//! and weighted voting under five strategies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::deepconf::TraceRecord;
use crate::error::{Error, Result};
use crate::verify::math_equivalent;

/// The closed set of five voting strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingStrategy {
    /// Every qualifying trace votes with weight 1.
    Majority,
    /// Weight = mean confidence over all sliding windows.
    MeanConfidence,
    /// Weight = mean token confidence over the tail window.
    TailConfidence,
    /// Weight = mean of the lowest decile of window confidences.
    BottomWindow,
    /// Weight = the single minimum window confidence.
    MinWindow,
}

impl VotingStrategy {
    pub const ALL: [VotingStrategy; 5] = [
        VotingStrategy::Majority,
        VotingStrategy::MeanConfidence,
        VotingStrategy::TailConfidence,
        VotingStrategy::BottomWindow,
        VotingStrategy::MinWindow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VotingStrategy::Majority => "majority",
            VotingStrategy::MeanConfidence => "mean_confidence",
            VotingStrategy::TailConfidence => "tail_confidence",
            VotingStrategy::BottomWindow => "bottom_window",
            VotingStrategy::MinWindow => "min_window",
        }
    }
}

impl std::str::FromStr for VotingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(VotingStrategy::Majority),
            "mean_confidence" => Ok(VotingStrategy::MeanConfidence),
            "tail_confidence" => Ok(VotingStrategy::TailConfidence),
            "bottom_window" => Ok(VotingStrategy::BottomWindow),
            "min_window" => Ok(VotingStrategy::MinWindow),
            other => Err(Error::invalid(format!("unknown voting strategy {other:?}"))),
        }
    }
}

/// One equivalence class of answers in a tally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteEntry {
    pub weight: f64,
    pub trace_ids: Vec<String>,
    /// Best (largest) minimum window confidence among member traces;
    /// first tie-break key.
    pub best_min_window: f64,
}

/// Outcome of one vote: per-class weights and the winning class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    /// Canonical answer key → class entry, ordered by key.
    pub entries: BTreeMap<String, VoteEntry>,
    pub winner: String,
    pub winner_weight: f64,
}

/// The weight a single trace contributes under a strategy.
///
/// Traces without confidence statistics cannot vote under any strategy
/// (even majority requires the trace to have completed normally).
pub fn trace_weight(trace: &TraceRecord, strategy: VotingStrategy) -> Result<f64> {
    let stats = trace
        .stats
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("trace {} has no stats", trace.trace_id)))?;
    Ok(match strategy {
        VotingStrategy::Majority => 1.0,
        VotingStrategy::MeanConfidence => stats.mean_window_confidence,
        VotingStrategy::TailConfidence => stats.tail_confidence,
        VotingStrategy::BottomWindow => stats.bottom_decile_mean,
        VotingStrategy::MinWindow => stats.min_window_confidence,
    })
}

/// Disjoint-set forest over candidate indices.
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups traces' extracted answers into equivalence classes and selects
/// the class with maximal total weight.
///
/// Canonicalization: each answer's normalized form is its key; keys that
/// are pairwise mathematically equivalent (within `rel_tol`) are merged
/// into one class, labeled by the lexicographically smallest member key.
/// Ties on total weight break by (1) larger best member minimum window
/// confidence, then (2) lexicographically smaller class key.
pub fn vote(traces: &[TraceRecord], strategy: VotingStrategy, rel_tol: f64) -> Result<VoteTally> {
    let candidates: Vec<&TraceRecord> =
        traces.iter().filter(|t| t.answer.is_some() && t.stats.is_some()).collect();
    if candidates.is_empty() {
        return Err(Error::NoVotes);
    }

    // Distinct normalized keys, sorted so class labels are deterministic.
    let mut keys: Vec<String> = candidates
        .iter()
        .map(|t| t.answer.as_ref().unwrap().normalized.clone())
        .collect();
    keys.sort();
    keys.dedup();

    let mut uf = UnionFind::new(keys.len());
    for i in 0..keys.len() {
        for j in (i + 1)..keys.len() {
            if math_equivalent(&keys[i], &keys[j], rel_tol) {
                uf.union(i, j);
            }
        }
    }
    // Root index is the smallest member index, and keys are sorted, so
    // the class label is the lexicographically smallest member key.
    let class_of: BTreeMap<&str, usize> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();

    let mut entries: BTreeMap<String, VoteEntry> = BTreeMap::new();
    for trace in &candidates {
        let key = trace.answer.as_ref().unwrap().normalized.as_str();
        let root = uf.find(class_of[key]);
        let label = keys[root].clone();
        let weight = trace_weight(trace, strategy)?;
        let min_window = trace.stats.as_ref().unwrap().min_window_confidence;
        let entry = entries.entry(label).or_insert_with(|| VoteEntry {
            weight: 0.0,
            trace_ids: Vec::new(),
            best_min_window: f64::NEG_INFINITY,
        });
        entry.weight += weight;
        entry.trace_ids.push(trace.trace_id.clone());
        entry.best_min_window = entry.best_min_window.max(min_window);
    }
    for entry in entries.values_mut() {
        entry.trace_ids.sort();
    }

    // BTreeMap iterates keys ascending, so on full ties the first
    // (lexicographically smallest) key wins.
    let (winner, winner_weight) = entries
        .iter()
        .max_by(|(ka, a), (kb, b)| {
            a.weight
                .partial_cmp(&b.weight)
                .unwrap()
                .then(a.best_min_window.partial_cmp(&b.best_min_window).unwrap())
                .then_with(|| kb.cmp(ka))
        })
        .map(|(k, e)| (k.clone(), e.weight))
        .unwrap();

    Ok(VoteTally { entries, winner, winner_weight })
}
