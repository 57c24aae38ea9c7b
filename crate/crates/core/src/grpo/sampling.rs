//! Online-sampling batch assembly and the bounded generation cache.
//!
//! Groups whose rewards are all equal carry no policy-gradient signal
//! and are filtered out. Three replacement strategies exist: backfill
//! (draw more from later generation batches, caching surplus), reject
//! (accept a short batch), duplicate (refill by duplicating retained
//! groups).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::RolloutGroup;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Backfill,
    Reject,
    Duplicate,
}

#[derive(Debug, Clone)]
struct CacheEntry {
    group: RolloutGroup,
    policy_version: u64,
}

/// Bounded FIFO buffer of surplus rollout groups, versioned by the
/// policy that generated them. Entries staler than `max_staleness`
/// policy versions are never served.
#[derive(Debug)]
pub struct GenerationCache {
    capacity: usize,
    entries: VecDeque<CacheEntry>,
    current_version: u64,
    max_staleness: u64,
}

impl GenerationCache {
    pub fn new(capacity: usize) -> Self {
        GenerationCache {
            capacity,
            entries: VecDeque::new(),
            current_version: 0,
            max_staleness: 1,
        }
    }

    pub fn with_max_staleness(mut self, versions: u64) -> Self {
        self.max_staleness = versions;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn current_version(&self) -> u64 {
        self.current_version
    }

    /// Stores a surplus group under the current policy version,
    /// evicting the oldest entry when full.
    pub fn push(&mut self, group: RolloutGroup) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(CacheEntry { group, policy_version: self.current_version });
    }

    fn fresh(&self, entry: &CacheEntry) -> bool {
        self.current_version - entry.policy_version <= self.max_staleness
    }

    /// Pops the oldest entry that is still fresh, discarding stale ones.
    pub fn pop_fresh(&mut self) -> Option<RolloutGroup> {
        while let Some(entry) = self.entries.pop_front() {
            if self.fresh(&entry) {
                return Some(entry.group);
            }
        }
        None
    }

    /// Marks a policy update and drops entries that fell out of the
    /// staleness window.
    pub fn advance_version(&mut self) {
        self.current_version += 1;
        self.refresh();
    }

    /// Drops stale entries.
    pub fn refresh(&mut self) {
        let version = self.current_version;
        let max = self.max_staleness;
        self.entries.retain(|e| version - e.policy_version <= max);
    }
}

/// Result of one batch-assembly round.
#[derive(Debug, Clone)]
pub struct AssembledBatch {
    pub groups: Vec<RolloutGroup>,
    /// Backfill ran out of stream before reaching the target.
    pub exhausted: bool,
    /// Rollout groups pulled from the generation stream this round
    /// (the generation cost of the round).
    pub groups_pulled: usize,
}

/// Assembles one training batch from a stream of generation batches.
///
/// The stream yields whole generation batches (each pull generates every
/// group in it); with `backfill`, surplus valid groups beyond the target
/// go into the cache for later rounds.
pub fn assemble_batch(
    stream: &mut dyn Iterator<Item = Vec<RolloutGroup>>,
    strategy: SamplingStrategy,
    target: usize,
    cache: &mut GenerationCache,
    rng_seed: u64,
) -> Result<AssembledBatch> {
    if target == 0 {
        return Err(Error::invalid("target must be >= 1"));
    }
    let mut groups: Vec<RolloutGroup> = Vec::with_capacity(target);
    let mut pulled = 0usize;
    let mut exhausted = false;

    match strategy {
        SamplingStrategy::Backfill => {
            while groups.len() < target {
                match cache.pop_fresh() {
                    Some(g) => groups.push(g),
                    None => break,
                }
            }
            while groups.len() < target {
                let Some(batch) = stream.next() else {
                    exhausted = true;
                    break;
                };
                pulled += batch.len();
                for group in batch {
                    if group.is_zero_advantage() {
                        continue;
                    }
                    if groups.len() < target {
                        groups.push(group);
                    } else {
                        cache.push(group);
                    }
                }
            }
        }
        SamplingStrategy::Reject => {
            if let Some(batch) = stream.next() {
                pulled += batch.len();
                for group in batch {
                    if !group.is_zero_advantage() && groups.len() < target {
                        groups.push(group);
                    }
                }
            } else {
                exhausted = true;
            }
        }
        SamplingStrategy::Duplicate => {
            if let Some(batch) = stream.next() {
                pulled += batch.len();
                groups.extend(batch.into_iter().filter(|g| !g.is_zero_advantage()));
                groups.truncate(target);
            } else {
                exhausted = true;
            }
            if !groups.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                while groups.len() < target {
                    let pick = rng.gen_range(0..groups.len());
                    groups.push(groups[pick].clone());
                }
            }
        }
    }

    Ok(AssembledBatch { groups, exhausted, groups_pulled: pulled })
}
