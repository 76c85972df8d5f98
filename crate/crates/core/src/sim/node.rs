use std::collections::BTreeSet;

use crate::cache::{CacheError, Eviction, Outcome, PageTag, Tier1Cache};
use crate::eviction::{EvictionPolicy, ExpertEnsemble};
use crate::prefetch::{PrefetchBuffer, StreamIdentifier};
use crate::workload::RequestKind;

use super::config::SimConfig;

/// Random streams per process are offset by these bases.
pub(crate) const EVICTION_STREAM: u64 = 300;

/// Cache-side state of one process: the tier-1 cache, its eviction policy and
/// the optional prefetcher. State changes happen in arrival order, so the
/// cache contents do not depend on service timing.
#[derive(Debug, Clone)]
pub struct Node {
    pub cache: Tier1Cache,
    pub policy: EvictionPolicy,
    prefetcher: Option<(PrefetchBuffer, StreamIdentifier)>,
    iteration_misses: BTreeSet<PageTag>,
    arrivals: u64,
    poll_interval: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeAccess {
    pub outcome: Outcome,
    pub evicted: Option<Eviction>,
    /// Pages newly staged in the prefetch buffer.
    pub prefetches: Vec<PageTag>,
}

impl Node {
    pub fn new(owner: usize, config: &SimConfig) -> Self {
        let policy = EvictionPolicy::new(
            config.eviction.policy,
            &config.eviction.ensemble,
            config.seed,
            EVICTION_STREAM + owner as u64,
        );
        let prefetcher = config.prefetch.enabled.then(|| {
            (
                PrefetchBuffer::new(config.prefetch.width),
                StreamIdentifier::new(config.prefetch.history),
            )
        });
        Node {
            cache: Tier1Cache::new(owner, config.cache.n_lines),
            policy,
            prefetcher,
            iteration_misses: BTreeSet::new(),
            arrivals: 0,
            poll_interval: config.eviction.poll_interval,
        }
    }

    pub fn prefetch_buffer(&self) -> Option<&PrefetchBuffer> {
        self.prefetcher.as_ref().map(|(b, _)| b)
    }

    pub fn ensemble(&self) -> Option<&ExpertEnsemble> {
        self.policy.ensemble()
    }

    /// Installs a page without eviction; returns false once the cache is full.
    pub fn prewarm(&mut self, tag: PageTag) -> Result<bool, CacheError> {
        if self.cache.is_full() {
            return Ok(false);
        }
        if !self.cache.contains(tag) {
            self.cache.fill(tag, 0, &mut self.policy)?;
        }
        Ok(true)
    }

    /// Serves one demand access at logical time `now`. Misses are filled
    /// immediately (write-allocate) and feed the stream identifier.
    pub fn access(
        &mut self,
        tag: PageTag,
        kind: RequestKind,
        now: u64,
    ) -> Result<NodeAccess, CacheError> {
        let buffer = self.prefetcher.as_mut().map(|(b, _)| b);
        let result = self.cache.access(tag, kind, now, buffer, &mut self.policy)?;
        let mut access = NodeAccess {
            outcome: result.outcome,
            evicted: result.evicted,
            prefetches: Vec::new(),
        };
        if result.outcome == Outcome::Miss {
            access.evicted = self.cache.fill(tag, now, &mut self.policy)?;
            if kind == RequestKind::Write {
                self.cache.mark_dirty(tag);
            }
            self.iteration_misses.insert(tag);
            if let Some((buffer, sid)) = self.prefetcher.as_mut() {
                sid.observe_miss(tag);
                for candidate in sid.propose_prefetches(buffer, &self.cache) {
                    if buffer.insert(candidate) {
                        access.prefetches.push(candidate);
                    }
                }
            }
        }
        self.arrivals += 1;
        if self.arrivals.is_multiple_of(self.poll_interval) {
            self.policy.end_iteration(&self.iteration_misses);
            self.iteration_misses.clear();
        }
        Ok(access)
    }
}
