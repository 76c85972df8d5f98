//! Discrete-event simulation of the two-tier system.
//!
//! Requests arrive per the traffic model and are routed to the process that
//! owns their page. Each process has a tier-1 cache served by `k` threads
//! and a FIFO miss queue served by tier 2. Misses are fetched from tier 2
//! and then re-enter tier 1; dirty evictions become tier-2 writes.
//!
//! Cache state changes in arrival order: a miss allocates its line at
//! arrival and the data lands when the tier-2 fetch completes. A later
//! request for that page counts as a hit but waits for the same fetch (a
//! "delayed hit"). Miss counts therefore do not depend on service timing,
//! and [`replay`] reproduces them without the event loop.

mod compare;
mod config;
mod engine;
mod metrics;
mod node;

use serde::{Deserialize, Serialize};

use crate::cache::Outcome;

pub use compare::{compare_to_analytic, Comparison, ComparisonRow};
pub use config::{
    EvictionConfig, Horizon, PrefetchConfig, ServiceConfig, SimConfig, SimError,
};
pub use engine::{RequestRecord, SimRun};
pub use metrics::{
    ExpertSummary, ProcessMetrics, ResponseHistogram, Sample, SimMetrics, HISTOGRAM_BASE,
    HISTOGRAM_BUCKETS,
};
pub use node::{Node, NodeAccess};

/// Runs one simulation to its horizon.
pub fn run(config: &SimConfig) -> Result<SimMetrics, SimError> {
    engine::simulate(config).map(|r| r.metrics)
}

/// Runs one simulation and keeps every request's timeline.
pub fn run_detailed(config: &SimConfig) -> Result<SimRun, SimError> {
    engine::simulate(config)
}

/// Cache outcome counts of one process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCounts {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub prefetch_hits: u64,
    pub evictions: u64,
}

/// Replays the trace through the caches only, without timing. Produces the
/// same outcome counts as [`run`] at a fraction of the cost.
pub fn replay(config: &SimConfig) -> Result<Vec<ReplayCounts>, SimError> {
    let routed = engine::prepare(config)?;
    let mut nodes = engine::build_nodes(config, &routed)?;
    let mut counts = vec![ReplayCounts::default(); nodes.len()];
    let mut logical = vec![0u64; nodes.len()];
    for r in &routed {
        let p = r.owner;
        logical[p] += 1;
        let access = nodes[p].access(r.tag, r.kind, logical[p])?;
        let c = &mut counts[p];
        c.requests += 1;
        match access.outcome {
            Outcome::Hit => c.hits += 1,
            Outcome::Miss => c.misses += 1,
            Outcome::PrefetchHit => c.prefetch_hits += 1,
        }
        if access.evicted.is_some() {
            c.evictions += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_lines: usize,
    pub miss_rate: f64,
}

/// Runs the same trace at each cache size, in parallel. Sizes must be
/// strictly increasing.
pub fn sweep_cache_size(config: &SimConfig, sizes: &[usize]) -> Result<Vec<SweepPoint>, SimError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config::config_err("sizes", "must be non-empty and strictly increasing"));
    }
    let results: Vec<Result<SimMetrics, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sizes
            .iter()
            .map(|&n| {
                let mut c = config.clone();
                c.cache.n_lines = n;
                scope.spawn(move || run(&c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    sizes
        .iter()
        .zip(results)
        .map(|(&n_lines, m)| {
            m.map(|m| SweepPoint {
                n_lines,
                miss_rate: m.aggregate.miss_rate(),
            })
        })
        .collect()
}
