use std::io::Write;

use serde::{Deserialize, Serialize};

/// Upper bound of histogram bucket `i` is `HISTOGRAM_BASE * 2^i` seconds; the
/// final bucket is unbounded.
pub const HISTOGRAM_BASE: f64 = 1e-6;
pub const HISTOGRAM_BUCKETS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHistogram {
    pub base_seconds: f64,
    pub counts: Vec<u64>,
}

impl Default for ResponseHistogram {
    fn default() -> Self {
        ResponseHistogram {
            base_seconds: HISTOGRAM_BASE,
            counts: vec![0; HISTOGRAM_BUCKETS + 1],
        }
    }
}

impl ResponseHistogram {
    pub fn record(&mut self, seconds: f64) {
        let mut bound = self.base_seconds;
        let mut i = 0;
        while i < HISTOGRAM_BUCKETS && seconds > bound {
            bound *= 2.0;
            i += 1;
        }
        self.counts[i] += 1;
    }

    pub fn merge(&mut self, other: &ResponseHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counters and timings for one process, or the sum over all processes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessMetrics {
    pub process: Option<usize>,
    pub requests: u64,
    pub reads: u64,
    pub writes: u64,
    pub hits: u64,
    pub misses: u64,
    pub prefetch_hits: u64,
    /// Hits on a line whose fetch was still in flight.
    pub delayed_hits: u64,
    pub evictions: u64,
    pub dirty_writebacks: u64,
    pub prefetches_issued: u64,
    /// Tier-2 reads issued for demand misses.
    pub tier2_reads: u64,
    pub completed: u64,
    /// Requests still in the system when the horizon closed.
    pub incomplete: u64,
    pub mean_response: f64,
    pub max_response: f64,
    /// Summed tier-1 service time over the thread count.
    pub t_h_observed: f64,
    /// Summed tier-2 service time of demand reads.
    pub t_m_observed: f64,
    /// Time of the last completion.
    pub completion_time: f64,
    pub throughput: f64,
    /// Requests arriving after the warm-up point.
    pub steady_requests: u64,
    pub steady_misses: u64,
    /// Time-average count of demand reads waiting for tier 2 (not in service),
    /// after warm-up.
    pub miss_queue_mean: f64,
    /// Mean wait of demand reads before tier-2 service, after warm-up.
    pub miss_wait_mean: f64,
    /// Fraction of post-warm-up time the tier-2 servers were busy.
    pub tier2_utilization: f64,
    pub response_histogram: ResponseHistogram,
}

impl ProcessMetrics {
    pub fn miss_rate(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.misses as f64 / self.requests as f64
        }
    }

    pub fn steady_miss_rate(&self) -> f64 {
        if self.steady_requests == 0 {
            0.0
        } else {
            self.steady_misses as f64 / self.steady_requests as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSummary {
    pub process: usize,
    pub probs: Vec<f64>,
    pub chosen_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub process: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub processes: Vec<ProcessMetrics>,
    pub aggregate: ProcessMetrics,
    pub warmup_time: f64,
    pub end_time: f64,
    /// Set when a tier-2 queue was still growing at the horizon.
    pub queue_growth_detected: bool,
    pub experts: Vec<ExpertSummary>,
    pub timeseries: Vec<Sample>,
}

const SUMMARY_COLUMNS: &str = "process,requests,reads,writes,hits,misses,prefetch_hits,delayed_hits,evictions,dirty_writebacks,prefetches_issued,tier2_reads,completed,incomplete,mean_response,max_response,t_h_observed,t_m_observed,completion_time,throughput,miss_queue_mean,miss_wait_mean,tier2_utilization";

impl SimMetrics {
    /// One row per process plus an `all` row.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SUMMARY_COLUMNS}")?;
        for m in self.processes.iter().chain(std::iter::once(&self.aggregate)) {
            let label = m.process.map_or_else(|| "all".to_string(), |p| p.to_string());
            writeln!(
                w,
                "{label},{},{},{},{},{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                m.requests,
                m.reads,
                m.writes,
                m.hits,
                m.misses,
                m.prefetch_hits,
                m.delayed_hits,
                m.evictions,
                m.dirty_writebacks,
                m.prefetches_issued,
                m.tier2_reads,
                m.completed,
                m.incomplete,
                m.mean_response,
                m.max_response,
                m.t_h_observed,
                m.t_m_observed,
                m.completion_time,
                m.throughput,
                m.miss_queue_mean,
                m.miss_wait_mean,
                m.tier2_utilization,
            )?;
        }
        w.flush()
    }

    /// Long-format time series: `t,process,metric,value`.
    pub fn write_timeseries_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,process,metric,value")?;
        for s in &self.timeseries {
            writeln!(w, "{:?},{},{},{:?}", s.t, s.process, s.metric, s.value)?;
        }
        w.flush()
    }
}
