//! Closed-form analysis of the two-tier queueing network.
//!
//! Hits are served by a `k`-server queue at rate `mu1` per server. Misses
//! wait in a single-server IO queue at rate `mu2`, then re-enter the
//! `k`-server queue. Service-time bounds come from request counts; queue
//! lengths and waits come from the M/M/k and M/M/1 steady-state formulas.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("invalid queue parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: &str) -> QueueError {
    QueueError::Invalid {
        field,
        reason: reason.to_string(),
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), QueueError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, "must be a positive finite rate"))
    }
}

/// Request counts of one process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessCounts {
    pub n_read: f64,
    pub n_write: f64,
    pub n_miss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueNetworkParams {
    /// Requests per second entering tier 1.
    pub arrival_rate: f64,
    /// Tier-1 service rate per server.
    pub mu1: f64,
    /// Tier-1 read rate for the service-time bounds; defaults to `mu1`.
    #[serde(default)]
    pub mu1_read: Option<f64>,
    /// Tier-1 write rate for the service-time bounds; defaults to `mu1`.
    #[serde(default)]
    pub mu1_write: Option<f64>,
    /// Tier-2 (miss) service rate.
    pub mu2: f64,
    /// Miss rate.
    pub p12: f64,
    /// Tier-1 servers per process.
    pub servers: usize,
    #[serde(default)]
    pub counts: Vec<ProcessCounts>,
}

impl QueueNetworkParams {
    pub fn new(arrival_rate: f64, mu1: f64, mu2: f64, p12: f64, servers: usize) -> Self {
        QueueNetworkParams {
            arrival_rate,
            mu1,
            mu1_read: None,
            mu1_write: None,
            mu2,
            p12,
            servers,
            counts: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), QueueError> {
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(invalid("arrival_rate", "must be non-negative"));
        }
        positive("mu1", self.mu1)?;
        positive("mu2", self.mu2)?;
        if let Some(r) = self.mu1_read {
            positive("mu1_read", r)?;
        }
        if let Some(w) = self.mu1_write {
            positive("mu1_write", w)?;
        }
        if !(0.0..=1.0).contains(&self.p12) {
            return Err(invalid("p12", "miss rate must lie in [0, 1]"));
        }
        if self.servers == 0 {
            return Err(invalid("servers", "need at least one server"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessBound {
    /// Time to serve all hits.
    pub t_h: f64,
    /// Miss penalty.
    pub t_m: f64,
    /// `max(t_h, t_m)`.
    pub t_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceBounds {
    pub per_process: Vec<ProcessBound>,
    /// Max over processes.
    pub total: f64,
}

/// Lower bounds on service time from request counts.
pub fn service_time_bounds(
    counts: &[ProcessCounts],
    mu1_read: f64,
    mu1_write: f64,
    mu2: f64,
) -> Result<ServiceBounds, QueueError> {
    positive("mu1_read", mu1_read)?;
    positive("mu1_write", mu1_write)?;
    positive("mu2", mu2)?;
    let per_process: Vec<ProcessBound> = counts
        .iter()
        .map(|c| {
            let t_h = c.n_read / mu1_read + c.n_write / mu1_write;
            let t_m = c.n_miss / mu2;
            ProcessBound {
                t_h,
                t_m,
                t_i: t_h.max(t_m),
            }
        })
        .collect();
    let total = per_process.iter().map(|b| b.t_i).fold(0.0, f64::max);
    Ok(ServiceBounds { per_process, total })
}

/// Mean service time when hits and misses share one server pool.
pub fn merged_service_time(p12: f64, mu1: f64, mu2: f64) -> f64 {
    (1.0 - p12) / mu1 + p12 / mu2
}

/// Probability that an M/M/k queue with offered load `a = lambda/mu` is
/// empty. `None` unless `a < k`.
pub fn mmk_empty_probability(a: f64, k: usize) -> Option<f64> {
    let kf = k as f64;
    if !(a >= 0.0 && a < kf) {
        return None;
    }
    let mut term = 1.0; // a^n / n!
    let mut sum = 0.0;
    for n in 0..k {
        sum += term;
        term *= a / (n + 1) as f64;
    }
    // term is now a^k / k!
    sum += term / (1.0 - a / kf);
    Some(1.0 / sum)
}

/// Mean number waiting in an M/M/k queue, in the form
/// `P0 * rho^(k+1) / ((k-1)! (k - rho)^2)` with `rho = lambda/mu`.
pub fn mmk_queue_length(rho: f64, k: usize) -> Option<f64> {
    let p0 = mmk_empty_probability(rho, k)?;
    let kf = k as f64;
    // rho^(k+1) / (k-1)! accumulated as a product to avoid overflow
    let mut ratio = rho * rho;
    for n in 1..k {
        ratio *= rho / n as f64;
    }
    Some(p0 * ratio / ((kf - rho) * (kf - rho)))
}

/// Erlang C: probability an arrival waits in an M/M/k queue with offered load `a`.
pub fn erlang_c(a: f64, k: usize) -> Option<f64> {
    let p0 = mmk_empty_probability(a, k)?;
    let mut ak_over_kfact = 1.0;
    for n in 1..=k {
        ak_over_kfact *= a / n as f64;
    }
    Some(p0 * ak_over_kfact / (1.0 - a / k as f64))
}

/// Mean number waiting in M/M/k via Erlang C: `C(k, a) * a / (k - a)`.
pub fn erlang_queue_length(a: f64, k: usize) -> Option<f64> {
    erlang_c(a, k).map(|c| c * a / (k as f64 - a))
}

/// Mean number waiting in an M/M/1 queue, `rho^2 / (1 - rho)`.
pub fn mm1_queue_length(rho: f64) -> Option<f64> {
    (0.0..1.0).contains(&rho).then(|| rho * rho / (1.0 - rho))
}

/// Allen–Cunneen approximation of the mean wait in a G/G/k queue, given the
/// squared coefficients of variation of inter-arrival (`ca2`) and service
/// (`cs2`) times. Approximate by construction.
pub fn allen_cunneen_wait(arrival_rate: f64, mu: f64, k: usize, ca2: f64, cs2: f64) -> Option<f64> {
    let a = arrival_rate / mu;
    let c = erlang_c(a, k)?;
    Some(c / (k as f64 * mu - arrival_rate) * (ca2 + cs2) / 2.0)
}

/// `num / den`, with `0 / 0` read as 0.
fn guarded_div(num: f64, den: f64) -> f64 {
    if den == 0.0 && num == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueNetworkReport {
    /// Bounds from request counts; absent when no counts were given.
    pub bounds: Option<ServiceBounds>,
    /// Mean service time with a merged queue.
    pub merged_service_time: f64,
    /// Arrival rate at the k-server queue: `(1 - p12) * lambda + mu2`.
    pub effective_arrival: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Mean k-server queue length, closed form in `rho1`.
    pub l1: Option<f64>,
    /// Mean k-server queue length via Erlang C, for cross-checking `l1`.
    pub l1_erlang: Option<f64>,
    pub w1: Option<f64>,
    pub l2: Option<f64>,
    pub w2: Option<f64>,
    pub in_equilibrium: bool,
}

/// Separate queues: M/M/k for hits and re-entering misses, M/M/1 for misses.
pub fn analyze_separate_queues(params: &QueueNetworkParams) -> Result<QueueNetworkReport, QueueError> {
    params.validate()?;
    let QueueNetworkParams {
        arrival_rate: lambda,
        mu1,
        mu2,
        p12,
        servers: k,
        ..
    } = *params;

    let bounds = if params.counts.is_empty() {
        None
    } else {
        Some(service_time_bounds(
            &params.counts,
            params.mu1_read.unwrap_or(mu1),
            params.mu1_write.unwrap_or(mu1),
            mu2,
        )?)
    };

    let effective_arrival = (1.0 - p12) * lambda + mu2;
    let rho1 = effective_arrival / mu1;
    let miss_arrival = p12 * lambda;
    let rho2 = miss_arrival / mu2;

    let l1 = mmk_queue_length(rho1, k);
    let l1_erlang = erlang_queue_length(rho1, k);
    let w1 = l1.map(|l| guarded_div(l, effective_arrival));
    let l2 = mm1_queue_length(rho2);
    let w2 = l2.map(|l| guarded_div(l, miss_arrival));

    Ok(QueueNetworkReport {
        bounds,
        merged_service_time: merged_service_time(p12, mu1, mu2),
        effective_arrival,
        rho1,
        rho2,
        l1,
        l1_erlang,
        w1,
        l2,
        w2,
        in_equilibrium: rho1 < 1.0 && rho2 < 1.0,
    })
}

/// The worked example: 10000 reads over 2000 pages on 4 processes,
/// `lambda = 100`, `mu1 = 1000`, `mu2 = 33`, `p12 = 0.2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Walkthrough {
    pub params: QueueNetworkParams,
    pub requests_per_process: f64,
    pub misses_per_process: f64,
    /// Effective arrival rate as printed with the example.
    pub printed_effective_arrival: f64,
    /// `printed_effective_arrival / mu1`.
    pub printed_rho1: f64,
    /// Time for the per-process arrivals at the printed effective rate.
    pub printed_arrival_duration: f64,
    /// `(1 - p12) * lambda + mu2`, from the rate definition.
    pub formula_effective_arrival: f64,
    pub formula_rho1: f64,
    pub formula_arrival_duration: f64,
    pub rho2: f64,
    /// Requests per process over `mu1`.
    pub response_time_per_process: f64,
    pub report: QueueNetworkReport,
}

pub const PRINTED_EFFECTIVE_ARRIVAL: f64 = 86.6;

pub fn example_walkthrough() -> Walkthrough {
    let n_requests = 10_000.0;
    let processes = 4.0;
    let p12 = 0.2;
    let requests_per_process = n_requests / processes;
    let misses_per_process = requests_per_process * p12;
    let mut params = QueueNetworkParams::new(100.0, 1000.0, 33.0, p12, 1);
    params.counts = vec![
        ProcessCounts {
            n_read: requests_per_process,
            n_write: 0.0,
            n_miss: misses_per_process,
        };
        processes as usize
    ];
    let report = analyze_separate_queues(&params).expect("example parameters are valid");
    Walkthrough {
        requests_per_process,
        misses_per_process,
        printed_effective_arrival: PRINTED_EFFECTIVE_ARRIVAL,
        printed_rho1: PRINTED_EFFECTIVE_ARRIVAL / params.mu1,
        printed_arrival_duration: requests_per_process / PRINTED_EFFECTIVE_ARRIVAL,
        formula_effective_arrival: report.effective_arrival,
        formula_rho1: report.rho1,
        formula_arrival_duration: requests_per_process / report.effective_arrival,
        rho2: report.rho2,
        response_time_per_process: requests_per_process / params.mu1,
        report,
        params,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

impl fmt::Display for QueueNetworkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>14}", "quantity", "value")?;
        if let Some(b) = &self.bounds {
            for (i, p) in b.per_process.iter().enumerate() {
                writeln!(f, "{:<28} {:>14.6}", format!("T_h[{i}] (s)"), p.t_h)?;
                writeln!(f, "{:<28} {:>14.6}", format!("T_m[{i}] (s)"), p.t_m)?;
                writeln!(f, "{:<28} {:>14.6}", format!("T_i[{i}] (s)"), p.t_i)?;
            }
            writeln!(f, "{:<28} {:>14.6}", "T (s)", b.total)?;
        }
        writeln!(f, "{:<28} {:>14.6}", "merged service time (s)", self.merged_service_time)?;
        writeln!(f, "{:<28} {:>14.6}", "effective arrival (req/s)", self.effective_arrival)?;
        writeln!(f, "{:<28} {:>14.6}", "rho1", self.rho1)?;
        writeln!(f, "{:<28} {:>14.6}", "rho2", self.rho2)?;
        writeln!(f, "{:<28} {:>14}", "L1", opt(self.l1))?;
        writeln!(f, "{:<28} {:>14}", "L1 (Erlang C)", opt(self.l1_erlang))?;
        writeln!(f, "{:<28} {:>14}", "W1 (s)", opt(self.w1))?;
        writeln!(f, "{:<28} {:>14}", "L2", opt(self.l2))?;
        writeln!(f, "{:<28} {:>14}", "W2 (s)", opt(self.w2))?;
        writeln!(f, "{:<28} {:>14}", "in equilibrium", self.in_equilibrium)?;
        if !self.in_equilibrium {
            writeln!(
                f,
                "warning: utilization >= 1; queues grow without bound, use the T bounds"
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for Walkthrough {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "worked example: lambda={} mu1={} mu2={} p12={} processes={}",
            self.params.arrival_rate,
            self.params.mu1,
            self.params.mu2,
            self.params.p12,
            self.params.counts.len()
        )?;
        writeln!(f, "requests per process        {}", self.requests_per_process)?;
        writeln!(f, "misses per process          {}", self.misses_per_process)?;
        writeln!(f, "[printed] effective arrival {}", self.printed_effective_arrival)?;
        writeln!(f, "[printed] rho1={:.4}", self.printed_rho1)?;
        writeln!(f, "[printed] T={:.2} s", self.printed_arrival_duration)?;
        writeln!(f, "[formula] effective arrival {}", self.formula_effective_arrival)?;
        writeln!(f, "[formula] rho1={:.4}", self.formula_rho1)?;
        writeln!(f, "[formula] T={:.2} s", self.formula_arrival_duration)?;
        writeln!(f, "rho2={:.6} (20/33)", self.rho2)?;
        writeln!(f, "response time per process={} s", self.response_time_per_process)?;
        writeln!(f)?;
        write!(f, "{}", self.report)
    }
}
