use serde::{Deserialize, Serialize};

use crate::queueing::{
    erlang_queue_length, mm1_queue_length, service_time_bounds, ProcessCounts, QueueError,
    QueueNetworkParams,
};

use super::metrics::SimMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub simulated: f64,
    pub analytic: f64,
    /// `|simulated - analytic| / analytic`; absent when the analytic value is 0.
    pub relative_error: Option<f64>,
}

/// Simulated steady-state measurements next to the closed-form predictions
/// for the same rates and the measured miss rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Miss rate measured after warm-up.
    pub p12_measured: f64,
    /// Per-process arrival rate measured after warm-up.
    pub arrival_rate_measured: f64,
    pub in_equilibrium: bool,
    /// Queue-length and wait comparisons; empty outside equilibrium.
    pub rows: Vec<ComparisonRow>,
    /// Lower bound on completion time from the request counts.
    pub bound_completion: f64,
    pub observed_completion: f64,
}

fn row(quantity: &str, simulated: f64, analytic: f64) -> ComparisonRow {
    ComparisonRow {
        quantity: quantity.to_string(),
        simulated,
        analytic,
        relative_error: (analytic != 0.0).then(|| (simulated - analytic).abs() / analytic.abs()),
    }
}

/// Compares a run with the separate-queue model. `params` supplies the
/// service rates and server count; its arrival rate and miss rate are
/// replaced by the values measured in the run. Each process is modeled as an
/// independent copy of the network, so per-process averages are compared.
pub fn compare_to_analytic(
    metrics: &SimMetrics,
    params: &QueueNetworkParams,
) -> Result<Comparison, QueueError> {
    params.validate()?;
    let agg = &metrics.aggregate;
    let n_proc = metrics.processes.len().max(1) as f64;
    let window = metrics.end_time - metrics.warmup_time;
    let p12 = agg.steady_miss_rate();
    let lambda = if window > 0.0 {
        agg.steady_requests as f64 / window / n_proc
    } else {
        0.0
    };

    let counts: Vec<ProcessCounts> = metrics
        .processes
        .iter()
        .map(|m| ProcessCounts {
            n_read: m.reads as f64,
            n_write: m.writes as f64,
            n_miss: m.misses as f64,
        })
        .collect();
    // every request passes through the k tier-1 servers once
    let k_mu1 = params.mu1 * params.servers as f64;
    let bounds = service_time_bounds(
        &counts,
        params.mu1_read.unwrap_or(params.mu1) * params.servers as f64,
        params.mu1_write.unwrap_or(params.mu1) * params.servers as f64,
        params.mu2,
    )?;

    let rho2 = p12 * lambda / params.mu2;
    let a1 = lambda / params.mu1;
    let in_equilibrium = rho2 < 1.0 && lambda < k_mu1 && !metrics.queue_growth_detected;

    let mut rows = Vec::new();
    if in_equilibrium && agg.steady_requests > 0 {
        let l2 = mm1_queue_length(rho2).unwrap_or(0.0);
        let miss_arrival = p12 * lambda;
        let w2 = if miss_arrival > 0.0 { l2 / miss_arrival } else { 0.0 };
        let l1 = erlang_queue_length(a1, params.servers).unwrap_or(0.0);
        let w1 = if lambda > 0.0 { l1 / lambda } else { 0.0 };
        let response = w1 + 1.0 / params.mu1 + p12 * (w2 + 1.0 / params.mu2);
        let sim_rho2 = metrics
            .processes
            .iter()
            .map(|m| m.tier2_utilization)
            .sum::<f64>()
            / n_proc;
        rows.push(row("rho2", sim_rho2, rho2));
        rows.push(row("l2", agg.miss_queue_mean / n_proc, l2));
        rows.push(row("w2", agg.miss_wait_mean, w2));
        rows.push(row("mean_response", agg.mean_response, response));
    }

    Ok(Comparison {
        p12_measured: p12,
        arrival_rate_measured: lambda,
        in_equilibrium,
        rows,
        bound_completion: bounds.total,
        observed_completion: agg.completion_time,
    })
}
