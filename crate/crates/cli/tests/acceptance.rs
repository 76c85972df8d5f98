//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check always prints one `criterion N: PASS|FAIL ...` line; the
//! process exits non-zero if any check fails.

use std::collections::HashSet;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use tierstore::device::{fit, load_paper_model, Device, Family, TrainingSample, N_PREDICTORS};
use tierstore::eviction::PolicyKind;
use tierstore::queueing::{mm1_queue_length, mmk_queue_length};
use tierstore::rng::stream_rng;
use tierstore::sim::{replay, run, sweep_cache_size, ServiceConfig, SimConfig};
use tierstore::workload::{generate, TrafficModel};

fn report(n: u32, ok: bool, detail: impl AsRef<str>) -> bool {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict} {}", detail.as_ref());
    ok
}

fn tiersim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tiersim"))
}

fn worked_example_values() -> bool {
    let start = Instant::now();
    let out = tiersim()
        .args(["analyze", "--paper-example", "--format", "json"])
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let w: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let f = |k: &str| w[k].as_f64().unwrap_or(f64::NAN);
    let rho1 = f("printed_rho1");
    let rho2 = f("rho2");
    let t = f("printed_arrival_duration");
    let resp = f("response_time_per_process");
    let ok = rho1 == 0.0866
        && (rho2 - 20.0 / 33.0).abs() < 1e-6
        && (t - 2500.0 / 86.6).abs() < 1e-9
        && (t - 28.8).abs() / 28.8 < 0.005
        && resp == 2.5
        && elapsed < Duration::from_secs(1);
    report(
        1,
        ok,
        format!("rho1={rho1} rho2={rho2:.6} T={t:.4}s response={resp}s in {elapsed:.2?}"),
    )
}

fn geometric_waiting(rho: f64) -> f64 {
    let mut sum = 0.0;
    let mut p = (1.0 - rho) * rho;
    let mut n = 1u32;
    while p > 1e-20 || n < 10 {
        sum += (n - 1) as f64 * p;
        p *= rho;
        n += 1;
    }
    sum
}

fn miss_queue_length_oracle() -> bool {
    let mut worst = 0.0f64;
    for rho in [0.1, 0.3, 0.5, 0.606, 0.9] {
        let closed = mm1_queue_length(rho).unwrap();
        worst = worst.max((closed - geometric_waiting(rho)).abs());
    }
    report(2, worst < 1e-9, format!("max |closed - summed| = {worst:e}"))
}

fn multi_server_reduces_to_single_server() -> bool {
    let mut rng = stream_rng(2024, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let rho: f64 = rng.gen_range(0.001..0.999);
        let l = mmk_queue_length(rho, 1).unwrap();
        worst = worst.max((l - rho * rho / (1.0 - rho)).abs());
    }
    report(3, worst < 1e-9, format!("max deviation over 20 draws = {worst:e}"))
}

fn simulation_matches_mm1() -> bool {
    let mut c = SimConfig::default();
    c.traffic.model = TrafficModel::Irm;
    c.traffic.popularity_cap = 1;
    c.traffic.n_pages = 64;
    c.traffic.n_requests = 100_000;
    c.traffic.arrival_rate = 50.0;
    c.tier2 = ServiceConfig::Exponential { rate: 100.0 };
    c.eviction.policy = PolicyKind::Lru;
    c.warmup_fraction = 0.1;
    c.sample_interval = 10.0;
    c.check_invariants = false;
    c.seed = 3;
    let start = Instant::now();
    let m = run(&c).unwrap();
    let elapsed = start.elapsed();
    let rho: f64 = 0.5;
    let l_expected = rho * rho / (1.0 - rho);
    let w_expected = l_expected / 50.0;
    let lq = m.aggregate.miss_queue_mean;
    let wq = m.aggregate.miss_wait_mean;
    let ok = m.aggregate.misses == 100_000
        && (lq - l_expected).abs() / l_expected < 0.10
        && (wq - w_expected).abs() / w_expected < 0.10
        && elapsed < Duration::from_secs(30);
    report(
        4,
        ok,
        format!("Lq={lq:.4} (expect 0.5) Wq={wq:.5}s (expect {w_expected:.5}) in {elapsed:.2?}"),
    )
}

struct ParityTally {
    ws_within: usize,
    ws_total: usize,
    direction_seeds: usize,
}

/// Runs LRU, LFU and WS on the same traces. WS is checked per trace; the
/// LRU/LFU direction is judged per seed on misses summed over the sizes.
fn parity(sizes: &[usize], configure: impl Fn(&mut SimConfig, usize) + Sync, lfu_should_win: bool) -> ParityTally {
    let per_seed: Vec<(usize, usize, bool)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..5u64)
            .map(|seed| {
                let configure = &configure;
                s.spawn(move || {
                    let (mut within, mut lru_sum, mut lfu_sum) = (0, 0, 0);
                    for &n in sizes {
                        let mut c = SimConfig::default();
                        c.cache.n_lines = 64;
                        c.cache.line_size = 8192;
                        c.cache.n_processes = 1;
                        c.check_invariants = false;
                        c.seed = seed;
                        c.traffic.n_requests = n;
                        configure(&mut c, n);
                        let misses = |k| {
                            let mut c = c.clone();
                            c.eviction.policy = k;
                            replay(&c).unwrap()[0].misses
                        };
                        let (lru, lfu, ws) =
                            (misses(PolicyKind::Lru), misses(PolicyKind::Lfu), misses(PolicyKind::Ws));
                        if ws as f64 <= 1.10 * lru.min(lfu) as f64 {
                            within += 1;
                        }
                        lru_sum += lru;
                        lfu_sum += lfu;
                    }
                    let direction = if lfu_should_win { lfu_sum < lru_sum } else { lru_sum < lfu_sum };
                    (within, sizes.len(), direction)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    ParityTally {
        ws_within: per_seed.iter().map(|r| r.0).sum(),
        ws_total: per_seed.iter().map(|r| r.1).sum(),
        direction_seeds: per_seed.iter().filter(|r| r.2).count(),
    }
}

fn online_learning_parity() -> bool {
    let start = Instant::now();
    let poisson = parity(
        &[500, 1000, 2500, 5000, 10_000],
        |c, n| {
            c.traffic.model = TrafficModel::Poisson;
            c.traffic.n_pages = (n as f64 / 2.5).ceil() as u64;
            c.traffic.mean_lifetime = 0.5;
            c.traffic.arrival_rate = 100.0;
        },
        false,
    );
    let irm = parity(
        &[500, 1000, 2500, 5000, 10_000, 20_000],
        |c, _| {
            c.traffic.model = TrafficModel::Irm;
            c.traffic.n_pages = 50_000;
            c.traffic.zipf_exponent = 1.0;
            c.traffic.popularity_cap = 0;
        },
        true,
    );
    let elapsed = start.elapsed();
    let ok = poisson.ws_within == poisson.ws_total
        && irm.ws_within == irm.ws_total
        && poisson.direction_seeds >= 4
        && irm.direction_seeds >= 4
        && elapsed < Duration::from_secs(60);
    report(
        5,
        ok,
        format!(
            "WS within 10% of best: poisson {}/{}, irm {}/{}; LRU<LFU on poisson in {}/5 seeds; \
             LFU<LRU on irm in {}/5 seeds; {elapsed:.2?}",
            poisson.ws_within,
            poisson.ws_total,
            irm.ws_within,
            irm.ws_total,
            poisson.direction_seeds,
            irm.direction_seeds
        ),
    )
}

fn lru_miss_rate_curve() -> bool {
    let mut c = SimConfig::default();
    c.traffic.model = TrafficModel::Irm;
    c.traffic.n_requests = 2000;
    c.traffic.n_pages = 100;
    c.traffic.zipf_exponent = 0.5;
    c.traffic.read_fraction = 1.0;
    c.eviction.policy = PolicyKind::Lru;
    c.check_invariants = false;
    c.seed = 6;
    let mut spec = c.traffic.clone();
    spec.seed = c.seed;
    let trace = generate(&spec).unwrap();
    let distinct: HashSet<u64> = trace.iter().map(|r| r.offset / c.cache.line_size).collect();
    let floor = distinct.len() as f64 / trace.len() as f64;

    let points = sweep_cache_size(&c, &[8, 16, 32, 64, 128, 256]).unwrap();
    let monotone = points.windows(2).all(|w| w[1].miss_rate <= w[0].miss_rate);
    let at_floor = points
        .iter()
        .filter(|p| p.n_lines >= distinct.len())
        .all(|p| p.miss_rate == floor);
    let curve: Vec<String> = points
        .iter()
        .map(|p| format!("{}:{:.4}", p.n_lines, p.miss_rate))
        .collect();
    report(
        6,
        monotone && at_floor && distinct.len() <= 256,
        format!("curve [{}], cold floor {floor:.4} ({} pages)", curve.join(" "), distinct.len()),
    )
}

fn in_range(rng: &mut rand_chacha::ChaCha8Rng, family: Family) -> [f64; N_PREDICTORS] {
    let mut x = [1.0; N_PREDICTORS];
    for (v, range) in x.iter_mut().zip(family.training_envelope()) {
        let (lo, hi) = range.unwrap_or((1.0, 64.0));
        *v = rng.gen_range(lo.ln()..hi.ln()).exp();
    }
    x
}

fn ols_recovers_published_models() -> bool {
    let mut worst_rel = 0.0f64;
    let mut worst_cos = 0.0f64;
    let mut lengths = Vec::new();
    for device in [Device::NvmeWrite, Device::HddRead] {
        let truth = load_paper_model(device);
        let mut rng = stream_rng(77, 0);
        let mut make = |noise: f64| -> Vec<TrainingSample> {
            (0..400)
                .map(|_| {
                    let x = in_range(&mut rng, device.family());
                    let y = truth.predict(&x).unwrap().seconds + noise * rng.gen_range(-1.0..1.0);
                    TrainingSample { predictors: x, observed_time: y }
                })
                .collect()
        };
        let clean = make(0.0);
        let fitted = fit(device, &truth.terms, &clean).unwrap();
        lengths.push(fitted.coefficients.len());
        for (got, want) in fitted.coefficients.iter().zip(&truth.coefficients) {
            worst_rel = worst_rel.max((got - want).abs() / want.abs());
        }

        let noisy = make(5.0);
        let fitted = fit(device, &truth.terms, &noisy).unwrap();
        let residuals: Vec<f64> = noisy
            .iter()
            .map(|s| s.observed_time - fitted.predict(&s.predictors).unwrap().seconds)
            .collect();
        let r_norm = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
        for j in 0..=truth.terms.len() {
            let col: Vec<f64> = noisy
                .iter()
                .map(|s| if j == 0 { 1.0 } else { truth.terms.terms()[j - 1].eval(&s.predictors) })
                .collect();
            let c_norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
            let dot: f64 = col.iter().zip(&residuals).map(|(c, r)| c * r).sum();
            worst_cos = worst_cos.max(dot.abs() / (c_norm * r_norm));
        }
    }
    report(
        7,
        worst_rel < 1e-6 && worst_cos < 1e-6 && lengths == [12, 11],
        format!("coefficients {lengths:?}, max rel error {worst_rel:e}, max residual cosine {worst_cos:e}"),
    )
}

/// The published models written out term by term.
fn oracle(device: Device, x: &[f64; 5]) -> f64 {
    let [x1, x2, x3, x4, x5] = *x;
    match device {
        Device::NvmeWrite => {
            -5.941 + 6.252e-01 * x1 - 6.326e-05 * x3 + 3.726e-05 * x4 + 6.213e-11 * x5
                + 1.667e-06 * x1 * x3
                - 8.464e-07 * x1 * x4
                - 1.650e-09 * x3 * x4
                + 2.029e-16 * x4 * x5
                - 6.564e-16 * x3 * x5
                + 1.973e-10 * x1 * x3 * x4
                + 1.103e-20 * x3 * x4 * x5
        }
        Device::NvmeRead => {
            -6.059 + 2.182e-02 * x1 + 1.009e-04 * x3 - 3.566e-06 * x4 + 6.963e-11 * x5
                - 2.066e-07 * x1 * x3
                - 1.165e-08 * x1 * x4
                - 4.060e-10 * x3 * x4
                + 1.259e-16 * x4 * x5
                - 2.984e-15 * x3 * x5
                - 6.675e-12 * x1 * x3 * x4
                + 1.896e-20 * x3 * x4 * x5
        }
        Device::HddWrite => {
            7.297 + 4.318e-04 * x3 - 4.354e-06 * x4 + 1.002e-08 * x5 + 3.869e-01 * x1
                + 6.664 * x2
                + 2.007e-11 * x3 * x4
                - 7.486e-11 * x5 * x1
                - 9.269e-10 * x5 * x2
                - 9.916e-02 * x1 * x2
                + 8.344e-12 * x5 * x1 * x2
        }
        Device::HddRead => {
            -0.3771 + 5.913e-04 * x3 - 1.584e-06 * x4 + 8.933 * x2 - 2.563 * x1
                + 6.274e-10 * x5
                + 1.715e-08 * x3 * x4
                + 3.694e-01 * x2 * x1
                - 2.272e-10 * x2 * x5
                - 4.751e-11 * x1 * x5
                + 5.167e-12 * x2 * x1 * x5
        }
    }
}

fn published_models_match_oracle() -> bool {
    let mut rng = stream_rng(8, 1);
    let mut worst = 0.0f64;
    for device in Device::ALL {
        let model = load_paper_model(device);
        for _ in 0..10 {
            let x = in_range(&mut rng, device.family());
            let got = model.predict(&x).unwrap().seconds;
            let want = oracle(device, &x);
            worst = worst.max((got - want).abs() / want.abs().max(1e-300));
        }
    }
    report(8, worst < 1e-12, format!("40 inputs, max rel error {worst:e}"))
}

fn simulate_is_deterministic() -> bool {
    let run_once = |format: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = tiersim()
            .args(["simulate", "--seed", "7", "--format", format])
            .args(["--set", "traffic.n_requests=3000", "--set", "cache.n_processes=2"])
            .args(["--set", "prefetch.enabled=true", "--set", "traffic.read_fraction=0.7"])
            .arg("--out-dir")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
        match format {
            "json" => vec![read("metrics.json")],
            _ => vec![read("summary.csv"), read("timeseries.csv")],
        }
    };
    let json_same = run_once("json") == run_once("json");
    let csv_same = run_once("csv") == run_once("csv");
    report(
        9,
        json_same && csv_same,
        format!("metrics.json identical: {json_same}, summary/timeseries csv identical: {csv_same}"),
    )
}

fn main() {
    let checks: [(&str, fn() -> bool); 9] = [
        ("worked_example_values", worked_example_values),
        ("miss_queue_length_oracle", miss_queue_length_oracle),
        ("multi_server_reduces_to_single_server", multi_server_reduces_to_single_server),
        ("simulation_matches_mm1", simulation_matches_mm1),
        ("online_learning_parity", online_learning_parity),
        ("lru_miss_rate_curve", lru_miss_rate_curve),
        ("ols_recovers_published_models", ols_recovers_published_models),
        ("published_models_match_oracle", published_models_match_oracle),
        ("simulate_is_deterministic", simulate_is_deterministic),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        let ok = std::panic::catch_unwind(check).unwrap_or_else(|_| {
            println!("{name}: panicked");
            false
        });
        if !ok {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed acceptance checks: {}", failed.join(", "));
        std::process::exit(1);
    }
}
