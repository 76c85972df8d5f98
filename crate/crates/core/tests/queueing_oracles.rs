use rand::Rng;
use tierstore::queueing::{
    analyze_separate_queues, erlang_queue_length, mm1_queue_length, mmk_queue_length,
    QueueNetworkParams,
};
use tierstore::rng::stream_rng;

/// Mean number waiting in M/M/1 by summing the geometric queue-length
/// distribution: P(N = n) = (1 - rho) rho^n, waiting = max(n - 1, 0).
fn geometric_waiting(rho: f64) -> f64 {
    let mut sum = 0.0;
    let mut p = (1.0 - rho) * rho; // P(N = 1)
    let mut n = 1u32;
    while p > 1e-20 || n < 10 {
        sum += (n - 1) as f64 * p;
        p *= rho;
        n += 1;
    }
    sum
}

#[test]
fn miss_queue_length_matches_geometric_sum() {
    for rho in [0.1, 0.3, 0.5, 0.606, 0.9] {
        let closed = mm1_queue_length(rho).unwrap();
        let brute = geometric_waiting(rho);
        assert!((closed - brute).abs() < 1e-9, "rho={rho}: {closed} vs {brute}");
    }
}

#[test]
fn single_server_reduces_to_mm1() {
    let mut rng = stream_rng(5, 0);
    for _ in 0..20 {
        let rho: f64 = rng.gen_range(0.001..0.999);
        let mmk = mmk_queue_length(rho, 1).unwrap();
        let mm1 = rho * rho / (1.0 - rho);
        assert!((mmk - mm1).abs() <= 1e-9 * mm1.max(1.0), "rho={rho}");
    }
}

#[test]
fn closed_form_agrees_with_erlang_c_for_many_servers() {
    for k in [2, 4, 16] {
        for frac in [0.1, 0.5, 0.9] {
            let a = frac * k as f64;
            let l = mmk_queue_length(a, k).unwrap();
            let e = erlang_queue_length(a, k).unwrap();
            assert!((l - e).abs() <= 1e-12 * e.max(1.0), "k={k} a={a}");
        }
    }
}

#[test]
fn littles_law_links_l2_and_w2() {
    let params = QueueNetworkParams::new(100.0, 1000.0, 33.0, 0.2, 4);
    let r = analyze_separate_queues(&params).unwrap();
    let l2 = r.l2.unwrap();
    let w2 = r.w2.unwrap();
    assert!((l2 - w2 * 0.2 * 100.0).abs() < 1e-12);
    assert!((r.rho2 - 20.0 / 33.0).abs() < 1e-12);
}
