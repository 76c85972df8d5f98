use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{map_page, page_of, CacheConfig, Outcome, PageTag};
use crate::rng::stream_rng;
use crate::workload::{generate, Request, RequestKind};

use super::config::{ServiceConfig, SimConfig, SimError};
use super::metrics::{ExpertSummary, ProcessMetrics, Sample, SimMetrics};
use super::node::Node;

const TIER1_STREAM: u64 = 100;
const TIER2_STREAM: u64 = 200;

/// A request routed to its owning process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Routed {
    pub arrival_time: f64,
    pub tag: PageTag,
    pub owner: usize,
    pub kind: RequestKind,
}

/// Generates the workload, applies the request horizon and routes every
/// request to its owner.
pub(crate) fn prepare(config: &SimConfig) -> Result<Vec<Routed>, SimError> {
    config.validate()?;
    let mut traffic = config.traffic.clone();
    traffic.seed = config.seed;
    let mut requests: Vec<Request> = generate(&traffic)?;
    if let Some(n) = config.horizon.max_requests {
        requests.truncate(n);
    }
    let mut cache_config: CacheConfig = config.cache.clone();
    if cache_config.total_pages.is_none() {
        cache_config.total_pages = Some(traffic.file_pages().max(1));
    }
    requests
        .iter()
        .map(|r| {
            let page = page_of(r.offset, cache_config.line_size);
            Ok(Routed {
                arrival_time: r.arrival_time,
                tag: PageTag::new(r.file_id, page),
                owner: map_page(page, &cache_config)?,
                kind: r.kind,
            })
        })
        .collect()
}

/// Builds one node per process, pre-warmed if configured.
pub(crate) fn build_nodes(config: &SimConfig, routed: &[Routed]) -> Result<Vec<Node>, SimError> {
    let mut nodes: Vec<Node> = (0..config.cache.n_processes)
        .map(|p| Node::new(p, config))
        .collect();
    if config.prewarm {
        let pages: BTreeSet<(PageTag, usize)> = routed.iter().map(|r| (r.tag, r.owner)).collect();
        for (tag, owner) in pages {
            nodes[owner].prewarm(tag)?;
        }
    }
    Ok(nodes)
}

/// Per-request timeline, for property checks on a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub process: usize,
    pub tag: PageTag,
    pub outcome: Outcome,
    pub arrival: f64,
    /// When the tier-2 data this request waited on arrived, if it waited.
    pub fill: Option<f64>,
    pub completion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub metrics: SimMetrics,
    pub records: Vec<RequestRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrival(usize),
    Tier1Done { process: usize, request: usize },
    Tier2Done { station: usize, job: usize },
    Sample,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so the max-heap pops the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Tier-2 job classes in service priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JobClass {
    Demand = 0,
    Writeback = 1,
    Prefetch = 2,
}

#[derive(Debug, Clone)]
struct Job {
    class: JobClass,
    process: usize,
    tag: PageTag,
    enqueued: f64,
    waiters: Vec<usize>,
    /// Counted toward steady-state wait statistics.
    steady: bool,
}

#[derive(Debug)]
struct Station {
    servers: usize,
    busy: usize,
    queues: [VecDeque<usize>; 3],
    rng: ChaCha8Rng,
    busy_time: f64,
}

#[derive(Debug)]
struct Tier1 {
    busy: usize,
    queue: VecDeque<usize>,
    rng: ChaCha8Rng,
}

/// Piecewise-constant integral of a per-process level over the steady window.
#[derive(Debug, Clone, Copy, Default)]
struct Level {
    value: usize,
    since: f64,
    area: f64,
}

impl Level {
    fn change(&mut self, now: f64, warmup: f64, delta: isize) {
        self.close(now, warmup);
        self.value = (self.value as isize + delta) as usize;
    }

    fn close(&mut self, now: f64, warmup: f64) {
        let start = self.since.max(warmup);
        if now > start {
            self.area += self.value as f64 * (now - start);
        }
        self.since = now;
    }
}

fn sample_service(config: &ServiceConfig, mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    match config {
        ServiceConfig::Exponential { .. } => {
            // inverse CDF on (0, 1] keeps the sample strictly positive
            let u: f64 = 1.0 - rng.gen::<f64>();
            -u.ln() * mean
        }
        ServiceConfig::Constant { .. } | ServiceConfig::Device { .. } => mean,
    }
}

struct Engine<'a> {
    config: &'a SimConfig,
    routed: &'a [Routed],
    nodes: Vec<Node>,
    events: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    tier1_mean: f64,
    tier2_mean: f64,
    tier1: Vec<Tier1>,
    stations: Vec<Station>,
    jobs: Vec<Job>,
    pending_fetch: HashMap<PageTag, usize>,
    records: Vec<RequestRecord>,
    stats: Vec<ProcessMetrics>,
    wait_sum: Vec<f64>,
    wait_count: Vec<u64>,
    response_sum: Vec<f64>,
    miss_queue: Vec<Level>,
    tier2_busy_level: Vec<Level>,
    warmup_time: f64,
    warmup_index: usize,
    logical: Vec<u64>,
    timeseries: Vec<Sample>,
    backlog_samples: Vec<(f64, f64)>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, routed: &'a [Routed], nodes: Vec<Node>) -> Result<Self, SimError> {
        let n_proc = config.cache.n_processes;
        let tier1 = (0..n_proc)
            .map(|p| Tier1 {
                busy: 0,
                queue: VecDeque::new(),
                rng: stream_rng(config.seed, TIER1_STREAM + p as u64),
            })
            .collect();
        let station = |s: usize, servers: usize| Station {
            servers,
            busy: 0,
            queues: Default::default(),
            rng: stream_rng(config.seed, TIER2_STREAM + s as u64),
            busy_time: 0.0,
        };
        let stations = match config.tier2_shared_servers {
            Some(servers) => vec![station(0, servers)],
            None => (0..n_proc).map(|p| station(p, 1)).collect(),
        };
        let warmup_index = (config.warmup_fraction * routed.len() as f64).floor() as usize;
        let warmup_time = routed.get(warmup_index).map_or(0.0, |r| r.arrival_time);
        let stats = (0..n_proc)
            .map(|p| ProcessMetrics {
                process: Some(p),
                ..ProcessMetrics::default()
            })
            .collect();
        Ok(Engine {
            config,
            routed,
            nodes,
            events: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            tier1_mean: config.tier1.mean_time()?,
            tier2_mean: config.tier2.mean_time()?,
            tier1,
            stations,
            jobs: Vec::new(),
            pending_fetch: HashMap::new(),
            records: Vec::with_capacity(routed.len()),
            stats,
            wait_sum: vec![0.0; n_proc],
            wait_count: vec![0; n_proc],
            response_sum: vec![0.0; n_proc],
            miss_queue: vec![Level::default(); n_proc],
            tier2_busy_level: vec![Level::default(); n_proc],
            warmup_time,
            warmup_index,
            logical: vec![0; n_proc],
            timeseries: Vec::new(),
            backlog_samples: Vec::new(),
        })
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn station_of(&self, process: usize) -> usize {
        if self.config.tier2_shared_servers.is_some() {
            0
        } else {
            process
        }
    }

    fn run(mut self) -> Result<SimRun, SimError> {
        if !self.routed.is_empty() {
            self.schedule(self.routed[0].arrival_time, EventKind::Arrival(0));
            self.schedule(0.0, EventKind::Sample);
        }
        let max_time = self.config.horizon.max_time.unwrap_or(f64::INFINITY);
        while let Some(event) = self.events.pop() {
            if event.time > max_time {
                self.now = max_time;
                break;
            }
            self.now = event.time;
            match event.kind {
                EventKind::Arrival(i) => self.on_arrival(i)?,
                EventKind::Tier1Done { process, request } => self.on_tier1_done(process, request),
                EventKind::Tier2Done { station, job } => self.on_tier2_done(station, job),
                EventKind::Sample => self.on_sample(),
            }
        }
        Ok(self.finish())
    }

    fn on_arrival(&mut self, i: usize) -> Result<(), SimError> {
        let r = self.routed[i];
        if let Some(next) = self.routed.get(i + 1) {
            self.schedule(next.arrival_time, EventKind::Arrival(i + 1));
        }
        let p = r.owner;
        self.logical[p] += 1;
        let access = self.nodes[p].access(r.tag, r.kind, self.logical[p])?;
        let steady = i >= self.warmup_index;
        let stats = &mut self.stats[p];
        stats.requests += 1;
        match r.kind {
            RequestKind::Read => stats.reads += 1,
            RequestKind::Write => stats.writes += 1,
        }
        if steady {
            stats.steady_requests += 1;
        }
        match access.outcome {
            Outcome::Hit => stats.hits += 1,
            Outcome::Miss => {
                stats.misses += 1;
                if steady {
                    stats.steady_misses += 1;
                }
            }
            Outcome::PrefetchHit => stats.prefetch_hits += 1,
        }
        self.records.push(RequestRecord {
            process: p,
            tag: r.tag,
            outcome: access.outcome,
            arrival: r.arrival_time,
            fill: None,
            completion: None,
        });

        if let Some(ev) = access.evicted {
            self.stats[p].evictions += 1;
            if ev.dirty {
                self.stats[p].dirty_writebacks += 1;
                self.submit(JobClass::Writeback, p, ev.tag, None, steady);
            }
        }

        match access.outcome {
            Outcome::Miss => {
                self.stats[p].tier2_reads += 1;
                let job = self.submit(JobClass::Demand, p, r.tag, Some(i), steady);
                self.pending_fetch.insert(r.tag, job);
            }
            Outcome::Hit | Outcome::PrefetchHit => match self.pending_fetch.get(&r.tag) {
                Some(&job) => {
                    if access.outcome == Outcome::Hit {
                        self.stats[p].delayed_hits += 1;
                    }
                    if self.config.coalesce || access.outcome == Outcome::PrefetchHit {
                        self.jobs[job].waiters.push(i);
                    } else {
                        self.stats[p].tier2_reads += 1;
                        self.submit(JobClass::Demand, p, r.tag, Some(i), steady);
                    }
                }
                None => self.enter_tier1(p, i),
            },
        }

        for tag in access.prefetches {
            self.stats[p].prefetches_issued += 1;
            let job = self.submit(JobClass::Prefetch, p, tag, None, steady);
            self.pending_fetch.insert(tag, job);
        }

        if self.config.check_invariants {
            self.check_node(p)?;
        }
        Ok(())
    }

    fn submit(
        &mut self,
        class: JobClass,
        process: usize,
        tag: PageTag,
        waiter: Option<usize>,
        steady: bool,
    ) -> usize {
        let id = self.jobs.len();
        self.jobs.push(Job {
            class,
            process,
            tag,
            enqueued: self.now,
            waiters: waiter.into_iter().collect(),
            steady,
        });
        let s = self.station_of(process);
        self.stations[s].queues[class as usize].push_back(id);
        if class == JobClass::Demand {
            self.miss_queue[process].change(self.now, self.warmup_time, 1);
        }
        self.dispatch_tier2(s);
        id
    }

    fn dispatch_tier2(&mut self, s: usize) {
        while self.stations[s].busy < self.stations[s].servers {
            let Some(job) = self.stations[s].queues.iter_mut().find_map(|q| q.pop_front()) else {
                return;
            };
            let station = &mut self.stations[s];
            station.busy += 1;
            let service = sample_service(&self.config.tier2, self.tier2_mean, &mut station.rng);
            station.busy_time += service;
            let Job {
                class,
                process,
                enqueued,
                steady,
                ..
            } = self.jobs[job];
            self.tier2_busy_level[process].change(self.now, self.warmup_time, 1);
            if class == JobClass::Demand {
                self.miss_queue[process].change(self.now, self.warmup_time, -1);
                self.stats[process].t_m_observed += service;
                if steady {
                    self.wait_sum[process] += self.now - enqueued;
                    self.wait_count[process] += 1;
                }
            }
            self.schedule(self.now + service, EventKind::Tier2Done { station: s, job });
        }
    }

    fn on_tier2_done(&mut self, s: usize, job: usize) {
        self.stations[s].busy -= 1;
        let (process, tag) = (self.jobs[job].process, self.jobs[job].tag);
        self.tier2_busy_level[process].change(self.now, self.warmup_time, -1);
        if self.pending_fetch.get(&tag) == Some(&job) {
            self.pending_fetch.remove(&tag);
        }
        let waiters = std::mem::take(&mut self.jobs[job].waiters);
        for i in waiters {
            self.records[i].fill = Some(self.now);
            self.enter_tier1(self.routed[i].owner, i);
        }
        self.dispatch_tier2(s);
    }

    fn enter_tier1(&mut self, p: usize, i: usize) {
        self.tier1[p].queue.push_back(i);
        self.dispatch_tier1(p);
    }

    fn dispatch_tier1(&mut self, p: usize) {
        let k = self.config.k_service_threads;
        while self.tier1[p].busy < k {
            let Some(i) = self.tier1[p].queue.pop_front() else {
                return;
            };
            let t1 = &mut self.tier1[p];
            t1.busy += 1;
            let service = sample_service(&self.config.tier1, self.tier1_mean, &mut t1.rng);
            self.stats[p].t_h_observed += service / k as f64;
            self.schedule(self.now + service, EventKind::Tier1Done { process: p, request: i });
        }
    }

    fn on_tier1_done(&mut self, p: usize, i: usize) {
        self.tier1[p].busy -= 1;
        let response = self.now - self.records[i].arrival;
        self.records[i].completion = Some(self.now);
        let stats = &mut self.stats[p];
        stats.completed += 1;
        stats.max_response = stats.max_response.max(response);
        stats.completion_time = stats.completion_time.max(self.now);
        stats.response_histogram.record(response);
        self.response_sum[p] += response;
        self.dispatch_tier1(p);
    }

    fn on_sample(&mut self) {
        let t = self.now;
        let mut backlog = 0usize;
        for p in 0..self.stats.len() {
            let waiting = self.miss_queue[p].value;
            backlog += waiting;
            let requests = self.stats[p].requests;
            let miss_rate = if requests == 0 {
                0.0
            } else {
                self.stats[p].misses as f64 / requests as f64
            };
            for (metric, value) in [
                ("miss_queue_len", waiting as f64),
                ("tier1_queue_len", self.tier1[p].queue.len() as f64),
                ("miss_rate", miss_rate),
            ] {
                self.timeseries.push(Sample {
                    t,
                    process: p,
                    metric: metric.to_string(),
                    value,
                });
            }
        }
        // growth is judged while requests still arrive, not while draining
        let last_arrival = self.routed.last().map_or(0.0, |r| r.arrival_time);
        if t >= self.warmup_time && t <= last_arrival {
            self.backlog_samples.push((t, backlog as f64));
        }
        // keep sampling only while other work remains
        if !self.events.is_empty() {
            self.schedule(t + self.config.sample_interval, EventKind::Sample);
        }
    }

    /// Single-copy and capacity invariants for one process's cache.
    fn check_node(&self, p: usize) -> Result<(), SimError> {
        let node = &self.nodes[p];
        if node.cache.len() > node.cache.capacity() {
            return Err(SimError::Invariant(format!(
                "process {p} holds {} lines in a {}-line cache",
                node.cache.len(),
                node.cache.capacity()
            )));
        }
        let mut seen = BTreeSet::new();
        for line in node.cache.valid_lines() {
            if !seen.insert(line.tag) {
                return Err(SimError::Invariant(format!("page {} cached twice", line.tag)));
            }
            if node.prefetch_buffer().is_some_and(|b| b.contains(line.tag)) {
                return Err(SimError::Invariant(format!(
                    "page {} both cached and staged for prefetch",
                    line.tag
                )));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> SimRun {
        let end = self.now;
        let window = (end - self.warmup_time).max(0.0);
        let n_proc = self.stats.len();
        for p in 0..n_proc {
            self.miss_queue[p].close(end, self.warmup_time);
            self.tier2_busy_level[p].close(end, self.warmup_time);
            let servers = self.stations[self.station_of(p)].servers as f64;
            let stats = &mut self.stats[p];
            stats.incomplete = stats.requests - stats.completed;
            if stats.completed > 0 {
                stats.mean_response = self.response_sum[p] / stats.completed as f64;
            }
            if stats.completion_time > 0.0 {
                stats.throughput = stats.completed as f64 / stats.completion_time;
            }
            if window > 0.0 {
                stats.miss_queue_mean = self.miss_queue[p].area / window;
                stats.tier2_utilization = self.tier2_busy_level[p].area / (window * servers);
            }
            if self.wait_count[p] > 0 {
                stats.miss_wait_mean = self.wait_sum[p] / self.wait_count[p] as f64;
            }
        }

        let mut aggregate = ProcessMetrics::default();
        for s in &self.stats {
            aggregate.requests += s.requests;
            aggregate.reads += s.reads;
            aggregate.writes += s.writes;
            aggregate.hits += s.hits;
            aggregate.misses += s.misses;
            aggregate.prefetch_hits += s.prefetch_hits;
            aggregate.delayed_hits += s.delayed_hits;
            aggregate.evictions += s.evictions;
            aggregate.dirty_writebacks += s.dirty_writebacks;
            aggregate.prefetches_issued += s.prefetches_issued;
            aggregate.tier2_reads += s.tier2_reads;
            aggregate.completed += s.completed;
            aggregate.incomplete += s.incomplete;
            aggregate.max_response = aggregate.max_response.max(s.max_response);
            aggregate.t_h_observed = aggregate.t_h_observed.max(s.t_h_observed);
            aggregate.t_m_observed = aggregate.t_m_observed.max(s.t_m_observed);
            aggregate.completion_time = aggregate.completion_time.max(s.completion_time);
            aggregate.steady_requests += s.steady_requests;
            aggregate.steady_misses += s.steady_misses;
            aggregate.miss_queue_mean += s.miss_queue_mean;
            aggregate.response_histogram.merge(&s.response_histogram);
        }
        if aggregate.completed > 0 {
            aggregate.mean_response =
                self.response_sum.iter().sum::<f64>() / aggregate.completed as f64;
        }
        if aggregate.completion_time > 0.0 {
            aggregate.throughput = aggregate.completed as f64 / aggregate.completion_time;
        }
        let waits: u64 = self.wait_count.iter().sum();
        if waits > 0 {
            aggregate.miss_wait_mean = self.wait_sum.iter().sum::<f64>() / waits as f64;
        }
        if window > 0.0 {
            let capacity: f64 = self.stations.iter().map(|s| s.servers as f64).sum();
            let busy: f64 = self.tier2_busy_level.iter().map(|l| l.area).sum();
            aggregate.tier2_utilization = busy / (window * capacity);
        }

        let experts = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(p, n)| {
                n.ensemble().map(|e| ExpertSummary {
                    process: p,
                    probs: e.probs().to_vec(),
                    chosen_counts: e.chosen_counts().to_vec(),
                })
            })
            .collect();

        let queue_growth_detected = backlog_growing(&self.backlog_samples);
        SimRun {
            metrics: SimMetrics {
                processes: self.stats,
                aggregate,
                warmup_time: self.warmup_time,
                end_time: end,
                queue_growth_detected,
                experts,
                timeseries: self.timeseries,
            },
            records: self.records,
        }
    }
}

/// Flags a tier-2 backlog whose fitted linear trend over the steady window
/// rises by more than its own mean (and at least five requests).
fn backlog_growing(samples: &[(f64, f64)]) -> bool {
    if samples.len() < 4 {
        return false;
    }
    let n = samples.len() as f64;
    let mean_t = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_q = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, q) in samples {
        sxy += (t - mean_t) * (q - mean_q);
        sxx += (t - mean_t) * (t - mean_t);
    }
    if sxx == 0.0 {
        return false;
    }
    let span = samples[samples.len() - 1].0 - samples[0].0;
    let rise = sxy / sxx * span;
    rise > mean_q.max(5.0)
}

pub(crate) fn simulate(config: &SimConfig) -> Result<SimRun, SimError> {
    let routed = prepare(config)?;
    let nodes = build_nodes(config, &routed)?;
    Engine::new(config, &routed, nodes)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_pop_in_time_then_sequence_order() {
        let mut heap = BinaryHeap::new();
        for (time, seq) in [(2.0, 1), (1.0, 3), (1.0, 2), (0.5, 9)] {
            heap.push(Event {
                time,
                seq,
                kind: EventKind::Sample,
            });
        }
        let order: Vec<_> = std::iter::from_fn(|| heap.pop().map(|e| (e.time, e.seq))).collect();
        assert_eq!(order, vec![(0.5, 9), (1.0, 2), (1.0, 3), (2.0, 1)]);
    }

    #[test]
    fn level_integrates_only_after_warmup() {
        let mut l = Level::default();
        l.change(0.0, 1.0, 2); // value 2 from t=0
        l.change(3.0, 1.0, -1); // area over [1, 3] = 4
        l.close(5.0, 1.0); // + 1 * 2
        assert_eq!(l.area, 6.0);
    }

    #[test]
    fn flat_backlog_is_not_growth() {
        let flat: Vec<_> = (0..100).map(|t| (t as f64, (t % 3) as f64)).collect();
        assert!(!backlog_growing(&flat));
        let rising: Vec<_> = (0..100).map(|t| (t as f64, t as f64)).collect();
        assert!(backlog_growing(&rising));
    }
}
