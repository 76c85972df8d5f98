//! Synthetic request streams and trace files.
//!
//! Two traffic models are provided:
//!
//! * **Poisson**: exponential inter-arrival times; the probability that a
//!   request targets a page decays exponentially with the page's age, and new
//!   pages join the population at a steady rate, giving a slowly evolving
//!   working set.
//! * **IRM**: independent draws from a Zipf popularity law over a fixed number
//!   of slots. A page that has received `popularity_cap` requests expires and
//!   its slot is taken over by a fresh page.
//!
//! All randomness flows from [`TrafficSpec::seed`] through a ChaCha8 stream,
//! so a given spec always yields the same sequence on every platform.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

/// RNG stream used for arrival generation.
const WORKLOAD_STREAM: u64 = 1;

/// Header line of the trace CSV format.
pub const TRACE_HEADER: &str = "arrival_time,file_id,offset,size,kind";

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid traffic configuration: field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("trace parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace validation error at line {line}: {message}")]
    Validation { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn config_err(field: &'static str, reason: impl Into<String>) -> WorkloadError {
    WorkloadError::Config {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    #[serde(rename = "R")]
    Read,
    #[serde(rename = "W")]
    Write,
}

impl RequestKind {
    pub fn as_char(self) -> char {
        match self {
            RequestKind::Read => 'R',
            RequestKind::Write => 'W',
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// One read or write access to a file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    /// Seconds since the start of the stream.
    pub arrival_time: f64,
    pub file_id: u32,
    /// Byte offset into the file.
    pub offset: u64,
    /// Bytes accessed, at least 1.
    pub size: u64,
    pub kind: RequestKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficModel {
    Poisson,
    Irm,
    Trace,
}

/// Parameters of a synthetic (or replayed) request stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficSpec {
    pub model: TrafficModel,
    pub n_requests: usize,
    /// Bytes per workload page.
    pub page_size: u64,
    /// Page population: total pages introduced (Poisson) or Zipf slots (IRM).
    pub n_pages: u64,
    /// Requests per second.
    pub arrival_rate: f64,
    pub read_fraction: f64,
    /// Bytes per request; must not exceed `page_size`.
    pub request_size: u64,
    /// IRM only.
    pub zipf_exponent: f64,
    /// Poisson only, seconds.
    pub mean_lifetime: f64,
    /// IRM only; requests a page may receive before it expires. 0 disables expiry.
    pub popularity_cap: u64,
    /// Poisson only; requests between page introductions. Defaults to
    /// `n_requests / n_pages`.
    pub page_intro_interval: Option<u64>,
    /// Trace model only.
    pub trace_path: Option<String>,
    pub file_id: u32,
    pub seed: u64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            model: TrafficModel::Poisson,
            n_requests: 1000,
            page_size: 8192,
            n_pages: 400,
            arrival_rate: 100.0,
            read_fraction: 1.0,
            request_size: 512,
            zipf_exponent: 1.0,
            mean_lifetime: 0.5,
            popularity_cap: 0,
            page_intro_interval: None,
            trace_path: None,
            file_id: 0,
            seed: 0,
        }
    }
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return Err(config_err("arrival_rate", "must be a positive finite rate"));
        }
        if self.n_pages == 0 {
            return Err(config_err("n_pages", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(config_err("read_fraction", "must lie in [0, 1]"));
        }
        if self.page_size == 0 {
            return Err(config_err("page_size", "must be positive"));
        }
        if self.request_size == 0 || self.request_size > self.page_size {
            return Err(config_err(
                "request_size",
                "must be positive and no larger than page_size",
            ));
        }
        match self.model {
            TrafficModel::Poisson => {
                if !(self.mean_lifetime.is_finite() && self.mean_lifetime > 0.0) {
                    return Err(config_err("mean_lifetime", "must be positive"));
                }
                if self.page_intro_interval == Some(0) {
                    return Err(config_err("page_intro_interval", "must be at least 1"));
                }
            }
            TrafficModel::Irm => {
                if !(self.zipf_exponent.is_finite() && self.zipf_exponent > 0.0) {
                    return Err(config_err("zipf_exponent", "must be positive"));
                }
            }
            TrafficModel::Trace => {
                if self.trace_path.is_none() {
                    return Err(config_err("trace_path", "required for the trace model"));
                }
            }
        }
        Ok(())
    }

    /// Number of pages addressable in the generated file.
    pub fn file_pages(&self) -> u64 {
        match self.model {
            TrafficModel::Irm if self.popularity_cap > 0 => {
                self.n_pages + self.n_requests as u64 / self.popularity_cap
            }
            _ => self.n_pages,
        }
    }

    pub fn file_size(&self) -> u64 {
        self.file_pages() * self.page_size
    }

    fn intro_interval(&self) -> u64 {
        self.page_intro_interval
            .unwrap_or_else(|| (self.n_requests as u64 / self.n_pages).max(1))
    }
}

/// Dispatches on `spec.model`.
pub fn generate(spec: &TrafficSpec) -> Result<Vec<Request>, WorkloadError> {
    match spec.model {
        TrafficModel::Poisson => generate_poisson(spec),
        TrafficModel::Irm => generate_irm(spec),
        TrafficModel::Trace => {
            spec.validate()?;
            let path = spec.trace_path.as_deref().unwrap_or_default();
            load_trace(path)
        }
    }
}

struct RequestBuilder<'a> {
    spec: &'a TrafficSpec,
    clock: f64,
    gaps: Exp<f64>,
    slots_per_page: u64,
}

impl<'a> RequestBuilder<'a> {
    fn new(spec: &'a TrafficSpec) -> Self {
        RequestBuilder {
            spec,
            clock: 0.0,
            gaps: Exp::new(spec.arrival_rate).expect("validated arrival rate"),
            slots_per_page: spec.page_size / spec.request_size,
        }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.clock += self.gaps.sample(rng);
        self.clock
    }

    fn build(&self, rng: &mut ChaCha8Rng, page: u64) -> Request {
        let slot = rng.gen_range(0..self.slots_per_page);
        let kind = if rng.gen::<f64>() < self.spec.read_fraction {
            RequestKind::Read
        } else {
            RequestKind::Write
        };
        Request {
            arrival_time: self.clock,
            file_id: self.spec.file_id,
            offset: page * self.spec.page_size + slot * self.spec.request_size,
            size: self.spec.request_size,
            kind,
        }
    }
}

/// Pages older than this many lifetimes carry less than e^-40 of the newest
/// page's weight and are dropped from the sampling population.
const LIFETIME_CUTOFF: f64 = 40.0;

/// Exponentially decaying page popularity over a growing page population.
pub fn generate_poisson(spec: &TrafficSpec) -> Result<Vec<Request>, WorkloadError> {
    if spec.model != TrafficModel::Poisson {
        return Err(config_err("model", "expected the poisson model"));
    }
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, WORKLOAD_STREAM);
    let mut builder = RequestBuilder::new(spec);
    let interval = spec.intro_interval();

    // (page, birth time), oldest first
    let mut live: std::collections::VecDeque<(u64, f64)> = Default::default();
    let mut introduced = 0u64;
    let mut weights = Vec::new();
    let mut out = Vec::with_capacity(spec.n_requests);

    for i in 0..spec.n_requests {
        let now = builder.advance(&mut rng);
        if introduced < spec.n_pages && (i as u64).is_multiple_of(interval) {
            live.push_back((introduced, now));
            introduced += 1;
        }
        let newest_birth = live.back().expect("at least one page").1;
        while live.len() > 1 {
            let (_, birth) = live[0];
            if (newest_birth - birth) / spec.mean_lifetime > LIFETIME_CUTOFF {
                live.pop_front();
            } else {
                break;
            }
        }
        // weight relative to the newest page: exp(-(now - birth)/tau) up to a common factor
        weights.clear();
        let mut total = 0.0;
        for &(_, birth) in &live {
            let w = ((birth - newest_birth) / spec.mean_lifetime).exp();
            total += w;
            weights.push(total);
        }
        let u = rng.gen::<f64>() * total;
        let idx = weights.partition_point(|&c| c <= u).min(live.len() - 1);
        out.push(builder.build(&mut rng, live[idx].0));
    }
    Ok(out)
}

/// Zipf selection probabilities of the IRM slots, most popular first.
pub fn irm_probabilities(n_pages: u64, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n_pages).map(|i| (i as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Independent reference model with Zipf popularity and page expiry.
pub fn generate_irm(spec: &TrafficSpec) -> Result<Vec<Request>, WorkloadError> {
    if spec.model != TrafficModel::Irm {
        return Err(config_err("model", "expected the irm model"));
    }
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, WORKLOAD_STREAM);
    let mut builder = RequestBuilder::new(spec);

    let mut cdf = irm_probabilities(spec.n_pages, spec.zipf_exponent);
    let mut acc = 0.0;
    for p in cdf.iter_mut() {
        acc += *p;
        *p = acc;
    }
    let mut slot_page: Vec<u64> = (0..spec.n_pages).collect();
    let mut slot_hits = vec![0u64; spec.n_pages as usize];
    let mut next_page = spec.n_pages;
    let mut out = Vec::with_capacity(spec.n_requests);

    for _ in 0..spec.n_requests {
        builder.advance(&mut rng);
        let u = rng.gen::<f64>() * acc;
        let slot = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        out.push(builder.build(&mut rng, slot_page[slot]));
        slot_hits[slot] += 1;
        if spec.popularity_cap > 0 && slot_hits[slot] >= spec.popularity_cap {
            slot_page[slot] = next_page;
            slot_hits[slot] = 0;
            next_page += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    arrival_time: f64,
    file_id: u32,
    offset: u64,
    size: u64,
    kind: RequestKind,
}

/// Parses a trace CSV from a reader. See [`TRACE_HEADER`].
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<Request>, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| WorkloadError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let expected: Vec<&str> = TRACE_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(WorkloadError::Parse {
            line: 1,
            message: format!("expected header `{TRACE_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    let mut last_time = 0.0f64;
    for record in rdr.records() {
        let record = record.map_err(|e| WorkloadError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: TraceRow = record
            .deserialize(None)
            .map_err(|e| WorkloadError::Parse {
                line,
                message: e.to_string(),
            })?;
        if !(row.arrival_time.is_finite() && row.arrival_time >= 0.0) {
            return Err(WorkloadError::Validation {
                line,
                message: "arrival_time must be a non-negative number".into(),
            });
        }
        if row.size == 0 {
            return Err(WorkloadError::Validation {
                line,
                message: "size must be at least 1".into(),
            });
        }
        if row.arrival_time < last_time {
            return Err(WorkloadError::Validation {
                line,
                message: format!(
                    "arrival_time {} precedes previous {}",
                    row.arrival_time, last_time
                ),
            });
        }
        last_time = row.arrival_time;
        out.push(Request {
            arrival_time: row.arrival_time,
            file_id: row.file_id,
            offset: row.offset,
            size: row.size,
            kind: row.kind,
        });
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Request>, WorkloadError> {
    let file = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(file))
}

/// Writes requests in the trace CSV format. Times use the shortest
/// representation that parses back to the same `f64`.
pub fn write_trace<W: Write>(mut writer: W, requests: &[Request]) -> std::io::Result<()> {
    writeln!(writer, "{TRACE_HEADER}")?;
    for r in requests {
        writeln!(
            writer,
            "{:?},{},{},{},{}",
            r.arrival_time, r.file_id, r.offset, r.size, r.kind
        )?;
    }
    writer.flush()
}
