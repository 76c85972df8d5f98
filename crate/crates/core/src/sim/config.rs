use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheConfig, CacheError};
use crate::device::{load_paper_model, Device, DeviceError, N_PREDICTORS};
use crate::eviction::{EnsembleParams, PolicyKind};
use crate::workload::{TrafficSpec, WorkloadError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation configuration: `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("cache invariant violated: {0}")]
    Cache(#[from] CacheError),
    #[error("simulation invariant violated: {0}")]
    Invariant(String),
}

impl SimError {
    /// True for errors caused by the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            SimError::Config { .. }
                | SimError::Workload(WorkloadError::Config { .. })
                | SimError::Workload(WorkloadError::Parse { .. })
                | SimError::Workload(WorkloadError::Validation { .. })
                | SimError::Workload(WorkloadError::Io(_))
                | SimError::Cache(CacheError::Config { .. })
        )
    }
}

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> SimError {
    SimError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Service-time distribution of a device tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceConfig {
    /// Exponential with the given rate (operations per second).
    Exponential { rate: f64 },
    /// Fixed time per operation, seconds.
    Constant { seconds: f64 },
    /// Fixed time per operation from a published device model.
    Device {
        device: Device,
        predictors: [f64; N_PREDICTORS],
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn default_floor() -> f64 {
    1e-6
}

impl ServiceConfig {
    /// Mean service time, seconds.
    pub fn mean_time(&self) -> Result<f64, SimError> {
        match *self {
            ServiceConfig::Exponential { rate } => Ok(1.0 / rate),
            ServiceConfig::Constant { seconds } => Ok(seconds),
            ServiceConfig::Device {
                device,
                predictors,
                floor,
            } => Ok(load_paper_model(device).per_operation_time(&predictors, floor)?),
        }
    }

    pub fn rate(&self) -> Result<f64, SimError> {
        Ok(1.0 / self.mean_time()?)
    }

    fn validate(&self, field: &str) -> Result<(), SimError> {
        let ok = match *self {
            ServiceConfig::Exponential { rate } => rate.is_finite() && rate > 0.0,
            ServiceConfig::Constant { seconds } => seconds.is_finite() && seconds > 0.0,
            ServiceConfig::Device { floor, .. } => floor.is_finite() && floor > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(config_err(field, "rates, times and floors must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvictionConfig {
    pub policy: PolicyKind,
    pub ensemble: EnsembleParams,
    /// Requests per polling iteration of a process's IO thread.
    pub poll_interval: u64,
}

impl Default for EvictionConfig {
    fn default() -> Self {
        EvictionConfig {
            policy: PolicyKind::Ws,
            ensemble: EnsembleParams::default(),
            poll_interval: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefetchConfig {
    pub enabled: bool,
    pub width: usize,
    pub history: usize,
}

impl Default for PrefetchConfig {
    fn default() -> Self {
        PrefetchConfig {
            enabled: false,
            width: 4,
            history: crate::prefetch::DEFAULT_HISTORY,
        }
    }
}

/// When to stop. With neither limit the whole trace is served to completion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Horizon {
    /// Simulated seconds; events after this are not processed.
    pub max_time: Option<f64>,
    /// Only the first `max_requests` requests of the trace are offered.
    pub max_requests: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub traffic: TrafficSpec,
    pub cache: CacheConfig,
    pub eviction: EvictionConfig,
    pub prefetch: PrefetchConfig,
    pub tier1: ServiceConfig,
    pub tier2: ServiceConfig,
    /// Tier-1 service threads per process.
    pub k_service_threads: usize,
    /// When set, all processes share one tier-2 pool of this many servers
    /// instead of one IO server each.
    pub tier2_shared_servers: Option<usize>,
    /// Merge a request for a page with an in-flight fetch of that page.
    pub coalesce: bool,
    /// Fill caches with the file's pages, in page order, before the run.
    pub prewarm: bool,
    pub horizon: Horizon,
    /// Fraction of requests whose arrivals are excluded from steady-state metrics.
    pub warmup_fraction: f64,
    /// Sim-time spacing of queue-length samples, seconds.
    pub sample_interval: f64,
    /// Verify the single-copy and capacity invariants after every event.
    pub check_invariants: bool,
    /// Seeds the workload and every other random stream.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            traffic: TrafficSpec::default(),
            cache: CacheConfig::default(),
            eviction: EvictionConfig::default(),
            prefetch: PrefetchConfig::default(),
            tier1: ServiceConfig::Exponential { rate: 1000.0 },
            tier2: ServiceConfig::Exponential { rate: 33.0 },
            k_service_threads: 16,
            tier2_shared_servers: None,
            coalesce: true,
            prewarm: false,
            horizon: Horizon::default(),
            warmup_fraction: 0.1,
            sample_interval: 1.0,
            check_invariants: cfg!(debug_assertions),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut traffic = self.traffic.clone();
        traffic.seed = self.seed;
        traffic.validate()?;
        self.cache.validate()?;
        self.eviction
            .ensemble
            .validate()
            .map_err(|e| config_err("eviction.ensemble", e))?;
        if self.eviction.poll_interval == 0 {
            return Err(config_err("eviction.poll_interval", "must be at least 1"));
        }
        if self.prefetch.enabled && self.prefetch.width == 0 {
            return Err(config_err("prefetch.width", "must be at least 1 when enabled"));
        }
        self.tier1.validate("tier1")?;
        self.tier2.validate("tier2")?;
        if self.k_service_threads == 0 {
            return Err(config_err("k_service_threads", "must be at least 1"));
        }
        if self.tier2_shared_servers == Some(0) {
            return Err(config_err("tier2_shared_servers", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(config_err("warmup_fraction", "must lie in [0, 1)"));
        }
        if !(self.sample_interval.is_finite() && self.sample_interval > 0.0) {
            return Err(config_err("sample_interval", "must be positive"));
        }
        if let Some(t) = self.horizon.max_time {
            if !(t > 0.0) {
                return Err(config_err("horizon.max_time", "must be positive"));
            }
        }
        if self.horizon.max_requests == Some(0) {
            return Err(config_err("horizon.max_requests", "must be positive"));
        }
        Ok(())
    }
}
