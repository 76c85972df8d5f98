//! Victim selection: single-policy experts and the weight-sharing ensemble.
//!
//! The ensemble asks every expert (LRU, LFU, Random) for a victim on each
//! eviction, logs all of their choices for the current epoch, and follows the
//! expert with the highest probability. Once per polling iteration the caller
//! reports that iteration's misses; a miss on a page an expert chose to evict
//! during the current epoch counts as a misprediction for that expert. Every
//! `epoch_width` iterations the weights are adjusted, part of the lost weight
//! is shared back out to all experts, and the probabilities are renormalized.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheError, PageTag, Tier1Cache, VictimSelector};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expert {
    Lru,
    Lfu,
    Random,
}

/// The expert's choice of victim. Ties go to the lowest page.
pub fn expert_victim(
    expert: Expert,
    cache: &Tier1Cache,
    rng: &mut ChaCha8Rng,
) -> Result<PageTag, CacheError> {
    let victim = match expert {
        Expert::Lru => cache
            .valid_lines()
            .min_by_key(|l| (l.last_access, l.tag))
            .map(|l| l.tag),
        Expert::Lfu => cache
            .valid_lines()
            .min_by_key(|l| (l.freq, l.tag))
            .map(|l| l.tag),
        Expert::Random => {
            let n = cache.len();
            if n == 0 {
                None
            } else {
                let pick = rng.gen_range(0..n);
                cache.valid_lines().nth(pick).map(|l| l.tag)
            }
        }
    };
    victim.ok_or(CacheError::Empty)
}

/// Weight update rule applied at epoch boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// Experts below the threshold are exempt; the rest keep `w * beta^l`.
    Corrected,
    /// Every expert keeps `w - w * beta^l`, with no threshold.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleParams {
    pub experts: Vec<Expert>,
    /// Share rate for redistributing lost weight.
    pub alpha: f64,
    /// Penalty base, in (0, 1).
    pub beta: f64,
    /// Polling iterations per epoch.
    pub epoch_width: u64,
    /// Fraction of the epoch's misses an expert must mispredict to be penalized.
    pub threshold: f64,
    pub mode: PenaltyMode,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            experts: vec![Expert::Lru, Expert::Lfu, Expert::Random],
            alpha: 0.5,
            beta: 0.5,
            epoch_width: 4,
            threshold: 0.25,
            mode: PenaltyMode::Corrected,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.experts.is_empty() {
            return Err("experts: at least one expert is required".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err("alpha: must lie in [0, 1]".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err("beta: must lie in (0, 1)".into());
        }
        if self.epoch_width == 0 {
            return Err("epoch_width: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err("threshold: must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictionDecision {
    pub victim: PageTag,
    pub chosen_expert: usize,
    pub per_expert_choices: Vec<PageTag>,
}

/// Weight-sharing ensemble of eviction experts.
#[derive(Debug, Clone)]
pub struct ExpertEnsemble {
    params: EnsembleParams,
    weights: Vec<f64>,
    probs: Vec<f64>,
    predictions: Vec<HashSet<PageTag>>,
    mispred: Vec<u64>,
    epoch_misses: u64,
    iter: u64,
    rng: ChaCha8Rng,
    chosen_counts: Vec<u64>,
}

/// Weights are rescaled once their sum drops below this. The update is
/// homogeneous in the weights, so rescaling leaves the probabilities intact.
const RESCALE_BELOW: f64 = 1e-200;

impl ExpertEnsemble {
    pub fn new(params: EnsembleParams, seed: u64, stream: u64) -> Self {
        let n = params.experts.len();
        let w = 1.0 / n as f64;
        ExpertEnsemble {
            weights: vec![w; n],
            probs: vec![w; n],
            predictions: vec![HashSet::new(); n],
            mispred: vec![0; n],
            epoch_misses: 0,
            iter: 0,
            rng: stream_rng(seed, stream),
            chosen_counts: vec![0; n],
            params,
        }
    }

    pub fn params(&self) -> &EnsembleParams {
        &self.params
    }

    pub fn n_experts(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mispredictions(&self) -> &[u64] {
        &self.mispred
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    /// How often each expert's choice was followed.
    pub fn chosen_counts(&self) -> &[u64] {
        &self.chosen_counts
    }

    pub fn predictions(&self, expert: usize) -> &HashSet<PageTag> {
        &self.predictions[expert]
    }

    /// Replaces the weights and recomputes probabilities. For tests and
    /// restoring saved state.
    pub fn set_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.weights.len());
        self.weights.copy_from_slice(weights);
        self.renormalize();
    }

    /// Index of the most probable expert; ties go to the lowest index.
    pub fn leading_expert(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn get_victim(&mut self, cache: &Tier1Cache) -> Result<EvictionDecision, CacheError> {
        let chosen = self.leading_expert();
        let mut choices = Vec::with_capacity(self.n_experts());
        for i in 0..self.n_experts() {
            let v = expert_victim(self.params.experts[i], cache, &mut self.rng)?;
            self.predictions[i].insert(v);
            choices.push(v);
        }
        self.chosen_counts[chosen] += 1;
        Ok(EvictionDecision {
            victim: choices[chosen],
            chosen_expert: chosen,
            per_expert_choices: choices,
        })
    }

    /// Accounts one polling iteration's misses and, at epoch boundaries,
    /// adjusts weights and probabilities. Returns true when an adjustment ran.
    pub fn record_misses_and_adjust(&mut self, misses: &BTreeSet<PageTag>) -> bool {
        self.iter += 1;
        for page in misses {
            for (i, pred) in self.predictions.iter().enumerate() {
                if pred.contains(page) {
                    self.mispred[i] += 1;
                }
            }
        }
        self.epoch_misses += misses.len() as u64;
        if !self.iter.is_multiple_of(self.params.epoch_width) {
            return false;
        }
        self.adjust();
        for pred in &mut self.predictions {
            pred.clear();
        }
        self.mispred.iter_mut().for_each(|m| *m = 0);
        self.epoch_misses = 0;
        true
    }

    fn adjust(&mut self) {
        let n = self.n_experts() as f64;
        let prev = self.weights.clone();
        let bar = self.params.threshold * self.epoch_misses as f64;
        for (w, &l) in self.weights.iter_mut().zip(&self.mispred) {
            let d = self.params.beta.powf(l as f64);
            match self.params.mode {
                PenaltyMode::Corrected => {
                    if l > 0 && l as f64 >= bar {
                        *w *= d;
                    }
                }
                PenaltyMode::Literal => *w -= *w * d,
            }
        }
        let lost: f64 = prev.iter().zip(&self.weights).map(|(p, w)| p - w).sum();
        let share = self.params.alpha * lost / n;
        for w in &mut self.weights {
            *w += share;
        }
        self.renormalize();
    }

    fn renormalize(&mut self) {
        let den: f64 = self.weights.iter().sum();
        if !(den > 0.0 && den.is_finite()) {
            // every weight was wiped out; keep the previous probabilities
            return;
        }
        for (p, w) in self.probs.iter_mut().zip(&self.weights) {
            *p = w / den;
        }
        if den < RESCALE_BELOW {
            for w in &mut self.weights {
                *w /= den;
            }
        }
    }
}

/// Eviction policy of one process. Each process owns exactly one, so the
/// inline RNG of the single-expert variant is not worth boxing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum EvictionPolicy {
    Single { expert: Expert, rng: ChaCha8Rng },
    WeightSharing(Box<ExpertEnsemble>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Lru,
    Lfu,
    Random,
    Ws,
}

impl EvictionPolicy {
    pub fn new(kind: PolicyKind, params: &EnsembleParams, seed: u64, stream: u64) -> Self {
        let single = |expert| EvictionPolicy::Single {
            expert,
            rng: stream_rng(seed, stream),
        };
        match kind {
            PolicyKind::Lru => single(Expert::Lru),
            PolicyKind::Lfu => single(Expert::Lfu),
            PolicyKind::Random => single(Expert::Random),
            PolicyKind::Ws => EvictionPolicy::WeightSharing(Box::new(ExpertEnsemble::new(
                params.clone(),
                seed,
                stream,
            ))),
        }
    }

    pub fn ensemble(&self) -> Option<&ExpertEnsemble> {
        match self {
            EvictionPolicy::WeightSharing(e) => Some(e),
            EvictionPolicy::Single { .. } => None,
        }
    }

    /// Feeds one polling iteration's misses to the ensemble; a no-op for
    /// single-expert policies.
    pub fn end_iteration(&mut self, misses: &BTreeSet<PageTag>) {
        if let EvictionPolicy::WeightSharing(e) = self {
            e.record_misses_and_adjust(misses);
        }
    }
}

impl VictimSelector for EvictionPolicy {
    fn select_victim(&mut self, cache: &Tier1Cache) -> Result<PageTag, CacheError> {
        match self {
            EvictionPolicy::Single { expert, rng } => expert_victim(*expert, cache, rng),
            EvictionPolicy::WeightSharing(e) => e.get_victim(cache).map(|d| d.victim),
        }
    }
}
