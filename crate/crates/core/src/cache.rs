//! Tier-1 page cache.
//!
//! Each process owns a fully associative, write-back, demand-filled cache of
//! `n_lines` lines. Pages are assigned to owning processes by a deterministic
//! [`Mapping`], so a page can only ever be resident in its owner's cache.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefetch::PrefetchBuffer;
use crate::rng::mix64;
use crate::workload::RequestKind;

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("invalid cache configuration: field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("page {0} is already resident")]
    AlreadyResident(PageTag),
    #[error("victim {0} is not resident")]
    VictimNotResident(PageTag),
    #[error("cannot select a victim from an empty cache")]
    Empty,
}

/// Identity of a cached page. Ordered by file, then page number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageTag {
    pub file_id: u32,
    pub page: u64,
}

impl PageTag {
    pub fn new(file_id: u32, page: u64) -> Self {
        PageTag { file_id, page }
    }
}

impl std::fmt::Display for PageTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.file_id, self.page)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheLine {
    pub tag: PageTag,
    pub valid: bool,
    pub dirty: bool,
    /// Logical time of the most recent access.
    pub last_access: u64,
    /// Accesses since the line was filled.
    pub freq: u64,
}

impl CacheLine {
    const EMPTY: CacheLine = CacheLine {
        tag: PageTag { file_id: 0, page: 0 },
        valid: false,
        dirty: false,
        last_access: 0,
        freq: 0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    RoundRobin,
    Random,
    Block,
    BlockCyclic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    /// Lines per process.
    pub n_lines: usize,
    /// Bytes per line; a power of two, at least 512.
    pub line_size: u64,
    pub n_processes: usize,
    pub mapping: Mapping,
    /// Pages per block for block-cyclic mapping.
    pub block_size: u64,
    /// Total page count of the file; required by block mapping.
    pub total_pages: Option<u64>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            n_lines: 64,
            line_size: 8192,
            n_processes: 1,
            mapping: Mapping::RoundRobin,
            block_size: 1,
            total_pages: None,
        }
    }
}

fn config_err(field: &'static str, reason: &str) -> CacheError {
    CacheError::Config {
        field,
        reason: reason.to_string(),
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if self.n_lines == 0 {
            return Err(config_err("n_lines", "must be at least 1"));
        }
        if self.line_size < 512 || !self.line_size.is_power_of_two() {
            return Err(config_err("line_size", "must be a power of two >= 512"));
        }
        if self.n_processes == 0 {
            return Err(config_err("n_processes", "must be at least 1"));
        }
        match self.mapping {
            Mapping::BlockCyclic if self.block_size == 0 => {
                Err(config_err("block_size", "must be at least 1"))
            }
            Mapping::Block if self.total_pages.unwrap_or(0) == 0 => Err(config_err(
                "total_pages",
                "block mapping needs the total page count",
            )),
            _ => Ok(()),
        }
    }
}

/// Page number holding byte `offset`.
pub fn page_of(offset: u64, line_size: u64) -> u64 {
    offset / line_size
}

/// Owning process of `page`.
///
/// Random mapping uses the SplitMix64 finalizer ([`mix64`]) of the page
/// number, reduced modulo the process count.
pub fn map_page(page: u64, config: &CacheConfig) -> Result<usize, CacheError> {
    let p = config.n_processes as u64;
    if p == 0 {
        return Err(config_err("n_processes", "must be at least 1"));
    }
    let owner = match config.mapping {
        Mapping::RoundRobin => page % p,
        Mapping::Random => mix64(page) % p,
        Mapping::Block => {
            let total = config
                .total_pages
                .filter(|&t| t > 0)
                .ok_or_else(|| config_err("total_pages", "block mapping needs the total page count"))?;
            // pages past the declared total fold onto the last process
            (page / total.div_ceil(p)).min(p - 1)
        }
        Mapping::BlockCyclic => {
            if config.block_size == 0 {
                return Err(config_err("block_size", "must be at least 1"));
            }
            (page / config.block_size) % p
        }
    };
    Ok(owner as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Hit,
    Miss,
    PrefetchHit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub outcome: Outcome,
    pub owner: usize,
    pub page: u64,
    /// Set when a prefetch promotion displaced a line.
    pub evicted: Option<Eviction>,
}

/// A line displaced by a fill. Dirty evictions must be written back to tier 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub tag: PageTag,
    pub dirty: bool,
}

/// Chooses which resident page to evict from a full cache.
pub trait VictimSelector {
    fn select_victim(&mut self, cache: &Tier1Cache) -> Result<PageTag, CacheError>;
}

impl<F> VictimSelector for F
where
    F: FnMut(&Tier1Cache) -> Result<PageTag, CacheError>,
{
    fn select_victim(&mut self, cache: &Tier1Cache) -> Result<PageTag, CacheError> {
        self(cache)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
    pub prefetch_hits: u64,
    pub evictions: u64,
    pub dirty_evictions: u64,
}

impl CacheCounters {
    pub fn accesses(&self) -> u64 {
        self.hits + self.misses + self.prefetch_hits
    }
}

/// One process's tier-1 cache.
#[derive(Debug, Clone)]
pub struct Tier1Cache {
    owner: usize,
    lines: Vec<CacheLine>,
    index: HashMap<PageTag, usize>,
    free: Vec<usize>,
    counters: CacheCounters,
}

impl Tier1Cache {
    pub fn new(owner: usize, n_lines: usize) -> Self {
        Tier1Cache {
            owner,
            lines: vec![CacheLine::EMPTY; n_lines],
            index: HashMap::with_capacity(n_lines),
            // pop() hands out slot 0 first
            free: (0..n_lines).rev().collect(),
            counters: CacheCounters::default(),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn capacity(&self) -> usize {
        self.lines.len()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.free.is_empty()
    }

    pub fn contains(&self, tag: PageTag) -> bool {
        self.index.contains_key(&tag)
    }

    pub fn line(&self, tag: PageTag) -> Option<&CacheLine> {
        self.index.get(&tag).map(|&slot| &self.lines[slot])
    }

    /// Valid lines in slot order.
    pub fn valid_lines(&self) -> impl Iterator<Item = &CacheLine> + '_ {
        self.lines.iter().filter(|l| l.valid)
    }

    pub fn counters(&self) -> &CacheCounters {
        &self.counters
    }

    /// Demand access. Hits update the line in place. A page found in the
    /// prefetch buffer is removed from it and promoted into the cache. Misses
    /// only report; the caller decides when to [`fill`](Self::fill).
    pub fn access(
        &mut self,
        tag: PageTag,
        kind: RequestKind,
        now: u64,
        prefetch: Option<&mut PrefetchBuffer>,
        selector: &mut dyn VictimSelector,
    ) -> Result<AccessResult, CacheError> {
        let mut result = AccessResult {
            outcome: Outcome::Hit,
            owner: self.owner,
            page: tag.page,
            evicted: None,
        };
        if let Some(&slot) = self.index.get(&tag) {
            let line = &mut self.lines[slot];
            debug_assert!(now > line.last_access || line.freq == 0 || now == line.last_access);
            line.freq = line.freq.saturating_add(1);
            line.last_access = now;
            if kind == RequestKind::Write {
                line.dirty = true;
            }
            self.counters.hits += 1;
            return Ok(result);
        }
        if let Some(buffer) = prefetch {
            if buffer.take(tag) {
                result.outcome = Outcome::PrefetchHit;
                result.evicted = self.install(tag, now, selector)?;
                if kind == RequestKind::Write {
                    self.mark_dirty(tag);
                }
                self.counters.prefetch_hits += 1;
                return Ok(result);
            }
        }
        result.outcome = Outcome::Miss;
        self.counters.misses += 1;
        Ok(result)
    }

    /// Installs a non-resident page, evicting the selector's choice when the
    /// cache is full. The new line is clean with `freq = 1`.
    pub fn fill(
        &mut self,
        tag: PageTag,
        now: u64,
        selector: &mut dyn VictimSelector,
    ) -> Result<Option<Eviction>, CacheError> {
        self.install(tag, now, selector)
    }

    fn install(
        &mut self,
        tag: PageTag,
        now: u64,
        selector: &mut dyn VictimSelector,
    ) -> Result<Option<Eviction>, CacheError> {
        if self.contains(tag) {
            return Err(CacheError::AlreadyResident(tag));
        }
        let mut evicted = None;
        let slot = match self.free.pop() {
            Some(slot) => slot,
            None => {
                let victim = selector.select_victim(self)?;
                let slot = self
                    .index
                    .remove(&victim)
                    .ok_or(CacheError::VictimNotResident(victim))?;
                let dirty = self.lines[slot].dirty;
                self.counters.evictions += 1;
                if dirty {
                    self.counters.dirty_evictions += 1;
                }
                evicted = Some(Eviction { tag: victim, dirty });
                slot
            }
        };
        self.lines[slot] = CacheLine {
            tag,
            valid: true,
            dirty: false,
            last_access: now,
            freq: 1,
        };
        self.index.insert(tag, slot);
        Ok(evicted)
    }

    /// Sets the dirty bit of a resident line; used for write-allocate fills.
    pub fn mark_dirty(&mut self, tag: PageTag) -> bool {
        match self.index.get(&tag) {
            Some(&slot) => {
                self.lines[slot].dirty = true;
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lru(cache: &Tier1Cache) -> Result<PageTag, CacheError> {
        cache
            .valid_lines()
            .min_by_key(|l| (l.last_access, l.tag))
            .map(|l| l.tag)
            .ok_or(CacheError::Empty)
    }

    fn t(page: u64) -> PageTag {
        PageTag::new(0, page)
    }

    #[test]
    fn page_numbers() {
        assert_eq!(page_of(0, 524288), 0);
        assert_eq!(page_of(524288, 524288), 1);
        assert_eq!(page_of(1048575, 524288), 1);
    }

    fn cfg(mapping: Mapping, p: usize) -> CacheConfig {
        CacheConfig {
            n_processes: p,
            mapping,
            ..CacheConfig::default()
        }
    }

    #[test]
    fn mapping_policies() {
        assert_eq!(map_page(7, &cfg(Mapping::RoundRobin, 4)).unwrap(), 3);
        let bc = CacheConfig {
            block_size: 2,
            ..cfg(Mapping::BlockCyclic, 2)
        };
        assert_eq!(map_page(5, &bc).unwrap(), 0);
        let block = CacheConfig {
            total_pages: Some(10),
            ..cfg(Mapping::Block, 4)
        };
        // ceil(10/4) = 3 pages per process
        let owners: Vec<usize> = (0..10).map(|p| map_page(p, &block).unwrap()).collect();
        assert_eq!(owners, [0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
        for mapping in [Mapping::RoundRobin, Mapping::Random, Mapping::BlockCyclic] {
            for page in 0..50 {
                assert_eq!(map_page(page, &cfg(mapping, 1)).unwrap(), 0);
            }
        }
    }

    #[test]
    fn random_mapping_is_fixed_hash() {
        let c = cfg(Mapping::Random, 8);
        for page in 0..100u64 {
            assert_eq!(map_page(page, &c).unwrap() as u64, mix64(page) % 8);
        }
    }

    #[test]
    fn block_mapping_needs_total() {
        let c = cfg(Mapping::Block, 4);
        assert!(matches!(
            map_page(3, &c),
            Err(CacheError::Config { field: "total_pages", .. })
        ));
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CacheConfig::default().validate().is_ok());
        for bad in [
            CacheConfig { n_lines: 0, ..CacheConfig::default() },
            CacheConfig { line_size: 256, ..CacheConfig::default() },
            CacheConfig { line_size: 3000, ..CacheConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn cold_miss_then_hit() {
        let mut c = Tier1Cache::new(0, 4);
        let r = c.access(t(1), RequestKind::Read, 1, None, &mut lru).unwrap();
        assert_eq!(r.outcome, Outcome::Miss);
        c.fill(t(1), 1, &mut lru).unwrap();
        let r = c.access(t(1), RequestKind::Read, 2, None, &mut lru).unwrap();
        assert_eq!(r.outcome, Outcome::Hit);
        assert_eq!(c.line(t(1)).unwrap().freq, 2);
        assert_eq!(c.line(t(1)).unwrap().last_access, 2);
        assert_eq!(c.counters().accesses(), 2);
    }

    #[test]
    fn write_hit_then_dirty_eviction() {
        let mut c = Tier1Cache::new(0, 1);
        assert_eq!(c.fill(t(1), 1, &mut lru).unwrap(), None);
        c.access(t(1), RequestKind::Write, 2, None, &mut lru).unwrap();
        assert!(c.line(t(1)).unwrap().dirty);
        let ev = c.fill(t(2), 3, &mut lru).unwrap();
        assert_eq!(ev, Some(Eviction { tag: t(1), dirty: true }));
        assert!(!c.line(t(2)).unwrap().dirty);
        assert_eq!(c.counters().dirty_evictions, 1);
    }

    #[test]
    fn fill_rules() {
        let mut c = Tier1Cache::new(0, 2);
        assert_eq!(c.fill(t(1), 1, &mut lru).unwrap(), None);
        assert_eq!(c.fill(t(1), 2, &mut lru), Err(CacheError::AlreadyResident(t(1))));
        let mut bogus = |_: &Tier1Cache| Ok(t(99));
        c.fill(t(2), 3, &mut lru).unwrap();
        assert_eq!(c.fill(t(3), 4, &mut bogus), Err(CacheError::VictimNotResident(t(99))));
    }

    #[test]
    fn prefetch_hit_promotes() {
        let mut c = Tier1Cache::new(0, 1);
        let mut buf = PrefetchBuffer::new(2);
        c.fill(t(1), 1, &mut lru).unwrap();
        assert!(buf.insert(t(5)));
        let r = c
            .access(t(5), RequestKind::Read, 2, Some(&mut buf), &mut lru)
            .unwrap();
        assert_eq!(r.outcome, Outcome::PrefetchHit);
        assert_eq!(r.evicted, Some(Eviction { tag: t(1), dirty: false }));
        assert!(c.contains(t(5)));
        assert!(!buf.contains(t(5)));
    }
}
