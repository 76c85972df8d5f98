//! Stride-based prefetching.
//!
//! A [`StreamIdentifier`] watches the miss stream of one process. When the
//! last three misses are evenly spaced by a non-zero stride it proposes the
//! next pages along that stride, which are staged in a bounded
//! [`PrefetchBuffer`] until a demand access promotes them into the cache.

use std::collections::{BTreeSet, VecDeque};

use crate::cache::{PageTag, Tier1Cache};

pub const DEFAULT_HISTORY: usize = 4;

/// Bounded staging area for prefetched pages. Entries leave only by
/// promotion; a full buffer blocks further prefetches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefetchBuffer {
    width: usize,
    entries: BTreeSet<PageTag>,
    hits: u64,
    issued: u64,
}

impl PrefetchBuffer {
    pub fn new(width: usize) -> Self {
        PrefetchBuffer {
            width,
            entries: BTreeSet::new(),
            hits: 0,
            issued: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn free_slots(&self) -> usize {
        self.width - self.entries.len()
    }

    pub fn contains(&self, tag: PageTag) -> bool {
        self.entries.contains(&tag)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    /// Stages a page. Returns false when the buffer is full or already
    /// holds the page.
    pub fn insert(&mut self, tag: PageTag) -> bool {
        if self.entries.len() >= self.width || !self.entries.insert(tag) {
            return false;
        }
        self.issued += 1;
        true
    }

    /// Removes a staged page for promotion, counting a prefetch hit.
    pub fn take(&mut self, tag: PageTag) -> bool {
        let found = self.entries.remove(&tag);
        if found {
            self.hits += 1;
        }
        found
    }
}

/// Tracks the recent miss stream and detects a constant stride.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamIdentifier {
    capacity: usize,
    file_id: Option<u32>,
    history: VecDeque<u64>,
    stride: Option<i64>,
}

impl Default for StreamIdentifier {
    fn default() -> Self {
        Self::new(DEFAULT_HISTORY)
    }
}

impl StreamIdentifier {
    /// `history` is clamped to at least 3 entries.
    pub fn new(history: usize) -> Self {
        let capacity = history.max(3);
        StreamIdentifier {
            capacity,
            file_id: None,
            history: VecDeque::with_capacity(capacity),
            stride: None,
        }
    }

    pub fn history(&self) -> impl Iterator<Item = u64> + '_ {
        self.history.iter().copied()
    }

    pub fn detected_stride(&self) -> Option<i64> {
        self.stride
    }

    pub fn observe_miss(&mut self, tag: PageTag) {
        if self.file_id != Some(tag.file_id) {
            // a stream never spans files
            self.history.clear();
            self.file_id = Some(tag.file_id);
        }
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(tag.page);
        self.stride = None;
        let n = self.history.len();
        if n >= 3 {
            let a = self.history[n - 3] as i128;
            let b = self.history[n - 2] as i128;
            let c = self.history[n - 1] as i128;
            let d = c - b;
            if d != 0 && b - a == d {
                self.stride = i64::try_from(d).ok();
            }
        }
    }

    /// Next pages along the detected stride, limited to the buffer's free
    /// slots, skipping pages already cached or staged.
    pub fn propose_prefetches(&self, buffer: &PrefetchBuffer, cache: &Tier1Cache) -> Vec<PageTag> {
        let (Some(stride), Some(&last), Some(file_id)) =
            (self.stride, self.history.back(), self.file_id)
        else {
            return Vec::new();
        };
        let free = buffer.free_slots();
        (1..=free as i128)
            .map(|j| last as i128 + j * stride as i128)
            .take_while(|&p| p >= 0 && p <= u64::MAX as i128)
            .map(|p| PageTag::new(file_id, p as u64))
            .filter(|&tag| !cache.contains(tag) && !buffer.contains(tag))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(page: u64) -> PageTag {
        PageTag::new(0, page)
    }

    fn observed(pages: &[u64]) -> StreamIdentifier {
        let mut sid = StreamIdentifier::default();
        for &p in pages {
            sid.observe_miss(t(p));
        }
        sid
    }

    #[test]
    fn stride_detection() {
        assert_eq!(observed(&[10, 12, 14]).detected_stride(), Some(2));
        assert_eq!(observed(&[10, 12, 15]).detected_stride(), None);
        assert_eq!(observed(&[5, 5, 5]).detected_stride(), None);
        assert_eq!(observed(&[9, 6, 3]).detected_stride(), Some(-3));
        assert_eq!(observed(&[10, 12]).detected_stride(), None);
    }

    #[test]
    fn history_is_bounded() {
        let sid = observed(&[1, 2, 3, 4, 5, 6]);
        assert_eq!(sid.history().collect::<Vec<_>>(), [3, 4, 5, 6]);
        let mut other = observed(&[1, 2, 3]);
        other.observe_miss(PageTag::new(1, 4));
        assert_eq!(other.history().count(), 1);
        assert_eq!(other.detected_stride(), None);
    }

    #[test]
    fn proposals_follow_stride() {
        let sid = observed(&[10, 12, 14]);
        let buf = PrefetchBuffer::new(4);
        let cache = Tier1Cache::new(0, 8);
        // 14 + 2j for j = 1..=4
        let expected: Vec<PageTag> = (1..=4).map(|j| t(14 + 2 * j)).collect();
        assert_eq!(sid.propose_prefetches(&buf, &cache), expected);
    }

    #[test]
    fn proposals_respect_capacity_and_residency() {
        let sid = observed(&[10, 12, 14]);
        let mut buf = PrefetchBuffer::new(2);
        let mut cache = Tier1Cache::new(0, 8);
        let mut none = |_: &Tier1Cache| unreachable!();
        cache.fill(t(16), 1, &mut none).unwrap();
        cache.fill(t(18), 2, &mut none).unwrap();
        assert!(sid.propose_prefetches(&buf, &cache).is_empty());
        assert!(buf.insert(t(100)));
        assert!(buf.insert(t(101)));
        assert!(!buf.insert(t(102)));
        assert!(sid.propose_prefetches(&buf, &cache).is_empty());
    }

    #[test]
    fn negative_pages_are_not_proposed() {
        let sid = observed(&[6, 4, 2]);
        let buf = PrefetchBuffer::new(4);
        let cache = Tier1Cache::new(0, 8);
        assert_eq!(sid.propose_prefetches(&buf, &cache), vec![t(0)]);
    }

    #[test]
    fn buffer_counts() {
        let mut buf = PrefetchBuffer::new(2);
        assert!(buf.insert(t(1)));
        assert!(!buf.insert(t(1)));
        assert!(buf.take(t(1)));
        assert!(!buf.take(t(1)));
        assert_eq!((buf.issued(), buf.hits(), buf.len()), (1, 1, 0));
    }
}
