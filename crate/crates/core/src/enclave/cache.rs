use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::filters::{SubFilter, SubFilterId};

/// Default enclave cache budget.
pub const DEFAULT_CACHE_BYTES: usize = 128 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub budget: usize,
    pub bytes_used: usize,
    pub entries: usize,
    /// Boundary loads performed since creation.
    pub loads: u64,
    pub hits: u64,
    pub evictions: u64,
}

#[derive(Debug)]
struct Entry {
    filter: Arc<SubFilter>,
    bytes: usize,
    last_used: u64,
}

/// Byte-budgeted LRU cache of deserialized sub-filters, charged at their
/// serialized record size.
#[derive(Debug)]
pub struct SubFilterCache {
    budget: usize,
    used: usize,
    entries: HashMap<SubFilterId, Entry>,
    tick: u64,
    loads: u64,
    hits: u64,
    evictions: u64,
}

/// A load that can never fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow {
    pub needed: usize,
    pub budget: usize,
}

impl SubFilterCache {
    pub fn new(budget: usize) -> Self {
        SubFilterCache {
            budget,
            used: 0,
            entries: HashMap::new(),
            tick: 0,
            loads: 0,
            hits: 0,
            evictions: 0,
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            budget: self.budget,
            bytes_used: self.used,
            entries: self.entries.len(),
            loads: self.loads,
            hits: self.hits,
            evictions: self.evictions,
        }
    }

    pub fn contains(&self, id: SubFilterId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&mut self, id: SubFilterId) -> Option<Arc<SubFilter>> {
        self.tick += 1;
        let tick = self.tick;
        let entry = self.entries.get_mut(&id)?;
        entry.last_used = tick;
        self.hits += 1;
        Some(entry.filter.clone())
    }

    /// Stores a freshly loaded sub-filter, evicting least-recently-used
    /// entries outside `pinned` until it fits.
    pub fn insert_loaded(
        &mut self,
        filter: SubFilter,
        bytes: usize,
        pinned: &HashSet<SubFilterId>,
    ) -> Result<Arc<SubFilter>, Overflow> {
        let id = filter.id();
        self.loads += 1;
        self.invalidate(id);
        let overflow = Overflow {
            needed: bytes,
            budget: self.budget,
        };
        if bytes > self.budget {
            return Err(overflow);
        }
        while self.used + bytes > self.budget {
            let victim = self
                .entries
                .iter()
                .filter(|(k, _)| !pinned.contains(k))
                .min_by_key(|(_, e)| e.last_used)
                .map(|(k, _)| *k)
                .ok_or(overflow)?;
            self.invalidate(victim);
            self.evictions += 1;
        }
        self.tick += 1;
        let filter = Arc::new(filter);
        self.used += bytes;
        self.entries.insert(
            id,
            Entry {
                filter: filter.clone(),
                bytes,
                last_used: self.tick,
            },
        );
        Ok(filter)
    }

    /// Drops a stale entry; a no-op when absent.
    pub fn invalidate(&mut self, id: SubFilterId) {
        if let Some(e) = self.entries.remove(&id) {
            self.used -= e.bytes;
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.used = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterParams;

    fn filter(path: &str) -> SubFilter {
        SubFilter::new(FilterParams::new(16, 8, 2).unwrap(), path.parse().unwrap())
    }

    #[test]
    fn evicts_least_recently_used() {
        let mut c = SubFilterCache::new(30);
        let none = HashSet::new();
        c.insert_loaded(filter("0"), 10, &none).unwrap();
        c.insert_loaded(filter("10"), 10, &none).unwrap();
        c.insert_loaded(filter("11"), 10, &none).unwrap();
        assert!(c.get("0".parse().unwrap()).is_some());
        c.insert_loaded(filter("010"), 10, &none).unwrap();
        assert!(!c.contains("10".parse().unwrap()));
        assert!(c.contains("0".parse().unwrap()));
        let s = c.stats();
        assert_eq!((s.loads, s.hits, s.evictions, s.bytes_used), (4, 1, 1, 30));
    }

    #[test]
    fn pinned_entries_survive_and_overflow_is_reported() {
        let mut c = SubFilterCache::new(20);
        let pinned: HashSet<SubFilterId> = ["0".parse().unwrap(), "1".parse().unwrap()].into();
        c.insert_loaded(filter("0"), 10, &pinned).unwrap();
        c.insert_loaded(filter("1"), 10, &pinned).unwrap();
        assert!(c.insert_loaded(filter("00"), 10, &pinned).is_err());
        assert!(c.insert_loaded(filter("01"), 21, &HashSet::new()).is_err());
        assert!(c.stats().bytes_used <= 20);
    }

    #[test]
    fn invalidate_releases_bytes() {
        let mut c = SubFilterCache::new(100);
        c.insert_loaded(filter("0"), 40, &HashSet::new()).unwrap();
        c.invalidate("0".parse().unwrap());
        assert_eq!(c.stats().bytes_used, 0);
        c.invalidate("0".parse().unwrap());
    }
}
