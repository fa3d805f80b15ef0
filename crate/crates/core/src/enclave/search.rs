use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;

use super::{check_keyword, tokens, unexpected, Enclave, EnclaveError, Hit, RankedResult, Result, SearchQuery};
use crate::boundary::{OcallMsg, OcallReply, Untrusted};
use crate::config::SearchMode;
use crate::crypto::{self, encode};
use crate::filters::{self, Fingerprint, SubFilter, SubFilterId};

/// One membership probe, already routed.
#[derive(Debug, Clone, Copy)]
struct Probe {
    fingerprint: Fingerprint,
    bucket_hint: u32,
    subfilter: SubFilterId,
}

struct Companion<'a> {
    keyword: &'a str,
    offset: Option<i32>,
}

impl Enclave {
    pub fn search(&mut self, host: &mut dyn Untrusted, query: &SearchQuery) -> Result<RankedResult> {
        if self.state.is_none() {
            return Err(EnclaveError::NotSetUp);
        }
        if query.mode() != self.params.mode {
            return Err(EnclaveError::ModeMismatch {
                expected: self.params.mode,
                got: query.mode(),
            });
        }
        let (anchor, companions): (&str, Vec<Companion>) = match query {
            SearchQuery::Exact { keywords, .. } => {
                let (first, rest) = keywords
                    .split_first()
                    .ok_or_else(|| EnclaveError::InvalidQuery("at least one keyword is required".into()))?;
                let rest = rest
                    .iter()
                    .map(|k| Companion {
                        keyword: k,
                        offset: None,
                    })
                    .collect();
                (first, rest)
            }
            SearchQuery::Fuzzy { anchor, companions, .. } => {
                let rest = companions
                    .iter()
                    .map(|(k, d)| Companion {
                        keyword: k,
                        offset: Some(*d),
                    })
                    .collect();
                (anchor, rest)
            }
        };
        check_keyword(anchor)?;
        for c in &companions {
            check_keyword(c.keyword)?;
        }
        if self.params.mode == SearchMode::Fuzzy {
            let s = self.params.gram_len as usize;
            let all = std::iter::once(anchor).chain(companions.iter().map(|c| c.keyword));
            if let Some(bad) = all.into_iter().find(|g| g.chars().count() != s) {
                return Err(EnclaveError::InvalidQuery(format!("gram {bad:?} is not {s} characters long")));
            }
        }

        let entries = self.fetch_postings(host, anchor)?;
        let accepted = if companions.is_empty() {
            vec![true; entries.len()]
        } else {
            loop {
                let version = self.tree_version();
                let accepted = self.check_entries(host, &entries, &companions)?;
                if self.tree_version() == version {
                    break accepted;
                }
            }
        };

        let kept = entries.iter().zip(&accepted).filter(|(_, &ok)| ok).map(|(e, _)| *e);
        let hits: Vec<Hit> = match self.params.mode {
            SearchMode::Exact => kept.map(|(id, weight)| Hit { id, weight }).collect(),
            SearchMode::Fuzzy => {
                let mut counts: BTreeMap<u64, u32> = BTreeMap::new();
                for (id, _) in kept {
                    *counts.entry(id).or_default() += 1;
                }
                counts.into_iter().map(|(id, weight)| Hit { id, weight }).collect()
            }
        };
        Ok(RankedResult::from_unsorted(hits, query.top_k()))
    }

    fn tree_version(&self) -> u64 {
        self.tree().map(|t| t.version()).unwrap_or(0)
    }

    /// The single token roundtrip: every stag of the anchor's posting list
    /// in one batch, decrypted to `(id, value)` entries.
    fn fetch_postings(&mut self, host: &mut dyn Untrusted, w: &str) -> Result<Vec<(u64, u32)>> {
        let st = self.state.as_ref().ok_or(EnclaveError::NotSetUp)?;
        let count = st.counters.get(w).copied().unwrap_or(0);
        let stags: Vec<_> = (1..=count).map(|c| tokens::stag(&st.keys, w, c)).collect();
        let values = match host.ocall(&OcallMsg::TSetBatchGet { stags })? {
            OcallReply::Batch(v) => v,
            other => return Err(unexpected(&other)),
        };
        if values.len() != count as usize {
            return Err(EnclaveError::ProtocolCorruption(format!(
                "asked for {count} entries, got {}",
                values.len()
            )));
        }
        values
            .into_iter()
            .zip(1..)
            .map(|(cid, c)| {
                let cid = cid.ok_or_else(|| {
                    EnclaveError::ProtocolCorruption(format!("posting entry {c} is absent"))
                })?;
                let label = tokens::cid_label(&self.params.variant, w, c);
                let plain = crypto::xor_pad(&st.keys.k_z, &label, &cid)?;
                encode::split_id_value(&plain).ok_or(EnclaveError::PadCorruption)
            })
            .collect()
    }

    fn probe_for(&self, companion: &Companion, id: u64, value: u32) -> Option<Probe> {
        let tree = self.tree().expect("checked by caller");
        let xtag = match companion.offset {
            None => tokens::xtag(SearchMode::Exact, companion.keyword, id, 0),
            Some(delta) => {
                let pos = u32::try_from(value as i64 + delta as i64).ok().filter(|&p| p >= 1)?;
                tokens::xtag(SearchMode::Fuzzy, companion.keyword, id, pos)
            }
        };
        let fingerprint = tokens::fingerprint(&self.params, companion.keyword, &xtag);
        Some(Probe {
            fingerprint,
            bucket_hint: crypto::hash_h1(&xtag),
            subfilter: tree.locate(fingerprint),
        })
    }

    /// Row-major `entries x companions`; `None` marks an automatic reject.
    fn probes(&self, entries: &[(u64, u32)], companions: &[Companion]) -> Vec<Option<Probe>> {
        let row = |&(id, value): &(u64, u32)| -> Vec<Option<Probe>> {
            companions.iter().map(|c| self.probe_for(c, id, value)).collect()
        };
        if self.params.variant.parallel {
            let rows: Vec<Vec<_>> = self.install(|| entries.par_iter().map(row).collect());
            rows.into_iter().flatten().collect()
        } else {
            entries.iter().flat_map(row).collect()
        }
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    fn check_entries(
        &mut self,
        host: &mut dyn Untrusted,
        entries: &[(u64, u32)],
        companions: &[Companion],
    ) -> Result<Vec<bool>> {
        let probes = self.probes(entries, companions);
        let width = companions.len();
        if self.params.variant.parallel {
            let passed = self.check_parallel(host, &probes)?;
            Ok(passed.chunks(width).map(|row| row.iter().all(|&p| p)).collect())
        } else {
            probes
                .chunks(width)
                .map(|row| {
                    for probe in row {
                        let Some(probe) = probe else { return Ok(false) };
                        let pinned = HashSet::from([probe.subfilter]);
                        let filter = self.cached_or_load(host, probe.subfilter, &pinned)?;
                        if !filter.contains(probe.fingerprint, probe.bucket_hint)? {
                            return Ok(false);
                        }
                    }
                    Ok(true)
                })
                .collect()
        }
    }

    /// Loads every needed sub-filter in budget-sized waves, pinning each
    /// wave, and runs that wave's probes concurrently.
    fn check_parallel(&mut self, host: &mut dyn Untrusted, probes: &[Option<Probe>]) -> Result<Vec<bool>> {
        let mut passed = vec![false; probes.len()];
        let mut by_filter: HashMap<SubFilterId, Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (k, probe) in probes.iter().enumerate() {
            if let Some(p) = probe {
                by_filter
                    .entry(p.subfilter)
                    .or_insert_with(|| {
                        order.push(p.subfilter);
                        Vec::new()
                    })
                    .push(k);
            }
        }

        let budget = self.cache.budget();
        let mut waves: Vec<Vec<SubFilterId>> = Vec::new();
        let mut wave_bytes = 0;
        for id in order {
            let bytes = filters::record_len(self.params.filter, id.len());
            if bytes > budget {
                return Err(EnclaveError::CacheOverflowUnsatisfiable { needed: bytes, budget });
            }
            if waves.is_empty() || wave_bytes + bytes > budget {
                waves.push(Vec::new());
                wave_bytes = 0;
            }
            wave_bytes += bytes;
            waves.last_mut().expect("just pushed").push(id);
        }

        for wave in waves {
            let pinned: HashSet<SubFilterId> = wave.iter().copied().collect();
            let mut loaded: HashMap<SubFilterId, Arc<SubFilter>> = HashMap::new();
            for &id in &wave {
                loaded.insert(id, self.cached_or_load(host, id, &pinned)?);
            }
            let work: Vec<usize> = wave.iter().flat_map(|id| by_filter[id].iter().copied()).collect();
            let results: Vec<(usize, bool)> = self.install(|| {
                work.par_iter()
                    .map(|&k| {
                        let p = probes[k].expect("only routed probes are scheduled");
                        loaded[&p.subfilter]
                            .contains(p.fingerprint, p.bucket_hint)
                            .map(|hit| (k, hit))
                    })
                    .collect::<std::result::Result<_, _>>()
            })?;
            for (k, hit) in results {
                passed[k] = hit;
            }
        }
        Ok(passed)
    }

    fn cached_or_load(
        &mut self,
        host: &mut dyn Untrusted,
        id: SubFilterId,
        pinned: &HashSet<SubFilterId>,
    ) -> Result<Arc<SubFilter>> {
        if let Some(f) = self.cache.get(id) {
            return Ok(f);
        }
        let bytes = match host.ocall(&OcallMsg::LoadSubFilter { id })? {
            OcallReply::SubFilter(b) => b,
            other => return Err(unexpected(&other)),
        };
        let filter = SubFilter::from_bytes(&bytes)?;
        if filter.id() != id || filter.params() != self.params.filter {
            return Err(EnclaveError::ProtocolCorruption(format!(
                "asked for sub-filter {id}, received {}",
                filter.id()
            )));
        }
        self.cache
            .insert_loaded(filter, bytes.len(), pinned)
            .map_err(|o| EnclaveError::CacheOverflowUnsatisfiable {
                needed: o.needed,
                budget: o.budget,
            })
    }
}
