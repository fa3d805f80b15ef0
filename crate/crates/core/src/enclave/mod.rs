//! The trusted proxy. It alone holds the keys, the per-keyword update
//! counters and the index tree, and turns plaintext updates and queries into
//! the token traffic the server sees.

pub mod cache;
mod search;
pub mod tokens;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{OcallError, OcallMsg, OcallReply, ServerError, Untrusted};
use crate::config::{SchemeParams, SearchMode};
use crate::crypto::{self, encode, CryptoError, SecretKeys};
use crate::edb::{DeleteMsg, InsertMsg};
use crate::filters::{FilterError, IndexTree, SubFilterId};

pub use cache::{CacheStats, SubFilterCache, DEFAULT_CACHE_BYTES};
pub use tokens::{derive_tokens, grouped_fingerprint, InsertTokens};

#[derive(Debug, Error)]
pub enum EnclaveError {
    #[error("enclave has not been set up")]
    NotSetUp,
    #[error("enclave is already initialized")]
    AlreadyInitialized,
    #[error("update counter exhausted for this keyword")]
    CounterOverflow,
    #[error("keyword has no live entries")]
    KeywordUnknown,
    #[error("pair is not in the index")]
    VictimNotFound,
    #[error("pair is already in the index")]
    DuplicatePair,
    #[error("ciphertext did not decrypt under the expected pad")]
    PadCorruption,
    #[error("protocol corruption: {0}")]
    ProtocolCorruption(String),
    #[error("sub-filter of {needed} bytes cannot fit the {budget}-byte cache")]
    CacheOverflowUnsatisfiable { needed: usize, budget: usize },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("database mode is {expected:?} but the request needs {got:?}")]
    ModeMismatch { expected: SearchMode, got: SearchMode },
    #[error("enclave state: {0}")]
    State(String),
    #[error(transparent)]
    Ocall(#[from] OcallError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

impl EnclaveError {
    /// Errors that mean "the thing asked for is not there".
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            EnclaveError::KeywordUnknown
                | EnclaveError::VictimNotFound
                | EnclaveError::Ocall(OcallError::Server(ServerError::NotFound(_)))
        )
    }
}

pub type Result<T> = std::result::Result<T, EnclaveError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateOp {
    Insert,
    Delete,
}

impl fmt::Display for UpdateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateOp::Insert => "insert",
            UpdateOp::Delete => "delete",
        })
    }
}

/// One posting-list change: `(id, value)` under `keyword`, where value is
/// the edge weight or, in fuzzy databases, the gram position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub keyword: String,
    pub id: u64,
    pub value: u32,
    pub op: UpdateOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchQuery {
    /// Ids adjacent to every keyword; weights come from the first.
    Exact { keywords: Vec<String>, top_k: Option<u32> },
    /// Ids with `anchor` at some position `p` and each companion gram at
    /// `p + offset`.
    Fuzzy {
        anchor: String,
        companions: Vec<(String, i32)>,
        top_k: Option<u32>,
    },
}

impl SearchQuery {
    pub fn exact<S: Into<String>>(keywords: impl IntoIterator<Item = S>) -> Self {
        SearchQuery::Exact {
            keywords: keywords.into_iter().map(Into::into).collect(),
            top_k: None,
        }
    }

    pub fn with_top_k(mut self, k: Option<u32>) -> Self {
        match &mut self {
            SearchQuery::Exact { top_k, .. } | SearchQuery::Fuzzy { top_k, .. } => *top_k = k,
        }
        self
    }

    pub fn mode(&self) -> SearchMode {
        match self {
            SearchQuery::Exact { .. } => SearchMode::Exact,
            SearchQuery::Fuzzy { .. } => SearchMode::Fuzzy,
        }
    }

    pub fn top_k(&self) -> Option<u32> {
        match self {
            SearchQuery::Exact { top_k, .. } | SearchQuery::Fuzzy { top_k, .. } => *top_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub weight: u32,
}

/// Hits ordered by weight descending, then id ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankedResult {
    pub hits: Vec<Hit>,
}

impl RankedResult {
    pub fn from_unsorted(mut hits: Vec<Hit>, top_k: Option<u32>) -> Self {
        hits.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.id.cmp(&b.id)));
        if let Some(k) = top_k {
            hits.truncate(k as usize);
        }
        RankedResult { hits }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Persistent trusted state. Real deployments would seal this to the
/// enclave; here it is plain JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveState {
    pub params: SchemeParams,
    pub keys: SecretKeys,
    pub counters: BTreeMap<String, u32>,
    pub leaves: Vec<SubFilterId>,
}

#[derive(Debug)]
struct Trusted {
    keys: SecretKeys,
    counters: HashMap<String, u32>,
    tree: IndexTree,
}

pub struct Enclave {
    params: SchemeParams,
    state: Option<Trusted>,
    cache: SubFilterCache,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl fmt::Debug for Enclave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Enclave")
            .field("params", &self.params)
            .field("ready", &self.state.is_some())
            .field("cache", &self.cache.stats())
            .finish()
    }
}

fn check_keyword(w: &str) -> Result<()> {
    if w.is_empty() || w.len() > u16::MAX as usize {
        return Err(EnclaveError::InvalidQuery(format!(
            "keywords must be 1..={} bytes",
            u16::MAX
        )));
    }
    Ok(())
}

impl Enclave {
    pub fn new(params: SchemeParams, cache_budget: usize) -> Self {
        let mut enclave = Enclave {
            params,
            state: None,
            cache: SubFilterCache::new(cache_budget),
            pool: None,
        };
        enclave
            .set_threads(params.variant.threads)
            .expect("thread pool construction");
        enclave
    }

    pub fn restore(state: EnclaveState, cache_budget: usize) -> Result<Self> {
        let tree = IndexTree::from_leaves(state.params.filter.fingerprint_bits(), &state.leaves)?;
        let mut enclave = Enclave::new(state.params, cache_budget);
        enclave.state = Some(Trusted {
            keys: state.keys,
            counters: state.counters.into_iter().collect(),
            tree,
        });
        Ok(enclave)
    }

    pub fn export_state(&self) -> Result<EnclaveState> {
        let st = self.state.as_ref().ok_or(EnclaveError::NotSetUp)?;
        Ok(EnclaveState {
            params: self.params,
            keys: st.keys.clone(),
            counters: st.counters.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            leaves: st.tree.leaves(),
        })
    }

    pub fn params(&self) -> SchemeParams {
        self.params
    }

    pub fn is_ready(&self) -> bool {
        self.state.is_some()
    }

    pub fn setup(&mut self, keys: SecretKeys) -> Result<()> {
        if self.state.is_some() {
            return Err(EnclaveError::AlreadyInitialized);
        }
        self.state = Some(Trusted {
            keys,
            counters: HashMap::new(),
            tree: IndexTree::new(self.params.filter.fingerprint_bits()),
        });
        self.cache.clear();
        Ok(())
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.params.variant.parallel = parallel;
    }

    /// Fan-out width for parallel checking; 0 uses the global rayon pool.
    pub fn set_threads(&mut self, threads: usize) -> Result<()> {
        self.params.variant.threads = threads;
        self.pool = if threads == 0 {
            None
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| EnclaveError::State(e.to_string()))?;
            Some(Arc::new(pool))
        };
        Ok(())
    }

    pub fn counter(&self, w: &str) -> u32 {
        self.state
            .as_ref()
            .and_then(|s| s.counters.get(w).copied())
            .unwrap_or(0)
    }

    /// Sum of all counters, i.e. the number of live posting entries.
    pub fn live_entries(&self) -> u64 {
        self.state
            .as_ref()
            .map(|s| s.counters.values().map(|&c| c as u64).sum())
            .unwrap_or(0)
    }

    pub fn keyword_count(&self) -> usize {
        self.state.as_ref().map(|s| s.counters.len()).unwrap_or(0)
    }

    pub fn tree(&self) -> Option<&IndexTree> {
        self.state.as_ref().map(|s| &s.tree)
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    /// Tokens for `(w, id, value)` at an explicit counter, without touching
    /// any state.
    pub fn tokens_at(&self, w: &str, id: u64, value: u32, counter: u32) -> Result<InsertTokens> {
        let st = self.state.as_ref().ok_or(EnclaveError::NotSetUp)?;
        Ok(derive_tokens(&st.keys, &self.params, w, id, value, counter)?)
    }

    /// ITSet address of a pair.
    pub fn ind_of(&self, w: &str, id: u64, value: u32) -> Result<crypto::Token> {
        let st = self.state.as_ref().ok_or(EnclaveError::NotSetUp)?;
        Ok(crypto::prf(&st.keys.k_x, &tokens::xtag(self.params.mode, w, id, value)))
    }

    /// Mirrors a split the server performed.
    pub fn sync_tree(&mut self, version: u64, split: SubFilterId) -> Result<()> {
        let st = self.state.as_mut().ok_or(EnclaveError::NotSetUp)?;
        if st.tree.version() + 1 != version {
            return Err(EnclaveError::ProtocolCorruption(format!(
                "split version {version} does not follow {}",
                st.tree.version()
            )));
        }
        st.tree.split(split)?;
        self.cache.invalidate(split);
        Ok(())
    }

    /// Applies one update and returns the sub-filter it touched.
    pub fn update(&mut self, host: &mut dyn Untrusted, req: &UpdateRequest) -> Result<SubFilterId> {
        check_keyword(&req.keyword)?;
        match req.op {
            UpdateOp::Insert => self.insert(host, &req.keyword, req.id, req.value),
            UpdateOp::Delete => self.delete(host, &req.keyword, req.id, req.value),
        }
    }

    fn insert(&mut self, host: &mut dyn Untrusted, w: &str, id: u64, value: u32) -> Result<SubFilterId> {
        let st = self.state.as_mut().ok_or(EnclaveError::NotSetUp)?;
        let current = st.counters.get(w).copied().unwrap_or(0);
        let next = current.checked_add(1).ok_or(EnclaveError::CounterOverflow)?;
        let t = derive_tokens(&st.keys, &self.params, w, id, value, next)?;
        let subfilter = st.tree.locate(t.fingerprint);
        let msg = OcallMsg::ApplyInsert(InsertMsg {
            subfilter,
            stag: t.stag,
            cid: t.cid,
            ind: t.ind,
            cstag: t.cstag,
            fingerprint: t.fingerprint.value(),
            bucket_hint: t.bucket_hint,
        });
        match host.ocall(&msg) {
            Ok(OcallReply::Inserted) => {}
            Err(OcallError::Server(ServerError::DuplicateIndex)) => return Err(EnclaveError::DuplicatePair),
            Err(e) => return Err(e.into()),
            Ok(other) => return Err(unexpected(&other)),
        }
        st.counters.insert(w.to_owned(), next);
        self.cache.invalidate(subfilter);
        Ok(subfilter)
    }

    fn delete(&mut self, host: &mut dyn Untrusted, w: &str, id: u64, value: u32) -> Result<SubFilterId> {
        let params = self.params;
        let st = self.state.as_mut().ok_or(EnclaveError::NotSetUp)?;
        let keys = &st.keys;
        let last = st.counters.get(w).copied().unwrap_or(0);
        if last == 0 {
            return Err(EnclaveError::KeywordUnknown);
        }

        let stag_last = tokens::stag(keys, w, last);
        let cid_last = match host.ocall(&OcallMsg::TSetGet { stag: stag_last })? {
            OcallReply::Value(Some(v)) => v,
            OcallReply::Value(None) => {
                return Err(EnclaveError::ProtocolCorruption("latest posting entry is missing".into()))
            }
            other => return Err(unexpected(&other)),
        };
        let plain = crypto::xor_pad(&keys.k_z, &tokens::cid_label(&params.variant, w, last), &cid_last)?;
        let (id_last, value_last) = encode::split_id_value(&plain).ok_or(EnclaveError::PadCorruption)?;

        let xtag = tokens::xtag(params.mode, w, id, value);
        let ind = crypto::prf(&keys.k_x, &xtag);
        let cstag = match host.ocall(&OcallMsg::ITSetGet { ind })? {
            OcallReply::Value(Some(v)) => v,
            OcallReply::Value(None) => return Err(EnclaveError::VictimNotFound),
            other => return Err(unexpected(&other)),
        };
        let plain = crypto::xor_pad(&keys.k_z, &tokens::cstag_label(&params.variant, w, &xtag), &cstag)?;
        let (w_found, c) = encode::split_keyword_counter(&plain).ok_or(EnclaveError::PadCorruption)?;
        if w_found != w {
            return Err(EnclaveError::PadCorruption);
        }
        if c == 0 || c > last {
            return Err(EnclaveError::ProtocolCorruption(format!(
                "victim counter {c} outside 1..={last}"
            )));
        }

        let xtag_last = tokens::xtag(params.mode, w, id_last, value_last);
        let ind_last = crypto::prf(&keys.k_x, &xtag_last);
        let moves = c != last;
        let (moved_cid, moved_cstag) = if params.variant.hardened_pad && moves {
            (
                Some(crypto::xor_pad(
                    &keys.k_z,
                    &tokens::cid_label(&params.variant, w, c),
                    &encode::id_value(id_last, value_last),
                )?),
                Some(crypto::xor_pad(
                    &keys.k_z,
                    &tokens::cstag_label(&params.variant, w, &xtag_last),
                    &encode::keyword_counter(w, c),
                )?),
            )
        } else {
            (None, None)
        };
        let fp = tokens::fingerprint(&params, w, &xtag);
        let subfilter = st.tree.locate(fp);
        let msg = OcallMsg::ApplyDelete(DeleteMsg {
            subfilter,
            stag: tokens::stag(keys, w, c),
            stag_last,
            ind,
            ind_last: if moves { ind_last } else { ind },
            fingerprint: fp.value(),
            bucket_hint: crypto::hash_h1(&xtag),
            moved_cid,
            moved_cstag,
        });
        match host.ocall(&msg)? {
            OcallReply::Deleted { .. } => {}
            other => return Err(unexpected(&other)),
        }
        if last == 1 {
            st.counters.remove(w);
        } else {
            st.counters.insert(w.to_owned(), last - 1);
        }
        self.cache.invalidate(subfilter);
        Ok(subfilter)
    }
}

fn unexpected(reply: &OcallReply) -> EnclaveError {
    EnclaveError::ProtocolCorruption(format!("unexpected reply {}", reply.kind()))
}
