//! A convenience front end over [`Boundary`] for graph-shaped workloads.

use std::path::Path;

use crate::boundary::{Boundary, BoundaryError};
use crate::config::{SchemeParams, SearchMode};
use crate::edb::EdbStats;
use crate::enclave::{EnclaveError, RankedResult, SearchQuery, DEFAULT_CACHE_BYTES};
use crate::ingest::{self, EdgeTriple, IngestError, NameRecord};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl From<EnclaveError> for ClientError {
    fn from(e: EnclaveError) -> Self {
        ClientError::Boundary(e.into())
    }
}

impl ClientError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, ClientError::Boundary(e) if e.is_not_found())
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, Copy)]
pub struct ClientOptions {
    pub cache_bytes: usize,
    /// Seeds key and channel generation; `None` draws from the OS.
    pub seed: Option<u64>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            cache_bytes: DEFAULT_CACHE_BYTES,
            seed: None,
        }
    }
}

/// An encrypted graph index: exact databases hold `id_out:type` posting
/// lists, fuzzy databases hold name grams.
#[derive(Debug)]
pub struct SecGraph {
    boundary: Boundary,
}

impl SecGraph {
    /// A fresh, provisioned, empty database.
    pub fn create(params: SchemeParams, opts: ClientOptions) -> Result<Self> {
        let mut boundary = Boundary::new(params, opts.cache_bytes, opts.seed);
        boundary.setup()?;
        Ok(SecGraph { boundary })
    }

    pub fn open(path: impl AsRef<Path>, opts: ClientOptions) -> Result<Self> {
        Ok(SecGraph {
            boundary: Boundary::open(path, opts.cache_bytes, opts.seed)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.boundary.save(path)?)
    }

    pub fn params(&self) -> SchemeParams {
        self.boundary.enclave().params()
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn boundary_mut(&mut self) -> &mut Boundary {
        &mut self.boundary
    }

    pub fn stats(&self) -> EdbStats {
        self.boundary.edb().stats()
    }

    pub fn counter(&self, keyword: &str) -> u32 {
        self.boundary.enclave().counter(keyword)
    }

    pub fn insert(&mut self, keyword: &str, id: u64, weight: u32) -> Result<()> {
        Ok(self.boundary.insert(keyword, id, weight)?)
    }

    /// Removes `id` from `keyword`'s posting list. The weight is not needed
    /// to locate an exact-mode entry.
    pub fn delete(&mut self, keyword: &str, id: u64) -> Result<()> {
        Ok(self.boundary.delete(keyword, id, 0)?)
    }

    pub fn insert_edge(&mut self, t: &EdgeTriple) -> Result<()> {
        self.insert(&t.keyword, t.id_in, t.weight)
    }

    pub fn insert_edges<'a>(&mut self, triples: impl IntoIterator<Item = &'a EdgeTriple>) -> Result<usize> {
        let mut n = 0;
        for t in triples {
            self.insert_edge(t)?;
            n += 1;
        }
        Ok(n)
    }

    fn gram_len(&self) -> usize {
        self.params().gram_len as usize
    }

    /// Indexes every gram of `name` for vertex `id`.
    pub fn add_name(&mut self, id: u64, name: &str) -> Result<()> {
        for g in ingest::split_name(name, self.gram_len())? {
            self.boundary.insert(&g.sub, id, g.pos)?;
        }
        Ok(())
    }

    pub fn add_names<'a>(&mut self, names: impl IntoIterator<Item = &'a NameRecord>) -> Result<usize> {
        let mut n = 0;
        for r in names {
            self.add_name(r.id, &r.name)?;
            n += 1;
        }
        Ok(n)
    }

    pub fn remove_name(&mut self, id: u64, name: &str) -> Result<()> {
        for g in ingest::split_name(name, self.gram_len())? {
            self.boundary.delete(&g.sub, id, g.pos)?;
        }
        Ok(())
    }

    /// Vertices adjacent to every keyword, ranked by their weight under the
    /// first.
    pub fn search<S: AsRef<str>>(&mut self, keywords: &[S], top_k: Option<u32>) -> Result<RankedResult> {
        let q = SearchQuery::exact(keywords.iter().map(|k| k.as_ref().to_owned())).with_top_k(top_k);
        Ok(self.boundary.search(&q)?)
    }

    /// Vertices whose folded name contains the folded pattern, ranked by
    /// the number of places it occurs.
    pub fn fuzzy_search(&mut self, pattern: &str, top_k: Option<u32>) -> Result<RankedResult> {
        let g = ingest::query_grams(pattern, self.gram_len())?;
        let q = SearchQuery::Fuzzy {
            anchor: g.anchor,
            companions: g.companions,
            top_k,
        };
        Ok(self.boundary.search(&q)?)
    }

    pub fn query(&mut self, q: &SearchQuery) -> Result<RankedResult> {
        Ok(self.boundary.search(q)?)
    }

    pub fn mode(&self) -> SearchMode {
        self.params().mode
    }
}
