//! The untrusted server's encrypted database: TSet, ITSet and the XSet as a
//! map of serialized-on-demand cuckoo sub-filters.
//!
//! The server never sees the index tree. It learns about splits because it
//! performs them, and reports each split parent back so the trusted side can
//! mirror it.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{SchemeParams, SearchMode, VariantConfig};
use crate::crypto::Token;
use crate::filters::{self, FilterError, FilterParams, Fingerprint, IndexTree, SubFilter, SubFilterId};
use crate::wire::{Put, Reader, WireError};

const MAGIC: &[u8; 4] = b"SGDB";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EdbError {
    #[error("TSet already holds an entry at this address")]
    DuplicateStag,
    #[error("ITSet already holds an entry at this address")]
    DuplicateIndex,
    #[error("{0} entry not found")]
    NotFound(&'static str),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("malformed database file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<WireError> for EdbError {
    fn from(e: WireError) -> Self {
        EdbError::Malformed(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EdbError>;

/// Server-side half of an insert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertMsg {
    pub subfilter: SubFilterId,
    pub stag: Token,
    pub cid: Vec<u8>,
    pub ind: Token,
    pub cstag: Vec<u8>,
    pub fingerprint: u32,
    pub bucket_hint: u32,
}

/// Server-side half of a swap-with-last delete.
///
/// `moved_cid` / `moved_cstag` replace the ciphertexts that move into the
/// vacated slots; when absent the old ciphertexts move unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteMsg {
    pub subfilter: SubFilterId,
    pub stag: Token,
    pub stag_last: Token,
    pub ind: Token,
    pub ind_last: Token,
    pub fingerprint: u32,
    pub bucket_hint: u32,
    pub moved_cid: Option<Vec<u8>>,
    pub moved_cstag: Option<Vec<u8>>,
}

/// A split the server performed while inserting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEvent {
    /// Server split count after this split.
    pub version: u64,
    pub parent: SubFilterId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdbStats {
    pub tset_entries: usize,
    pub itset_entries: usize,
    pub subfilters: usize,
    pub fingerprints: usize,
    pub xset_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct EncryptedDb {
    params: SchemeParams,
    tset: HashMap<Token, Vec<u8>>,
    itset: HashMap<Token, Vec<u8>>,
    xset: HashMap<SubFilterId, SubFilter>,
    split_version: u64,
}

impl EncryptedDb {
    pub fn new(params: SchemeParams) -> Self {
        let mut xset = HashMap::new();
        xset.insert(SubFilterId::ROOT, SubFilter::new(params.filter, SubFilterId::ROOT));
        EncryptedDb {
            params,
            tset: HashMap::new(),
            itset: HashMap::new(),
            xset,
            split_version: 0,
        }
    }

    pub fn params(&self) -> SchemeParams {
        self.params
    }

    /// Search-time switches that do not change stored data.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.params.variant.parallel = parallel;
    }

    pub fn split_version(&self) -> u64 {
        self.split_version
    }

    pub fn tset_get(&self, stag: &Token) -> Option<&[u8]> {
        self.tset.get(stag).map(Vec::as_slice)
    }

    pub fn itset_get(&self, ind: &Token) -> Option<&[u8]> {
        self.itset.get(ind).map(Vec::as_slice)
    }

    /// One result per address, `None` where absent.
    pub fn tset_batch_get(&self, stags: &[Token]) -> Vec<Option<Vec<u8>>> {
        stags.iter().map(|s| self.tset.get(s).cloned()).collect()
    }

    pub fn contains_stag(&self, stag: &Token) -> bool {
        self.tset.contains_key(stag)
    }

    pub fn contains_ind(&self, ind: &Token) -> bool {
        self.itset.contains_key(ind)
    }

    pub fn subfilter(&self, id: SubFilterId) -> Option<&SubFilter> {
        self.xset.get(&id)
    }

    /// Serialized sub-filter record, as handed across the boundary.
    pub fn load_subfilter(&self, id: SubFilterId) -> Result<Vec<u8>> {
        self.xset
            .get(&id)
            .map(SubFilter::to_bytes)
            .ok_or(EdbError::Filter(FilterError::UnknownSubFilter(id)))
    }

    /// Sub-filter ids in unspecified order.
    pub fn subfilter_ids(&self) -> Vec<SubFilterId> {
        self.xset.keys().copied().collect()
    }

    pub fn tset_addresses(&self) -> impl Iterator<Item = &Token> {
        self.tset.keys()
    }

    pub fn itset_addresses(&self) -> impl Iterator<Item = &Token> {
        self.itset.keys()
    }

    pub fn stats(&self) -> EdbStats {
        EdbStats {
            tset_entries: self.tset.len(),
            itset_entries: self.itset.len(),
            subfilters: self.xset.len(),
            fingerprints: self.xset.values().map(SubFilter::len).sum(),
            xset_bytes: self.xset.values().map(SubFilter::record_len).sum(),
        }
    }

    fn fingerprint(&self, raw: u32) -> Result<Fingerprint> {
        let bits = self.params.filter.fingerprint_bits();
        Fingerprint::new(raw, bits).ok_or_else(|| {
            EdbError::Filter(FilterError::InvalidParams(format!(
                "fingerprint {raw:#x} is zero or wider than {bits} bits"
            )))
        })
    }

    /// Stores one entry. Every precondition is checked before anything is
    /// written, so a rejected insert leaves the database unchanged.
    pub fn apply_insert(&mut self, msg: &InsertMsg) -> Result<Vec<SplitEvent>> {
        let fp = self.fingerprint(msg.fingerprint)?;
        if self.tset.contains_key(&msg.stag) {
            return Err(EdbError::DuplicateStag);
        }
        if self.itset.contains_key(&msg.ind) {
            return Err(EdbError::DuplicateIndex);
        }
        let parents = filters::insert_splitting(&mut self.xset, msg.subfilter, fp, msg.bucket_hint)?;
        self.tset.insert(msg.stag, msg.cid.clone());
        self.itset.insert(msg.ind, msg.cstag.clone());
        Ok(parents
            .into_iter()
            .map(|parent| {
                self.split_version += 1;
                SplitEvent {
                    version: self.split_version,
                    parent,
                }
            })
            .collect())
    }

    /// Moves the last entry of a posting list into the deleted slot and
    /// drops the vacated addresses. Returns whether the fingerprint was
    /// found in the sub-filter.
    pub fn apply_delete(&mut self, msg: &DeleteMsg) -> Result<bool> {
        let fp = self.fingerprint(msg.fingerprint)?;
        if !self.xset.contains_key(&msg.subfilter) {
            return Err(FilterError::UnknownSubFilter(msg.subfilter).into());
        }
        for stag in [&msg.stag, &msg.stag_last] {
            if !self.tset.contains_key(stag) {
                return Err(EdbError::NotFound("TSet"));
            }
        }
        for ind in [&msg.ind, &msg.ind_last] {
            if !self.itset.contains_key(ind) {
                return Err(EdbError::NotFound("ITSet"));
            }
        }
        if msg.stag == msg.stag_last {
            self.tset.remove(&msg.stag);
            self.itset.remove(&msg.ind);
        } else {
            let last = self.tset.remove(&msg.stag_last).expect("checked above");
            self.tset.insert(msg.stag, msg.moved_cid.clone().unwrap_or(last));
            let victim = self.itset.remove(&msg.ind).expect("checked above");
            self.itset.insert(msg.ind_last, msg.moved_cstag.clone().unwrap_or(victim));
        }
        let filter = self.xset.get_mut(&msg.subfilter).expect("checked above");
        Ok(filter.remove(fp, msg.bucket_hint)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let f = self.params.filter;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        out.push(self.params.mode.to_byte());
        out.push(f.fingerprint_bits());
        out.extend_from_slice(&(f.capacity() as u32).to_be_bytes());
        out.push(f.bucket_size());
        out.push(self.params.variant.flags());
        out.push(self.params.variant.group_bits);

        for map in [&self.tset, &self.itset] {
            let mut keys: Vec<_> = map.keys().collect();
            keys.sort();
            let mut section = Vec::new();
            for k in keys {
                let v = &map[k];
                section.extend_from_slice(k);
                section.extend_from_slice(&(v.len() as u16).to_be_bytes());
                section.extend_from_slice(v);
            }
            out.put_section(&section);
        }

        let mut ids: Vec<_> = self.xset.keys().copied().collect();
        ids.sort();
        let mut section = Vec::new();
        for id in ids {
            section.push(id.len());
            section.extend_from_slice(&id.to_packed());
            section.extend_from_slice(&self.xset[&id].to_bytes());
        }
        out.put_section(&section);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(EdbError::Malformed("bad magic".into()));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(EdbError::Malformed(format!("unsupported version {version}")));
        }
        let mode = SearchMode::from_byte(r.u8()?).ok_or_else(|| EdbError::Malformed("bad mode".into()))?;
        let bits = r.u8()?;
        let capacity = r.u32()?;
        let bucket_size = r.u8()?;
        let flags = r.u8()?;
        let group_bits = r.u8()?;
        if bucket_size == 0 || capacity % bucket_size as u32 != 0 {
            return Err(EdbError::Malformed(format!("capacity {capacity} / bucket size {bucket_size}")));
        }
        let filter = FilterParams::from_shape(bits, capacity / bucket_size as u32, bucket_size)?;
        let variant: VariantConfig =
            VariantConfig::from_flags(flags, group_bits).ok_or_else(|| EdbError::Malformed("bad flags".into()))?;
        let params = SchemeParams::new(mode, filter, variant)?;

        let mut maps = [HashMap::new(), HashMap::new()];
        for map in &mut maps {
            let mut s = Reader::new(r.section()?);
            while !s.done() {
                let key = s.token()?;
                let len = s.u16()? as usize;
                if map.insert(key, s.take(len)?.to_vec()).is_some() {
                    return Err(EdbError::Malformed("duplicate address".into()));
                }
            }
        }
        let [tset, itset] = maps;

        let mut xset = HashMap::new();
        let mut s = Reader::new(r.section()?);
        while !s.done() {
            let len = s.u8()?;
            let id = SubFilterId::from_packed(len, s.take((len as usize).div_ceil(8))?)?;
            let (filter_rec, used) = SubFilter::decode_prefix(s.rest())?;
            s.advance(used)?;
            if filter_rec.id() != id || filter_rec.params() != filter {
                return Err(EdbError::Malformed(format!("sub-filter {id} header mismatch")));
            }
            if xset.insert(id, filter_rec).is_some() {
                return Err(EdbError::Malformed(format!("duplicate sub-filter {id}")));
            }
        }
        r.finish()?;
        let leaves: Vec<_> = xset.keys().copied().collect();
        IndexTree::from_leaves(bits, &leaves)?;
        Ok(EncryptedDb {
            params,
            tset,
            itset,
            split_version: leaves.len() as u64 - 1,
            xset,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
