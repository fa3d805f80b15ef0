//! Cuckoo sub-filters and the logarithmic dynamic cuckoo filter (LDCF) that
//! stores the XSet.
//!
//! An LDCF is a binary trie of fixed-size cuckoo filters. Fingerprints are
//! routed MSB-first through the trie; a full leaf is split into two children
//! keyed by the next fingerprint bit, so every leaf at depth `d` only has to
//! store the low `bits - d` bits of each fingerprint.

mod cuckoo;
mod tree;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto;

pub use cuckoo::{record_len, InsertOutcome, SubFilter, MAX_KICKS};
pub use tree::IndexTree;

/// Default fingerprint width in bits.
pub const DEFAULT_FINGERPRINT_BITS: u8 = 16;
/// Default requested sub-filter capacity (fingerprints per sub-filter).
pub const DEFAULT_SUBFILTER_CAPACITY: usize = 10_000;
/// Default slots per bucket.
pub const DEFAULT_BUCKET_SIZE: u8 = 4;
/// A sub-filter asks to be split once this fraction of its slots is used.
pub const SPLIT_OCCUPANCY: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterError {
    #[error("fingerprint {fingerprint:#x} does not start with sub-filter prefix {prefix}")]
    PrefixMismatch { prefix: SubFilterId, fingerprint: u32 },
    #[error("sub-filter {0} is at the maximum trie depth; raise the fingerprint width")]
    MaxDepthReached(SubFilterId),
    #[error("unknown sub-filter {0}")]
    UnknownSubFilter(SubFilterId),
    #[error("malformed sub-filter record: {0}")]
    MalformedRecord(String),
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
}

/// Shape shared by every sub-filter of one LDCF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterParams {
    fingerprint_bits: u8,
    bucket_count: u32,
    bucket_size: u8,
}

impl FilterParams {
    /// `capacity` is rounded up so the bucket count is a power of two.
    pub fn new(fingerprint_bits: u8, capacity: usize, bucket_size: u8) -> Result<Self, FilterError> {
        if !(4..=32).contains(&fingerprint_bits) {
            return Err(FilterError::InvalidParams(format!(
                "fingerprint width {fingerprint_bits} outside 4..=32"
            )));
        }
        if bucket_size == 0 {
            return Err(FilterError::InvalidParams("bucket size must be positive".into()));
        }
        if capacity == 0 {
            return Err(FilterError::InvalidParams("capacity must be positive".into()));
        }
        let buckets = capacity.div_ceil(bucket_size as usize).next_power_of_two();
        let bucket_count = u32::try_from(buckets)
            .map_err(|_| FilterError::InvalidParams(format!("capacity {capacity} too large")))?;
        Self::from_shape(fingerprint_bits, bucket_count, bucket_size)
    }

    /// Exact shape, as read back from a record.
    pub fn from_shape(fingerprint_bits: u8, bucket_count: u32, bucket_size: u8) -> Result<Self, FilterError> {
        if !(4..=32).contains(&fingerprint_bits) || bucket_size == 0 || !bucket_count.is_power_of_two() {
            return Err(FilterError::InvalidParams(format!(
                "bits={fingerprint_bits} buckets={bucket_count} bucket_size={bucket_size}"
            )));
        }
        Ok(FilterParams {
            fingerprint_bits,
            bucket_count,
            bucket_size,
        })
    }

    pub fn fingerprint_bits(&self) -> u8 {
        self.fingerprint_bits
    }

    pub fn bucket_count(&self) -> u32 {
        self.bucket_count
    }

    pub fn bucket_size(&self) -> u8 {
        self.bucket_size
    }

    /// Slots per sub-filter (`m * b`).
    pub fn capacity(&self) -> usize {
        self.bucket_count as usize * self.bucket_size as usize
    }

    pub fn split_threshold(&self) -> usize {
        (self.capacity() as f64 * SPLIT_OCCUPANCY).floor() as usize
    }

    /// Deepest level a leaf may reach.
    pub fn max_level(&self) -> u8 {
        self.fingerprint_bits - 1
    }
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams::new(
            DEFAULT_FINGERPRINT_BITS,
            DEFAULT_SUBFILTER_CAPACITY,
            DEFAULT_BUCKET_SIZE,
        )
        .expect("default parameters are valid")
    }
}

/// A non-zero fingerprint of `bits` width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(u32);

impl Fingerprint {
    pub fn new(value: u32, bits: u8) -> Option<Self> {
        let fits = bits == 32 || value >> bits == 0;
        (value != 0 && fits).then_some(Fingerprint(value))
    }

    /// Fingerprint of arbitrary bytes.
    pub fn of(data: &[u8], bits: u8) -> Self {
        Fingerprint(crypto::hash_h2(data, bits))
    }

    pub fn value(self) -> u32 {
        self.0
    }

    /// Bit at trie depth `depth`, MSB first.
    pub fn bit(self, depth: u8, bits: u8) -> u8 {
        debug_assert!(depth < bits);
        ((self.0 >> (bits - 1 - depth)) & 1) as u8
    }

    /// Partial-key hash used to derive the alternate bucket.
    pub fn alt_hash(self) -> u32 {
        crypto::hash_h1(&self.0.to_be_bytes())
    }
}

/// A trie path: the first `len` bits of a fingerprint, MSB first. Identifies
/// a leaf of the index tree and therefore one sub-filter.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubFilterId {
    bits: u32,
    len: u8,
}

impl SubFilterId {
    pub const ROOT: SubFilterId = SubFilterId { bits: 0, len: 0 };

    /// `bits` holds the path right-aligned.
    pub fn new(bits: u32, len: u8) -> Option<Self> {
        let fits = len >= 32 || bits >> len == 0;
        (len < 32 && fits).then_some(SubFilterId { bits, len })
    }

    /// Depth in the split tree.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> u8 {
        self.len
    }

    pub fn is_root(self) -> bool {
        self.len == 0
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn child(self, bit: u8) -> SubFilterId {
        SubFilterId {
            bits: (self.bits << 1) | bit as u32,
            len: self.len + 1,
        }
    }

    pub fn bit(self, depth: u8) -> u8 {
        debug_assert!(depth < self.len);
        ((self.bits >> (self.len - 1 - depth)) & 1) as u8
    }

    pub fn is_prefix_of(self, fp: Fingerprint, fingerprint_bits: u8) -> bool {
        self.len < fingerprint_bits && (self.len == 0 || fp.0 >> (fingerprint_bits - self.len) == self.bits)
    }

    /// Prefix bits packed MSB-first and zero-padded to a whole byte.
    pub fn to_packed(self) -> Vec<u8> {
        let nbytes = (self.len as usize).div_ceil(8);
        if nbytes == 0 {
            return Vec::new();
        }
        let aligned = (self.bits as u64) << (nbytes * 8 - self.len as usize);
        aligned.to_be_bytes()[8 - nbytes..].to_vec()
    }

    pub fn from_packed(len: u8, bytes: &[u8]) -> Result<Self, FilterError> {
        let nbytes = (len as usize).div_ceil(8);
        if len >= 32 || bytes.len() != nbytes {
            return Err(FilterError::MalformedRecord(format!("bad prefix of length {len}")));
        }
        let mut word = 0u64;
        for &b in bytes {
            word = (word << 8) | b as u64;
        }
        let pad = nbytes * 8 - len as usize;
        if pad > 0 && word & ((1 << pad) - 1) != 0 {
            return Err(FilterError::MalformedRecord("non-zero prefix padding".into()));
        }
        Ok(SubFilterId {
            bits: (word >> pad) as u32,
            len,
        })
    }
}

impl fmt::Display for SubFilterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            return f.write_str("*");
        }
        for depth in 0..self.len {
            write!(f, "{}", self.bit(depth))?;
        }
        Ok(())
    }
}

impl fmt::Debug for SubFilterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SubFilterId({self})")
    }
}

impl FromStr for SubFilterId {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" || s.is_empty() {
            return Ok(SubFilterId::ROOT);
        }
        if s.len() >= 32 {
            return Err(FilterError::MalformedRecord(format!("prefix too long: {s}")));
        }
        let mut id = SubFilterId::ROOT;
        for c in s.chars() {
            match c {
                '0' => id = id.child(0),
                '1' => id = id.child(1),
                _ => return Err(FilterError::MalformedRecord(format!("bad prefix: {s}"))),
            }
        }
        Ok(id)
    }
}

impl Serialize for SubFilterId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SubFilterId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Insert into the sub-filter `target`, splitting leaves until the
/// fingerprint fits. Returns the ids of every split leaf, in order.
pub fn insert_splitting(
    filters: &mut HashMap<SubFilterId, SubFilter>,
    target: SubFilterId,
    fp: Fingerprint,
    bucket_hint: u32,
) -> Result<Vec<SubFilterId>, FilterError> {
    let mut target = target;
    let mut splits = Vec::new();
    loop {
        let filter = filters
            .get_mut(&target)
            .ok_or(FilterError::UnknownSubFilter(target))?;
        match filter.insert(fp, bucket_hint)? {
            InsertOutcome::Stored => return Ok(splits),
            InsertOutcome::NeedsSplit => {
                let bits = filter.params().fingerprint_bits();
                let (left, right) = filter.split()?;
                filters.remove(&target);
                filters.insert(left.id(), left);
                filters.insert(right.id(), right);
                splits.push(target);
                target = target.child(fp.bit(target.len(), bits));
            }
        }
    }
}

/// A self-contained LDCF: the index tree plus every sub-filter.
#[derive(Debug, Clone)]
pub struct Ldcf {
    params: FilterParams,
    tree: IndexTree,
    filters: HashMap<SubFilterId, SubFilter>,
}

impl Ldcf {
    pub fn new(params: FilterParams) -> Self {
        let mut filters = HashMap::new();
        filters.insert(SubFilterId::ROOT, SubFilter::new(params, SubFilterId::ROOT));
        Ldcf {
            params,
            tree: IndexTree::new(params.fingerprint_bits()),
            filters,
        }
    }

    pub fn params(&self) -> FilterParams {
        self.params
    }

    pub fn tree(&self) -> &IndexTree {
        &self.tree
    }

    pub fn subfilter(&self, id: SubFilterId) -> Option<&SubFilter> {
        self.filters.get(&id)
    }

    pub fn subfilter_count(&self) -> usize {
        self.filters.len()
    }

    pub fn len(&self) -> usize {
        self.filters.values().map(|f| f.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, fp: Fingerprint, bucket_hint: u32) -> Result<(), FilterError> {
        let target = self.tree.locate(fp);
        for split in insert_splitting(&mut self.filters, target, fp, bucket_hint)? {
            self.tree.split(split)?;
        }
        Ok(())
    }

    pub fn contains(&self, fp: Fingerprint, bucket_hint: u32) -> bool {
        let id = self.tree.locate(fp);
        self.filters[&id].contains(fp, bucket_hint).unwrap_or(false)
    }

    pub fn remove(&mut self, fp: Fingerprint, bucket_hint: u32) -> bool {
        let id = self.tree.locate(fp);
        self.filters
            .get_mut(&id)
            .map(|f| f.remove(fp, bucket_hint).unwrap_or(false))
            .unwrap_or(false)
    }
}
