//! Classic two-roundtrip OXT over a static corpus, kept as a
//! false-positive-free reference and a cost baseline.
//!
//! The group is the 2048-bit MODP group of RFC 3526 (group 14). Its modulus
//! is a safe prime `p = 2q + 1` and `g = 2` generates the subgroup of prime
//! order `q`, so exponents live in `Z_q` where every nonzero element is
//! invertible.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use num_bigint::BigUint;
use num_traits::Zero;
use rand::{CryptoRng, RngCore};
use rayon::prelude::*;
use thiserror::Error;

use crate::crypto::{self, encode, CryptoError, Key, Token};
use crate::enclave::{Hit, RankedResult};

const MODP_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74",
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437",
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05",
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB",
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718",
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

#[derive(Debug)]
pub struct Group {
    pub p: BigUint,
    pub q: BigUint,
    pub g: BigUint,
}

impl Group {
    pub fn modp2048() -> &'static Group {
        static GROUP: OnceLock<Group> = OnceLock::new();
        GROUP.get_or_init(|| {
            let p = BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("valid modulus");
            let q = (&p - 1u32) >> 1;
            Group {
                p,
                q,
                g: BigUint::from(2u32),
            }
        })
    }

    pub fn exp(&self, base: &BigUint, e: &BigUint) -> BigUint {
        base.modpow(e, &self.p)
    }

    pub fn inverse(&self, e: &BigUint) -> BigUint {
        e.modpow(&(&self.q - 2u32), &self.q)
    }

    /// Interprets a PRF output as a big-endian integer in `[1, q-1]`.
    pub fn exponent(&self, key: &Key, data: &[u8]) -> BigUint {
        let mut out = crypto::prf(key, data);
        loop {
            let e = BigUint::from_bytes_be(&out) % &self.q;
            if !e.is_zero() {
                return e;
            }
            out = crypto::prf(key, &out);
        }
    }
}

#[derive(Debug, Error)]
pub enum OxtError {
    #[error("the index has not been built")]
    NotBuilt,
    #[error("a query needs at least one keyword")]
    EmptyQuery,
    #[error("identifier ciphertext failed to decrypt")]
    PadCorruption,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

pub type Result<T> = std::result::Result<T, OxtError>;

#[derive(Clone, PartialEq, Eq)]
pub struct OxtKeys {
    pub k_i: Key,
    pub k_x: Key,
    pub k_t: Key,
    pub k_z: Key,
}

impl OxtKeys {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [[0u8; 32]; 4];
        for key in &mut k {
            rng.fill_bytes(key);
        }
        OxtKeys {
            k_i: k[0],
            k_x: k[1],
            k_t: k[2],
            k_z: k[3],
        }
    }
}

impl std::fmt::Debug for OxtKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("OxtKeys(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OxtTSetEntry {
    pub fid: Vec<u8>,
    pub y: BigUint,
}

/// Cost counters for one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OxtCost {
    pub roundtrips: u32,
    /// Client-side exponentiations to form xtokens.
    pub client_exps: u64,
    /// Server-side exponentiations `xtoken^y`.
    pub server_exps: u64,
}

#[derive(Debug, Clone)]
pub struct OxtOutcome {
    pub result: RankedResult,
    pub cost: OxtCost,
}

/// A keyword's posting list: `(id, weight)` pairs in insertion order.
pub type Corpus = BTreeMap<String, Vec<(u64, u32)>>;

/// Client and server state of one OXT deployment.
#[derive(Debug)]
pub struct Oxt {
    keys: OxtKeys,
    tset: Option<HashMap<Token, Vec<OxtTSetEntry>>>,
    xset: HashSet<Vec<u8>>,
}

fn fid_label(w: &str, i: u32) -> Vec<u8> {
    let mut l = vec![0x03];
    l.extend(encode::keyword_counter(w, i));
    l
}

impl Oxt {
    pub fn new(keys: OxtKeys) -> Self {
        Oxt {
            keys,
            tset: None,
            xset: HashSet::new(),
        }
    }

    pub fn is_built(&self) -> bool {
        self.tset.is_some()
    }

    pub fn tset_len(&self) -> usize {
        self.tset.as_ref().map_or(0, |t| t.values().map(Vec::len).sum())
    }

    pub fn xset_len(&self) -> usize {
        self.xset.len()
    }

    fn stag(&self, w: &str) -> Token {
        crypto::prf(&self.keys.k_t, &encode::keyword(w))
    }

    fn xtag(&self, w: &str, id: u64) -> BigUint {
        let grp = Group::modp2048();
        let e = grp.exponent(&self.keys.k_x, &encode::keyword(w)) * grp.exponent(&self.keys.k_i, &id.to_be_bytes());
        grp.exp(&grp.g, &(e % &grp.q))
    }

    /// Replaces any previous index with one over `corpus`.
    pub fn build(&mut self, corpus: &Corpus) -> Result<()> {
        let grp = Group::modp2048();
        let mut tset = HashMap::new();
        let mut xset = HashSet::new();
        for (w, postings) in corpus {
            let mut entries = Vec::with_capacity(postings.len());
            for (&(id, weight), i) in postings.iter().zip(1u32..) {
                let fid = crypto::xor_pad(&self.keys.k_z, &fid_label(w, i), &encode::id_value(id, weight))?;
                let xind = grp.exponent(&self.keys.k_i, &id.to_be_bytes());
                let z = grp.exponent(&self.keys.k_z, &encode::keyword_counter(w, i));
                let y = xind * grp.inverse(&z) % &grp.q;
                entries.push(OxtTSetEntry { fid, y });
                xset.insert(self.xtag(w, id).to_bytes_be());
            }
            tset.insert(self.stag(w), entries);
        }
        self.tset = Some(tset);
        self.xset = xset;
        Ok(())
    }

    /// xtokens for positions `1..=count` of `anchor` against each companion.
    fn xtokens(&self, anchor: &str, companions: &[&str], count: usize) -> Vec<Vec<BigUint>> {
        let grp = Group::modp2048();
        let xs: Vec<BigUint> = companions
            .iter()
            .map(|w| grp.exponent(&self.keys.k_x, &encode::keyword(w)))
            .collect();
        (1..=count as u32)
            .into_par_iter()
            .map(|j| {
                let z = grp.exponent(&self.keys.k_z, &encode::keyword_counter(anchor, j));
                xs.iter().map(|x| grp.exp(&grp.g, &(&z * x % &grp.q))).collect()
            })
            .collect()
    }

    pub fn search<S: AsRef<str>>(&self, keywords: &[S], top_k: Option<u32>) -> Result<OxtOutcome> {
        let tset = self.tset.as_ref().ok_or(OxtError::NotBuilt)?;
        let (anchor, rest) = keywords.split_first().ok_or(OxtError::EmptyQuery)?;
        let anchor = anchor.as_ref();
        let companions: Vec<&str> = rest.iter().map(AsRef::as_ref).collect();
        let mut cost = OxtCost {
            roundtrips: 1,
            ..OxtCost::default()
        };

        // Roundtrip 1: the anchor's entries.
        let entries: &[OxtTSetEntry] = tset.get(&self.stag(anchor)).map_or(&[], Vec::as_slice);

        let accepted: Vec<bool> = if companions.is_empty() {
            vec![true; entries.len()]
        } else {
            // Roundtrip 2: c * (n - 1) xtokens, checked by the server.
            cost.roundtrips = 2;
            let tokens = self.xtokens(anchor, &companions, entries.len());
            cost.client_exps = (entries.len() * companions.len()) as u64;
            cost.server_exps = cost.client_exps;
            let grp = Group::modp2048();
            entries
                .par_iter()
                .zip(tokens.par_iter())
                .map(|(e, row)| row.iter().all(|t| self.xset.contains(&grp.exp(t, &e.y).to_bytes_be())))
                .collect()
        };

        let mut hits = Vec::new();
        for ((e, ok), i) in entries.iter().zip(accepted).zip(1u32..) {
            if ok {
                let plain = crypto::xor_pad(&self.keys.k_z, &fid_label(anchor, i), &e.fid)?;
                let (id, weight) = encode::split_id_value(&plain).ok_or(OxtError::PadCorruption)?;
                hits.push(Hit { id, weight });
            }
        }
        Ok(OxtOutcome {
            result: RankedResult::from_unsorted(hits, top_k),
            cost,
        })
    }

    /// Checks `xtoken(anchor, w, j)^{y_j} = xtag(w, id_j)` for position `j`
    /// of `anchor`.
    pub fn identity_holds(&self, anchor: &str, j: u32, w: &str, id: u64) -> Result<bool> {
        let tset = self.tset.as_ref().ok_or(OxtError::NotBuilt)?;
        let Some(entry) = tset.get(&self.stag(anchor)).and_then(|v| v.get(j as usize - 1)) else {
            return Ok(false);
        };
        let grp = Group::modp2048();
        let token = &self.xtokens(anchor, &[w], j as usize)[j as usize - 1][0];
        Ok(grp.exp(token, &entry.y) == self.xtag(w, id))
    }
}

/// Collects posting lists in the order they are given.
pub fn corpus_from<'a>(pairs: impl IntoIterator<Item = (&'a str, u64, u32)>) -> Corpus {
    let mut c = Corpus::new();
    for (w, id, weight) in pairs {
        c.entry(w.to_owned()).or_default().push((id, weight));
    }
    c
}
