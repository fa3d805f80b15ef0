//! Keyed PRF, the two truncated hashes and the XOR-pad cipher.
//!
//! Algorithm identities are fixed so that two independent implementations
//! produce byte-identical databases:
//!
//! * PRF: HMAC-SHA-256, 32-byte output.
//! * `hash_h1`: the first four bytes of SHA-256(data), big-endian.
//! * `hash_h2`: bytes 4..8 of SHA-256(data), big-endian, keeping the top
//!   `bits` bits; an all-zero result is remapped to 1.
//! * `xor_pad`: plaintexts of at most 32 bytes are XORed with a truncation of
//!   `prf(key, label)`. Longer plaintexts use the block stream
//!   `SHA-256(prf(key, label) || j)` for `j = 0, 1, ...` (4-byte big-endian).

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A 32-byte symmetric key.
pub type Key = [u8; 32];

/// A 32-byte PRF output (stag, ind, ...).
pub type Token = [u8; 32];

/// Largest plaintext accepted by [`xor_pad`].
pub const MAX_PAD_LEN: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("plaintext of {len} bytes exceeds the {max}-byte pad limit")]
    PlaintextTooLong { len: usize, max: usize },
}

/// The three enclave keys: `k_t` for stags, `k_z` for the pads, `k_x` for
/// ITSet addresses.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKeys {
    #[serde(with = "hex_key")]
    pub k_t: Key,
    #[serde(with = "hex_key")]
    pub k_z: Key,
    #[serde(with = "hex_key")]
    pub k_x: Key,
}

impl SecretKeys {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut keys = SecretKeys {
            k_t: [0; 32],
            k_z: [0; 32],
            k_x: [0; 32],
        };
        rng.fill_bytes(&mut keys.k_t);
        rng.fill_bytes(&mut keys.k_z);
        rng.fill_bytes(&mut keys.k_x);
        keys
    }

    /// All key bytes, for leakage scans.
    pub fn iter(&self) -> impl Iterator<Item = &Key> {
        [&self.k_t, &self.k_z, &self.k_x].into_iter()
    }
}

impl fmt::Debug for SecretKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKeys { .. }")
    }
}

mod hex_key {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom("key must be 32 bytes"))
    }
}

/// HMAC-SHA-256 keyed PRF. Callers never pass empty data.
pub fn prf(key: &Key, data: &[u8]) -> Token {
    debug_assert!(!data.is_empty(), "prf input must be non-empty");
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// 32-bit bucket-index hash.
pub fn hash_h1(data: &[u8]) -> u32 {
    debug_assert!(!data.is_empty(), "hash_h1 input must be non-empty");
    let digest = sha256(data);
    u32::from_be_bytes([digest[0], digest[1], digest[2], digest[3]])
}

/// `bits`-wide fingerprint hash, never zero.
pub fn hash_h2(data: &[u8], bits: u8) -> u32 {
    debug_assert!(!data.is_empty(), "hash_h2 input must be non-empty");
    let digest = sha256(data);
    let word = u32::from_be_bytes([digest[4], digest[5], digest[6], digest[7]]);
    remap_zero(truncate_top(word, bits))
}

pub(crate) fn truncate_top(word: u32, bits: u8) -> u32 {
    debug_assert!((1..=32).contains(&bits));
    if bits == 32 {
        word
    } else {
        word >> (32 - bits)
    }
}

/// Zero is the empty-slot marker; fingerprints never take it.
pub(crate) fn remap_zero(fp: u32) -> u32 {
    if fp == 0 {
        1
    } else {
        fp
    }
}

/// XOR `plaintext` with the pad derived from `(key, label)`. Its own inverse.
pub fn xor_pad(key: &Key, label: &[u8], plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if plaintext.len() > MAX_PAD_LEN {
        return Err(CryptoError::PlaintextTooLong {
            len: plaintext.len(),
            max: MAX_PAD_LEN,
        });
    }
    let seed = prf(key, label);
    let mut out = plaintext.to_vec();
    if out.len() <= seed.len() {
        out.iter_mut().zip(seed.iter()).for_each(|(b, p)| *b ^= p);
        return Ok(out);
    }
    apply_block_stream(&seed, &mut out);
    Ok(out)
}

fn apply_block_stream(seed: &Token, data: &mut [u8]) {
    let mut block_input = [0u8; 36];
    block_input[..32].copy_from_slice(seed);
    for (j, chunk) in data.chunks_mut(32).enumerate() {
        block_input[32..].copy_from_slice(&(j as u32).to_be_bytes());
        let block = sha256(&block_input);
        chunk.iter_mut().zip(block.iter()).for_each(|(b, p)| *b ^= p);
    }
}

/// XOR `data` in place with the unbounded block stream seeded by
/// `prf(key, nonce)`. Used for the provisioning channel, where each nonce
/// is used once.
pub fn keystream_xor(key: &Key, nonce: &[u8], data: &mut [u8]) {
    apply_block_stream(&prf(key, nonce), data);
}

/// Canonical field encodings used inside every token derivation.
pub mod encode {
    /// 2-byte big-endian length prefix followed by the UTF-8 bytes.
    pub fn keyword(w: &str) -> Vec<u8> {
        let bytes = w.as_bytes();
        debug_assert!(bytes.len() <= u16::MAX as usize);
        let mut out = Vec::with_capacity(2 + bytes.len());
        out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
        out.extend_from_slice(bytes);
        out
    }

    pub fn keyword_counter(w: &str, c: u32) -> Vec<u8> {
        let mut out = keyword(w);
        out.extend_from_slice(&c.to_be_bytes());
        out
    }

    pub fn keyword_id(w: &str, id: u64) -> Vec<u8> {
        let mut out = keyword(w);
        out.extend_from_slice(&id.to_be_bytes());
        out
    }

    pub fn keyword_id_pos(w: &str, id: u64, pos: u32) -> Vec<u8> {
        let mut out = keyword_id(w, id);
        out.extend_from_slice(&pos.to_be_bytes());
        out
    }

    /// 8-byte id followed by the 4-byte weight or position.
    pub fn id_value(id: u64, value: u32) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[..8].copy_from_slice(&id.to_be_bytes());
        out[8..].copy_from_slice(&value.to_be_bytes());
        out
    }

    pub fn split_id_value(bytes: &[u8]) -> Option<(u64, u32)> {
        if bytes.len() != 12 {
            return None;
        }
        let id = u64::from_be_bytes(bytes[..8].try_into().ok()?);
        let value = u32::from_be_bytes(bytes[8..].try_into().ok()?);
        Some((id, value))
    }

    /// Inverse of [`keyword_counter`].
    pub fn split_keyword_counter(bytes: &[u8]) -> Option<(String, u32)> {
        if bytes.len() < 6 {
            return None;
        }
        let len = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        if bytes.len() != 2 + len + 4 {
            return None;
        }
        let w = std::str::from_utf8(&bytes[2..2 + len]).ok()?.to_owned();
        let c = u32::from_be_bytes(bytes[2 + len..].try_into().ok()?);
        Some((w, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn key(seed: u64) -> Key {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        k
    }

    #[test]
    fn prf_matches_rfc4231_case_2() {
        // The vector's key is 4 bytes, so drive the MAC directly.
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(b"Jefe").unwrap();
        mac.update(b"what do ya want for nothing?");
        let tag: [u8; 32] = mac.finalize().into_bytes().into();
        assert_eq!(
            hex::encode(tag),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn prf_is_deterministic() {
        let k = key(1);
        assert_eq!(prf(&k, b"a"), prf(&k, b"a"));
    }

    #[test]
    fn prf_separates_inputs_and_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let k1 = key(2);
        let k2 = key(3);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let a: [u8; 16] = rng.random();
            let b: [u8; 16] = rng.random();
            if a == b {
                continue;
            }
            assert_ne!(prf(&k1, &a), prf(&k1, &b));
            assert_ne!(prf(&k1, &a), prf(&k2, &a));
            assert!(seen.insert(prf(&k1, &a)));
        }
    }

    #[test]
    fn h1_bucket_distribution_is_uniform() {
        // Chi-square over 64 buckets, 63 degrees of freedom. The p = 0.01
        // critical value is 92.01.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let buckets = 64usize;
        let samples = 100_000usize;
        let mut counts = vec![0u64; buckets];
        for _ in 0..samples {
            let x: [u8; 12] = rng.random();
            counts[hash_h1(&x) as usize % buckets] += 1;
        }
        let expected = samples as f64 / buckets as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 92.01, "chi-square {chi2}");
    }

    #[test]
    fn h2_collision_rate_near_birthday_bound() {
        // Pairwise collisions among N draws from 2^16 - 1 values:
        // N(N-1)/2 / 65535 ~ 76,292 for N = 10^5.
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let mut counts = vec![0u64; 1 << 16];
        let n = 100_000u64;
        for _ in 0..n {
            let x: [u8; 12] = rng.random();
            let fp = hash_h2(&x, 16);
            assert!((1..1 << 16).contains(&fp));
            counts[fp as usize] += 1;
        }
        let pairs: u64 = counts.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
        let expected = (n * (n - 1) / 2) as f64 / 65_535.0;
        let ratio = pairs as f64 / expected;
        assert!((0.95..1.05).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn h2_remaps_zero() {
        assert_eq!(remap_zero(0), 1);
        assert_eq!(remap_zero(5), 5);
        assert_eq!(truncate_top(0x0000_ffff, 16), 0);
    }

    #[test]
    fn xor_pad_preserves_length_and_rejects_oversize() {
        let k = key(4);
        assert_eq!(xor_pad(&k, b"w", &[0u8; 12]).unwrap().len(), 12);
        assert_eq!(
            xor_pad(&k, b"w", &vec![0u8; MAX_PAD_LEN + 1]),
            Err(CryptoError::PlaintextTooLong {
                len: MAX_PAD_LEN + 1,
                max: MAX_PAD_LEN
            })
        );
    }

    #[test]
    fn xor_pad_short_plaintext_uses_prf_directly() {
        let k = key(5);
        let ct = xor_pad(&k, b"label", &[0u8; 20]).unwrap();
        assert_eq!(ct[..], prf(&k, b"label")[..20]);
    }

    #[test]
    fn xor_pad_long_plaintext_uses_block_stream() {
        let k = key(6);
        let ct = xor_pad(&k, b"label", &[0u8; 40]).unwrap();
        let seed = prf(&k, b"label");
        let mut input = seed.to_vec();
        input.extend_from_slice(&1u32.to_be_bytes());
        assert_eq!(ct[32..], sha256(&input)[..8]);
    }

    #[test]
    fn keystream_is_an_involution_of_any_length() {
        let k = key(9);
        let msg: Vec<u8> = (0..10_000u32).map(|i| i as u8).collect();
        let mut buf = msg.clone();
        keystream_xor(&k, b"n1", &mut buf);
        assert_ne!(buf, msg);
        let mut other = msg.clone();
        keystream_xor(&k, b"n2", &mut other);
        assert_ne!(buf, other);
        keystream_xor(&k, b"n1", &mut buf);
        assert_eq!(buf, msg);
    }

    #[test]
    fn keyword_counter_round_trip() {
        let enc = encode::keyword_counter("002:friendship", 3);
        assert_eq!(
            encode::split_keyword_counter(&enc),
            Some(("002:friendship".to_owned(), 3))
        );
        assert_eq!(encode::split_keyword_counter(&enc[..5]), None);
    }

    proptest! {
        #[test]
        fn xor_pad_is_an_involution(label in proptest::collection::vec(any::<u8>(), 1..40),
                                    msg in proptest::collection::vec(any::<u8>(), 0..200)) {
            let k = key(9);
            let ct = xor_pad(&k, &label, &msg).unwrap();
            prop_assert_eq!(xor_pad(&k, &label, &ct).unwrap(), msg);
        }

        #[test]
        fn xor_pad_reuse_leaks_xor(m1 in proptest::array::uniform12(any::<u8>()),
                                   m2 in proptest::array::uniform12(any::<u8>())) {
            let k = key(10);
            let c1 = xor_pad(&k, b"w", &m1).unwrap();
            let c2 = xor_pad(&k, b"w", &m2).unwrap();
            let lhs: Vec<u8> = c1.iter().zip(&c2).map(|(a, b)| a ^ b).collect();
            let rhs: Vec<u8> = m1.iter().zip(&m2).map(|(a, b)| a ^ b).collect();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
