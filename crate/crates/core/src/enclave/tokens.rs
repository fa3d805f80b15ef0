use crate::config::{SchemeParams, SearchMode, VariantConfig};
use crate::crypto::{self, encode, CryptoError, SecretKeys, Token};
use crate::filters::Fingerprint;

/// Everything the server receives for one inserted posting entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertTokens {
    pub stag: Token,
    pub cid: Vec<u8>,
    pub ind: Token,
    pub cstag: Vec<u8>,
    pub fingerprint: Fingerprint,
    pub bucket_hint: u32,
}

/// The pair encoding shared by the XSet tag and the ITSet address:
/// `enc(w) || id`, plus `|| pos` for fuzzy databases.
pub fn xtag(mode: SearchMode, w: &str, id: u64, value: u32) -> Vec<u8> {
    match mode {
        SearchMode::Exact => encode::keyword_id(w, id),
        SearchMode::Fuzzy => encode::keyword_id_pos(w, id, value),
    }
}

pub fn stag(keys: &SecretKeys, w: &str, counter: u32) -> Token {
    crypto::prf(&keys.k_t, &encode::keyword_counter(w, counter))
}

/// Pad label for the posting-list ciphertext at `counter`.
pub(crate) fn cid_label(variant: &VariantConfig, w: &str, counter: u32) -> Vec<u8> {
    if variant.hardened_pad {
        let mut label = vec![0x01];
        label.extend_from_slice(&encode::keyword_counter(w, counter));
        label
    } else {
        w.as_bytes().to_vec()
    }
}

/// Pad label for the ITSet ciphertext of the pair behind `xtag`.
pub(crate) fn cstag_label(variant: &VariantConfig, w: &str, xtag: &[u8]) -> Vec<u8> {
    if variant.hardened_pad {
        let mut label = vec![0x02];
        label.extend_from_slice(xtag);
        label
    } else {
        w.as_bytes().to_vec()
    }
}

/// High `group_bits` from the keyword, low bits from the pair.
pub fn grouped_fingerprint(w: &str, xtag: &[u8], fingerprint_bits: u8, group_bits: u8) -> Fingerprint {
    debug_assert!(group_bits > 0 && group_bits < fingerprint_bits);
    let low_bits = fingerprint_bits - group_bits;
    let group = crypto::hash_h2(&encode::keyword(w), fingerprint_bits) >> low_bits;
    let member = crypto::hash_h2(xtag, fingerprint_bits) & ((1u32 << low_bits) - 1);
    let combined = crypto::remap_zero(group << low_bits | member);
    Fingerprint::new(combined, fingerprint_bits).expect("combined value fits the width")
}

pub fn fingerprint(params: &SchemeParams, w: &str, xtag: &[u8]) -> Fingerprint {
    let bits = params.filter.fingerprint_bits();
    if params.variant.grouping {
        grouped_fingerprint(w, xtag, bits, params.variant.group_bits)
    } else {
        Fingerprint::new(crypto::hash_h2(xtag, bits), bits).expect("hash_h2 output fits the width")
    }
}

/// Tokens for inserting `(id, value)` as entry `counter` of `w`.
pub fn derive_tokens(
    keys: &SecretKeys,
    params: &SchemeParams,
    w: &str,
    id: u64,
    value: u32,
    counter: u32,
) -> Result<InsertTokens, CryptoError> {
    let xtag = xtag(params.mode, w, id, value);
    let cid = crypto::xor_pad(&keys.k_z, &cid_label(&params.variant, w, counter), &encode::id_value(id, value))?;
    let cstag = crypto::xor_pad(
        &keys.k_z,
        &cstag_label(&params.variant, w, &xtag),
        &encode::keyword_counter(w, counter),
    )?;
    Ok(InsertTokens {
        stag: stag(keys, w, counter),
        cid,
        ind: crypto::prf(&keys.k_x, &xtag),
        cstag,
        fingerprint: fingerprint(params, w, &xtag),
        bucket_hint: crypto::hash_h1(&xtag),
    })
}
