use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::filters::{FilterError, FilterParams};

/// What a database indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Posting lists of `(id, weight)` under `id_out:type` keywords.
    Exact,
    /// Posting lists of `(id, pos)` under fixed-length name grams.
    Fuzzy,
}

impl SearchMode {
    pub fn to_byte(self) -> u8 {
        match self {
            SearchMode::Exact => 0,
            SearchMode::Fuzzy => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(SearchMode::Exact),
            1 => Some(SearchMode::Fuzzy),
            _ => None,
        }
    }
}

/// Default number of keyword-derived high bits in a grouped fingerprint.
pub const DEFAULT_GROUP_BITS: u8 = 8;

/// Search-time optimisations and pad mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    /// Fingerprint grouping: high bits come from the keyword.
    pub grouping: bool,
    /// Prefetch then check memberships concurrently.
    pub parallel: bool,
    pub group_bits: u8,
    /// Derive pads from `(w, counter)` / `(w, id)` instead of `w` alone.
    pub hardened_pad: bool,
    /// Worker count for the parallel check phase; 0 means rayon's default.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Variant::Base.config()
    }
}

impl VariantConfig {
    pub fn variant(&self) -> Variant {
        match (self.grouping, self.parallel) {
            (false, false) => Variant::Base,
            (true, false) => Variant::G,
            (false, true) => Variant::P,
            (true, true) => Variant::A,
        }
    }

    pub fn flags(&self) -> u8 {
        self.grouping as u8 | (self.parallel as u8) << 1 | (self.hardened_pad as u8) << 2
    }

    pub fn from_flags(flags: u8, group_bits: u8) -> Option<Self> {
        if flags & !0b111 != 0 {
            return None;
        }
        Some(VariantConfig {
            grouping: flags & 1 != 0,
            parallel: flags & 2 != 0,
            group_bits,
            hardened_pad: flags & 4 != 0,
            threads: 0,
        })
    }
}

/// The four scheme variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Base,
    /// Fingerprint grouping.
    G,
    /// Checking parallelisation.
    P,
    /// Both.
    A,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::G, Variant::P, Variant::A];

    pub fn config(self) -> VariantConfig {
        VariantConfig {
            grouping: matches!(self, Variant::G | Variant::A),
            parallel: matches!(self, Variant::P | Variant::A),
            group_bits: DEFAULT_GROUP_BITS,
            hardened_pad: false,
            threads: 0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::G => "g",
            Variant::P => "p",
            Variant::A => "a",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "g" => Ok(Variant::G),
            "p" => Ok(Variant::P),
            "a" => Ok(Variant::A),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

/// Default fuzzy gram length.
pub const DEFAULT_GRAM_LEN: u8 = 2;

fn default_gram_len() -> u8 {
    DEFAULT_GRAM_LEN
}

/// Everything both halves must agree on. All but `gram_len` is persisted
/// in the EDB header; the gram length only matters to the trusted side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub mode: SearchMode,
    pub filter: FilterParams,
    pub variant: VariantConfig,
    #[serde(default = "default_gram_len")]
    pub gram_len: u8,
}

impl SchemeParams {
    pub fn new(mode: SearchMode, filter: FilterParams, variant: VariantConfig) -> Result<Self, FilterError> {
        if variant.grouping
            && (variant.group_bits == 0 || variant.group_bits >= filter.fingerprint_bits())
        {
            return Err(FilterError::InvalidParams(format!(
                "group bits {} must lie strictly between 0 and {}",
                variant.group_bits,
                filter.fingerprint_bits()
            )));
        }
        Ok(SchemeParams {
            mode,
            filter,
            variant,
            gram_len: DEFAULT_GRAM_LEN,
        })
    }

    pub fn exact() -> Self {
        SchemeParams {
            mode: SearchMode::Exact,
            filter: FilterParams::default(),
            variant: VariantConfig::default(),
            gram_len: DEFAULT_GRAM_LEN,
        }
    }

    pub fn fuzzy() -> Self {
        SchemeParams {
            mode: SearchMode::Fuzzy,
            ..Self::exact()
        }
    }

    /// Compatible databases may be searched under either setting of
    /// `parallel`; grouping and pad mode change what is stored.
    pub fn storage_compatible(&self, other: &SchemeParams) -> bool {
        self.mode == other.mode
            && self.filter == other.filter
            && self.variant.grouping == other.variant.grouping
            && (!self.variant.grouping || self.variant.group_bits == other.variant.group_bits)
            && self.variant.hardened_pad == other.variant.hardened_pad
    }
}
