pub mod boundary;
pub mod client;
pub mod config;
pub mod crypto;
pub mod edb;
pub mod enclave;
pub mod filters;
pub mod ingest;
pub mod oxt;
mod wire;

pub use client::{ClientError, ClientOptions, SecGraph};
pub use config::{SchemeParams, SearchMode, Variant, VariantConfig};
pub use enclave::{Hit, RankedResult, SearchQuery};
pub use wire::WireError;
