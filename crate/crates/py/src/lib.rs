//! Python bindings: the encrypted graph index, the OXT baseline and the
//! dataset helpers.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use secgraph_core::config::{SchemeParams, SearchMode, Variant};
use secgraph_core::filters::FilterParams;
use secgraph_core::ingest::{self, EdgeType, SnapOptions, Weights};
use secgraph_core::oxt::{self, Oxt, OxtKeys};
use secgraph_core::{ClientError, ClientOptions, RankedResult};

fn client_err(e: ClientError) -> PyErr {
    if e.is_not_found() {
        PyKeyError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pairs(r: RankedResult) -> Vec<(u64, u32)> {
    r.hits.into_iter().map(|h| (h.id, h.weight)).collect()
}

/// An encrypted graph index behind a simulated enclave.
#[pyclass(module = "secgraph")]
pub struct SecGraph {
    inner: secgraph_core::SecGraph,
}

#[pymethods]
impl SecGraph {
    #[new]
    #[pyo3(signature = (
        mode = "exact",
        variant = "base",
        fingerprint_bits = 16,
        subfilter_capacity = 10_000,
        bucket_size = 4,
        gram_len = 2,
        hardened_pad = false,
        cache_mb = 128,
        seed = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mode: &str,
        variant: &str,
        fingerprint_bits: u8,
        subfilter_capacity: usize,
        bucket_size: u8,
        gram_len: u8,
        hardened_pad: bool,
        cache_mb: usize,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mode = match mode {
            "exact" => SearchMode::Exact,
            "fuzzy" => SearchMode::Fuzzy,
            other => return Err(value_err(format!("unknown mode {other:?}"))),
        };
        let mut cfg = variant.parse::<Variant>().map_err(value_err)?.config();
        cfg.hardened_pad = hardened_pad;
        let filter = FilterParams::new(fingerprint_bits, subfilter_capacity, bucket_size).map_err(value_err)?;
        let mut params = SchemeParams::new(mode, filter, cfg).map_err(value_err)?;
        params.gram_len = gram_len;
        let opts = ClientOptions {
            cache_bytes: cache_mb << 20,
            seed,
        };
        let inner = secgraph_core::SecGraph::create(params, opts).map_err(client_err)?;
        Ok(SecGraph { inner })
    }

    /// Reopens a database written by `save`.
    #[staticmethod]
    #[pyo3(signature = (path, cache_mb = 128, seed = None))]
    fn open(path: PathBuf, cache_mb: usize, seed: Option<u64>) -> PyResult<Self> {
        let opts = ClientOptions {
            cache_bytes: cache_mb << 20,
            seed,
        };
        let inner = secgraph_core::SecGraph::open(path, opts).map_err(client_err)?;
        Ok(SecGraph { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(client_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode() {
            SearchMode::Exact => "exact",
            SearchMode::Fuzzy => "fuzzy",
        }
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.params().variant.variant().to_string()
    }

    #[pyo3(signature = (keyword, id, weight = 1))]
    fn insert(&mut self, keyword: &str, id: u64, weight: u32) -> PyResult<()> {
        self.inner.insert(keyword, id, weight).map_err(client_err)
    }

    fn delete(&mut self, keyword: &str, id: u64) -> PyResult<()> {
        self.inner.delete(keyword, id).map_err(client_err)
    }

    fn add_name(&mut self, id: u64, name: &str) -> PyResult<()> {
        self.inner.add_name(id, name).map_err(client_err)
    }

    fn remove_name(&mut self, id: u64, name: &str) -> PyResult<()> {
        self.inner.remove_name(id, name).map_err(client_err)
    }

    /// Ranked `(id, weight)` pairs adjacent to every keyword.
    #[pyo3(signature = (keywords, top_k = None))]
    fn search(&mut self, keywords: Vec<String>, top_k: Option<u32>) -> PyResult<Vec<(u64, u32)>> {
        self.inner.search(&keywords, top_k).map(pairs).map_err(client_err)
    }

    /// Ranked `(id, occurrences)` pairs whose name contains `pattern`.
    #[pyo3(signature = (pattern, top_k = None))]
    fn fuzzy_search(&mut self, pattern: &str, top_k: Option<u32>) -> PyResult<Vec<(u64, u32)>> {
        self.inner.fuzzy_search(pattern, top_k).map(pairs).map_err(client_err)
    }

    /// Live entries under `keyword`.
    fn count(&self, keyword: &str) -> u32 {
        self.inner.counter(keyword)
    }

    fn stats(&self) -> HashMap<&'static str, usize> {
        let s = self.inner.stats();
        HashMap::from([
            ("tset_entries", s.tset_entries),
            ("itset_entries", s.itset_entries),
            ("subfilters", s.subfilters),
            ("fingerprints", s.fingerprints),
            ("xset_bytes", s.xset_bytes),
        ])
    }

    /// Message counts of the most recent operation.
    fn last_op_counts(&self) -> HashMap<&'static str, u64> {
        let c = self.inner.boundary().counter().last();
        HashMap::from([
            ("token_roundtrips", c.token_roundtrips),
            ("data_ocalls", c.data_ocalls),
            ("subfilter_loads", c.subfilter_loads),
            ("ecalls", c.ecalls),
        ])
    }

    fn __repr__(&self) -> String {
        let s = self.inner.stats();
        format!(
            "SecGraph(mode={:?}, variant={:?}, entries={}, subfilters={})",
            self.mode(),
            self.variant(),
            s.tset_entries,
            s.subfilters
        )
    }
}

/// The two-roundtrip OXT baseline over a static corpus.
#[pyclass(module = "secgraph", name = "Oxt")]
pub struct PyOxt {
    inner: Oxt,
}

#[pymethods]
impl PyOxt {
    /// `entries` is a list of `(keyword, id, weight)` triples.
    #[new]
    #[pyo3(signature = (entries, seed = 0))]
    fn new(entries: Vec<(String, u64, u32)>, seed: u64) -> PyResult<Self> {
        let corpus = oxt::corpus_from(entries.iter().map(|(w, id, v)| (w.as_str(), *id, *v)));
        let mut inner = Oxt::new(OxtKeys::generate(&mut ChaCha20Rng::seed_from_u64(seed)));
        inner.build(&corpus).map_err(value_err)?;
        Ok(PyOxt { inner })
    }

    /// Returns the ranked pairs and the number of roundtrips used.
    #[pyo3(signature = (keywords, top_k = None))]
    fn search(&self, keywords: Vec<String>, top_k: Option<u32>) -> PyResult<(Vec<(u64, u32)>, u32)> {
        let o = self.inner.search(&keywords, top_k).map_err(value_err)?;
        Ok((pairs(o.result), o.cost.roundtrips))
    }
}

/// Parses a SNAP edge list into `(keyword, id_in, weight)` triples.
#[pyfunction]
#[pyo3(signature = (path, edge_type = "friendship", directed = false, weight_seed = None))]
fn parse_snap(path: PathBuf, edge_type: &str, directed: bool, weight_seed: Option<u64>) -> PyResult<Vec<(String, u64, u32)>> {
    let opts = SnapOptions {
        edge_type: edge_type.parse::<EdgeType>().map_err(value_err)?,
        directed,
        weights: weight_seed.map_or(Weights::Unit, Weights::Seeded),
    };
    let g = ingest::parse_snap_file(path, opts).map_err(value_err)?;
    Ok(g.triples.into_iter().map(|t| (t.keyword, t.id_in, t.weight)).collect())
}

#[pyfunction]
#[pyo3(signature = (name, s = 2))]
fn split_name(name: &str, s: usize) -> PyResult<Vec<(String, u32)>> {
    let grams = ingest::split_name(name, s).map_err(value_err)?;
    Ok(grams.into_iter().map(|g| (g.sub, g.pos)).collect())
}

#[pyfunction]
fn edge_keyword(id_out: u64, edge_type: &str) -> PyResult<String> {
    Ok(ingest::edge_keyword(id_out, edge_type.parse().map_err(value_err)?))
}

#[pymodule]
fn secgraph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SecGraph>()?;
    m.add_class::<PyOxt>()?;
    m.add_function(wrap_pyfunction!(parse_snap, m)?)?;
    m.add_function(wrap_pyfunction!(split_name, m)?)?;
    m.add_function(wrap_pyfunction!(edge_keyword, m)?)?;
    Ok(())
}
