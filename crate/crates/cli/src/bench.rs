//! Query-grid and parameter-sweep measurements, emitted as CSV.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use rand::seq::{IndexedRandom, IteratorRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use secgraph_core::config::{SchemeParams, SearchMode, Variant, VariantConfig};
use secgraph_core::crypto;
use secgraph_core::enclave::tokens;
use secgraph_core::filters::{FilterParams, SubFilter, SubFilterId};
use secgraph_core::ingest::EdgeTriple;
use secgraph_core::oxt::{Corpus, Group, Oxt, OxtKeys};
use secgraph_core::{ClientOptions, SecGraph};

/// Column order of the CSV output.
pub const CSV_HEADER: [&str; 11] = [
    "variant",
    "dataset",
    "capacity",
    "n",
    "wall_us",
    "ocalls",
    "subfilters_loaded",
    "bytes_cached",
    "roundtrips",
    "result_size",
    "false_positives",
];

/// One query execution under one scheme variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRecord {
    pub variant: String,
    pub dataset: String,
    /// Sub-filter capacity in fingerprints; 0 for the OXT baseline.
    pub capacity: usize,
    pub n: usize,
    pub wall_us: u64,
    pub ocalls: u64,
    pub subfilters_loaded: u64,
    pub bytes_cached: u64,
    pub roundtrips: u64,
    pub result_size: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchVariant {
    Scheme(Variant),
    Oxt,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 5] = [
        BenchVariant::Scheme(Variant::Base),
        BenchVariant::Scheme(Variant::G),
        BenchVariant::Scheme(Variant::P),
        BenchVariant::Scheme(Variant::A),
        BenchVariant::Oxt,
    ];
}

impl fmt::Display for BenchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchVariant::Scheme(v) => v.fmt(f),
            BenchVariant::Oxt => f.write_str("oxt"),
        }
    }
}

impl FromStr for BenchVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("oxt") {
            Ok(BenchVariant::Oxt)
        } else {
            s.parse().map(BenchVariant::Scheme)
        }
    }
}

pub fn corpus_from_triples<'a>(triples: impl IntoIterator<Item = &'a EdgeTriple>) -> Corpus {
    let mut c = Corpus::new();
    for t in triples {
        c.entry(t.keyword.clone()).or_default().push((t.id_in, t.weight));
    }
    c
}

/// Ids of the first keyword's list present in every other list, ranked.
pub fn plaintext_search(corpus: &Corpus, keywords: &[String]) -> Vec<(u64, u32)> {
    let Some((first, rest)) = keywords.split_first() else {
        return Vec::new();
    };
    let sets: Vec<BTreeSet<u64>> = rest
        .iter()
        .map(|w| corpus.get(w).map(|l| l.iter().map(|p| p.0).collect()).unwrap_or_default())
        .collect();
    let mut hits: Vec<(u64, u32)> = corpus
        .get(first)
        .map(|l| l.iter().copied().filter(|(id, _)| sets.iter().all(|s| s.contains(id))).collect())
        .unwrap_or_default();
    hits.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    hits
}

/// `count` conjunctive queries of `n` distinct keywords. Each is drawn
/// around a random id that appears in at least `n` lists, so most queries
/// have a non-empty answer; if no id qualifies, keywords are drawn
/// uniformly.
pub fn generate_queries(corpus: &Corpus, n: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<String>> {
    let mut lists_of: HashMap<u64, Vec<&String>> = HashMap::new();
    for (w, l) in corpus {
        for &(id, _) in l {
            lists_of.entry(id).or_default().push(w);
        }
    }
    let mut hubs: Vec<(&u64, &Vec<&String>)> = lists_of.iter().filter(|(_, ws)| ws.len() >= n).collect();
    hubs.sort_by_key(|(id, _)| **id);
    let keys: Vec<&String> = corpus.keys().collect();
    if keys.len() < n || n == 0 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let pool: &[&String] = match hubs.choose(rng) {
                Some((_, ws)) => ws,
                None => &keys,
            };
            pool.iter().choose_multiple(rng, n).into_iter().map(|w| (*w).clone()).collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub variants: Vec<BenchVariant>,
    pub n_values: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub filter: FilterParams,
    pub group_bits: u8,
    pub hardened_pad: bool,
    pub cache_bytes: usize,
    /// Width of the P variants' check pool; 0 uses the global pool.
    pub threads: usize,
    pub top_k: Option<u32>,
    /// Empty the enclave cache before every query so each one pays for
    /// its own sub-filter loads.
    pub cold_cache: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            variants: BenchVariant::ALL.to_vec(),
            n_values: vec![2, 4, 6, 8, 10],
            repeats: 20,
            seed: 1,
            filter: FilterParams::default(),
            group_bits: secgraph_core::config::DEFAULT_GROUP_BITS,
            hardened_pad: false,
            cache_bytes: secgraph_core::enclave::DEFAULT_CACHE_BYTES,
            threads: 0,
            top_k: None,
            cold_cache: true,
        }
    }
}

impl BenchConfig {
    pub fn params(&self, variant: Variant, filter: FilterParams) -> Result<SchemeParams> {
        let mut v: VariantConfig = variant.config();
        v.hardened_pad = self.hardened_pad;
        if v.grouping {
            v.group_bits = self.group_bits;
        }
        v.threads = self.threads;
        Ok(SchemeParams::new(SearchMode::Exact, filter, v)?)
    }
}

/// A named plaintext corpus.
#[derive(Debug, Clone)]
pub struct Workload {
    pub dataset: String,
    pub corpus: Corpus,
}

impl Workload {
    pub fn queries(&self, cfg: &BenchConfig) -> BTreeMap<usize, Vec<Vec<String>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        cfg.n_values
            .iter()
            .map(|&n| (n, generate_queries(&self.corpus, n, cfg.repeats, &mut rng)))
            .collect()
    }

    pub fn build(&self, params: SchemeParams, cfg: &BenchConfig) -> Result<SecGraph> {
        let mut g = SecGraph::create(
            params,
            ClientOptions {
                cache_bytes: cfg.cache_bytes,
                seed: Some(cfg.seed),
            },
        )?;
        for (w, l) in &self.corpus {
            for &(id, weight) in l {
                g.insert(w, id, weight)?;
            }
        }
        Ok(g)
    }

    fn false_positives(&self, q: &[String], ids: &[u64]) -> usize {
        let truth: BTreeSet<u64> = plaintext_search(&self.corpus, q).into_iter().map(|h| h.0).collect();
        ids.iter().filter(|id| !truth.contains(id)).count()
    }

    fn run_scheme(
        &self,
        g: &mut SecGraph,
        label: &str,
        queries: &BTreeMap<usize, Vec<Vec<String>>>,
        cfg: &BenchConfig,
        out: &mut Vec<BenchRecord>,
    ) -> Result<()> {
        let capacity = g.params().filter.capacity();
        for (&n, qs) in queries {
            for q in qs {
                if cfg.cold_cache {
                    g.boundary_mut().enclave_mut().clear_cache();
                }
                let start = Instant::now();
                let r = g.search(q, cfg.top_k)?;
                let wall = start.elapsed();
                let c = g.boundary().counter().last();
                let ids = r.ids();
                out.push(BenchRecord {
                    variant: label.to_owned(),
                    dataset: self.dataset.clone(),
                    capacity,
                    n,
                    wall_us: wall.as_micros() as u64,
                    ocalls: c.token_roundtrips + c.data_ocalls,
                    subfilters_loaded: c.subfilter_loads,
                    bytes_cached: g.boundary().enclave().cache_stats().bytes_used as u64,
                    roundtrips: c.token_roundtrips,
                    result_size: ids.len(),
                    false_positives: self.false_positives(q, &ids),
                });
            }
        }
        Ok(())
    }

    fn run_oxt(&self, queries: &BTreeMap<usize, Vec<Vec<String>>>, cfg: &BenchConfig, out: &mut Vec<BenchRecord>) -> Result<()> {
        let mut oxt = Oxt::new(OxtKeys::generate(&mut rand_chacha::ChaCha20Rng::seed_from_u64(cfg.seed)));
        oxt.build(&self.corpus)?;
        for (&n, qs) in queries {
            for q in qs {
                let start = Instant::now();
                let o = oxt.search(q, cfg.top_k)?;
                let wall = start.elapsed();
                let ids = o.result.ids();
                out.push(BenchRecord {
                    variant: BenchVariant::Oxt.to_string(),
                    dataset: self.dataset.clone(),
                    capacity: 0,
                    n,
                    wall_us: wall.as_micros() as u64,
                    ocalls: o.cost.roundtrips as u64,
                    subfilters_loaded: 0,
                    bytes_cached: 0,
                    roundtrips: o.cost.roundtrips as u64,
                    result_size: ids.len(),
                    false_positives: self.false_positives(q, &ids),
                });
            }
        }
        Ok(())
    }

    /// Every configured variant over the same query set.
    pub fn run_grid(&self, cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
        let queries = self.queries(cfg);
        let mut out = Vec::new();
        for &v in &cfg.variants {
            match v {
                BenchVariant::Scheme(s) => {
                    let mut g = self.build(cfg.params(s, cfg.filter)?, cfg)?;
                    self.run_scheme(&mut g, &v.to_string(), &queries, cfg, &mut out)?;
                }
                BenchVariant::Oxt => self.run_oxt(&queries, cfg, &mut out)?,
            }
        }
        Ok(out)
    }

    /// The scheme variants of `cfg` rebuilt at each sub-filter capacity.
    pub fn capacity_sweep(&self, cfg: &BenchConfig, capacities: &[usize]) -> Result<Vec<BenchRecord>> {
        let queries = self.queries(cfg);
        let mut out = Vec::new();
        for &cap in capacities {
            let filter = FilterParams::new(cfg.filter.fingerprint_bits(), cap, cfg.filter.bucket_size())?;
            for &v in &cfg.variants {
                if let BenchVariant::Scheme(s) = v {
                    let mut g = self.build(cfg.params(s, filter)?, cfg)?;
                    self.run_scheme(&mut g, &v.to_string(), &queries, cfg, &mut out)?;
                }
            }
        }
        Ok(out)
    }
}

/// Capacities of the sub-filter size sweep.
pub const SWEEP_CAPACITIES: [usize; 5] = [5_000, 10_000, 20_000, 40_000, 80_000];

pub fn write_csv(records: &[BenchRecord], w: impl Write) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Mean cost per (variant, capacity, n) as an aligned text table.
pub fn summary(records: &[BenchRecord]) -> String {
    #[derive(Default)]
    struct Acc {
        count: u64,
        wall: u64,
        loads: u64,
        rt: u64,
        fp: usize,
    }
    let mut groups: BTreeMap<(String, usize, usize), Acc> = BTreeMap::new();
    for r in records {
        let a = groups.entry((r.variant.clone(), r.capacity, r.n)).or_default();
        a.count += 1;
        a.wall += r.wall_us;
        a.loads += r.subfilters_loaded;
        a.rt += r.roundtrips;
        a.fp += r.false_positives;
    }
    let mut s = format!(
        "{:<8} {:>9} {:>4} {:>7} {:>12} {:>12} {:>10} {:>6}\n",
        "variant", "capacity", "n", "queries", "mean_us", "mean_loads", "roundtrips", "fp"
    );
    for ((v, cap, n), a) in groups {
        let c = a.count.max(1) as f64;
        s.push_str(&format!(
            "{:<8} {:>9} {:>4} {:>7} {:>12.1} {:>12.2} {:>10.2} {:>6}\n",
            v,
            cap,
            n,
            a.count,
            a.wall as f64 / c,
            a.loads as f64 / c,
            a.rt as f64 / c,
            a.fp
        ));
    }
    s
}

/// Mean time of one candidate check: fingerprinting a fresh xtag and
/// probing a loaded sub-filter.
pub fn time_membership_checks(ops: usize, seed: u64) -> Result<Duration> {
    let params = SchemeParams::exact();
    let mut filter = SubFilter::new(params.filter, SubFilterId::ROOT);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fill = params.filter.split_threshold() * 9 / 10;
    for i in 0..fill {
        let xtag = tokens::xtag(SearchMode::Exact, "fill", i as u64, 0);
        filter.insert(tokens::fingerprint(&params, "fill", &xtag), crypto::hash_h1(&xtag))?;
    }
    let probes: Vec<u64> = (0..ops).map(|_| rng.random()).collect();
    let start = Instant::now();
    let mut hits = 0usize;
    for id in probes {
        let xtag = tokens::xtag(SearchMode::Exact, "probe", id, 0);
        let fp = tokens::fingerprint(&params, "probe", &xtag);
        if filter.contains(fp, crypto::hash_h1(&xtag))? {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    std::hint::black_box(hits);
    Ok(elapsed / ops.max(1) as u32)
}

/// Mean time of one baseline candidate check `xtoken^y mod p`.
pub fn time_exponentiations(ops: usize, seed: u64) -> Duration {
    let grp = Group::modp2048();
    let key = [seed as u8; 32];
    let mut base = grp.exp(&grp.g, &grp.exponent(&key, b"base"));
    let exps: Vec<_> = (0..ops as u32).map(|i| grp.exponent(&key, &i.to_be_bytes())).collect();
    let start = Instant::now();
    for e in &exps {
        base = grp.exp(&base, e);
    }
    let elapsed = start.elapsed();
    std::hint::black_box(base);
    elapsed / ops.max(1) as u32
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.parse() {
            Ok(v) => out.push(v),
            Err(e) => bail!("invalid list item {part:?}: {e}"),
        }
    }
    Ok(out)
}
