use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use secgraph_core::config::{SchemeParams, SearchMode, Variant, DEFAULT_GROUP_BITS};
use secgraph_core::filters::FilterParams;
use secgraph_core::ingest::{self, EdgeType, SnapOptions, Weights};
use secgraph_core::oxt::{Oxt, OxtKeys};
use secgraph_core::{ClientError, ClientOptions, RankedResult, SecGraph};

use crate::bench::{self, BenchConfig, Workload};

#[derive(Debug, Parser)]
#[command(name = "secgraph", version, about = "Encrypted graph search over a simulated enclave")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an encrypted database from an edge list or a names file.
    Build(BuildArgs),
    /// Conjunctive search: ids adjacent to every keyword.
    Search(SearchArgs),
    /// Substring search over indexed names.
    Fuzzy(FuzzyArgs),
    /// Add one posting entry (exact) or one name (fuzzy).
    Insert(UpdateArgs),
    /// Remove one posting entry (exact) or one name (fuzzy).
    Delete(UpdateArgs),
    /// Run the query grid and optionally the sub-filter size sweep.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Base,
    G,
    P,
    A,
    Oxt,
}

impl VariantArg {
    fn scheme(self) -> Option<Variant> {
        match self {
            VariantArg::Base => Some(Variant::Base),
            VariantArg::G => Some(Variant::G),
            VariantArg::P => Some(Variant::P),
            VariantArg::A => Some(Variant::A),
            VariantArg::Oxt => None,
        }
    }
}

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct SchemeArgs {
    #[arg(long, default_value_t = 16)]
    pub fingerprint_bits: u8,
    #[arg(long, default_value_t = 10_000)]
    pub subfilter_capacity: usize,
    #[arg(long, default_value_t = 4)]
    pub bucket_size: u8,
    /// Defaults to base when building and to the stored layout otherwise.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long, default_value_t = DEFAULT_GROUP_BITS)]
    pub group_bits: u8,
    #[arg(long)]
    pub topk: Option<u32>,
    /// Check-pool width for the parallel variants; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value_t = 128)]
    pub cache_mb: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hardened_pad: bool,
}

impl SchemeArgs {
    pub fn filter(&self) -> Result<FilterParams> {
        Ok(FilterParams::new(self.fingerprint_bits, self.subfilter_capacity, self.bucket_size)?)
    }

    pub fn options(&self) -> ClientOptions {
        ClientOptions {
            cache_bytes: self.cache_mb << 20,
            seed: self.seed,
        }
    }

    pub fn params(&self, mode: SearchMode, gram_len: u8) -> Result<SchemeParams> {
        let v = self.variant.unwrap_or(VariantArg::Base);
        let Some(variant) = v.scheme() else {
            bail!("the oxt baseline is in-memory only; use it with `search --edges` or `bench`");
        };
        let mut cfg = variant.config();
        cfg.hardened_pad = self.hardened_pad;
        cfg.threads = self.threads;
        if cfg.grouping {
            cfg.group_bits = self.group_bits;
        }
        let mut p = SchemeParams::new(mode, self.filter()?, cfg)?;
        p.gram_len = gram_len;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// SNAP edge list: whitespace-separated id pairs, `#` comments.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Names file: one `id<TAB>name` per line.
    #[arg(long)]
    pub names: Option<PathBuf>,
    #[arg(long, default_value = "friendship")]
    pub edge_type: EdgeType,
    #[arg(long)]
    pub directed: bool,
    /// Draw edge weights in 1..=10 from this seed instead of using 1.
    #[arg(long)]
    pub weight_seed: Option<u64>,
}

impl DatasetArgs {
    fn snap_options(&self) -> SnapOptions {
        SnapOptions {
            edge_type: self.edge_type,
            directed: self.directed,
            weights: self.weight_seed.map_or(Weights::Unit, Weights::Seeded),
        }
    }

    pub fn load_edges(&self) -> Result<(String, ingest::SnapGraph)> {
        let path = self.edges.as_ref().context("--edges is required")?;
        let g = ingest::parse_snap_file(path, self.snap_options()).with_context(|| format!("reading {}", path.display()))?;
        Ok((dataset_name(path), g))
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 2)]
    pub gram_len: u8,
    /// Output database; the enclave state is written to `<out>.enclave`.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Database written by `build`.
    #[arg(long, required_unless_present = "edges")]
    pub db: Option<PathBuf>,
    /// Build an in-memory index from this edge list instead of opening
    /// a database.
    #[arg(long, conflicts_with = "db")]
    pub edges: Option<PathBuf>,
    #[arg(long, default_value = "friendship")]
    pub edge_type: EdgeType,
    #[arg(long)]
    pub directed: bool,
    #[arg(long)]
    pub weight_seed: Option<u64>,
    /// Keywords such as `3:friendship`; a bare vertex id takes the edge type.
    #[arg(required_unless_present = "queries")]
    pub keywords: Vec<String>,
    /// Run one query per line of this file (whitespace-separated keywords)
    /// and print `keywords<TAB>id:weight,...` for each.
    #[arg(long, conflicts_with = "keywords")]
    pub queries: Option<PathBuf>,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

#[derive(Debug, Args)]
pub struct FuzzyArgs {
    #[arg(long)]
    pub db: PathBuf,
    pub pattern: String,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

#[derive(Debug, Args)]
pub struct UpdateArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Keyword (exact databases; a bare vertex id takes the edge type) or
    /// vertex id (fuzzy databases).
    pub key: String,
    /// Neighbour id (exact) or name (fuzzy).
    pub target: String,
    /// Edge weight for inserts into exact databases.
    #[arg(long, default_value_t = 1)]
    pub weight: u32,
    #[arg(long, default_value = "friendship")]
    pub edge_type: EdgeType,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Comma-separated variants out of base,g,p,a,oxt.
    #[arg(long, default_value = "base,g,p,a,oxt")]
    pub variants: String,
    /// Comma-separated keyword counts.
    #[arg(long, default_value = "2,4,6,8,10")]
    pub n: String,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    /// Also rebuild at each capacity and rerun the grid.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, default_value = "5000,10000,20000,40000,80000")]
    pub sweep_capacities: String,
    /// Keep sub-filters cached across queries.
    #[arg(long)]
    pub warm: bool,
    /// CSV output path; standard output if omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

/// Errors that map to exit code 2.
pub fn is_not_found(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ClientError>().is_some_and(ClientError::is_not_found)
}

pub fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    match cli.command {
        Command::Build(a) => build(a, out),
        Command::Search(a) => search(a, out),
        Command::Fuzzy(a) => fuzzy(a, out),
        Command::Insert(a) => update(a, true, out),
        Command::Delete(a) => update(a, false, out),
        Command::Bench(a) => run_bench(a, out),
    }
}

fn build(a: BuildArgs, out: &mut impl Write) -> Result<()> {
    let mode = match a.mode {
        ModeArg::Exact => SearchMode::Exact,
        ModeArg::Fuzzy => SearchMode::Fuzzy,
    };
    let params = a.scheme.params(mode, a.gram_len)?;
    let mut g = SecGraph::create(params, a.scheme.options())?;
    let start = Instant::now();
    let entries = match mode {
        SearchMode::Exact => {
            let (_, graph) = a.dataset.load_edges()?;
            writeln!(out, "parsed {} vertices, {} edges", graph.vertices, graph.edges)?;
            g.insert_edges(&graph.triples)?
        }
        SearchMode::Fuzzy => {
            let path = a.dataset.names.as_ref().context("--names is required in fuzzy mode")?;
            let names = ingest::parse_names_file(path).with_context(|| format!("reading {}", path.display()))?;
            g.add_names(&names)?;
            g.stats().tset_entries
        }
    };
    let secs = start.elapsed().as_secs_f64();
    g.save(&a.out)?;
    let s = g.stats();
    writeln!(
        out,
        "indexed {entries} entries in {secs:.2}s ({:.0}/s); tset={} itset={} subfilters={} fingerprints={}",
        entries as f64 / secs.max(1e-9),
        s.tset_entries,
        s.itset_entries,
        s.subfilters,
        s.fingerprints
    )?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

/// Opens a database, applying the requested variant if it is compatible
/// with the stored layout.
fn open(db: &Path, scheme: &SchemeArgs) -> Result<SecGraph> {
    let mut g = SecGraph::open(db, scheme.options()).with_context(|| format!("opening {}", db.display()))?;
    let stored = g.params();
    let enclave = g.boundary_mut().enclave_mut();
    enclave.set_threads(scheme.threads)?;
    if let Some(v) = scheme.variant {
        let Some(v) = v.scheme() else {
            bail!("the oxt baseline cannot search a database; pass --edges instead");
        };
        let want = v.config();
        if want.grouping != stored.variant.grouping {
            bail!(
                "database was built with variant {}; grouping differs from {v}, rebuild to switch",
                stored.variant.variant()
            );
        }
        g.boundary_mut().set_parallel(want.parallel);
    }
    Ok(g)
}

fn print_result(out: &mut impl Write, r: &RankedResult) -> Result<()> {
    for h in &r.hits {
        writeln!(out, "{}\t{}", h.id, h.weight)?;
    }
    Ok(())
}

fn keyword(k: &str, edge_type: EdgeType) -> String {
    match k.parse::<u64>() {
        Ok(id) => ingest::edge_keyword(id, edge_type),
        Err(_) => k.to_owned(),
    }
}

fn read_queries(path: &Path, edge_type: EdgeType) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(|k| keyword(k, edge_type)).collect::<Vec<_>>())
        .filter(|q| !q.is_empty())
        .collect())
}

enum Searcher {
    Scheme(Box<SecGraph>),
    Oxt(Box<Oxt>),
}

impl Searcher {
    fn search(&mut self, keywords: &[String], top_k: Option<u32>) -> Result<RankedResult> {
        Ok(match self {
            Searcher::Scheme(g) => g.search(keywords, top_k)?,
            Searcher::Oxt(o) => o.search(keywords, top_k)?.result,
        })
    }
}

fn search(a: SearchArgs, out: &mut impl Write) -> Result<()> {
    let mut searcher = match (&a.db, &a.edges) {
        (Some(db), _) => Searcher::Scheme(Box::new(open(db, &a.scheme)?)),
        (None, edges) => {
            let data = DatasetArgs {
                edges: edges.clone(),
                names: None,
                edge_type: a.edge_type,
                directed: a.directed,
                weight_seed: a.weight_seed,
            };
            let (_, graph) = data.load_edges()?;
            if a.scheme.variant == Some(VariantArg::Oxt) {
                let seed = a.scheme.seed.unwrap_or(0);
                let mut oxt = Oxt::new(OxtKeys::generate(&mut ChaCha20Rng::seed_from_u64(seed)));
                oxt.build(&bench::corpus_from_triples(&graph.triples))?;
                Searcher::Oxt(Box::new(oxt))
            } else {
                let mut g = SecGraph::create(a.scheme.params(SearchMode::Exact, 2)?, a.scheme.options())?;
                g.insert_edges(&graph.triples)?;
                Searcher::Scheme(Box::new(g))
            }
        }
    };
    match &a.queries {
        None => {
            let keywords: Vec<String> = a.keywords.iter().map(|k| keyword(k, a.edge_type)).collect();
            let r = searcher.search(&keywords, a.scheme.topk)?;
            print_result(out, &r)
        }
        Some(path) => {
            for q in read_queries(path, a.edge_type)? {
                let r = searcher.search(&q, a.scheme.topk)?;
                let hits: Vec<String> = r.hits.iter().map(|h| format!("{}:{}", h.id, h.weight)).collect();
                writeln!(out, "{}\t{}", q.join(" "), hits.join(","))?;
            }
            Ok(())
        }
    }
}

fn fuzzy(a: FuzzyArgs, out: &mut impl Write) -> Result<()> {
    let mut g = open(&a.db, &a.scheme)?;
    let r = g.fuzzy_search(&a.pattern, a.scheme.topk)?;
    print_result(out, &r)
}

fn update(a: UpdateArgs, insert: bool, out: &mut impl Write) -> Result<()> {
    let mut g = open(&a.db, &a.scheme)?;
    match g.mode() {
        SearchMode::Exact => {
            let id: u64 = a.target.parse().with_context(|| format!("neighbour id {:?}", a.target))?;
            let kw = keyword(&a.key, a.edge_type);
            if insert {
                g.insert(&kw, id, a.weight)?;
            } else {
                g.delete(&kw, id)?;
            }
        }
        SearchMode::Fuzzy => {
            let id: u64 = a.key.parse().with_context(|| format!("vertex id {:?}", a.key))?;
            if insert {
                g.add_name(id, &a.target)?;
            } else {
                g.remove_name(id, &a.target)?;
            }
        }
    }
    g.save(&a.db)?;
    writeln!(out, "{} {} {}", if insert { "inserted" } else { "deleted" }, a.key, a.target)?;
    Ok(())
}

fn run_bench(a: BenchArgs, out: &mut impl Write) -> Result<()> {
    let (name, graph) = a.dataset.load_edges()?;
    let workload = Workload {
        dataset: name,
        corpus: bench::corpus_from_triples(&graph.triples),
    };
    let cfg = BenchConfig {
        variants: bench::parse_list(&a.variants)?,
        n_values: bench::parse_list(&a.n)?,
        repeats: a.repeats,
        seed: a.scheme.seed.unwrap_or(1),
        filter: a.scheme.filter()?,
        group_bits: a.scheme.group_bits,
        hardened_pad: a.scheme.hardened_pad,
        cache_bytes: a.scheme.cache_mb << 20,
        threads: a.scheme.threads,
        top_k: a.scheme.topk,
        cold_cache: !a.warm,
    };
    let mut records = workload.run_grid(&cfg)?;
    if a.sweep {
        let caps: Vec<usize> = bench::parse_list(&a.sweep_capacities)?;
        records.extend(workload.capacity_sweep(&cfg, &caps)?);
    }
    match &a.out {
        Some(path) => {
            bench::write_csv(&records, BufWriter::new(File::create(path)?))?;
            write!(out, "{}", bench::summary(&records))?;
            writeln!(out, "wrote {} records to {}", records.len(), path.display())?;
        }
        None => {
            bench::write_csv(&records, &mut *out)?;
            io::stderr().write_all(bench::summary(&records).as_bytes())?;
        }
    }
    Ok(())
}
