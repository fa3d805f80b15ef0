//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use secgraph_cli::bench::{self, BenchConfig, BenchVariant, Workload};
use secgraph_core::boundary::{EcallReply, LeakageEvent};
use secgraph_core::config::{SchemeParams, SearchMode, Variant};
use secgraph_core::crypto;
use secgraph_core::enclave::tokens;
use secgraph_core::filters::{FilterParams, InsertOutcome, SubFilter, SubFilterId};
use secgraph_core::ingest::{self, SnapOptions};
use secgraph_core::oxt::{Corpus, Oxt, OxtKeys};
use secgraph_core::{ClientOptions, RankedResult, SecGraph};

type Outcome = Result<String, String>;

/// Name, check and optional wall-clock limit.
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn opts(seed: u64) -> ClientOptions {
    ClientOptions {
        seed: Some(seed),
        ..ClientOptions::default()
    }
}

fn exact_params(variant: Variant, capacity: usize) -> SchemeParams {
    SchemeParams::new(SearchMode::Exact, FilterParams::new(16, capacity, 4).unwrap(), variant.config()).unwrap()
}

fn build(params: SchemeParams, corpus: &Corpus, seed: u64) -> SecGraph {
    let mut g = SecGraph::create(params, opts(seed)).unwrap();
    for (w, l) in corpus {
        for &(id, v) in l {
            g.insert(w, id, v).unwrap();
        }
    }
    g
}

fn toy_corpus() -> Corpus {
    let g = ingest::parse_snap_file(fixture("toy_edges.txt"), SnapOptions::default()).unwrap();
    bench::corpus_from_triples(&g.triples)
}

fn toy_names() -> Vec<ingest::NameRecord> {
    ingest::parse_names_file(fixture("toy_names.tsv")).unwrap()
}

/// A seeded undirected graph with `edges` distinct edges and weights in
/// 1..=10, as SNAP text plus its posting lists.
fn random_graph(vertices: u64, edges: usize, seed: u64) -> (String, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut text = String::new();
    while seen.len() < edges {
        let a = rng.random_range(1..=vertices);
        let b = rng.random_range(1..=vertices);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            text.push_str(&format!("{a} {b}\n"));
        }
    }
    let opts = SnapOptions {
        weights: ingest::Weights::Seeded(seed),
        ..SnapOptions::default()
    };
    let g = ingest::parse_snap(text.as_bytes(), opts).unwrap();
    (text, bench::corpus_from_triples(&g.triples))
}

/// Distinct keywords, `n` in `2..=5`. Half the queries start from two
/// lists sharing a neighbour so that not every answer is empty; the rest
/// are drawn uniformly.
fn random_queries(corpus: &Corpus, count: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<&String> = corpus.keys().collect();
    let mut out = Vec::new();
    let hubs = bench::generate_queries(corpus, 2, count / 2, &mut rng);
    for (i, q) in hubs.into_iter().enumerate() {
        let n = 2 + i % 4;
        let mut q = q;
        while q.len() < n {
            let w = (*keys.choose(&mut rng).unwrap()).clone();
            if !q.contains(&w) {
                q.push(w);
            }
        }
        out.push(q);
    }
    while out.len() < count {
        let n = rng.random_range(2..=5);
        let mut q: Vec<String> = Vec::new();
        while q.len() < n {
            let w = (*keys.choose(&mut rng).unwrap()).clone();
            if !q.contains(&w) {
                q.push(w);
            }
        }
        out.push(q);
    }
    out
}

fn hits(r: &RankedResult) -> Vec<(u64, u32)> {
    r.hits.iter().map(|h| (h.id, h.weight)).collect()
}

/// Compares a result with the oracle; returns the false-positive count or
/// the first false negative.
fn compare(q: &[String], got: &[(u64, u32)], want: &[(u64, u32)]) -> Result<usize, String> {
    let got_set: HashSet<_> = got.iter().collect();
    if let Some(miss) = want.iter().find(|h| !got_set.contains(h)) {
        return Err(format!("false negative {miss:?} for {q:?}"));
    }
    Ok(got.len() - want.len())
}

const GRAPH_VERTICES: u64 = 1_000;
const GRAPH_EDGES: usize = 10_000;
const GRAPH_SEED: u64 = 2024;
const QUERY_SEED: u64 = 77;

fn criterion_graph() -> (String, Corpus, Vec<Vec<String>>) {
    let (text, corpus) = random_graph(GRAPH_VERTICES, GRAPH_EDGES, GRAPH_SEED);
    let queries = random_queries(&corpus, 200, QUERY_SEED);
    (text, corpus, queries)
}

fn c1_toy_graph() -> Outcome {
    let mut g = build(SchemeParams::exact(), &toy_corpus(), 1);
    let ids = g.search(&["3:friendship", "5:friendship"], None).map_err(|e| e.to_string())?.ids();
    check(ids == vec![2], format!("3 AND 5 returned {ids:?}"))?;

    let mut f = SecGraph::create(SchemeParams::fuzzy(), opts(1)).unwrap();
    f.add_names(&toy_names()).unwrap();
    let mut ids = f.fuzzy_search("ha", None).map_err(|e| e.to_string())?.ids();
    ids.sort();
    check(ids == vec![1, 5], format!("fuzzy \"ha\" returned {ids:?}"))?;
    Ok("3:friendship AND 5:friendship = {2}; \"ha\" = {1, 5}".into())
}

fn c2_oracle_equivalence() -> Outcome {
    let (_, corpus, queries) = criterion_graph();
    let mut g = build(SchemeParams::exact(), &corpus, 3);
    let mut fp = 0;
    for q in &queries {
        let got = hits(&g.search(q, None).map_err(|e| e.to_string())?);
        fp += compare(q, &got, &bench::plaintext_search(&corpus, q))?;
    }
    check(fp <= 5, format!("{fp} false positives"))?;
    Ok(format!("200 queries, 0 false negatives, {fp} false positives"))
}

fn c3_dynamic_correctness() -> Outcome {
    let (_, mut corpus, queries) = criterion_graph();
    let mut g = build(SchemeParams::exact(), &corpus, 4);
    let pairs: Vec<(String, u64)> = corpus.iter().flat_map(|(w, l)| l.iter().map(move |p| (w.clone(), p.0))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let victims: Vec<&(String, u64)> = pairs.choose_multiple(&mut rng, pairs.len() / 10).collect();
    for (w, id) in &victims {
        g.delete(w, *id).map_err(|e| e.to_string())?;
        corpus.get_mut(w).unwrap().retain(|p| p.0 != *id);
    }
    let deleted: HashSet<(&str, u64)> = victims.iter().map(|(w, id)| (w.as_str(), *id)).collect();

    let mut mismatches = 0;
    for q in &queries {
        let got = hits(&g.search(q, None).map_err(|e| e.to_string())?);
        let want = bench::plaintext_search(&corpus, q);
        compare(q, &got, &want)?;
        if got.iter().any(|(id, _)| deleted.contains(&(q[0].as_str(), *id))) {
            return Err(format!("deleted id returned for {q:?}"));
        }
        if got != want {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} queries differ from the updated oracle"))?;

    let live: usize = corpus.values().map(Vec::len).sum();
    let counters: u64 = corpus.keys().map(|w| g.counter(w) as u64).sum();
    let s = g.stats();
    check(
        s.tset_entries == live && s.itset_entries == live && counters == live as u64,
        format!("|TSet|={} |ITSet|={} sum(counters)={counters} live={live}", s.tset_entries, s.itset_entries),
    )?;
    Ok(format!("{} pairs deleted; results exact; |TSet| = |ITSet| = {live}", victims.len()))
}

fn c4_roundtrips() -> Outcome {
    let (_, corpus, queries) = criterion_graph();
    let mut g = build(SchemeParams::exact(), &corpus, 6);
    for q in &queries {
        g.search(q, None).map_err(|e| e.to_string())?;
        let rt = g.boundary().counter().last().token_roundtrips;
        check(rt == 1, format!("{rt} roundtrips for {q:?}"))?;
    }

    let (_, small) = random_graph(150, 600, 8);
    let small_queries = random_queries(&small, 40, 9);
    let mut oxt = Oxt::new(OxtKeys::generate(&mut ChaCha20Rng::seed_from_u64(1)));
    oxt.build(&small).map_err(|e| e.to_string())?;
    let mut sg = build(SchemeParams::exact(), &small, 7);
    for q in &small_queries {
        let o = oxt.search(q, None).map_err(|e| e.to_string())?;
        check(o.cost.roundtrips == 2, format!("oxt used {} roundtrips for {q:?}", o.cost.roundtrips))?;
        let ours = sg.search(q, None).map_err(|e| e.to_string())?;
        compare(q, &hits(&ours), &hits(&o.result))?;
    }
    Ok(format!("{} searches at 1 roundtrip; {} baseline searches at 2", queries.len(), small_queries.len()))
}

fn c5_filter_fp_rate() -> Outcome {
    let params = SchemeParams::exact();
    let fp_params = params.filter;
    let mut filter = SubFilter::new(fp_params, SubFilterId::ROOT);
    let target = fp_params.capacity() * 9 / 10;
    let mut stored = 0u64;
    while filter.len() < target {
        let xtag = tokens::xtag(SearchMode::Exact, "member", stored, 0);
        stored += 1;
        let outcome = filter
            .insert(tokens::fingerprint(&params, "member", &xtag), crypto::hash_h1(&xtag))
            .map_err(|e| e.to_string())?;
        check(outcome == InsertOutcome::Stored, format!("filter refused insert at {} entries", filter.len()))?;
    }
    let probes = 1_000_000u64;
    let mut false_hits = 0u64;
    for i in 0..probes {
        let xtag = tokens::xtag(SearchMode::Exact, "absent", i, 0);
        if filter
            .contains(tokens::fingerprint(&params, "absent", &xtag), crypto::hash_h1(&xtag))
            .map_err(|e| e.to_string())?
        {
            false_hits += 1;
        }
    }
    let rate = false_hits as f64 / probes as f64;
    check(rate <= 3e-4, format!("FP rate {rate:.2e}"))?;
    Ok(format!(
        "{false_hits} hits in {probes} probes at {:.1}% occupancy: rate {rate:.2e}",
        100.0 * filter.len() as f64 / fp_params.capacity() as f64
    ))
}

fn c6_variant_equivalence() -> Outcome {
    let (_, corpus, queries) = criterion_graph();
    let mut reference: Option<Vec<Vec<u8>>> = None;
    for v in Variant::ALL {
        let mut g = build(exact_params(v, 10_000), &corpus, 10);
        let mut encoded = Vec::with_capacity(queries.len());
        for q in &queries {
            let r = g.search(q, None).map_err(|e| e.to_string())?;
            encoded.push(EcallReply::Results(r).encode());
        }
        match &reference {
            None => reference = Some(encoded),
            Some(base) => {
                if let Some(i) = (0..queries.len()).find(|&i| base[i] != encoded[i]) {
                    return Err(format!("variant {v} differs from base on {:?}", queries[i]));
                }
            }
        }
    }
    Ok(format!("base, g, p, a identical over {} queries", queries.len()))
}

fn c7_grouping_effect() -> Outcome {
    let (_, corpus) = random_graph(2_000, 20_000, 31);
    let workload = Workload {
        dataset: "random".into(),
        corpus,
    };
    let cfg = BenchConfig {
        variants: vec![BenchVariant::Scheme(Variant::Base), BenchVariant::Scheme(Variant::G)],
        filter: FilterParams::new(16, 1_000, 4).unwrap(),
        ..BenchConfig::default()
    };
    let base = workload
        .build(cfg.params(Variant::Base, cfg.filter).map_err(|e| e.to_string())?, &cfg)
        .map_err(|e| e.to_string())?;
    let subfilters = base.stats().subfilters;
    drop(base);
    check(subfilters >= 16, format!("only {subfilters} sub-filters"))?;

    let records = workload.run_grid(&cfg).map_err(|e| e.to_string())?;
    let total = |v: &str| -> u64 { records.iter().filter(|r| r.variant == v).map(|r| r.subfilters_loaded).sum() };
    let (b, g) = (total("base"), total("g"));
    let per_row = records
        .iter()
        .filter(|r| r.variant == "base")
        .zip(records.iter().filter(|r| r.variant == "g"))
        .all(|(b, g)| g.subfilters_loaded <= b.subfilters_loaded);
    check(b > 0 && 2 * g <= b, format!("g loaded {g} sub-filters, base {b}"))?;
    Ok(format!(
        "{subfilters} sub-filters; loads g={g} base={b} ({:.1}%); g <= base on every row: {per_row}",
        100.0 * g as f64 / b as f64
    ))
}

fn c8_speed_trend() -> Outcome {
    let ops = 10_000;
    let check_t = bench::time_membership_checks(ops, 1).map_err(|e| e.to_string())?;
    let exp_t = bench::time_exponentiations(ops, 1);
    let ratio = exp_t.as_secs_f64() / check_t.as_secs_f64().max(1e-12);
    check(ratio >= 10.0, format!("ratio {ratio:.1}"))?;
    Ok(format!("membership check {check_t:?}, exponentiation {exp_t:?}: {ratio:.0}x"))
}

fn c9_forward_and_deletion_privacy() -> Outcome {
    let mut g = build(SchemeParams::exact(), &toy_corpus(), 11);
    let w = "2:friendship";
    let start = g.boundary().next_op();
    g.search(&[w], None).map_err(|e| e.to_string())?;
    let report = g.boundary().log().leakage_report(start..g.boundary().next_op());
    let snapshot: HashSet<[u8; 32]> = report.searches.iter().flat_map(|(_, s)| s.stokens.iter().copied()).collect();
    check(snapshot.len() == 3, format!("snapshot holds {} tokens", snapshot.len()))?;

    g.boundary_mut().log_mut().set_capture_wire(true);
    let op = g.boundary().next_op();
    g.insert(w, 6, 1).map_err(|e| e.to_string())?;
    let new = g.boundary().enclave().tokens_at(w, 6, 1, g.counter(w)).map_err(|e| e.to_string())?;
    check(!snapshot.contains(&new.stag), "new stag appears in the earlier snapshot")?;
    for r in g.boundary().log().records().iter().filter(|r| r.op == op) {
        if let LeakageEvent::Wire { bytes, .. } = &r.event {
            for t in &snapshot {
                check(!bytes.windows(32).any(|win| win == t), "an earlier token appears in the insert traffic")?;
            }
        }
    }

    let ind = g.boundary().enclave().ind_of(w, 3, 1).map_err(|e| e.to_string())?;
    check(g.boundary().edb().contains_ind(&ind), "ind missing before delete")?;
    g.delete(w, 3).map_err(|e| e.to_string())?;
    check(!g.boundary().edb().contains_ind(&ind), "ITSet still holds ind after delete")?;
    for q in [vec![w], vec![w, "6:friendship"], vec![w, "5:friendship"]] {
        let ids = g.search(&q, None).map_err(|e| e.to_string())?.ids();
        check(!ids.contains(&3), format!("{q:?} still returns 3"))?;
    }
    Ok("new stag unseen by earlier tokens; deleted pair gone from ITSet and results".into())
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_secgraph"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("secgraph {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn c10_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    // Toy graph and names, built by one process and searched by another.
    let toy = fixture("toy_edges.txt").to_string_lossy().into_owned();
    let names = fixture("toy_names.tsv").to_string_lossy().into_owned();
    run_cli(&["build", "--edges", &toy, "--out", &p("toy.edb"), "--seed", "1"])?;
    run_cli(&["build", "--mode", "fuzzy", "--names", &names, "--out", &p("names.edb"), "--seed", "1"])?;
    let exact = run_cli(&["search", "--db", &p("toy.edb"), "3", "5"])?;
    let fuzzy = run_cli(&["fuzzy", "--db", &p("names.edb"), "ha"])?;
    let mut in_process = build(SchemeParams::exact(), &toy_corpus(), 1);
    let expect: String = hits(&in_process.search(&["3:friendship", "5:friendship"], None).unwrap())
        .iter()
        .map(|(id, w)| format!("{id}\t{w}\n"))
        .collect();
    check(exact == expect, format!("reloaded exact search printed {exact:?}, expected {expect:?}"))?;
    check(fuzzy == "1\t1\n5\t1\n", format!("reloaded fuzzy search printed {fuzzy:?}"))?;

    // Criterion-2 graph and queries.
    let (text, corpus, queries) = criterion_graph();
    std::fs::write(p("graph.txt"), text).map_err(|e| e.to_string())?;
    let qtext: String = queries.iter().map(|q| q.join(" ") + "\n").collect();
    std::fs::write(p("queries.txt"), qtext).map_err(|e| e.to_string())?;
    let seed = GRAPH_SEED.to_string();
    run_cli(&["build", "--edges", &p("graph.txt"), "--weight-seed", &seed, "--out", &p("graph.edb"), "--seed", "3"])?;
    let reloaded = run_cli(&["search", "--db", &p("graph.edb"), "--queries", &p("queries.txt")])?;

    let mut g = build(SchemeParams::exact(), &corpus, 3);
    let mut expect = String::new();
    for q in &queries {
        let r = g.search(q, None).map_err(|e| e.to_string())?;
        let h: Vec<String> = r.hits.iter().map(|h| format!("{}:{}", h.id, h.weight)).collect();
        expect.push_str(&format!("{}\t{}\n", q.join(" "), h.join(",")));
    }
    if reloaded != expect {
        let line = reloaded.lines().zip(expect.lines()).position(|(a, b)| a != b);
        return Err(format!("reloaded results differ at query {line:?}"));
    }
    Ok(format!("toy queries and {} graph queries identical after reload", queries.len()))
}

fn c11_canaries() -> Outcome {
    let mut g = SecGraph::create(exact_params(Variant::A, 500), opts(12)).unwrap();
    let canary_kw = "canary-kw-1f7a93";
    let canary_id: u64 = 0x00c0_ffee_d00d_beef;
    {
        let log = g.boundary_mut().log_mut();
        log.set_capture_wire(true);
        log.watch(canary_kw.as_bytes());
        log.watch(canary_id.to_be_bytes());
        log.watch(canary_id.to_string());
    }
    for i in 0..400u64 {
        g.insert(canary_kw, canary_id + i, (i % 10) as u32 + 1).map_err(|e| e.to_string())?;
        g.insert(&format!("{}:friendship", i % 40), canary_id + i, 1).map_err(|e| e.to_string())?;
    }
    g.search(&[canary_kw, "3:friendship"], Some(5)).map_err(|e| e.to_string())?;
    g.search(&["7:friendship", canary_kw], None).map_err(|e| e.to_string())?;
    g.delete(canary_kw, canary_id + 17).map_err(|e| e.to_string())?;
    g.delete("17:friendship", canary_id + 17).map_err(|e| e.to_string())?;

    let log = g.boundary().log();
    check(log.canary_hits().is_empty(), format!("{} canary sightings on the wire", log.canary_hits().len()))?;
    let dump = format!("{:?}", log.records());
    check(!dump.contains(canary_kw), "keyword canary in a log record")?;
    check(!dump.contains(&canary_id.to_string()), "id canary in a log record")?;
    let wire: usize = log.records().iter().filter(|r| matches!(r.event, LeakageEvent::Wire { .. })).count();
    Ok(format!("{} messages scanned ({wire} captured), no canary seen", log.message_count()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 toy-graph ground truth", c1_toy_graph, Some(Duration::from_secs(1))),
        ("2 oracle equivalence", c2_oracle_equivalence, Some(Duration::from_secs(30))),
        ("3 dynamic correctness", c3_dynamic_correctness, Some(Duration::from_secs(30))),
        ("4 roundtrip property", c4_roundtrips, None),
        ("5 filter false-positive rate", c5_filter_fp_rate, Some(Duration::from_secs(60))),
        ("6 variant equivalence", c6_variant_equivalence, None),
        ("7 grouping effect", c7_grouping_effect, Some(Duration::from_secs(120))),
        ("8 speed trend", c8_speed_trend, Some(Duration::from_secs(120))),
        ("9 forward and deletion privacy", c9_forward_and_deletion_privacy, None),
        ("10 persistence", c10_persistence, None),
        ("11 leakage-log hygiene", c11_canaries, None),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 11 criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
