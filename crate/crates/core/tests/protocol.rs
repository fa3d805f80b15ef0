mod common;

use common::*;
use secgraph_core::config::Variant;
use secgraph_core::enclave::EnclaveError;
use secgraph_core::{ClientError, SchemeParams, SearchQuery};

fn enclave_err(e: ClientError) -> EnclaveError {
    match e {
        ClientError::Boundary(secgraph_core::boundary::BoundaryError::Enclave(e)) => e,
        other => panic!("expected an enclave error, got {other:?}"),
    }
}

#[test]
fn searches_match_the_plaintext_oracle_across_splits() {
    let oracle = random_graph(200, 1500, 1);
    let mut g = build(params(Variant::Base, 512), &oracle, 7);
    assert!(g.stats().subfilters > 4, "small capacity should force splits");

    let mut false_positives = 0;
    for q in random_queries(&oracle, 150, 1..=4, 2) {
        let got = hits(&g.search(&q, None).unwrap());
        let want = oracle.query(&q);
        for h in &want {
            assert!(got.contains(h), "missing {h:?} for {q:?}");
        }
        false_positives += got.len() - want.len();
    }
    assert!(false_positives <= 2, "{false_positives} false positives");
}

#[test]
fn store_sizes_track_live_pairs_through_deletes() {
    let mut oracle = random_graph(100, 600, 3);
    let mut g = build(params(Variant::Base, 1024), &oracle, 8);
    let pairs = oracle.pairs();
    for (w, id, _) in pairs.iter().step_by(7) {
        g.delete(w, *id).unwrap();
        oracle.remove(w, *id);
    }
    let stats = g.stats();
    let counters: u64 = oracle.lists.keys().map(|w| g.counter(w) as u64).sum();
    assert_eq!(stats.tset_entries, oracle.len());
    assert_eq!(stats.itset_entries, oracle.len());
    assert_eq!(counters, oracle.len() as u64);
    assert_eq!(g.boundary().enclave().live_entries(), oracle.len() as u64);

    for (w, l) in &oracle.lists {
        let got = hits(&g.search(&[w], None).unwrap());
        let want = oracle.query(std::slice::from_ref(w));
        assert_eq!(got, want, "{w} after {} live entries", l.len());
    }
}

#[test]
fn delete_swaps_the_last_entry_into_the_hole() {
    let mut g = build(params(Variant::Base, 1024), &Default::default(), 1);
    for (id, v) in [(10, 1), (11, 2), (12, 3), (13, 4)] {
        g.insert("w", id, v).unwrap();
    }
    g.delete("w", 11).unwrap();
    assert_eq!(g.counter("w"), 3);
    let ids = g.search(&["w"], None).unwrap().ids();
    assert_eq!(ids, vec![13, 12, 10]);
    g.delete("w", 13).unwrap();
    g.delete("w", 10).unwrap();
    g.delete("w", 12).unwrap();
    assert_eq!(g.counter("w"), 0);
    assert!(g.search(&["w"], None).unwrap().is_empty());
    assert_eq!(g.stats().tset_entries, 0);

    let err = enclave_err(g.delete("w", 12).unwrap_err());
    assert!(err.is_not_found());
    let err = enclave_err(g.delete("other", 1).unwrap_err());
    assert!(err.is_not_found());
}

#[test]
fn duplicate_pairs_are_rejected_without_advancing_the_counter() {
    let mut g = build(params(Variant::Base, 1024), &Default::default(), 1);
    g.insert("w", 1, 1).unwrap();
    let err = enclave_err(g.insert("w", 1, 9).unwrap_err());
    assert!(matches!(err, EnclaveError::DuplicatePair));
    assert_eq!(g.counter("w"), 1);
    assert_eq!(g.stats().tset_entries, 1);
    g.insert("w", 2, 1).unwrap();
    assert_eq!(g.search(&["w"], None).unwrap().ids(), vec![1, 2]);
}

#[test]
fn every_variant_returns_identical_rankings() {
    let oracle = random_graph(150, 1000, 4);
    let queries = random_queries(&oracle, 60, 2..=4, 5);
    let mut reference = None;
    for v in Variant::ALL {
        let mut g = build(params(v, 512), &oracle, 9);
        let results: Vec<_> = queries.iter().map(|q| g.search(q, Some(5)).unwrap()).collect();
        match &reference {
            None => reference = Some(results),
            Some(r) => assert_eq!(r, &results, "variant {v}"),
        }
    }
}

#[test]
fn top_k_truncates_after_ranking() {
    let mut g = build(params(Variant::Base, 1024), &Default::default(), 1);
    for (id, v) in [(1, 3), (2, 9), (3, 9), (4, 1)] {
        g.insert("w", id, v).unwrap();
    }
    let r = g.search(&["w"], Some(2)).unwrap();
    assert_eq!(hits(&r), vec![(2, 9), (3, 9)]);
}

#[test]
fn tokens_issued_before_an_insert_never_match_it() {
    let mut g = build(params(Variant::Base, 1024), &Default::default(), 2);
    for id in 1..=5 {
        g.insert("w", id, 1).unwrap();
    }
    let start = g.boundary().next_op();
    g.search(&["w"], None).unwrap();
    let before = g.boundary().log().leakage_report(start..g.boundary().next_op());
    let snapshot = &before.searches[0].1.stokens;
    assert_eq!(snapshot.len(), 5);

    g.insert("w", 6, 1).unwrap();
    let new = g.boundary().enclave().tokens_at("w", 6, 1, 6).unwrap();
    assert!(!snapshot.contains(&new.stag));
    assert!(g.boundary().edb().contains_stag(&new.stag));

    let ind = g.boundary().enclave().ind_of("w", 3, 1).unwrap();
    assert!(g.boundary().edb().contains_ind(&ind));
    g.delete("w", 3).unwrap();
    assert!(!g.boundary().edb().contains_ind(&ind));
    assert!(!g.search(&["w"], None).unwrap().ids().contains(&3));
}

#[test]
fn mismatched_and_malformed_queries_are_rejected() {
    let mut g = build(params(Variant::Base, 1024), &Default::default(), 1);
    let none: [&str; 0] = [];
    assert!(matches!(enclave_err(g.search(&none, None).unwrap_err()), EnclaveError::InvalidQuery(_)));
    let fuzzy = SearchQuery::Fuzzy {
        anchor: "ab".into(),
        companions: vec![],
        top_k: None,
    };
    assert!(matches!(enclave_err(g.query(&fuzzy).unwrap_err()), EnclaveError::ModeMismatch { .. }));
}

#[test]
fn fuzzy_search_matches_a_substring_oracle() {
    let names = [
        (1, "Harry"),
        (2, "Ron"),
        (3, "Emma"),
        (4, "Luna"),
        (5, "Sasha"),
        (6, "Neville"),
        (7, "Hannah"),
        (8, "Anna"),
    ];
    let mut g = secgraph_core::SecGraph::create(
        SchemeParams::fuzzy(),
        secgraph_core::ClientOptions {
            seed: Some(4),
            ..Default::default()
        },
    )
    .unwrap();
    for (id, n) in names {
        g.add_name(id, n).unwrap();
    }
    for pattern in ["ha", "an", "nna", "ann", "ville", "em", "zz", "ar", "a", "Ha"] {
        let p = pattern.to_lowercase();
        let Ok(got) = g.fuzzy_search(pattern, None) else {
            assert!(p.chars().count() < 2);
            continue;
        };
        let mut want: Vec<(u64, u32)> = names
            .iter()
            .map(|&(id, n)| (id, n.to_lowercase().match_indices(&p).count() as u32))
            .filter(|&(_, c)| c > 0)
            .collect();
        want.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(hits(&got), want, "pattern {pattern}");
    }

    g.remove_name(5, "Sasha").unwrap();
    assert_eq!(g.fuzzy_search("ha", None).unwrap().ids(), vec![1, 7]);
}
