use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use lsgt::graph::{
    ingest, read_session_log, read_triples, split_edges, write_session_log, write_triples, AttributeTriple,
    Graph, IngestConfig, RelationId, SessionRecord, Split, SplitGraph, VertexKind,
};

/// Sessions over items `i0..`, each desiring one item outside its members,
/// plus item-attribute triples over two relations.
fn records() -> impl Strategy<Value = (Vec<SessionRecord>, Vec<AttributeTriple>)> {
    let session = (prop::collection::vec(0u8..12, 1..5), 12u8..16);
    let triple = (0u8..16, prop::bool::ANY, 0u8..5);
    (
        prop::collection::vec(session, 1..20),
        prop::collection::vec(triple, 0..40),
    )
        .prop_map(|(ss, ts)| {
            let sessions = ss
                .into_iter()
                .enumerate()
                .map(|(k, (items, target))| SessionRecord {
                    session_id: format!("s{k}"),
                    items: items.iter().map(|i| format!("i{i}")).collect(),
                    targets: vec![format!("i{target}")],
                })
                .collect();
            let triples = ts
                .into_iter()
                .map(|(i, brand, a)| {
                    let rel = if brand { "brand" } else { "color" };
                    AttributeTriple::new(&format!("i{i}"), rel, &format!("{rel}{a}"))
                })
                .collect();
            (sessions, triples)
        })
}

fn edge_names(g: &Graph) -> BTreeSet<(String, String, String)> {
    let v = g.vocab();
    g.edges()
        .iter()
        .map(|e| {
            (
                v.name(e.head).to_string(),
                v.relation_name(e.rel).to_string(),
                v.name(e.tail).to_string(),
            )
        })
        .collect()
}

fn assert_nested(sg: &SplitGraph) {
    for (small, big) in [(&sg.train, &sg.valid), (&sg.valid, &sg.test)] {
        assert!(small.edges().iter().all(|e| big.has_edge(e)));
        assert_eq!(small.vocab(), big.vocab());
        assert_eq!(small.sessions().len(), big.sessions().len());
        for (a, b) in small.sessions().iter().zip(big.sessions()) {
            assert_eq!(a.members, b.members);
        }
    }
}

#[test]
fn toy_text_round_trip_preserves_the_graph() {
    let g = lsgt::toy::graph();
    let mut s = Vec::new();
    let mut t = Vec::new();
    write_session_log(&g, &mut s).unwrap();
    write_triples(&g, &mut t).unwrap();
    let again = ingest(
        read_session_log(s.as_slice()).unwrap(),
        read_triples(t.as_slice()).unwrap(),
        &lsgt::toy::config(),
    )
    .unwrap();
    assert_eq!(again.stats(), g.stats());
    assert_eq!(again.edges(), g.edges());
    assert_eq!(again.vocab(), g.vocab());
}

#[test]
fn toy_split_sizes() {
    let sg = lsgt::toy::split(7);
    let n = |s: Split| sg.graph(s).edges().len();
    let total = lsgt::toy::graph().edges().len();
    assert_eq!(n(Split::Test), total);
    assert!(n(Split::Train) < n(Split::Valid) && n(Split::Valid) < n(Split::Test));
    // every relation has enough edges, so each split gets about a tenth of each
    let per_rel = |g: &Graph| {
        let mut m: BTreeMap<RelationId, usize> = BTreeMap::new();
        for e in g.edges() {
            *m.entry(e.rel).or_default() += 1;
        }
        m
    };
    let all = per_rel(&sg.test);
    let train = per_rel(&sg.train);
    for (rel, count) in all {
        let expect = count - 2 * ((count as f64 * 0.1).round() as usize);
        assert_eq!(train[&rel], expect, "relation {rel:?}");
    }
    assert_nested(&sg);
}

#[test]
fn split_is_deterministic_and_seed_dependent() {
    let g = lsgt::toy::graph();
    let a = split_edges(&g, [0.8, 0.1, 0.1], 3).unwrap().0;
    let b = split_edges(&g, [0.8, 0.1, 0.1], 3).unwrap().0;
    let c = split_edges(&g, [0.8, 0.1, 0.1], 4).unwrap().0;
    assert_eq!(a.manifest, b.manifest);
    assert_ne!(a.manifest.assignments, c.manifest.assignments);
    let rebuilt = SplitGraph::from_manifest(&g, &a.manifest).unwrap();
    assert_eq!(rebuilt.train.edges(), a.train.edges());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn neighbors_match_an_edge_scan((sessions, triples) in records()) {
        let g = ingest(sessions, triples, &IngestConfig::default()).unwrap();
        for kind in VertexKind::ALL {
            for v in g.vocab().vertices(kind) {
                for rel in g.vocab().relations() {
                    let out: BTreeSet<_> =
                        g.edges().iter().filter(|e| e.head == v && e.rel == rel).map(|e| e.tail).collect();
                    let inc: BTreeSet<_> =
                        g.edges().iter().filter(|e| e.tail == v && e.rel == rel).map(|e| e.head).collect();
                    prop_assert_eq!(g.neighbors(v, rel).unwrap(), &out);
                    prop_assert_eq!(g.predecessors(v, rel).unwrap(), &inc);
                }
            }
        }
        for s in g.sessions() {
            prop_assert!(g.sessions_with_members(&s.members).contains(&s.session));
        }
    }

    #[test]
    fn written_graphs_read_back_identically((sessions, triples) in records()) {
        let g = ingest(sessions, triples, &IngestConfig::default()).unwrap();
        let mut s = Vec::new();
        let mut t = Vec::new();
        write_session_log(&g, &mut s).unwrap();
        write_triples(&g, &mut t).unwrap();
        let again = ingest(
            read_session_log(s.as_slice()).unwrap(),
            read_triples(t.as_slice()).unwrap(),
            &IngestConfig::default(),
        )
        .unwrap();
        prop_assert_eq!(edge_names(&again), edge_names(&g));
        prop_assert_eq!(again.stats(), g.stats());
    }

    #[test]
    fn splits_nest_and_cover((sessions, triples) in records(), seed in any::<u64>()) {
        let g = ingest(sessions, triples, &IngestConfig::default()).unwrap();
        let (sg, _) = split_edges(&g, [0.8, 0.1, 0.1], seed).unwrap();
        assert_nested(&sg);
        prop_assert_eq!(edge_names(&sg.test), edge_names(&g));
        let counted: usize = Split::ALL
            .iter()
            .map(|s| sg.manifest.assignments.iter().filter(|a| a.split == *s).count())
            .sum();
        prop_assert_eq!(counted, g.edges().len());
    }
}
