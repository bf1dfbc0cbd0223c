mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use lsgt::graph::Split;
use lsgt::query::{QueryGraph, QueryNode, QueryType};
use lsgt::tokenizer::{
    node_layout, orthonormal_rows, tokenize, Feature, Provenance, TableSizes, TokenSequence, TokenizerFlags,
};

const SIZES: TableSizes = TableSizes {
    items: 48,
    attributes: 11,
    relations: 3,
    positions: 20,
};

fn pool() -> &'static [QueryGraph] {
    static POOL: OnceLock<Vec<QueryGraph>> = OnceLock::new();
    POOL.get_or_init(|| {
        QueryType::ALL
            .iter()
            .flat_map(|t| common::toy_queries(*t, 25, 31, Split::Train))
            .map(|s| s.query)
            .collect()
    })
}

fn edge_count(q: &QueryGraph) -> usize {
    q.nodes().iter().map(|n| n.children().len()).sum()
}

fn session_members(q: &QueryGraph) -> usize {
    q.nodes()
        .iter()
        .map(|n| match n {
            QueryNode::SessionAnchor(ms) => ms.len(),
            _ => 0,
        })
        .sum()
}

/// The token fields the encoder reads, sorted.
fn model_view(t: &TokenSequence) -> Vec<(usize, Feature, usize, usize)> {
    let mut v: Vec<_> = t.tokens.iter().map(|x| (x.type_row(), x.feature, x.id_a, x.id_b)).collect();
    v.sort();
    v
}

#[test]
fn counts_follow_the_query_structure() {
    for q in pool() {
        let t = tokenize(q, &SIZES, TokenizerFlags::default()).unwrap();
        assert_eq!(t.n, node_layout(q).len());
        assert_eq!(t.m, session_members(q));
        assert_eq!(t.w, edge_count(q));
        assert_eq!(t.len(), 1 + t.n + t.m + t.w);
        let nodes = t.tokens.iter().filter(|x| x.provenance == Provenance::Node).count();
        assert_eq!(nodes, t.n);
        assert!(t.tokens.iter().all(|x| x.id_a < t.n && x.id_b < t.n));
    }
}

#[test]
fn ablation_flags_remove_what_they_name() {
    for q in pool() {
        let full = tokenize(q, &SIZES, TokenizerFlags::default()).unwrap();
        let no_logic = tokenize(
            q,
            &SIZES,
            TokenizerFlags {
                drop_logic_tokens: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(no_logic.len(), full.len() - full.w);
        assert!(no_logic.tokens.iter().all(|x| x.provenance != Provenance::LogicEdge));
        let no_pos = tokenize(
            q,
            &SIZES,
            TokenizerFlags {
                drop_session_positions: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(no_pos.len(), full.len());
        assert!(no_pos.tokens.iter().all(|x| !matches!(x.feature, Feature::Position(_))));
    }
}

#[test]
fn identifier_rows_are_orthonormal() {
    for n in [1, 5, 24] {
        let p = orthonormal_rows(n, 24, n as u64).unwrap();
        let gram = p.matmul(&p.transpose()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }
    assert!(orthonormal_rows(25, 24, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn operand_order_keeps_the_token_multiset(i in 0usize..10_000, seed in any::<u64>()) {
        let q = &pool()[i % pool().len()];
        let p = common::shuffle_operands(q, seed);
        let a = tokenize(q, &SIZES, TokenizerFlags::default()).unwrap();
        let b = tokenize(&p, &SIZES, TokenizerFlags::default()).unwrap();
        prop_assert_eq!(a.multiset(), b.multiset());
    }

    #[test]
    fn swapping_session_members_changes_the_tokens(i in 0usize..10_000, seed in any::<u64>()) {
        let q = &pool()[i % pool().len()];
        let mut rng = lsgt::rng::derive_rng(seed, &[]);
        if let Some(p) = common::swap_session_positions(q, &mut rng) {
            let a = tokenize(q, &SIZES, TokenizerFlags::default()).unwrap();
            let b = tokenize(&p, &SIZES, TokenizerFlags::default()).unwrap();
            prop_assert_ne!(a.multiset(), b.multiset());
            let flags = TokenizerFlags { drop_session_positions: true, ..Default::default() };
            prop_assert_eq!(model_view(&tokenize(q, &SIZES, flags).unwrap()), model_view(&tokenize(&p, &SIZES, flags).unwrap()));
        }
    }
}
