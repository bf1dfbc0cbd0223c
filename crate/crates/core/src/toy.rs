//! The bundled toy dataset.
//!
//! 48 items sit on 8 category rings of 6. Every session is a short walk
//! along one ring, in either direction, and desires the next item of the
//! walk, so the target depends on member order and not only on the member
//! set. Items carry a `category` (their ring) and a `brand`.

use crate::graph::{ingest, split_edges, AttributeTriple, Graph, IngestConfig, SessionRecord, SplitGraph};

pub const CATEGORIES: usize = 8;
pub const RING: usize = 6;
pub const WALK_LENGTHS: [usize; 3] = [2, 3, 4];

/// Bundled copies of [`records`], as shipped in `data/toy/`.
pub const SESSIONS_JSONL: &str = include_str!("../data/toy/sessions.jsonl");
pub const TRIPLES_TSV: &str = include_str!("../data/toy/triples.tsv");

fn item(c: usize, k: usize) -> String {
    format!("c{c}-{k}")
}

pub fn records() -> (Vec<SessionRecord>, Vec<AttributeTriple>) {
    let mut sessions = Vec::new();
    for c in 0..CATEGORIES {
        for start in 0..RING {
            for (dir, step) in [("f", 1), ("b", RING - 1)] {
                for len in WALK_LENGTHS {
                    let at = |i: usize| (start + i * step) % RING;
                    sessions.push(SessionRecord {
                        session_id: format!("s{c}-{start}{dir}{len}"),
                        items: (0..len).map(|i| item(c, at(i))).collect(),
                        targets: vec![item(c, at(len))],
                    });
                }
            }
        }
    }
    let mut triples = Vec::new();
    for c in 0..CATEGORIES {
        for k in 0..RING {
            triples.push(AttributeTriple::new(&item(c, k), "category", &format!("cat{c}")));
            triples.push(AttributeTriple::new(
                &item(c, k),
                "brand",
                &format!("brand{}", (c + k) % 3),
            ));
        }
    }
    (sessions, triples)
}

pub fn config() -> IngestConfig {
    IngestConfig {
        relations: vec!["category".into(), "brand".into()],
        ..IngestConfig::default()
    }
}

pub fn graph() -> Graph {
    let (s, t) = records();
    ingest(s, t, &config()).expect("toy records are well formed")
}

/// The toy graph split 80/10/10 with `seed`.
pub fn split(seed: u64) -> SplitGraph {
    split_edges(&graph(), [0.8, 0.1, 0.1], seed)
        .expect("toy graph splits")
        .0
}
