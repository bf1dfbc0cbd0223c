use std::collections::HashSet;

use log::warn;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{answer_on_splits, SampledQuery};
use crate::graph::{Graph, RelationId, Split, SplitGraph, VertexId, VertexKind};
use crate::query::{template, Anchor, QueryType, RelSlot, Shape};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleConfig {
    /// Attempts allowed per requested instance.
    pub retries_per_instance: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            retries_per_instance: 64,
        }
    }
}

struct Instantiator<'a> {
    graph: &'a Graph,
    rng: &'a mut ChaCha8Rng,
    hop: Option<RelationId>,
    anchors: Vec<Anchor>,
}

impl Instantiator<'_> {
    fn random_vertex(&mut self, kind: VertexKind) -> Option<VertexId> {
        let n = self.graph.vocab().count(kind);
        (n > 0).then(|| VertexId {
            kind,
            index: self.rng.random_range(0..n as u32),
        })
    }

    /// Chooses anchors below `shape` so that `target` is an answer of the
    /// positive part of the branch.
    fn fill(&mut self, shape: &Shape, target: VertexId) -> bool {
        let g = self.graph;
        match shape {
            Shape::Project(RelSlot::Desires, _) => {
                let Ok(pred) = g.predecessors(target, RelationId::DESIRES) else {
                    return false;
                };
                let pred: Vec<_> = pred.iter().copied().collect();
                let Some(&s) = pred.choose(self.rng) else {
                    return false;
                };
                let members = match g.session(s) {
                    Ok(e) => e.members.clone(),
                    Err(_) => return false,
                };
                self.anchors.push(Anchor::Session(members));
                true
            }
            Shape::Project(RelSlot::Anchor, child) => match child.as_ref() {
                Shape::Attribute => {
                    let out: Vec<_> = g.out_edges(target).filter(|(r, _)| !r.is_desires()).collect();
                    let Some(&(rel, attribute)) = out.choose(self.rng) else {
                        return false;
                    };
                    self.anchors.push(Anchor::Attribute { attribute, rel });
                    true
                }
                Shape::Item => {
                    let inc: Vec<_> = g.in_edges(target).filter(|(r, _)| !r.is_desires()).collect();
                    let Some(&(rel, item)) = inc.choose(self.rng) else {
                        return false;
                    };
                    self.anchors.push(Anchor::Item { item, rel });
                    true
                }
                _ => false,
            },
            Shape::Project(RelSlot::Hop, child) => {
                let hop = self.hop;
                let inc: Vec<_> = g
                    .in_edges(target)
                    .filter(|(r, _)| !r.is_desires() && hop.is_none_or(|h| h == *r))
                    .collect();
                let Some(&(rel, item)) = inc.choose(self.rng) else {
                    return false;
                };
                self.hop = Some(rel);
                self.fill(child, item)
            }
            Shape::And(cs) => cs.iter().all(|c| match c {
                Shape::Not(inner) => match self.random_vertex(target.kind) {
                    Some(u) => self.fill(inner, u),
                    None => false,
                },
                c => self.fill(c, target),
            }),
            Shape::Or(cs) => {
                let k = self.rng.random_range(0..cs.len());
                cs.iter().enumerate().all(|(i, c)| {
                    let t = if i == k {
                        Some(target)
                    } else {
                        self.random_vertex(target.kind)
                    };
                    t.is_some_and(|t| self.fill(c, t))
                })
            }
            Shape::Session | Shape::Item | Shape::Attribute | Shape::Not(_) => false,
        }
    }
}

fn split_index(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Valid => 1,
        Split::Test => 2,
    }
}

/// Samples up to `n` distinct queries of type `tag` by backward
/// instantiation on the graph of `split`.
///
/// Train queries have non-empty train answers; valid and test queries have
/// answers that are new on their split. Returns a warning when the retry
/// budget runs out first.
pub fn sample(
    sg: &SplitGraph,
    tag: QueryType,
    n: usize,
    seed: u64,
    split: Split,
) -> (Vec<SampledQuery>, Option<String>) {
    sample_with(sg, tag, n, seed, split, &SampleConfig::default())
}

pub fn sample_with(
    sg: &SplitGraph,
    tag: QueryType,
    n: usize,
    seed: u64,
    split: Split,
    config: &SampleConfig,
) -> (Vec<SampledQuery>, Option<String>) {
    let graph = sg.graph(split);
    let mut rng = derive_rng(seed, &[tag as u64, split_index(split)]);
    let shape = tag.shape();
    let budget = config.retries_per_instance.saturating_mul(n) as u64;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempt = 0;
    while out.len() < n && attempt < budget {
        attempt += 1;
        let mut inst = Instantiator {
            graph,
            rng: &mut rng,
            hop: None,
            anchors: Vec::new(),
        };
        let Some(target) = inst.random_vertex(tag.answer_kind()) else {
            break;
        };
        if !inst.fill(&shape, target) {
            continue;
        }
        let (anchors, hop) = (inst.anchors, inst.hop);
        let sessions: Vec<_> = anchors
            .iter()
            .filter_map(|a| match a {
                Anchor::Session(m) => Some(m),
                _ => None,
            })
            .collect();
        let distinct: HashSet<_> = sessions.iter().collect();
        if distinct.len() != sessions.len() {
            continue;
        }
        let Ok(query) = template(tag, &anchors, hop) else {
            continue;
        };
        if !seen.insert(query.canonical_key()) {
            continue;
        }
        let Ok(answers) = answer_on_splits(sg, &query) else {
            continue;
        };
        if answers.new_on(split).is_empty() {
            continue;
        }
        out.push(SampledQuery {
            query,
            qtype: tag,
            answers,
            split,
            seed,
            attempt,
        });
    }
    let warning = (out.len() < n).then(|| {
        let msg = format!(
            "{tag}/{}: retry budget exhausted after {attempt} attempts, sampled {} of {n}",
            split.name(),
            out.len()
        );
        warn!("{msg}");
        msg
    });
    (out, warning)
}
