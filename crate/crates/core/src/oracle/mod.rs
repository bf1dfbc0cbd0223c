//! Exact symbolic query execution and seeded query sampling.

mod dataset;
mod sample;

pub use dataset::{read_dataset, write_dataset, DatasetLine};
pub use sample::{sample, sample_with, SampleConfig};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, Split, SplitGraph, VertexId};
use crate::query::{validate, Diagnostic, QueryGraph, QueryNode, QueryType};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("invalid query: {0}")]
    Invalid(Diagnostic),
    #[error("anchor {0} is not in the graph")]
    UnknownAnchor(VertexId),
    #[error("no session in the graph has members {0:?}")]
    SessionNotFound(Vec<VertexId>),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, OracleError>;

pub type VertexSet = BTreeSet<VertexId>;

/// Answers of one query on the three cumulative split graphs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSets {
    pub train: VertexSet,
    pub valid: VertexSet,
    pub test: VertexSet,
}

impl AnswerSets {
    pub fn get(&self, split: Split) -> &VertexSet {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Answers that first appear on `split`'s graph.
    pub fn new_on(&self, split: Split) -> VertexSet {
        match split {
            Split::Train => self.train.clone(),
            Split::Valid => self.valid.difference(&self.train).copied().collect(),
            Split::Test => self.test.difference(&self.valid).copied().collect(),
        }
    }

    /// `test \ valid`: the answers scored at evaluation.
    pub fn hard(&self) -> VertexSet {
        self.new_on(Split::Test)
    }

    /// Answers known before the hard set, filtered out when ranking.
    pub fn known(&self) -> VertexSet {
        self.test.union(&self.valid).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledQuery {
    pub query: QueryGraph,
    pub qtype: QueryType,
    pub answers: AnswerSets,
    pub split: Split,
    /// Sampler seed and the attempt that produced this query.
    pub seed: u64,
    pub attempt: u64,
}

/// Evaluates `q` on `graph` with set semantics.
///
/// Negation children of an intersection are subtracted from the
/// intersection of its positive children; no complement is materialized.
pub fn answer(graph: &Graph, q: &QueryGraph) -> Result<VertexSet> {
    validate(q).map_err(OracleError::Invalid)?;
    let mut vals: Vec<VertexSet> = Vec::with_capacity(q.len());
    for node in q.nodes() {
        let v = match node {
            QueryNode::ItemAnchor(x) | QueryNode::AttributeAnchor(x) => {
                if !graph.contains(*x) {
                    return Err(OracleError::UnknownAnchor(*x));
                }
                BTreeSet::from([*x])
            }
            QueryNode::SessionAnchor(ms) => {
                if let Some(m) = ms.iter().find(|m| !graph.contains(**m)) {
                    return Err(OracleError::UnknownAnchor(*m));
                }
                let found: VertexSet = graph.sessions_with_members(ms).iter().copied().collect();
                if found.is_empty() {
                    return Err(OracleError::SessionNotFound(ms.clone()));
                }
                found
            }
            QueryNode::Projection { rel, child } => {
                let mut out = BTreeSet::new();
                for &v in &vals[*child] {
                    let next = if rel.inverse {
                        graph.predecessors(v, rel.id)?
                    } else {
                        graph.neighbors(v, rel.id)?
                    };
                    out.extend(next.iter().copied());
                }
                out
            }
            // the value of a negation node is its operand; the parent subtracts it
            QueryNode::Negation(child) => vals[*child].clone(),
            QueryNode::Intersection(cs) => {
                let (neg, pos): (Vec<usize>, Vec<usize>) = cs
                    .iter()
                    .partition(|c| matches!(q.nodes()[**c], QueryNode::Negation(_)));
                let mut acc = vals[pos[0]].clone();
                for c in &pos[1..] {
                    acc.retain(|v| vals[*c].contains(v));
                }
                for c in neg {
                    acc.retain(|v| !vals[c].contains(v));
                }
                acc
            }
            QueryNode::Union(cs) => cs.iter().flat_map(|c| vals[*c].iter().copied()).collect(),
        };
        vals.push(v);
    }
    Ok(vals.swap_remove(q.sink()))
}

pub fn answer_on_splits(sg: &SplitGraph, q: &QueryGraph) -> Result<AnswerSets> {
    Ok(AnswerSets {
        train: answer(&sg.train, q)?,
        valid: answer(&sg.valid, q)?,
        test: answer(&sg.test, q)?,
    })
}
