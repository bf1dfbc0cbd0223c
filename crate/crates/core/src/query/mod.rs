//! First-order logical session queries as computational graphs.
//!
//! A [`QueryGraph`] is a single-sink DAG stored in topological order. Anchors
//! are leaves; projections follow one relation (optionally inverted);
//! intersections and unions combine sets of the same vertex kind; negations
//! may only appear directly under an intersection, where they act as set
//! difference.

mod dsl;
mod template;

pub use dsl::{parse, parse_expr, read_query_file, render, write_query_file, QueryExpr};
pub use template::{template, Anchor, QueryType, RelSlot, Shape};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{RelationId, VertexId, VertexKind};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("{tag}: expected {expected}, got {got}")]
    Signature {
        tag: QueryType,
        expected: String,
        got: String,
    },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("at {}: {message}", fmt_path(.path))]
    Semantic { path: Vec<usize>, message: String },
    #[error("unknown query type {0:?}")]
    UnknownType(String),
}

pub type Result<T> = std::result::Result<T, QueryError>;

pub(crate) fn fmt_path(path: &[usize]) -> String {
    if path.is_empty() {
        "root".to_string()
    } else {
        path.iter().map(|p| format!("/{p}")).collect()
    }
}

/// A relation traversed forward (`head → tail`) or backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub inverse: bool,
}

impl Relation {
    pub fn forward(id: RelationId) -> Self {
        Self { id, inverse: false }
    }

    pub fn inverse(id: RelationId) -> Self {
        Self { id, inverse: true }
    }

    pub fn desires() -> Self {
        Self::forward(RelationId::DESIRES)
    }

    pub fn input_kind(self) -> VertexKind {
        if self.inverse {
            self.id.tail_kind()
        } else {
            self.id.head_kind()
        }
    }

    pub fn output_kind(self) -> VertexKind {
        if self.inverse {
            self.id.head_kind()
        } else {
            self.id.tail_kind()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryNode {
    ItemAnchor(VertexId),
    AttributeAnchor(VertexId),
    /// Ordered member items of an observed session.
    SessionAnchor(Vec<VertexId>),
    Projection { rel: Relation, child: usize },
    Intersection(Vec<usize>),
    Union(Vec<usize>),
    Negation(usize),
}

impl QueryNode {
    pub fn children(&self) -> &[usize] {
        match self {
            QueryNode::ItemAnchor(_) | QueryNode::AttributeAnchor(_) | QueryNode::SessionAnchor(_) => {
                &[]
            }
            QueryNode::Projection { child, .. } | QueryNode::Negation(child) => {
                std::slice::from_ref(child)
            }
            QueryNode::Intersection(cs) | QueryNode::Union(cs) => cs,
        }
    }

    pub fn is_anchor(&self) -> bool {
        self.children().is_empty()
    }

    fn op_name(&self) -> &'static str {
        match self {
            QueryNode::ItemAnchor(_) => "item anchor",
            QueryNode::AttributeAnchor(_) => "attribute anchor",
            QueryNode::SessionAnchor(_) => "session anchor",
            QueryNode::Projection { .. } => "projection",
            QueryNode::Intersection(_) => "intersection",
            QueryNode::Union(_) => "union",
            QueryNode::Negation(_) => "negation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryGraph {
    nodes: Vec<QueryNode>,
    sink: usize,
    answer_kind: VertexKind,
}

/// First invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub node: usize,
    /// Child positions from the sink down to `node`.
    pub path: Vec<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {} at {}: {}", self.node, fmt_path(&self.path), self.message)
    }
}

impl QueryGraph {
    /// Wraps raw parts without checking them; see [`validate`].
    pub fn from_parts(nodes: Vec<QueryNode>, sink: usize, answer_kind: VertexKind) -> Self {
        Self {
            nodes,
            sink,
            answer_kind,
        }
    }

    /// Builds a graph whose sink is the last node and whose answer kind is
    /// inferred, then validates it.
    pub fn build(nodes: Vec<QueryNode>) -> std::result::Result<Self, Diagnostic> {
        let sink = nodes.len().saturating_sub(1);
        let mut q = Self {
            nodes,
            sink,
            answer_kind: VertexKind::Item,
        };
        if let Some(kind) = q.output_kinds().ok().and_then(|k| k.get(sink).copied()) {
            q.answer_kind = kind;
        }
        validate(&q)?;
        Ok(q)
    }

    pub fn nodes(&self) -> &[QueryNode] {
        &self.nodes
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn answer_kind(&self) -> VertexKind {
        self.answer_kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_negation(&self) -> bool {
        self.nodes.iter().any(|n| matches!(n, QueryNode::Negation(_)))
    }

    pub fn has_set_operator(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, QueryNode::Intersection(_) | QueryNode::Union(_)))
    }

    /// Operator counts keyed by name, anchors included.
    pub fn operator_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.op_name()).or_default() += 1;
        }
        m
    }

    /// Output vertex kind of every node, assuming indices are in range.
    fn output_kinds(&self) -> std::result::Result<Vec<VertexKind>, usize> {
        let mut kinds: Vec<VertexKind> = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            let k = match n {
                QueryNode::ItemAnchor(_) => VertexKind::Item,
                QueryNode::AttributeAnchor(_) => VertexKind::Attribute,
                QueryNode::SessionAnchor(_) => VertexKind::Session,
                QueryNode::Projection { rel, .. } => rel.output_kind(),
                QueryNode::Intersection(cs) | QueryNode::Union(cs) => {
                    match cs.first().and_then(|c| kinds.get(*c)) {
                        Some(k) => *k,
                        None => return Err(i),
                    }
                }
                QueryNode::Negation(c) => *kinds.get(*c).ok_or(i)?,
            };
            kinds.push(k);
        }
        Ok(kinds)
    }

    /// Child-position path from the sink to `target`, if reachable.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        fn walk(q: &QueryGraph, at: usize, target: usize, path: &mut Vec<usize>) -> bool {
            if at == target {
                return true;
            }
            let Some(node) = q.nodes.get(at) else {
                return false;
            };
            for (pos, &c) in node.children().iter().enumerate() {
                if c >= at {
                    continue;
                }
                path.push(pos);
                if walk(q, c, target, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        walk(self, self.sink, target, &mut path).then_some(path)
    }

    /// Order-insensitive structural key: intersection and union children are
    /// sorted. Two queries have equal keys iff they are equal up to operand
    /// order (for tree-shaped queries).
    pub fn canonical_key(&self) -> String {
        self.subtree_key(self.sink)
    }

    pub(crate) fn subtree_key(&self, at: usize) -> String {
        let fmt_v = |v: &VertexId| format!("{}{}", kind_char(v.kind), v.index);
        match &self.nodes[at] {
            QueryNode::ItemAnchor(v) => format!("(e {})", fmt_v(v)),
            QueryNode::AttributeAnchor(v) => format!("(a {})", fmt_v(v)),
            QueryNode::SessionAnchor(ms) => {
                let items: Vec<_> = ms.iter().map(fmt_v).collect();
                format!("(s {})", items.join(" "))
            }
            QueryNode::Projection { rel, child } => format!(
                "(p {}{} {})",
                if rel.inverse { "~" } else { "" },
                rel.id.0,
                self.subtree_key(*child)
            ),
            QueryNode::Intersection(cs) | QueryNode::Union(cs) => {
                let mut keys: Vec<_> = cs.iter().map(|c| self.subtree_key(*c)).collect();
                keys.sort();
                let op = if matches!(self.nodes[at], QueryNode::Union(_)) {
                    "u"
                } else {
                    "i"
                };
                format!("({op} {})", keys.join(" "))
            }
            QueryNode::Negation(c) => format!("(n {})", self.subtree_key(*c)),
        }
    }

    /// Vertices mentioned by anchors, in node order.
    pub fn anchor_vertices(&self) -> Vec<VertexId> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match n {
                QueryNode::ItemAnchor(v) | QueryNode::AttributeAnchor(v) => out.push(*v),
                QueryNode::SessionAnchor(ms) => out.extend(ms.iter().copied()),
                _ => {}
            }
        }
        out
    }

    /// Relations used by projections.
    pub fn relations(&self) -> Vec<Relation> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                QueryNode::Projection { rel, .. } => Some(*rel),
                _ => None,
            })
            .collect()
    }

    /// Copy with the children of node `at` reordered by `order` (a
    /// permutation of child positions). Node order is kept.
    pub fn with_children_permuted(&self, at: usize, order: &[usize]) -> Option<QueryGraph> {
        let mut q = self.clone();
        match q.nodes.get_mut(at)? {
            QueryNode::Intersection(cs) | QueryNode::Union(cs) => {
                if order.len() != cs.len() {
                    return None;
                }
                let old = cs.clone();
                for (slot, &from) in cs.iter_mut().zip(order) {
                    *slot = *old.get(from)?;
                }
                Some(q)
            }
            _ => None,
        }
    }
}

fn kind_char(k: VertexKind) -> char {
    match k {
        VertexKind::Item => 'i',
        VertexKind::Attribute => 'a',
        VertexKind::Session => 's',
    }
}

/// Checks every structural invariant and returns the first violation.
pub fn validate(q: &QueryGraph) -> std::result::Result<(), Diagnostic> {
    let diag = |node: usize, message: String| Diagnostic {
        node,
        path: q.path_to(node).unwrap_or_default(),
        message,
    };
    let n = q.nodes.len();
    if n == 0 {
        return Err(Diagnostic {
            node: 0,
            path: vec![],
            message: "empty query".into(),
        });
    }
    if q.sink >= n {
        return Err(Diagnostic {
            node: q.sink,
            path: vec![],
            message: format!("sink {} out of range", q.sink),
        });
    }
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in q.nodes.iter().enumerate() {
        for &c in node.children() {
            if c >= i {
                return Err(diag(
                    i,
                    format!("child {c} does not precede its parent (topological order)"),
                ));
            }
            parents[c].push(i);
        }
    }
    for (i, ps) in parents.iter().enumerate() {
        if i == q.sink && !ps.is_empty() {
            return Err(diag(i, "sink has a parent".into()));
        }
        if i != q.sink && ps.is_empty() {
            return Err(diag(i, "node is not connected to the sink (second sink)".into()));
        }
    }
    for (i, node) in q.nodes.iter().enumerate() {
        match node {
            QueryNode::Intersection(cs) if cs.len() < 2 => {
                return Err(diag(i, "intersection arity ≥ 2".into()))
            }
            QueryNode::Union(cs) if cs.len() < 2 => {
                return Err(diag(i, "union arity ≥ 2".into()))
            }
            QueryNode::Intersection(cs)
                if cs.iter().all(|c| matches!(q.nodes[*c], QueryNode::Negation(_))) =>
            {
                return Err(diag(i, "intersection needs a non-negated operand".into()))
            }
            QueryNode::SessionAnchor(ms) if ms.is_empty() => {
                return Err(diag(i, "session anchor with no members".into()))
            }
            QueryNode::SessionAnchor(ms) if ms.iter().any(|m| m.kind != VertexKind::Item) => {
                return Err(diag(i, "session members must be items".into()))
            }
            QueryNode::ItemAnchor(v) if v.kind != VertexKind::Item => {
                return Err(diag(i, format!("item anchor holds a {}", v.kind)))
            }
            QueryNode::AttributeAnchor(v) if v.kind != VertexKind::Attribute => {
                return Err(diag(i, format!("attribute anchor holds a {}", v.kind)))
            }
            QueryNode::Negation(c) => {
                if i == q.sink {
                    return Err(diag(i, "negation at root".into()));
                }
                if matches!(q.nodes[*c], QueryNode::Negation(_)) {
                    return Err(diag(*c, "negation under negation".into()));
                }
                if let Some(p) = parents[i]
                    .iter()
                    .find(|p| !matches!(q.nodes[**p], QueryNode::Intersection(_)))
                {
                    let message = if matches!(q.nodes[*p], QueryNode::Negation(_)) {
                        "negation under negation".to_string()
                    } else {
                        format!("negation under {} (only under intersection)", q.nodes[*p].op_name())
                    };
                    return Err(diag(i, message));
                }
            }
            _ => {}
        }
    }
    let kinds = q
        .output_kinds()
        .map_err(|i| diag(i, "malformed operand list".into()))?;
    for (i, node) in q.nodes.iter().enumerate() {
        match node {
            QueryNode::Projection { rel, child } => {
                if kinds[*child] != rel.input_kind() {
                    return Err(diag(
                        i,
                        format!(
                            "projection over relation {} expects {} input, got {}",
                            rel.id.0,
                            rel.input_kind(),
                            kinds[*child]
                        ),
                    ));
                }
            }
            QueryNode::Intersection(cs) | QueryNode::Union(cs) => {
                if let Some(c) = cs.iter().find(|c| kinds[**c] != kinds[i]) {
                    return Err(diag(
                        *c,
                        format!("operand kind {} differs from {}", kinds[*c], kinds[i]),
                    ));
                }
                if kinds[i] == VertexKind::Session {
                    return Err(diag(i, "set operators over sessions are not supported".into()));
                }
            }
            _ => {}
        }
    }
    if kinds[q.sink] != q.answer_kind {
        return Err(diag(
            q.sink,
            format!(
                "answer kind {} does not match the sink's {}",
                q.answer_kind, kinds[q.sink]
            ),
        ));
    }
    if kinds[q.sink] == VertexKind::Session {
        return Err(diag(q.sink, "queries must answer items or attributes".into()));
    }
    Ok(())
}
