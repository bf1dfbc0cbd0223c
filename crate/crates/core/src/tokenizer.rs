//! Query graph to token sequence.
//!
//! Tokens are symbolic: a feature reference into an embedding table, two
//! node-identifier slots and a token type. The model gathers the actual
//! rows so gradients reach the tables; [`materialize`] does the same
//! outside a tape for inspection and tests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{RelationId, VertexId, VertexKind};
use crate::query::{QueryGraph, QueryNode, Relation};
use crate::rng::derive_rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("query has {nodes} token nodes but identifier width d2 = {d2}; increase d2 to at least {nodes}")]
    TooManyNodes { nodes: usize, d2: usize },
    #[error("relation {0} has no embedding row")]
    UnknownRelation(u32),
    #[error("{0} has no embedding row")]
    UnknownVertex(VertexId),
    #[error("session position {position} exceeds the position table ({max})")]
    PositionOutOfRange { position: usize, max: usize },
    #[error("identifier basis has {basis} rows, query needs {nodes}")]
    BasisMismatch { basis: usize, nodes: usize },
    #[error("embedding table {name} has shape {got:?}, expected {expected:?}")]
    TableShape {
        name: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
}

pub type Result<T> = std::result::Result<T, TokenizerError>;

/// Operator embeddings, in table row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    Session,
    Projection,
    Intersection,
    Negation,
    Union,
}

impl Operator {
    pub const COUNT: usize = 5;

    pub fn row(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Session => "[S]",
            Operator::Projection => "[P]",
            Operator::Intersection => "[I]",
            Operator::Negation => "[N]",
            Operator::Union => "[U]",
        }
    }
}

/// Where a token's d1-wide feature comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Item(u32),
    Attribute(u32),
    Operator(Operator),
    Relation(Relation),
    /// Session position, 1-based.
    Position(usize),
    Zero,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Item(i) => write!(f, "item#{i}"),
            Feature::Attribute(i) => write!(f, "attribute#{i}"),
            Feature::Operator(o) => f.write_str(o.symbol()),
            Feature::Relation(r) => write!(f, "rel#{}{}", r.id.0, if r.inverse { "^-1" } else { "" }),
            Feature::Position(p) => write!(f, "pos{p}"),
            Feature::Zero => f.write_str("zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Node,
    SessionEdge { position: usize },
    LogicEdge,
}

/// One non-graph token. Node tokens repeat their identifier in both slots;
/// edge tokens hold (source, target).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    pub provenance: Provenance,
    pub feature: Feature,
    pub id_a: usize,
    pub id_b: usize,
}

impl Token {
    /// Row of the type table: 0 for node tokens, 1 for edge tokens.
    pub fn type_row(&self) -> usize {
        match self.provenance {
            Provenance::Node => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenizerFlags {
    pub drop_logic_tokens: bool,
    pub drop_session_positions: bool,
}

/// Table sizes the tokens must fit into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableSizes {
    pub items: usize,
    pub attributes: usize,
    pub relations: usize,
    pub positions: usize,
}

/// The graph token (implicit, first) followed by `tokens`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub n: usize,
    pub m: usize,
    pub w: usize,
}

impl TokenSequence {
    /// Total length including the graph token.
    pub fn len(&self) -> usize {
        1 + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tokens sorted, for multiset comparison.
    pub fn multiset(&self) -> Vec<Token> {
        let mut t = self.tokens.clone();
        t.sort();
        t
    }

    /// One line per token: provenance, feature source, identifier rows.
    pub fn dump(&self) -> String {
        let mut out = String::from("graph\t[graph]\t-\t-\n");
        for t in &self.tokens {
            let prov = match t.provenance {
                Provenance::Node => "node".to_string(),
                Provenance::SessionEdge { position } => format!("session-edge@{position}"),
                Provenance::LogicEdge => "logic-edge".to_string(),
            };
            out += &format!("{prov}\t{}\t{}\t{}\n", t.feature, t.id_a, t.id_b);
        }
        out
    }
}

/// Random orthonormal identifier rows, one per token node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeIdentifierBasis {
    pub p: Tensor,
    pub seed: u64,
}

/// Token nodes of a query in identifier order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLayout {
    /// Item vertices, ascending.
    pub items: Vec<VertexId>,
    /// Attribute anchor vertices, ascending.
    pub attributes: Vec<VertexId>,
    /// Query-graph node index of each session/operator token node.
    pub structural: Vec<usize>,
}

impl NodeLayout {
    pub fn len(&self) -> usize {
        self.items.len() + self.attributes.len() + self.structural.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Order-insensitive key that also ignores member order inside sessions.
fn loose_key(q: &QueryGraph, at: usize) -> String {
    match &q.nodes()[at] {
        QueryNode::SessionAnchor(ms) => {
            let mut ids: Vec<_> = ms.iter().map(|m| m.index).collect();
            ids.sort_unstable();
            format!("(s {ids:?})")
        }
        QueryNode::Projection { rel, child } => {
            format!("(p {}{} {})", rel.inverse, rel.id.0, loose_key(q, *child))
        }
        QueryNode::Intersection(cs) | QueryNode::Union(cs) => {
            let mut keys: Vec<_> = cs.iter().map(|c| loose_key(q, *c)).collect();
            keys.sort();
            let op = if matches!(q.nodes()[at], QueryNode::Union(_)) { "u" } else { "i" };
            format!("({op} {})", keys.join(" "))
        }
        QueryNode::Negation(c) => format!("(n {})", loose_key(q, *c)),
        _ => q.subtree_key(at),
    }
}

/// Numbers the token nodes independently of operand order: items and
/// attribute anchors by vertex id, then sessions and operators in a
/// post-order walk that visits commutative operands in sorted key order.
pub fn node_layout(q: &QueryGraph) -> NodeLayout {
    let mut items = BTreeSet::new();
    let mut attributes = BTreeSet::new();
    for n in q.nodes() {
        match n {
            QueryNode::SessionAnchor(ms) => items.extend(ms.iter().copied()),
            QueryNode::ItemAnchor(v) => {
                items.insert(*v);
            }
            QueryNode::AttributeAnchor(v) => {
                attributes.insert(*v);
            }
            _ => {}
        }
    }
    fn walk(q: &QueryGraph, at: usize, seen: &mut [bool], out: &mut Vec<usize>) {
        if seen[at] {
            return;
        }
        seen[at] = true;
        let node = &q.nodes()[at];
        let mut children: Vec<usize> = node.children().to_vec();
        if matches!(node, QueryNode::Intersection(_) | QueryNode::Union(_)) {
            children.sort_by_cached_key(|c| (loose_key(q, *c), q.subtree_key(*c)));
        }
        for c in children {
            walk(q, c, seen, out);
        }
        if !matches!(node, QueryNode::ItemAnchor(_) | QueryNode::AttributeAnchor(_)) {
            out.push(at);
        }
    }
    let mut structural = Vec::new();
    let mut seen = vec![false; q.len()];
    walk(q, q.sink(), &mut seen, &mut structural);
    NodeLayout {
        items: items.into_iter().collect(),
        attributes: attributes.into_iter().collect(),
        structural,
    }
}

/// Orthonormal rows from a seeded Gaussian matrix (Gram-Schmidt, applied
/// twice for accuracy).
pub fn orthonormal_rows(n: usize, d2: usize, seed: u64) -> Result<Tensor> {
    if n > d2 {
        return Err(TokenizerError::TooManyNodes { nodes: n, d2 });
    }
    let mut rng = derive_rng(seed, &[0x1d]);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d2).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a degenerate draw is astronomically unlikely; redraw if it happens
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    let data = rows.into_iter().flatten().collect();
    Ok(Tensor::new(n, d2, data).expect("n*d2 values"))
}

pub fn assign_identifiers(q: &QueryGraph, d2: usize, seed: u64) -> Result<NodeIdentifierBasis> {
    let n = node_layout(q).len();
    Ok(NodeIdentifierBasis {
        p: orthonormal_rows(n, d2, seed)?,
        seed,
    })
}

fn operator_of(node: &QueryNode) -> Option<Operator> {
    match node {
        QueryNode::SessionAnchor(_) => Some(Operator::Session),
        QueryNode::Projection { .. } => Some(Operator::Projection),
        QueryNode::Intersection(_) => Some(Operator::Intersection),
        QueryNode::Negation(_) => Some(Operator::Negation),
        QueryNode::Union(_) => Some(Operator::Union),
        QueryNode::ItemAnchor(_) | QueryNode::AttributeAnchor(_) => None,
    }
}

/// Builds the token list for `q`. Identifier slots index rows of the
/// basis from [`assign_identifiers`].
pub fn tokenize(q: &QueryGraph, sizes: &TableSizes, flags: TokenizerFlags) -> Result<TokenSequence> {
    let layout = node_layout(q);
    let mut vertex_slot: HashMap<VertexId, usize> = HashMap::new();
    let mut tokens = Vec::new();
    for v in layout.items.iter().chain(&layout.attributes) {
        let (limit, feature) = match v.kind {
            VertexKind::Item => (sizes.items, Feature::Item(v.index)),
            _ => (sizes.attributes, Feature::Attribute(v.index)),
        };
        if v.index as usize >= limit {
            return Err(TokenizerError::UnknownVertex(*v));
        }
        let slot = vertex_slot.len();
        vertex_slot.insert(*v, slot);
        tokens.push(Token {
            provenance: Provenance::Node,
            feature,
            id_a: slot,
            id_b: slot,
        });
    }
    let base = vertex_slot.len();
    let mut node_slot: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, &at) in layout.structural.iter().enumerate() {
        node_slot.insert(at, base + k);
        let op = operator_of(&q.nodes()[at]).expect("structural nodes are operators");
        tokens.push(Token {
            provenance: Provenance::Node,
            feature: Feature::Operator(op),
            id_a: base + k,
            id_b: base + k,
        });
    }
    let slot_of = |at: usize| -> usize {
        match &q.nodes()[at] {
            QueryNode::ItemAnchor(v) | QueryNode::AttributeAnchor(v) => vertex_slot[v],
            _ => node_slot[&at],
        }
    };
    let n = tokens.len();
    let mut m = 0;
    for &at in &layout.structural {
        if let QueryNode::SessionAnchor(ms) = &q.nodes()[at] {
            for (k, item) in ms.iter().enumerate() {
                let position = k + 1;
                if position > sizes.positions {
                    return Err(TokenizerError::PositionOutOfRange {
                        position,
                        max: sizes.positions,
                    });
                }
                tokens.push(Token {
                    provenance: Provenance::SessionEdge { position },
                    feature: if flags.drop_session_positions {
                        Feature::Zero
                    } else {
                        Feature::Position(position)
                    },
                    id_a: vertex_slot[item],
                    id_b: node_slot[&at],
                });
                m += 1;
            }
        }
    }
    let mut w = 0;
    // one logic token per query-graph edge, listed parent by parent
    let mut parents: Vec<usize> = layout.structural.clone();
    parents.retain(|p| !q.nodes()[*p].is_anchor());
    for &parent in &parents {
        let pnode = &q.nodes()[parent];
        let feature = match pnode {
            QueryNode::Projection { rel, .. } => {
                if rel.id.0 as usize >= sizes.relations {
                    return Err(TokenizerError::UnknownRelation(rel.id.0));
                }
                Feature::Relation(*rel)
            }
            other => Feature::Operator(operator_of(other).expect("operator")),
        };
        for &child in pnode.children() {
            w += 1;
            if flags.drop_logic_tokens {
                continue;
            }
            tokens.push(Token {
                provenance: Provenance::LogicEdge,
                feature,
                id_a: slot_of(child),
                id_b: slot_of(parent),
            });
        }
    }
    let w = if flags.drop_logic_tokens { 0 } else { w };
    Ok(TokenSequence { tokens, n, m, w })
}

/// Dense tables a token sequence is materialized from.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTables<'a> {
    pub item: &'a Tensor,
    pub attribute: &'a Tensor,
    pub operator: &'a Tensor,
    /// Two rows per relation: forward then inverse.
    pub relation: &'a Tensor,
    pub position: &'a Tensor,
    pub token_type: &'a Tensor,
    /// Full-width graph token, 1 × (d1 + 2·d2 + d3).
    pub graph_token: &'a Tensor,
}

impl EmbeddingTables<'_> {
    pub fn d1(&self) -> usize {
        self.item.cols()
    }

    pub fn d3(&self) -> usize {
        self.token_type.cols()
    }

    pub fn sizes(&self) -> TableSizes {
        TableSizes {
            items: self.item.rows(),
            attributes: self.attribute.rows(),
            relations: self.relation.rows() / 2,
            positions: self.position.rows(),
        }
    }

    fn feature_row(&self, f: Feature) -> Vec<f64> {
        match f {
            Feature::Item(i) => self.item.row(i as usize).to_vec(),
            Feature::Attribute(i) => self.attribute.row(i as usize).to_vec(),
            Feature::Operator(o) => self.operator.row(o.row()).to_vec(),
            Feature::Relation(r) => self.relation.row(relation_row(r)).to_vec(),
            Feature::Position(p) => self.position.row(p - 1).to_vec(),
            Feature::Zero => vec![0.0; self.d1()],
        }
    }
}

pub fn relation_row(r: Relation) -> usize {
    2 * r.id.0 as usize + usize::from(r.inverse)
}

/// Row of `RelationId` `r` traversed forward.
pub fn forward_relation_row(r: RelationId) -> usize {
    relation_row(Relation::forward(r))
}

/// The (1 + n + m + w) × (d1 + 2·d2 + d3) input matrix, graph token first.
pub fn materialize(
    seq: &TokenSequence,
    basis: &NodeIdentifierBasis,
    tables: &EmbeddingTables<'_>,
) -> Result<Tensor> {
    let d2 = basis.p.cols();
    let width = tables.d1() + 2 * d2 + tables.d3();
    if tables.graph_token.shape() != (1, width) {
        return Err(TokenizerError::TableShape {
            name: "graph_token",
            got: tables.graph_token.shape(),
            expected: (1, width),
        });
    }
    if basis.p.rows() != seq.n {
        return Err(TokenizerError::BasisMismatch {
            basis: basis.p.rows(),
            nodes: seq.n,
        });
    }
    let mut data = tables.graph_token.data().to_vec();
    for t in &seq.tokens {
        data.extend(tables.feature_row(t.feature));
        data.extend_from_slice(basis.p.row(t.id_a));
        data.extend_from_slice(basis.p.row(t.id_b));
        data.extend_from_slice(tables.token_type.row(t.type_row()));
    }
    Ok(Tensor::new(seq.len(), width, data).expect("row widths agree"))
}
