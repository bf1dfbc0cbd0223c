use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{QueryError, QueryGraph, QueryNode, Relation, Result};
use crate::graph::{RelationId, VertexId, VertexKind};

/// The 18 query shapes: 14 used for training plus 4 held out for
/// zero-shot evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "2iA")]
    I2A,
    #[serde(rename = "2iS")]
    I2S,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2inA")]
    In2A,
    #[serde(rename = "2inS")]
    In2S,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "3iA")]
    I3A,
    #[serde(rename = "3ip")]
    I3p,
    #[serde(rename = "3inA")]
    In3A,
    #[serde(rename = "3inp")]
    In3p,
}

use QueryType::*;

impl QueryType {
    pub const ALL: [QueryType; 18] = [
        P1, P2, I2A, I2S, I3, Ip, Pi, U2, Up, In2A, In2S, In3, Inp, Pin, I3A, I3p, In3A, In3p,
    ];
    pub const TRAINING: [QueryType; 14] = [
        P1, P2, I2A, I2S, I3, Ip, Pi, U2, Up, In2A, In2S, In3, Inp, Pin,
    ];
    pub const EPFO: [QueryType; 9] = [P1, P2, I2A, I2S, I3, Pi, Ip, U2, Up];
    pub const NEGATION: [QueryType; 5] = [In2A, In2S, In3, Inp, Pin];
    pub const OOD: [QueryType; 4] = [I3A, I3p, In3A, In3p];

    pub fn tag(self) -> &'static str {
        match self {
            P1 => "1p",
            P2 => "2p",
            I2A => "2iA",
            I2S => "2iS",
            I3 => "3i",
            Ip => "ip",
            Pi => "pi",
            U2 => "2u",
            Up => "up",
            In2A => "2inA",
            In2S => "2inS",
            In3 => "3in",
            Inp => "inp",
            Pin => "pin",
            I3A => "3iA",
            I3p => "3ip",
            In3A => "3inA",
            In3p => "3inp",
        }
    }

    pub fn is_ood(self) -> bool {
        Self::OOD.contains(&self)
    }

    pub fn has_negation(self) -> bool {
        matches!(self, In2A | In2S | In3 | Inp | Pin | In3A | In3p)
    }

    /// Abstract structure of the template.
    pub fn shape(self) -> Shape {
        use Shape::{And, Not, Or};
        let s = || Shape::Project(RelSlot::Desires, Box::new(Shape::Session));
        let a = || Shape::Project(RelSlot::Anchor, Box::new(Shape::Attribute));
        let e = || Shape::Project(RelSlot::Anchor, Box::new(Shape::Item));
        let hop = |x: Shape| Shape::Project(RelSlot::Hop, Box::new(x));
        let not = |x: Shape| Not(Box::new(x));
        match self {
            P1 => s(),
            P2 => hop(s()),
            I2A => And(vec![s(), a()]),
            I2S => And(vec![s(), s()]),
            I3 => And(vec![s(), s(), a()]),
            Ip => hop(And(vec![s(), s()])),
            Pi => And(vec![hop(s()), e()]),
            U2 => Or(vec![s(), s()]),
            Up => hop(Or(vec![s(), s()])),
            In2A => And(vec![s(), not(a())]),
            In2S => And(vec![s(), not(s())]),
            In3 => And(vec![s(), a(), not(s())]),
            Inp => hop(And(vec![s(), not(s())])),
            Pin => And(vec![hop(s()), not(e())]),
            I3A => And(vec![s(), a(), a()]),
            I3p => hop(And(vec![s(), a(), a()])),
            In3A => And(vec![s(), a(), not(a())]),
            In3p => hop(And(vec![s(), a(), not(a())])),
        }
    }

    pub fn answer_kind(self) -> VertexKind {
        if self.shape().uses_hop() {
            VertexKind::Attribute
        } else {
            VertexKind::Item
        }
    }

    /// Anchor kinds in template order.
    pub fn anchor_kinds(self) -> Vec<VertexKind> {
        let mut out = Vec::new();
        self.shape().leaves(&mut out);
        out
    }

    pub fn needs_hop(self) -> bool {
        self.shape().uses_hop()
    }

    fn signature(self) -> String {
        let mut parts: Vec<String> = self
            .anchor_kinds()
            .iter()
            .map(|k| match k {
                VertexKind::Session => "session".to_string(),
                VertexKind::Item => "item+relation".to_string(),
                VertexKind::Attribute => "attribute+relation".to_string(),
            })
            .collect();
        if self.needs_hop() {
            parts.push("hop relation".into());
        }
        format!("[{}]", parts.join(", "))
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for QueryType {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| QueryError::UnknownType(s.to_string()))
    }
}

/// Where a projection's relation comes from when a template is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelSlot {
    Desires,
    /// The relation carried by the anchor directly below (inverted for
    /// attribute anchors).
    Anchor,
    /// The template's shared attribute hop.
    Hop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    Session,
    Item,
    Attribute,
    Project(RelSlot, Box<Shape>),
    And(Vec<Shape>),
    Or(Vec<Shape>),
    Not(Box<Shape>),
}

impl Shape {
    fn uses_hop(&self) -> bool {
        match self {
            Shape::Project(RelSlot::Hop, _) => true,
            Shape::Project(_, c) | Shape::Not(c) => c.uses_hop(),
            Shape::And(cs) | Shape::Or(cs) => cs.iter().any(Shape::uses_hop),
            _ => false,
        }
    }

    fn leaves(&self, out: &mut Vec<VertexKind>) {
        match self {
            Shape::Session => out.push(VertexKind::Session),
            Shape::Item => out.push(VertexKind::Item),
            Shape::Attribute => out.push(VertexKind::Attribute),
            Shape::Project(_, c) | Shape::Not(c) => c.leaves(out),
            Shape::And(cs) | Shape::Or(cs) => cs.iter().for_each(|c| c.leaves(out)),
        }
    }
}

/// A filled template leaf. Item and attribute anchors carry the relation
/// that links them to the item variable above.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Anchor {
    Session(Vec<VertexId>),
    Item { item: VertexId, rel: RelationId },
    Attribute { attribute: VertexId, rel: RelationId },
}

impl Anchor {
    pub fn kind(&self) -> VertexKind {
        match self {
            Anchor::Session(_) => VertexKind::Session,
            Anchor::Item { .. } => VertexKind::Item,
            Anchor::Attribute { .. } => VertexKind::Attribute,
        }
    }
}

struct Builder<'a> {
    anchors: &'a [Anchor],
    next: usize,
    hop: Option<RelationId>,
    nodes: Vec<QueryNode>,
}

impl Builder<'_> {
    fn push(&mut self, n: QueryNode) -> usize {
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn take(&mut self) -> Anchor {
        let a = self.anchors[self.next].clone();
        self.next += 1;
        a
    }

    fn emit(&mut self, shape: &Shape) -> usize {
        match shape {
            Shape::Session => match self.take() {
                Anchor::Session(ms) => self.push(QueryNode::SessionAnchor(ms)),
                _ => unreachable!("anchor kinds checked"),
            },
            Shape::Item | Shape::Attribute => unreachable!("bare entity anchors are always projected"),
            Shape::Project(slot, child) => {
                let (rel, c) = match (slot, child.as_ref()) {
                    (RelSlot::Anchor, Shape::Item) => match self.take() {
                        Anchor::Item { item, rel } => {
                            (Relation::forward(rel), self.push(QueryNode::ItemAnchor(item)))
                        }
                        _ => unreachable!("anchor kinds checked"),
                    },
                    (RelSlot::Anchor, Shape::Attribute) => match self.take() {
                        Anchor::Attribute { attribute, rel } => (
                            Relation::inverse(rel),
                            self.push(QueryNode::AttributeAnchor(attribute)),
                        ),
                        _ => unreachable!("anchor kinds checked"),
                    },
                    (RelSlot::Desires, c) => (Relation::desires(), self.emit(c)),
                    (RelSlot::Hop, c) => {
                        let r = self.hop.expect("hop checked");
                        (Relation::forward(r), self.emit(c))
                    }
                    (RelSlot::Anchor, _) => unreachable!("anchor slot needs an entity anchor"),
                };
                self.push(QueryNode::Projection { rel, child: c })
            }
            Shape::And(cs) => {
                let ids = cs.iter().map(|c| self.emit(c)).collect();
                self.push(QueryNode::Intersection(ids))
            }
            Shape::Or(cs) => {
                let ids = cs.iter().map(|c| self.emit(c)).collect();
                self.push(QueryNode::Union(ids))
            }
            Shape::Not(c) => {
                let id = self.emit(c);
                self.push(QueryNode::Negation(id))
            }
        }
    }
}

/// Instantiates the canonical DAG for `tag`.
///
/// `anchors` follow the leaf order of [`QueryType::shape`]; `hop` is the
/// attribute relation applied above the item variable for types that answer
/// attributes through a final projection.
pub fn template(tag: QueryType, anchors: &[Anchor], hop: Option<RelationId>) -> Result<QueryGraph> {
    let sig_err = |got: String| QueryError::Signature {
        tag,
        expected: tag.signature(),
        got,
    };
    let kinds = tag.anchor_kinds();
    let got_kinds: Vec<_> = anchors.iter().map(Anchor::kind).collect();
    if kinds != got_kinds {
        let names: Vec<_> = got_kinds.iter().map(|k| k.to_string()).collect();
        return Err(sig_err(format!("[{}]", names.join(", "))));
    }
    match (tag.needs_hop(), hop) {
        (true, None) => return Err(sig_err("no hop relation".into())),
        (false, Some(_)) => return Err(sig_err("an unused hop relation".into())),
        (true, Some(r)) if r.is_desires() => {
            return Err(sig_err("desires as the hop relation".into()))
        }
        _ => {}
    }
    for a in anchors {
        match a {
            Anchor::Session(ms) if ms.is_empty() => return Err(sig_err("an empty session".into())),
            Anchor::Session(ms) if ms.iter().any(|m| m.kind != VertexKind::Item) => {
                return Err(sig_err("a session with non-item members".into()))
            }
            Anchor::Item { item, rel } if item.kind != VertexKind::Item || rel.is_desires() => {
                return Err(sig_err(format!("item anchor {item} over relation {}", rel.0)))
            }
            Anchor::Attribute { attribute, rel }
                if attribute.kind != VertexKind::Attribute || rel.is_desires() =>
            {
                return Err(sig_err(format!(
                    "attribute anchor {attribute} over relation {}",
                    rel.0
                )))
            }
            _ => {}
        }
    }
    let mut b = Builder {
        anchors,
        next: 0,
        hop,
        nodes: Vec::new(),
    };
    b.emit(&tag.shape());
    let q = QueryGraph::build(b.nodes).map_err(|d| QueryError::Semantic {
        path: d.path,
        message: d.message,
    })?;
    debug_assert_eq!(q.answer_kind(), tag.answer_kind());
    Ok(q)
}
