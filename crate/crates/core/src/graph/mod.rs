//! Immutable session/item/attribute hypergraph.
//!
//! Vertices are typed ([`VertexKind`]) and numbered densely per kind in order
//! of first appearance. Binary relational edges are indexed in both
//! directions. Sessions are ordered hyperedges over items; the item(s) a
//! session leads to are stored as edges of the reserved relation
//! [`DESIRES`] from the session vertex.

mod ingest;
mod split;

pub use ingest::{
    ingest, read_session_log, read_triples, write_session_log, write_triples, AttributeTriple,
    IngestConfig, SessionRecord,
};
pub use split::{split_edges, EdgeAssignment, Split, SplitGraph, SplitManifest};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the reserved session→item relation. Always relation index 0.
pub const DESIRES: &str = "desires";

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("unknown relation index {0}")]
    UnknownRelation(u32),
    #[error("record {position}: {message}")]
    Record { position: usize, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate session id {id:?} at record {position}")]
    DuplicateSession { id: String, position: usize },
    #[error("split: {0}")]
    Split(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertexKind {
    Item,
    Attribute,
    Session,
}

impl VertexKind {
    pub const ALL: [VertexKind; 3] = [VertexKind::Item, VertexKind::Attribute, VertexKind::Session];
}

impl fmt::Display for VertexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VertexKind::Item => "item",
            VertexKind::Attribute => "attribute",
            VertexKind::Session => "session",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId {
    pub kind: VertexKind,
    pub index: u32,
}

impl VertexId {
    pub fn item(index: u32) -> Self {
        Self {
            kind: VertexKind::Item,
            index,
        }
    }

    pub fn attribute(index: u32) -> Self {
        Self {
            kind: VertexKind::Attribute,
            index,
        }
    }

    pub fn session(index: u32) -> Self {
        Self {
            kind: VertexKind::Session,
            index,
        }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.kind, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl RelationId {
    pub const DESIRES: RelationId = RelationId(0);

    pub fn is_desires(self) -> bool {
        self == Self::DESIRES
    }

    /// Kind of the head vertex: sessions for `desires`, items otherwise.
    pub fn head_kind(self) -> VertexKind {
        if self.is_desires() {
            VertexKind::Session
        } else {
            VertexKind::Item
        }
    }

    /// Kind of the tail vertex: items for `desires`, attributes otherwise.
    pub fn tail_kind(self) -> VertexKind {
        if self.is_desires() {
            VertexKind::Item
        } else {
            VertexKind::Attribute
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripleEdge {
    pub head: VertexId,
    pub rel: RelationId,
    pub tail: VertexId,
}

/// An ordered session hyperedge. Position `k` (1-based) is `members[k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEdge {
    pub session: VertexId,
    pub members: Vec<VertexId>,
    pub targets: BTreeSet<VertexId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Names {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Names {
    fn from_list(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self { names, index }
    }

    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

/// String ↔ dense id maps for every vertex kind and for relations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Names,
    attributes: Names,
    sessions: Names,
    relations: Names,
}

/// Plain-list form of a [`Vocab`] used in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSnapshot {
    pub items: Vec<String>,
    pub attributes: Vec<String>,
    pub sessions: Vec<String>,
    pub relations: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut relations = Names::default();
        relations.intern(DESIRES);
        Self {
            items: Names::default(),
            attributes: Names::default(),
            sessions: Names::default(),
            relations,
        }
    }
}

impl Vocab {
    fn names(&self, kind: VertexKind) -> &Names {
        match kind {
            VertexKind::Item => &self.items,
            VertexKind::Attribute => &self.attributes,
            VertexKind::Session => &self.sessions,
        }
    }

    fn names_mut(&mut self, kind: VertexKind) -> &mut Names {
        match kind {
            VertexKind::Item => &mut self.items,
            VertexKind::Attribute => &mut self.attributes,
            VertexKind::Session => &mut self.sessions,
        }
    }

    pub(crate) fn intern(&mut self, kind: VertexKind, name: &str) -> VertexId {
        VertexId {
            kind,
            index: self.names_mut(kind).intern(name),
        }
    }

    pub(crate) fn intern_relation(&mut self, name: &str) -> RelationId {
        RelationId(self.relations.intern(name))
    }

    pub fn count(&self, kind: VertexKind) -> usize {
        self.names(kind).len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn contains(&self, v: VertexId) -> bool {
        (v.index as usize) < self.count(v.kind)
    }

    pub fn lookup(&self, kind: VertexKind, name: &str) -> Option<VertexId> {
        self.names(kind).get(name).map(|index| VertexId { kind, index })
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    /// Name of a vertex. Panics on ids not issued by this vocabulary.
    pub fn name(&self, v: VertexId) -> &str {
        &self.names(v.kind).names[v.index as usize]
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relations.names[r.0 as usize]
    }

    pub fn vertices(&self, kind: VertexKind) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.count(kind) as u32).map(move |index| VertexId { kind, index })
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relation_count() as u32).map(RelationId)
    }

    pub fn snapshot(&self) -> VocabSnapshot {
        VocabSnapshot {
            items: self.items.names.clone(),
            attributes: self.attributes.names.clone(),
            sessions: self.sessions.names.clone(),
            relations: self.relations.names.clone(),
        }
    }

    pub fn from_snapshot(s: &VocabSnapshot) -> Result<Self> {
        if s.relations.first().map(String::as_str) != Some(DESIRES) {
            return Err(GraphError::Split(format!(
                "vocabulary must list {DESIRES:?} as relation 0"
            )));
        }
        Ok(Self {
            items: Names::from_list(s.items.clone()),
            attributes: Names::from_list(s.attributes.clone()),
            sessions: Names::from_list(s.sessions.clone()),
            relations: Names::from_list(s.relations.clone()),
        })
    }
}

type Adjacency = HashMap<VertexId, BTreeMap<RelationId, BTreeSet<VertexId>>>;

static EMPTY: BTreeSet<VertexId> = BTreeSet::new();

/// Counts reported by [`Graph::stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub edges: usize,
    pub vertices: usize,
    pub sessions: usize,
    pub items: usize,
    pub attributes: usize,
    /// Relations carrying at least one edge.
    pub relations: usize,
}

#[derive(Debug, Clone)]
pub struct Graph {
    vocab: Arc<Vocab>,
    edges: Vec<TripleEdge>,
    sessions: Vec<SessionEdge>,
    forward: Adjacency,
    backward: Adjacency,
    by_members: HashMap<Vec<VertexId>, Vec<VertexId>>,
}

impl Graph {
    /// Builds the indices. `members[i]` is the member list of session `i`;
    /// session targets are derived from the `desires` edges. Repeated edges
    /// are kept once.
    pub fn from_parts(
        vocab: Arc<Vocab>,
        members: Vec<Vec<VertexId>>,
        edges: impl IntoIterator<Item = TripleEdge>,
    ) -> Self {
        let mut sessions: Vec<SessionEdge> = members
            .into_iter()
            .enumerate()
            .map(|(i, members)| SessionEdge {
                session: VertexId::session(i as u32),
                members,
                targets: BTreeSet::new(),
            })
            .collect();
        let mut forward: Adjacency = HashMap::new();
        let mut backward: Adjacency = HashMap::new();
        let mut kept = Vec::new();
        for e in edges {
            let fresh = forward
                .entry(e.head)
                .or_default()
                .entry(e.rel)
                .or_default()
                .insert(e.tail);
            if !fresh {
                continue;
            }
            backward
                .entry(e.tail)
                .or_default()
                .entry(e.rel)
                .or_default()
                .insert(e.head);
            if e.rel.is_desires() {
                sessions[e.head.index as usize].targets.insert(e.tail);
            }
            kept.push(e);
        }
        let mut by_members: HashMap<Vec<VertexId>, Vec<VertexId>> = HashMap::new();
        for s in &sessions {
            by_members
                .entry(s.members.clone())
                .or_default()
                .push(s.session);
        }
        Self {
            vocab,
            edges: kept,
            sessions,
            forward,
            backward,
            by_members,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub(crate) fn vocab_arc(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn edges(&self) -> &[TripleEdge] {
        &self.edges
    }

    pub fn sessions(&self) -> &[SessionEdge] {
        &self.sessions
    }

    pub fn session(&self, v: VertexId) -> Result<&SessionEdge> {
        if v.kind != VertexKind::Session {
            return Err(GraphError::UnknownVertex(v));
        }
        self.sessions
            .get(v.index as usize)
            .ok_or(GraphError::UnknownVertex(v))
    }

    /// Session vertices whose member list equals `members` exactly.
    pub fn sessions_with_members(&self, members: &[VertexId]) -> &[VertexId] {
        self.by_members.get(members).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.vocab.contains(v)
    }

    fn check(&self, v: VertexId, rel: RelationId) -> Result<()> {
        if !self.contains(v) {
            return Err(GraphError::UnknownVertex(v));
        }
        if rel.0 as usize >= self.vocab.relation_count() {
            return Err(GraphError::UnknownRelation(rel.0));
        }
        Ok(())
    }

    /// Tails `t` with `rel(source, t)`.
    pub fn neighbors(&self, source: VertexId, rel: RelationId) -> Result<&BTreeSet<VertexId>> {
        self.check(source, rel)?;
        Ok(self
            .forward
            .get(&source)
            .and_then(|m| m.get(&rel))
            .unwrap_or(&EMPTY))
    }

    /// Heads `h` with `rel(h, target)`.
    pub fn predecessors(&self, target: VertexId, rel: RelationId) -> Result<&BTreeSet<VertexId>> {
        self.check(target, rel)?;
        Ok(self
            .backward
            .get(&target)
            .and_then(|m| m.get(&rel))
            .unwrap_or(&EMPTY))
    }

    /// All `(rel, tail)` pairs leaving `source`.
    pub fn out_edges(&self, source: VertexId) -> impl Iterator<Item = (RelationId, VertexId)> + '_ {
        self.forward
            .get(&source)
            .into_iter()
            .flat_map(|m| m.iter().flat_map(|(r, ts)| ts.iter().map(move |t| (*r, *t))))
    }

    /// All `(rel, head)` pairs entering `target`.
    pub fn in_edges(&self, target: VertexId) -> impl Iterator<Item = (RelationId, VertexId)> + '_ {
        self.backward
            .get(&target)
            .into_iter()
            .flat_map(|m| m.iter().flat_map(|(r, hs)| hs.iter().map(move |h| (*r, *h))))
    }

    pub fn has_edge(&self, e: &TripleEdge) -> bool {
        self.forward
            .get(&e.head)
            .and_then(|m| m.get(&e.rel))
            .is_some_and(|s| s.contains(&e.tail))
    }

    pub fn stats(&self) -> GraphStats {
        let rels: BTreeSet<RelationId> = self.edges.iter().map(|e| e.rel).collect();
        let items = self.vocab.count(VertexKind::Item);
        let attributes = self.vocab.count(VertexKind::Attribute);
        let sessions = self.vocab.count(VertexKind::Session);
        GraphStats {
            edges: self.edges.len(),
            vertices: items + attributes + sessions,
            sessions,
            items,
            attributes,
            relations: rels.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_graph() -> Graph {
        let sessions = vec![
            SessionRecord::new("s1", &["a", "b"], &["c"]),
            SessionRecord::new("s2", &["b", "c"], &["d"]),
        ];
        let triples = vec![AttributeTriple::new("c", "brand", "X")];
        ingest(sessions, triples, &IngestConfig::default()).unwrap()
    }

    #[test]
    fn ingestion_example_counts() {
        let g = sample_graph();
        let s = g.stats();
        assert_eq!(
            s,
            GraphStats {
                edges: 3,
                vertices: 7,
                sessions: 2,
                items: 4,
                attributes: 1,
                relations: 2
            }
        );
        let desires = g.edges().iter().filter(|e| e.rel.is_desires()).count();
        assert_eq!(desires, 2);
    }

    #[test]
    fn neighbor_examples() {
        let g = sample_graph();
        let v = g.vocab();
        let brand = v.relation("brand").unwrap();
        let c = v.lookup(VertexKind::Item, "c").unwrap();
        let a = v.lookup(VertexKind::Item, "a").unwrap();
        let x = v.lookup(VertexKind::Attribute, "X").unwrap();
        let s1 = v.lookup(VertexKind::Session, "s1").unwrap();
        assert_eq!(g.neighbors(c, brand).unwrap(), &BTreeSet::from([x]));
        assert!(g.neighbors(a, brand).unwrap().is_empty());
        assert_eq!(
            g.neighbors(s1, RelationId::DESIRES).unwrap(),
            &BTreeSet::from([c])
        );
        assert_eq!(g.predecessors(x, brand).unwrap(), &BTreeSet::from([c]));
        assert_eq!(
            g.neighbors(VertexId::item(99), brand),
            Err(GraphError::UnknownVertex(VertexId::item(99)))
        );
    }

    #[test]
    fn empty_graph_stats_are_zero() {
        let g = ingest(vec![], vec![], &IngestConfig::default()).unwrap();
        assert_eq!(g.stats(), GraphStats::default());
    }

    #[test]
    fn numbering_follows_first_appearance() {
        let g = sample_graph();
        let names: Vec<&str> = g
            .vocab()
            .vertices(VertexKind::Item)
            .map(|v| g.vocab().name(v))
            .collect();
        assert_eq!(names, ["a", "b", "c", "d"]);
        let s2 = g.vocab().lookup(VertexKind::Session, "s2").unwrap();
        assert_eq!(g.session(s2).unwrap().members.len(), 2);
        assert_eq!(
            g.sessions_with_members(&g.session(s2).unwrap().members),
            &[s2]
        );
    }
}
