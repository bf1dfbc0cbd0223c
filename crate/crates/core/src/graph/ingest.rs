use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, RelationId, Result, TripleEdge, VertexKind, Vocab, DESIRES};

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub items: Vec<String>,
    #[serde(default)]
    pub targets: Vec<String>,
}

impl SessionRecord {
    pub fn new(id: &str, items: &[&str], targets: &[&str]) -> Self {
        Self {
            session_id: id.to_string(),
            items: items.iter().map(|s| s.to_string()).collect(),
            targets: targets.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTriple {
    pub item: String,
    pub relation: String,
    pub attribute: String,
}

impl AttributeTriple {
    pub fn new(item: &str, relation: &str, attribute: &str) -> Self {
        Self {
            item: item.to_string(),
            relation: relation.to_string(),
            attribute: attribute.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Longer sessions keep only their most recent `max_session_len` members.
    pub max_session_len: usize,
    /// When false, triples may only use relations listed in `relations`.
    pub allow_new_relations: bool,
    /// Relations registered up front, in this order, after `desires`.
    pub relations: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            max_session_len: 20,
            allow_new_relations: true,
            relations: Vec::new(),
        }
    }
}

fn record_err(position: usize, message: impl Into<String>) -> GraphError {
    GraphError::Record {
        position,
        message: message.into(),
    }
}

/// Builds a [`Graph`] from session records followed by attribute triples.
///
/// Vertices are numbered by first appearance: session members, then session
/// targets, then triple items and attributes. Positions in errors are
/// 1-based: session records count first, triples continue the count.
pub fn ingest(
    sessions: impl IntoIterator<Item = SessionRecord>,
    triples: impl IntoIterator<Item = AttributeTriple>,
    config: &IngestConfig,
) -> Result<Graph> {
    if config.max_session_len == 0 {
        return Err(record_err(0, "max_session_len must be at least 1"));
    }
    let mut vocab = Vocab::default();
    for r in &config.relations {
        if r == DESIRES {
            continue;
        }
        if r.is_empty() {
            return Err(record_err(0, "empty relation name in config"));
        }
        vocab.intern_relation(r);
    }
    let mut members = Vec::new();
    let mut edges = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut position = 0;
    for rec in sessions {
        position += 1;
        if rec.session_id.is_empty() {
            return Err(record_err(position, "empty session id"));
        }
        if rec.items.is_empty() {
            return Err(record_err(
                position,
                format!("session {:?} has an empty member list", rec.session_id),
            ));
        }
        if rec.items.iter().chain(&rec.targets).any(String::is_empty) {
            return Err(record_err(
                position,
                format!("session {:?} contains an empty item name", rec.session_id),
            ));
        }
        if !seen_ids.insert(rec.session_id.clone()) {
            return Err(GraphError::DuplicateSession {
                id: rec.session_id,
                position,
            });
        }
        let start = rec.items.len().saturating_sub(config.max_session_len);
        let kept = &rec.items[start..];
        if let Some(t) = rec.targets.iter().find(|t| kept.contains(t)) {
            return Err(record_err(
                position,
                format!("session {:?}: target {t:?} is also a member", rec.session_id),
            ));
        }
        let session = vocab.intern(VertexKind::Session, &rec.session_id);
        let ids: Vec<_> = kept
            .iter()
            .map(|n| vocab.intern(VertexKind::Item, n))
            .collect();
        for t in &rec.targets {
            let tail = vocab.intern(VertexKind::Item, t);
            edges.push(TripleEdge {
                head: session,
                rel: RelationId::DESIRES,
                tail,
            });
        }
        members.push(ids);
    }
    for t in triples {
        position += 1;
        if t.item.is_empty() || t.attribute.is_empty() || t.relation.is_empty() {
            return Err(record_err(position, "triple with an empty field"));
        }
        if t.relation == DESIRES {
            return Err(record_err(
                position,
                format!("relation {DESIRES:?} is reserved for session targets"),
            ));
        }
        let rel = match vocab.relation(&t.relation) {
            Some(r) => r,
            None if config.allow_new_relations => vocab.intern_relation(&t.relation),
            None => {
                return Err(record_err(
                    position,
                    format!("unknown relation {:?}", t.relation),
                ))
            }
        };
        let head = vocab.intern(VertexKind::Item, &t.item);
        let tail = vocab.intern(VertexKind::Attribute, &t.attribute);
        edges.push(TripleEdge { head, rel, tail });
    }
    Ok(Graph::from_parts(Arc::new(vocab), members, edges))
}

/// Parses a line-delimited JSON session log. Blank lines are skipped.
pub fn read_session_log(reader: impl BufRead) -> Result<Vec<SessionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GraphError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| GraphError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Parses `item<TAB>relation<TAB>attribute` lines. Blank lines are skipped.
pub fn read_triples(reader: impl BufRead) -> Result<Vec<AttributeTriple>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GraphError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GraphError::Parse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        out.push(AttributeTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Writes every session with its current targets, in session id order.
pub fn write_session_log(graph: &Graph, mut w: impl Write) -> Result<()> {
    let v = graph.vocab();
    for s in graph.sessions() {
        let rec = SessionRecord {
            session_id: v.name(s.session).to_string(),
            items: s.members.iter().map(|m| v.name(*m).to_string()).collect(),
            targets: s.targets.iter().map(|t| v.name(*t).to_string()).collect(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| GraphError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| GraphError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Writes the non-`desires` edges in ingestion order.
pub fn write_triples(graph: &Graph, mut w: impl Write) -> Result<()> {
    let v = graph.vocab();
    for e in graph.edges().iter().filter(|e| !e.rel.is_desires()) {
        writeln!(
            w,
            "{}\t{}\t{}",
            v.name(e.head),
            v.relation_name(e.rel),
            v.name(e.tail)
        )
        .map_err(|e| GraphError::Io(e.to_string()))?;
    }
    Ok(())
}
