use std::collections::{BTreeMap, HashMap};

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, RelationId, Result, TripleEdge, VertexKind, VocabSnapshot};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeAssignment {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub vocabulary: VocabSnapshot,
    pub assignments: Vec<EdgeAssignment>,
}

/// Three cumulative views of one graph: `train ⊆ valid ⊆ test`, all with
/// the same vertices and session member lists.
#[derive(Debug, Clone)]
pub struct SplitGraph {
    pub train: Graph,
    pub valid: Graph,
    pub test: Graph,
    pub manifest: SplitManifest,
}

impl SplitGraph {
    pub fn graph(&self, split: Split) -> &Graph {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn assemble(
        graph: &Graph,
        assignment: &[Split],
        seed: u64,
        fractions: [f64; 3],
    ) -> SplitGraph {
        let members: Vec<_> = graph.sessions().iter().map(|s| s.members.clone()).collect();
        let vocab = graph.vocab_arc().clone();
        let upto = |limit: Split| {
            Graph::from_parts(
                vocab.clone(),
                members.clone(),
                graph
                    .edges()
                    .iter()
                    .zip(assignment)
                    .filter(|(_, s)| **s <= limit)
                    .map(|(e, _)| *e),
            )
        };
        let v = graph.vocab();
        let manifest = SplitManifest {
            seed,
            fractions,
            vocabulary: v.snapshot(),
            assignments: graph
                .edges()
                .iter()
                .zip(assignment)
                .map(|(e, s)| EdgeAssignment {
                    head: v.name(e.head).to_string(),
                    relation: v.relation_name(e.rel).to_string(),
                    tail: v.name(e.tail).to_string(),
                    split: *s,
                })
                .collect(),
        };
        SplitGraph {
            train: upto(Split::Train),
            valid: upto(Split::Valid),
            test: upto(Split::Test),
            manifest,
        }
    }

    /// Rebuilds the split views of `graph` from a stored manifest.
    pub fn from_manifest(graph: &Graph, manifest: &SplitManifest) -> Result<SplitGraph> {
        if manifest.vocabulary != graph.vocab().snapshot() {
            return Err(GraphError::Split(
                "manifest vocabulary does not match the graph".into(),
            ));
        }
        let v = graph.vocab();
        let mut lookup: HashMap<TripleEdge, Split> = HashMap::new();
        for a in &manifest.assignments {
            let rel = v
                .relation(&a.relation)
                .ok_or_else(|| GraphError::Split(format!("unknown relation {:?}", a.relation)))?;
            let find = |kind: VertexKind, name: &str| {
                v.lookup(kind, name)
                    .ok_or_else(|| GraphError::Split(format!("unknown {kind} {name:?}")))
            };
            let e = TripleEdge {
                head: find(rel.head_kind(), &a.head)?,
                rel,
                tail: find(rel.tail_kind(), &a.tail)?,
            };
            lookup.insert(e, a.split);
        }
        let assignment = graph
            .edges()
            .iter()
            .map(|e| {
                lookup.get(e).copied().ok_or_else(|| {
                    GraphError::Split(format!(
                        "edge {} {} {} missing from manifest",
                        v.name(e.head),
                        v.relation_name(e.rel),
                        v.name(e.tail)
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if assignment.len() != manifest.assignments.len() {
            return Err(GraphError::Split(
                "manifest lists edges that are not in the graph".into(),
            ));
        }
        Ok(Self::assemble(
            graph,
            &assignment,
            manifest.seed,
            manifest.fractions,
        ))
    }
}

/// Partitions the relational edges of every relation by a seeded shuffle.
///
/// Per relation with `n ≥ 3` edges: `round(n·valid)` go to validation,
/// `round(n·test)` to test and the rest to train. Relations with fewer than
/// three edges go entirely to train. Session member lists are never split.
/// Returns the split and any warnings.
pub fn split_edges(
    graph: &Graph,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(SplitGraph, Vec<String>)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(GraphError::Split(format!(
            "fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    if graph.edges().is_empty() {
        return Err(GraphError::Split("graph has no edges to split".into()));
    }
    let mut per_rel: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (i, e) in graph.edges().iter().enumerate() {
        per_rel.entry(e.rel).or_default().push(i);
    }
    let mut assignment = vec![Split::Train; graph.edges().len()];
    let mut warnings = Vec::new();
    for (rel, mut idx) in per_rel {
        let n = idx.len();
        if n < 3 {
            let msg = format!(
                "relation {:?} has {n} edge(s); all assigned to train",
                graph.vocab().relation_name(rel)
            );
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mut rng = derive_rng(seed, &[u64::from(rel.0)]);
        idx.shuffle(&mut rng);
        let n_valid = (n as f64 * fractions[1]).round() as usize;
        let n_test = ((n as f64 * fractions[2]).round() as usize).min(n - n_valid);
        let n_train = n - n_valid - n_test;
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
    }
    Ok((
        SplitGraph::assemble(graph, &assignment, seed, fractions),
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ingest, AttributeTriple, IngestConfig, SessionRecord};

    fn brand_graph(n: usize) -> Graph {
        let triples = (0..n)
            .map(|i| AttributeTriple::new(&format!("i{i}"), "brand", &format!("b{}", i % 3)))
            .collect::<Vec<_>>();
        ingest(
            vec![SessionRecord::new("s", &["i0"], &["i1"])],
            triples,
            &IngestConfig::default(),
        )
        .unwrap()
    }

    fn counts(sg: &SplitGraph, relation: &str) -> [usize; 3] {
        let mut c = [0; 3];
        for a in sg.manifest.assignments.iter().filter(|a| a.relation == relation) {
            c[a.split as usize] += 1;
        }
        c
    }

    #[test]
    fn ten_edges_split_eight_one_one() {
        let (sg, warnings) = split_edges(&brand_graph(10), [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(counts(&sg, "brand"), [8, 1, 1]);
        // the single desires edge is too small to split
        assert_eq!(counts(&sg, "desires"), [1, 0, 0]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn same_seed_same_manifest() {
        let g = brand_graph(40);
        let a = split_edges(&g, [0.8, 0.1, 0.1], 3).unwrap().0.manifest;
        let b = split_edges(&g, [0.8, 0.1, 0.1], 3).unwrap().0.manifest;
        assert_eq!(a, b);
        let c = split_edges(&g, [0.8, 0.1, 0.1], 4).unwrap().0.manifest;
        assert_ne!(a, c);
    }

    #[test]
    fn cumulative_views_nest() {
        let g = brand_graph(50);
        let (sg, _) = split_edges(&g, [0.8, 0.1, 0.1], 1).unwrap();
        for e in sg.train.edges() {
            assert!(sg.valid.has_edge(e));
        }
        for e in sg.valid.edges() {
            assert!(sg.test.has_edge(e));
        }
        assert_eq!(sg.test.edges().len(), g.edges().len());
        assert_eq!(sg.train.stats().vertices, sg.test.stats().vertices);
    }

    #[test]
    fn manifest_rebuilds_identical_split() {
        let g = brand_graph(30);
        let (sg, _) = split_edges(&g, [0.8, 0.1, 0.1], 9).unwrap();
        let text = serde_json::to_string(&sg.manifest).unwrap();
        let manifest: SplitManifest = serde_json::from_str(&text).unwrap();
        let again = SplitGraph::from_manifest(&g, &manifest).unwrap();
        assert_eq!(again.train.edges(), sg.train.edges());
        assert_eq!(again.valid.edges(), sg.valid.edges());
    }

    #[test]
    fn bad_fractions_and_empty_graph() {
        let g = brand_graph(5);
        assert!(split_edges(&g, [0.5, 0.1, 0.1], 0).is_err());
        let empty = ingest(vec![], vec![], &IngestConfig::default()).unwrap();
        assert!(split_edges(&empty, [0.8, 0.1, 0.1], 0).is_err());
    }
}
