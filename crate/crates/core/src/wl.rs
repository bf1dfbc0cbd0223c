//! Proxy graphs, color refinement and small-graph isomorphism.
//!
//! The proxy graph of a query has one vertex per token node (items,
//! attribute anchors, sessions, operators) and one directed labeled edge
//! per edge token: item → session labeled by position, child → parent
//! labeled by relation or operator. The augmented proxy replaces every
//! labeled edge `u -r-> v` with a fresh vertex labeled `r` and unlabeled
//! edges `u -> e -> v`.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::query::QueryGraph;
use crate::rng::derive_rng;
use crate::tokenizer::{tokenize, Provenance, TableSizes, TokenizerError, TokenizerFlags};

/// Directed graph with vertex labels and edge labels. Edges form a set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledGraph {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize, String)>,
}

impl LabeledGraph {
    pub fn new(labels: Vec<String>, edges: Vec<(usize, usize, String)>) -> Self {
        let mut g = Self { labels, edges };
        g.normalize();
        g
    }

    /// Sorts and deduplicates the edge list.
    pub fn normalize(&mut self) {
        self.edges.sort();
        self.edges.dedup();
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Undirected graph with all vertices labeled alike.
    pub fn undirected(n: usize, pairs: &[(usize, usize)]) -> Self {
        let edges = pairs
            .iter()
            .flat_map(|&(a, b)| [(a, b, String::new()), (b, a, String::new())])
            .collect();
        Self::new(vec![String::new(); n], edges)
    }

    /// Vertex `i` of `self` becomes vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut labels = vec![String::new(); self.labels.len()];
        for (i, l) in self.labels.iter().enumerate() {
            labels[perm[i]] = l.clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|(a, b, l)| (perm[*a], perm[*b], l.clone()))
            .collect();
        Self::new(labels, edges)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|(a, b, _)| *a == v || *b == v).count()
    }
}

impl fmt::Display for LabeledGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vs: Vec<String> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i}:{l}"))
            .collect();
        write!(f, "vertices [{}] edges [", vs.join(" "))?;
        for (k, (a, b, l)) in self.edges.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}-{l}->{b}")?;
        }
        f.write_str("]")
    }
}

const UNBOUNDED: TableSizes = TableSizes {
    items: usize::MAX,
    attributes: usize::MAX,
    relations: usize::MAX,
    positions: usize::MAX,
};

/// Proxy graph of a valid query.
pub fn build_proxy(q: &QueryGraph) -> Result<LabeledGraph, TokenizerError> {
    let seq = tokenize(q, &UNBOUNDED, TokenizerFlags::default())?;
    let mut labels = Vec::with_capacity(seq.n);
    let mut edges = Vec::with_capacity(seq.m + seq.w);
    for t in &seq.tokens {
        match t.provenance {
            Provenance::Node => labels.push(t.feature.to_string()),
            Provenance::SessionEdge { .. } | Provenance::LogicEdge => {
                edges.push((t.id_a, t.id_b, t.feature.to_string()))
            }
        }
    }
    Ok(LabeledGraph::new(labels, edges))
}

/// Label carried by the vertex that replaces an edge labeled `label`.
pub fn edge_vertex_label(label: &str) -> String {
    format!("edge:{label}")
}

/// Non-relational augmented graph; original vertices keep their indices.
pub fn augment(g: &LabeledGraph) -> LabeledGraph {
    let mut labels = g.labels.clone();
    let mut edges = Vec::with_capacity(2 * g.edges.len());
    for (a, b, l) in &g.edges {
        let e = labels.len();
        labels.push(edge_vertex_label(l));
        edges.push((*a, e, String::new()));
        edges.push((e, *b, String::new()));
    }
    LabeledGraph::new(labels, edges)
}

/// Stable colors of a refinement run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorHistogram {
    /// Color → number of vertices.
    pub counts: BTreeMap<u64, usize>,
    /// Round after which the partition stopped splitting.
    pub stable_at: usize,
    pub rounds: usize,
    /// Set when the audit hash induced a different partition.
    pub collision: bool,
}

fn hash_with<T: Hash>(salt: u64, x: &T) -> u64 {
    let mut h = DefaultHasher::new();
    salt.hash(&mut h);
    x.hash(&mut h);
    h.finish()
}

fn refine(g: &LabeledGraph, salt: u64, rounds: usize) -> (Vec<Vec<u64>>, usize) {
    let n = g.vertex_count();
    let mut out_adj: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n];
    let mut in_adj: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n];
    for (a, b, l) in &g.edges {
        out_adj[*a].push((*b, l));
        in_adj[*b].push((*a, l));
    }
    let mut colors: Vec<u64> = g.labels.iter().map(|l| hash_with(salt, l)).collect();
    let mut history = vec![colors.clone()];
    let classes = |c: &[u64]| c.iter().collect::<BTreeSet<_>>().len();
    let mut stable_at = 0;
    let mut prev_classes = classes(&colors);
    for round in 1..=rounds {
        let next: Vec<u64> = (0..n)
            .map(|v| {
                let mut outs: Vec<(&str, u64)> = out_adj[v].iter().map(|(u, l)| (*l, colors[*u])).collect();
                let mut ins: Vec<(&str, u64)> = in_adj[v].iter().map(|(u, l)| (*l, colors[*u])).collect();
                outs.sort_unstable();
                ins.sort_unstable();
                hash_with(salt, &(colors[v], outs, ins))
            })
            .collect();
        colors = next;
        history.push(colors.clone());
        let c = classes(&colors);
        if c > prev_classes {
            stable_at = round;
        }
        prev_classes = c;
    }
    (history, stable_at)
}

fn same_partition(a: &[u64], b: &[u64]) -> bool {
    let mut fwd: HashMap<u64, u64> = HashMap::new();
    let mut bwd: HashMap<u64, u64> = HashMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *fwd.entry(*x).or_insert(*y) == *y && *bwd.entry(*y).or_insert(*x) == *x)
}

const PRIMARY: u64 = 0x1f1;
const AUDIT: u64 = 0xa0d17;

/// Color refinement for exactly `rounds` rounds. Edge labels take part in
/// the messages, so on unlabeled graphs this is plain 1-WL. Histograms of
/// two graphs are comparable when both ran the same number of rounds.
pub fn wl1(g: &LabeledGraph, rounds: usize) -> ColorHistogram {
    let (main, stable_at) = refine(g, PRIMARY, rounds);
    let (audit, _) = refine(g, AUDIT, rounds);
    let collision = main.iter().zip(&audit).any(|(a, b)| !same_partition(a, b));
    let mut counts = BTreeMap::new();
    for c in main.last().expect("round 0 is always present") {
        *counts.entry(*c).or_insert(0) += 1;
    }
    ColorHistogram {
        counts,
        stable_at,
        rounds,
        collision,
    }
}

/// Whether refinement tells the two graphs apart. Runs enough rounds for
/// the partition of their disjoint union to stabilize.
pub fn wl_distinguishes(a: &LabeledGraph, b: &LabeledGraph) -> bool {
    let rounds = a.vertex_count() + b.vertex_count();
    wl1(a, rounds).counts != wl1(b, rounds).counts
}

/// Largest graph [`canonical_form`] accepts.
pub const CANONICAL_MAX: usize = 8;

/// Vertex labels and labeled edges after relabeling.
pub type CanonicalForm = (Vec<String>, Vec<(usize, usize, String)>);

/// Lexicographically smallest relabeled encoding over all vertex
/// permutations; equal forms mean isomorphic graphs.
pub fn canonical_form(g: &LabeledGraph) -> Option<CanonicalForm> {
    let n = g.vertex_count();
    if n > CANONICAL_MAX {
        return None;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<CanonicalForm> = None;
    loop {
        let p = g.permuted(&perm);
        let cand = (p.labels, p.edges);
        if best.as_ref().is_none_or(|b| cand < *b) {
            best = Some(cand);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Label-preserving isomorphism by backtracking, pruned by label and
/// in/out degree and checked edge by edge as vertices are mapped.
pub fn isomorphic(a: &LabeledGraph, b: &LabeledGraph) -> bool {
    let n = a.vertex_count();
    if n != b.vertex_count() || a.edge_count() != b.edge_count() {
        return false;
    }
    let sig = |g: &LabeledGraph, v: usize| {
        let outs = g.edges.iter().filter(|e| e.0 == v).count();
        let ins = g.edges.iter().filter(|e| e.1 == v).count();
        (g.labels[v].clone(), outs, ins)
    };
    let sa: Vec<_> = (0..n).map(|v| sig(a, v)).collect();
    let sb: Vec<_> = (0..n).map(|v| sig(b, v)).collect();
    let mut ms_a = sa.clone();
    let mut ms_b = sb.clone();
    ms_a.sort();
    ms_b.sort();
    if ms_a != ms_b {
        return false;
    }
    let eb: BTreeSet<(usize, usize, &str)> = b.edges.iter().map(|(x, y, l)| (*x, *y, l.as_str())).collect();
    let mut adj_a: Vec<Vec<(usize, usize, &str)>> = vec![Vec::new(); n];
    for (x, y, l) in &a.edges {
        adj_a[*x].push((*x, *y, l));
        if x != y {
            adj_a[*y].push((*x, *y, l));
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    fn go(
        v: usize,
        n: usize,
        sa: &[(String, usize, usize)],
        sb: &[(String, usize, usize)],
        adj_a: &[Vec<(usize, usize, &str)>],
        eb: &BTreeSet<(usize, usize, &str)>,
        map: &mut [usize],
        used: &mut [bool],
    ) -> bool {
        if v == n {
            return true;
        }
        for w in 0..n {
            if used[w] || sa[v] != sb[w] {
                continue;
            }
            map[v] = w;
            // every edge of `a` between v and already-mapped vertices must exist in `b`
            let ok = adj_a[v].iter().all(|&(x, y, l)| {
                let (mx, my) = (map[x], map[y]);
                mx == usize::MAX || my == usize::MAX || eb.contains(&(mx, my, l))
            });
            if ok {
                used[w] = true;
                if go(v + 1, n, sa, sb, adj_a, eb, map, used) {
                    return true;
                }
                used[w] = false;
            }
            map[v] = usize::MAX;
        }
        false
    }
    // edge counts match and every edge of `a` maps into `b`, so the map is onto
    go(0, n, &sa, &sb, &adj_a, &eb, &mut map, &mut used)
}

/// Random directed multi-relational graph on `2..=max_vertices` vertices.
pub fn random_graph(rng: &mut impl Rng, max_vertices: usize, vertex_labels: usize, relations: usize) -> LabeledGraph {
    let n = rng.random_range(2..=max_vertices.max(2));
    let labels = (0..n)
        .map(|_| format!("v{}", rng.random_range(0..vertex_labels.max(1))))
        .collect();
    let mut edges = Vec::new();
    let p = rng.random_range(0.15..0.5);
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(p) {
                edges.push((a, b, format!("r{}", rng.random_range(0..relations.max(1)))));
            }
        }
    }
    LabeledGraph::new(labels, edges)
}

/// One small structural change: relabel, drop, add or reverse an edge, or
/// relabel a vertex.
pub fn perturb(g: &LabeledGraph, rng: &mut impl Rng, vertex_labels: usize, relations: usize) -> LabeledGraph {
    let mut h = g.clone();
    let n = h.vertex_count();
    let kind = if h.edges.is_empty() { 2 } else { rng.random_range(0..5) };
    match kind {
        0 => {
            let i = rng.random_range(0..h.edges.len());
            h.edges[i].2 = format!("r{}", rng.random_range(0..relations.max(1)));
        }
        1 => {
            let i = rng.random_range(0..h.edges.len());
            h.edges.remove(i);
        }
        2 => {
            let a = rng.random_range(0..n);
            let b = (a + rng.random_range(1..n)) % n;
            h.edges
                .push((a, b, format!("r{}", rng.random_range(0..relations.max(1)))));
        }
        3 => {
            let i = rng.random_range(0..h.edges.len());
            let (a, b, _) = h.edges[i];
            h.edges[i].0 = b;
            h.edges[i].1 = a;
        }
        _ => {
            let v = rng.random_range(0..n);
            h.labels[v] = format!("v{}", rng.random_range(0..vertex_labels.max(1)));
        }
    }
    h.normalize();
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub trial: usize,
    pub g1: LabeledGraph,
    pub g2: LabeledGraph,
    pub proxies_isomorphic: bool,
    pub augmented_isomorphic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub trials: usize,
    pub size_bound: usize,
    pub seed: u64,
    pub isomorphic_pairs: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl Lemma3Report {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

impl fmt::Display for Lemma3Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "isomorphism equivalence: {} trials, at most {} vertices, seed {}",
            self.trials, self.size_bound, self.seed
        )?;
        writeln!(
            f,
            "  {} isomorphic pairs, {} non-isomorphic",
            self.isomorphic_pairs,
            self.trials - self.isomorphic_pairs
        )?;
        writeln!(f, "  {} counterexamples", self.counterexamples.len())?;
        for c in &self.counterexamples {
            writeln!(
                f,
                "  trial {}: graphs isomorphic {}, augmented isomorphic {}",
                c.trial, c.proxies_isomorphic, c.augmented_isomorphic
            )?;
            writeln!(f, "    g1 {}", c.g1)?;
            writeln!(f, "    g2 {}", c.g2)?;
        }
        Ok(())
    }
}

/// Checks `G1 ≅ G2 ⇔ G1' ≅ G2'` on random pairs. Half of the pairs are
/// relabeled copies, the rest relabeled copies with one perturbation.
/// Graphs are compared by canonical form, augmented graphs by
/// backtracking since they outgrow the canonical-form bound.
pub fn lemma3_check(trials: usize, size_bound: usize, seed: u64) -> Lemma3Report {
    let size_bound = size_bound.clamp(2, CANONICAL_MAX);
    let (labels, relations) = (2, 3);
    let mut isomorphic_pairs = 0;
    let mut counterexamples = Vec::new();
    for trial in 0..trials {
        let mut rng = derive_rng(seed, &[trial as u64]);
        let g1 = random_graph(&mut rng, size_bound, labels, relations);
        let mut perm: Vec<usize> = (0..g1.vertex_count()).collect();
        perm.shuffle(&mut rng);
        let base = if rng.random_bool(0.5) {
            g1.clone()
        } else {
            perturb(&g1, &mut rng, labels, relations)
        };
        let g2 = base.permuted(&perm);
        let iso = canonical_form(&g1) == canonical_form(&g2);
        let aug = isomorphic(&augment(&g1), &augment(&g2));
        isomorphic_pairs += usize::from(iso);
        if iso != aug {
            counterexamples.push(Counterexample {
                trial,
                g1,
                g2,
                proxies_isomorphic: iso,
                augmented_isomorphic: aug,
            });
        }
    }
    Lemma3Report {
        trials,
        size_bound,
        seed,
        isomorphic_pairs,
        counterexamples,
    }
}
