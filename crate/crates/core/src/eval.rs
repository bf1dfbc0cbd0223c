//! Filtered ranking evaluation.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::VertexKind;
use crate::model::{AblationFlags, ModelError, ModelParams, VocabSizes};
use crate::oracle::SampledQuery;
use crate::query::QueryType;
use crate::rng::{derive_rng, derive_seed};
use crate::tokenizer::{orthonormal_rows, tokenize};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scorer returned {got} scores for {expected} candidates")]
    ScoreCount { got: usize, expected: usize },
    #[error("no query has a hard answer")]
    NothingToRank,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Produces one score per candidate of the query's answer kind, in index order.
pub trait Scorer {
    fn scores(&mut self, query: &SampledQuery, candidates: usize) -> Result<Vec<f64>>;
}

/// Scores with a trained model. Each query gets one identifier basis
/// drawn from `seed` and its position in the evaluation set.
pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
    pub flags: AblationFlags,
    pub seed: u64,
    next: u64,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, flags: AblationFlags, seed: u64) -> Self {
        Self {
            params,
            flags,
            seed,
            next: 0,
        }
    }
}

impl Scorer for ModelScorer<'_> {
    fn scores(&mut self, query: &SampledQuery, _candidates: usize) -> Result<Vec<f64>> {
        let seq = tokenize(&query.query, &self.params.table_sizes(), self.flags.into()).map_err(ModelError::from)?;
        let basis = orthonormal_rows(seq.n, self.params.config.d2, derive_seed(self.seed, &[self.next]))
            .map_err(ModelError::from)?;
        self.next += 1;
        let e = self.params.encode(&seq, &basis)?;
        Ok(self.params.score_all(&e, query.query.answer_kind())?)
    }
}

/// Independent uniform scores.
pub struct RandomScorer {
    rng: rand_chacha::ChaCha8Rng,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: derive_rng(seed, &[0x5c0e]),
        }
    }
}

impl Scorer for RandomScorer {
    fn scores(&mut self, _query: &SampledQuery, candidates: usize) -> Result<Vec<f64>> {
        Ok((0..candidates).map(|_| self.rng.random::<f64>()).collect())
    }
}

/// Wraps a closure; handy for fixed score tables in tests.
pub struct FnScorer<F>(pub F);

impl<F: FnMut(&SampledQuery, usize) -> Vec<f64>> Scorer for FnScorer<F> {
    fn scores(&mut self, query: &SampledQuery, candidates: usize) -> Result<Vec<f64>> {
        Ok((self.0)(query, candidates))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Rank against every candidate instead of filtering known answers.
    pub unfiltered: bool,
    /// Opaque identifier of the run being evaluated.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    #[serde(rename = "type")]
    pub qtype: QueryType,
    pub mrr: f64,
    pub queries: usize,
    pub hard_answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<TypeRow>,
    pub epfo_average: Option<f64>,
    pub negation_average: Option<f64>,
    pub ood_average: Option<f64>,
    pub filtered: bool,
    pub fingerprint: String,
}

fn mean_over(rows: &[TypeRow], group: &[QueryType]) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| group.contains(&r.qtype)).map(|r| r.mrr).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl EvalReport {
    pub fn from_rows(mut rows: Vec<TypeRow>, filtered: bool, fingerprint: String) -> Self {
        rows.sort_by_key(|r| QueryType::ALL.iter().position(|t| *t == r.qtype));
        Self {
            epfo_average: mean_over(&rows, &QueryType::EPFO),
            negation_average: mean_over(&rows, &QueryType::NEGATION),
            ood_average: mean_over(&rows, &QueryType::OOD),
            rows,
            filtered,
            fingerprint,
        }
    }

    pub fn mrr(&self, t: QueryType) -> Option<f64> {
        self.rows.iter().find(|r| r.qtype == t).map(|r| r.mrr)
    }

    /// One row per query type, then the group averages.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("type\tmrr\tqueries\thard_answers\n");
        for r in &self.rows {
            s += &format!("{}\t{:.6}\t{}\t{}\n", r.qtype, r.mrr, r.queries, r.hard_answers);
        }
        for (name, v) in [
            ("avg_epfo", self.epfo_average),
            ("avg_negation", self.negation_average),
            ("avg_ood", self.ood_average),
        ] {
            if let Some(v) = v {
                s += &format!("{name}\t{v:.6}\t\t\n");
            }
        }
        s
    }
}

/// Rank of `target` among `scores`, ignoring `skip`; ties count against
/// the target.
pub fn pessimistic_rank(scores: &[f64], target: usize, skip: impl Fn(usize) -> bool) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(c, &x)| c != target && !skip(c) && x >= s)
        .count()
}

/// Mean reciprocal rank over the hard answers of one query.
pub fn query_mrr(scores: &[f64], q: &SampledQuery, filtered: bool) -> Option<f64> {
    let hard = q.answers.hard();
    if hard.is_empty() {
        return None;
    }
    let known = q.answers.known();
    let kind = q.query.answer_kind();
    let total: f64 = hard
        .iter()
        .map(|v| {
            let rank = pessimistic_rank(scores, v.index as usize, |c| {
                filtered
                    && known.contains(&crate::graph::VertexId {
                        kind,
                        index: c as u32,
                    })
            });
            1.0 / rank as f64
        })
        .sum();
    Some(total / hard.len() as f64)
}

fn table_len(sizes: &VocabSizes, kind: VertexKind) -> usize {
    match kind {
        VertexKind::Item => sizes.items,
        VertexKind::Attribute => sizes.attributes,
        VertexKind::Session => 0,
    }
}

/// Per-type MRR: the mean over queries of each query's mean reciprocal
/// rank. Queries without hard answers are skipped.
pub fn evaluate(
    scorer: &mut dyn Scorer,
    queries: &[SampledQuery],
    sizes: &VocabSizes,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut acc: BTreeMap<QueryType, (f64, usize, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for q in queries {
        if q.answers.hard().is_empty() {
            skipped += 1;
            continue;
        }
        let n = table_len(sizes, q.query.answer_kind());
        let scores = scorer.scores(q, n)?;
        if scores.len() != n {
            return Err(EvalError::ScoreCount {
                got: scores.len(),
                expected: n,
            });
        }
        let m = query_mrr(&scores, q, !opts.unfiltered).expect("hard set is non-empty");
        let e = acc.entry(q.qtype).or_default();
        e.0 += m;
        e.1 += 1;
        e.2 += q.answers.hard().len();
    }
    if skipped > 0 {
        warn!("{skipped} queries have no hard answers and were skipped");
    }
    if acc.is_empty() {
        return Err(EvalError::NothingToRank);
    }
    let rows = acc
        .into_iter()
        .map(|(qtype, (sum, queries, hard_answers))| TypeRow {
            qtype,
            mrr: sum / queries as f64,
            queries,
            hard_answers,
        })
        .collect();
    Ok(EvalReport::from_rows(rows, !opts.unfiltered, opts.fingerprint.clone()))
}

pub fn evaluate_model(
    params: &ModelParams,
    flags: AblationFlags,
    queries: &[SampledQuery],
    seed: u64,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut scorer = ModelScorer::new(params, flags, seed);
    evaluate(&mut scorer, queries, &params.sizes, opts)
}

pub fn random_baseline(queries: &[SampledQuery], sizes: &VocabSizes, seed: u64, opts: &EvalOptions) -> Result<EvalReport> {
    evaluate(&mut RandomScorer::new(seed), queries, sizes, opts)
}

/// Expected reciprocal rank of one answer among `n` under uniform scores.
pub fn harmonic_mean_rank(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

/// Table with one row per report and one column per query type present
/// in any of them, followed by the group averages.
pub fn merge_reports(named: &[(String, EvalReport)]) -> String {
    let types: Vec<QueryType> = QueryType::ALL
        .iter()
        .copied()
        .filter(|t| named.iter().any(|(_, r)| r.mrr(*t).is_some()))
        .collect();
    let mut s = String::from("run");
    for t in &types {
        s += &format!("\t{t}");
    }
    s += "\tavg_epfo\tavg_negation\tavg_ood\n";
    let cell = |v: Option<f64>| v.map_or(String::from("-"), |v| format!("{v:.4}"));
    for (name, r) in named {
        s += name;
        for t in &types {
            s += &format!("\t{}", cell(r.mrr(*t)));
        }
        s += &format!(
            "\t{}\t{}\t{}\n",
            cell(r.epfo_average),
            cell(r.negation_average),
            cell(r.ood_average)
        );
    }
    s
}
