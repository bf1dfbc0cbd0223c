#![allow(dead_code)]

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use lsgt::eval::{evaluate, random_baseline, EvalOptions, EvalReport, FnScorer};
use lsgt::graph::{Split, SplitGraph, VertexId};
use lsgt::model::{random_order, Example, ModelConfig, ModelParams, VocabSizes};
use lsgt::oracle::{sample, AnswerSets, SampledQuery};
use lsgt::query::{template, Anchor, QueryGraph, QueryNode, QueryType};
use lsgt::rng::derive_rng;
use lsgt::tensor::{Tape, Tensor, Var};
use lsgt::tokenizer::{orthonormal_rows, tokenize, TokenizerFlags};

/// Norm-based relative error; zero when both vectors vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic) + norm(numeric);
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect::<Vec<f64>>();
    Tensor::new(rows, cols, data).unwrap()
}

/// Wraps an op's output in `a · out · b` for fixed random `a`, `b`, giving
/// every output entry its own weight.
fn weighted_sum(tape: &mut Tape<'_>, out: Var, a: &Tensor, b: &Tensor) -> Var {
    let a = tape.constant(a.clone());
    let b = tape.constant(b.clone());
    let left = tape.matmul(a, out).unwrap();
    tape.matmul(left, b).unwrap()
}

/// Central-difference check of one primitive on random inputs of the given
/// shapes. Returns the relative error over all input entries.
pub fn check_op(
    seed: u64,
    shapes: &[(usize, usize)],
    op: &dyn Fn(&mut Tape<'_>, &[Var]) -> Var,
) -> f64 {
    let mut rng = derive_rng(seed, &[0x9c]);
    let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| gaussian(&mut rng, r, c, 1.0)).collect();
    let (rows, cols) = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &vars);
        tape.value(out).shape()
    };
    let a = gaussian(&mut rng, 1, rows, 1.0);
    let b = gaussian(&mut rng, cols, 1, 1.0);
    let loss_of = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &vars);
        let l = weighted_sum(&mut tape, out, &a, &b);
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = op(&mut tape, &vars);
    let l = weighted_sum(&mut tape, out, &a, &b);
    let grads = tape.backward(l).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let h = 1e-5;
    for (k, v) in vars.iter().enumerate() {
        let g = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            numeric.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * h));
            analytic.push(g.data()[i]);
        }
    }
    rel_err(&analytic, &numeric)
}

pub fn toy() -> &'static SplitGraph {
    static TOY: OnceLock<SplitGraph> = OnceLock::new();
    TOY.get_or_init(|| lsgt::toy::split(7))
}

/// Up to `n` queries of `tag` on the toy split.
pub fn toy_queries(tag: QueryType, n: usize, seed: u64, split: Split) -> Vec<SampledQuery> {
    sample(toy(), tag, n, seed, split).0
}

pub fn toy_sizes() -> VocabSizes {
    VocabSizes::of(toy().train.vocab())
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d1: 6,
        d2: 20,
        d3: 3,
        d_model: 8,
        layers: 2,
        heads: 2,
        ffn: 10,
        ..ModelConfig::default()
    }
}

pub fn examples(params: &ModelParams, queries: &[&SampledQuery], seed: u64) -> Vec<Example> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let tokens = tokenize(&q.query, &params.table_sizes(), TokenizerFlags::default()).unwrap();
            let basis = orthonormal_rows(tokens.n, params.config.d2, seed + i as u64).unwrap();
            Example {
                tokens,
                basis,
                answer: *q.answers.train.iter().next().unwrap(),
            }
        })
        .collect()
}

/// Finite-difference check of the full loss on a random small batch:
/// 24 coordinates with non-zero analytic gradient plus 8 arbitrary ones.
pub fn check_end_to_end(seed: u64) -> f64 {
    let mut rng = derive_rng(seed, &[0xe2e]);
    let pool: Vec<SampledQuery> = [QueryType::P1, QueryType::P2, QueryType::I2S, QueryType::In2S, QueryType::Up]
        .iter()
        .flat_map(|t| toy_queries(*t, 6, seed, Split::Train))
        .collect();
    let batch_q: Vec<&SampledQuery> = (0..3).map(|_| &pool[rng.random_range(0..pool.len())]).collect();
    let params = ModelParams::init(tiny_config(), toy_sizes(), seed).unwrap();
    let batch = examples(&params, &batch_q, seed);
    let (_, grads) = params.loss_and_grad(&batch).unwrap();
    let mut nonzero = Vec::new();
    let mut all = Vec::new();
    for (k, g) in grads.iter().enumerate() {
        for (i, x) in g.data().iter().enumerate() {
            all.push((k, i));
            if x.abs() > 1e-9 {
                nonzero.push((k, i));
            }
        }
    }
    let mut coords: Vec<(usize, usize)> = (0..24).map(|_| nonzero[rng.random_range(0..nonzero.len())]).collect();
    coords.extend((0..8).map(|_| all[rng.random_range(0..all.len())]));
    let h = 1e-5;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, i) in coords {
        let shifted = |delta: f64| {
            let mut p = params.clone();
            p.named_mut()[k].1.data_mut()[i] += delta;
            p.loss(&batch).unwrap()
        };
        numeric.push((shifted(h) - shifted(-h)) / (2.0 * h));
        analytic.push(grads[k].data()[i]);
    }
    rel_err(&analytic, &numeric)
}

/// Primitive checks as (name, worst relative error over `instances`).
pub fn primitive_errors(instances: u64) -> Vec<(&'static str, f64)> {
    type Op = Box<dyn Fn(&mut Tape<'_>, &[Var]) -> Var>;
    let cases: Vec<(&'static str, Vec<(usize, usize)>, Op)> = vec![
        ("matmul", vec![(3, 4), (4, 2)], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("transpose", vec![(3, 4)], Box::new(|t, v| t.transpose(v[0]).unwrap())),
        ("add", vec![(3, 4), (3, 4)], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("add_row", vec![(3, 4), (1, 4)], Box::new(|t, v| t.add_row(v[0], v[1]).unwrap())),
        ("mul_row", vec![(3, 4), (1, 4)], Box::new(|t, v| t.mul_row(v[0], v[1]).unwrap())),
        ("scale", vec![(3, 4)], Box::new(|t, v| t.scale(v[0], -1.7).unwrap())),
        (
            "concat_rows",
            vec![(2, 3), (1, 3), (3, 3)],
            Box::new(|t, v| t.concat_rows(v).unwrap()),
        ),
        (
            "concat_cols",
            vec![(3, 2), (3, 1), (3, 4)],
            Box::new(|t, v| t.concat_cols(v).unwrap()),
        ),
        ("slice_cols", vec![(3, 6)], Box::new(|t, v| t.slice_cols(v[0], 2, 3).unwrap())),
        (
            "gather_rows",
            vec![(4, 3)],
            Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2, 3, 1, 2]).unwrap()),
        ),
        ("softmax_rows", vec![(3, 5)], Box::new(|t, v| t.softmax_rows(v[0]).unwrap())),
        (
            "layernorm_rows",
            vec![(3, 5)],
            Box::new(|t, v| t.layernorm_rows(v[0], 1e-5).unwrap()),
        ),
        ("gelu", vec![(3, 5)], Box::new(|t, v| t.gelu(v[0]).unwrap())),
        ("mean", vec![(3, 5)], Box::new(|t, v| t.mean(v[0]).unwrap())),
        (
            "cross_entropy",
            vec![(4, 5)],
            Box::new(|t, v| t.cross_entropy_with_logits(v[0], &[1, 4, 0, 1]).unwrap()),
        ),
    ];
    cases
        .iter()
        .map(|(name, shapes, op)| {
            let worst = (0..instances)
                .map(|s| check_op(s, shapes, op.as_ref()))
                .fold(0.0, f64::max);
            (*name, worst)
        })
        .collect()
}

/// Applies a seeded reordering to the operands of every ∩ and ∪ node.
pub fn shuffle_operands(q: &QueryGraph, seed: u64) -> QueryGraph {
    let mut rng = derive_rng(seed, &[0x0e]);
    let mut out = q.clone();
    for at in 0..q.len() {
        if let QueryNode::Intersection(cs) | QueryNode::Union(cs) = &q.nodes()[at] {
            let order = random_order(cs.len(), &mut rng);
            out = out.with_children_permuted(at, &order).unwrap();
        }
    }
    out
}

/// Swaps two distinct members of a random session anchor, or `None` when
/// no session has two distinct members.
pub fn swap_session_positions(q: &QueryGraph, rng: &mut impl Rng) -> Option<QueryGraph> {
    let sessions: Vec<usize> = (0..q.len())
        .filter(|&at| matches!(&q.nodes()[at], QueryNode::SessionAnchor(ms) if ms.iter().any(|m| *m != ms[0])))
        .collect();
    let at = *sessions.get(rng.random_range(0..sessions.len().max(1)))?;
    let mut nodes = q.nodes().to_vec();
    let QueryNode::SessionAnchor(ms) = &mut nodes[at] else { unreachable!() };
    loop {
        let (i, j) = (rng.random_range(0..ms.len()), rng.random_range(0..ms.len()));
        if ms[i] != ms[j] {
            ms.swap(i, j);
            break;
        }
    }
    Some(QueryGraph::from_parts(nodes, q.sink(), q.answer_kind()))
}

/// Query embedding with the identifier basis drawn from `seed`.
pub fn embed(params: &ModelParams, q: &QueryGraph, seed: u64) -> Tensor {
    let seq = tokenize(q, &params.table_sizes(), TokenizerFlags::default()).unwrap();
    let basis = orthonormal_rows(seq.n, params.config.d2, seed).unwrap();
    params.encode(&seq, &basis).unwrap()
}

pub fn linf(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b).unwrap()
}

/// Toy queries of every type containing ∩ or ∪, cycled to `n`.
pub fn set_operator_queries(n: usize, seed: u64) -> Vec<QueryGraph> {
    let pool: Vec<QueryGraph> = QueryType::ALL
        .iter()
        .flat_map(|t| toy_queries(*t, 40, seed, Split::Train))
        .map(|s| s.query)
        .filter(|q| q.has_set_operator())
        .collect();
    pool.iter().cycle().take(n).cloned().collect()
}

/// A 1p query over `n` fixture items whose answer sets are given as item indices.
pub fn fixture_query(qtype: QueryType, valid: &[u32], test: &[u32]) -> SampledQuery {
    let set = |v: &[u32]| v.iter().map(|i| VertexId::item(*i)).collect();
    SampledQuery {
        query: template(QueryType::P1, &[Anchor::Session(vec![VertexId::item(0)])], None).unwrap(),
        qtype,
        answers: AnswerSets {
            train: Default::default(),
            valid: set(valid),
            test: set(test),
        },
        split: Split::Test,
        seed: 0,
        attempt: 0,
    }
}

pub const FIXTURE_SIZES: VocabSizes = VocabSizes {
    items: 6,
    attributes: 0,
    relations: 1,
};

/// Five queries over six items with fixed scores. Hand-computed filtered
/// reciprocal ranks: 1; 1/2; (1/2 + 1/4)/2; 1/6; none (no hard answer).
pub fn metric_fixture() -> (Vec<SampledQuery>, Vec<Vec<f64>>) {
    let queries = vec![
        fixture_query(QueryType::P1, &[], &[2]),
        fixture_query(QueryType::P1, &[0], &[0, 3]),
        fixture_query(QueryType::In2S, &[], &[1, 4]),
        fixture_query(QueryType::In2S, &[], &[5]),
        fixture_query(QueryType::In2S, &[1], &[1]),
    ];
    let scores = vec![
        vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.0],
        vec![0.9, 0.8, 0.1, 0.7, 0.2, 0.3],
        vec![0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
        vec![0.5; 6],
        vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    ];
    (queries, scores)
}

/// Scores fixture query `k` with row `k` of `scores`.
pub fn fixture_report(unfiltered: bool) -> EvalReport {
    let (queries, scores) = metric_fixture();
    let mut scorer = FnScorer(|q: &SampledQuery, _n: usize| {
        let k = queries.iter().position(|x| std::ptr::eq(x, q)).unwrap();
        scores[k].clone()
    });
    let opts = EvalOptions {
        unfiltered,
        ..EvalOptions::default()
    };
    evaluate(&mut scorer, &queries, &FIXTURE_SIZES, &opts).unwrap()
}

/// Random-baseline MRR over `trials` single-answer queries with `n` candidates.
pub fn monte_carlo_mrr(n: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = derive_rng(seed, &[n as u64]);
    let queries: Vec<SampledQuery> = (0..trials)
        .map(|_| fixture_query(QueryType::P1, &[], &[rng.random_range(0..n as u32)]))
        .collect();
    let sizes = VocabSizes {
        items: n,
        ..FIXTURE_SIZES
    };
    let report = random_baseline(&queries, &sizes, seed, &EvalOptions::default()).unwrap();
    report.mrr(QueryType::P1).unwrap()
}
