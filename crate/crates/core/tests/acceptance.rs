//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! to stderr (uncaptured) and then asserts.

mod common;

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;

use lsgt::eval::{evaluate_model, random_baseline, EvalOptions, EvalReport};
use lsgt::graph::Split;
use lsgt::model::{random_order, AblationFlags, ModelConfig, ModelParams};
use lsgt::oracle::SampledQuery;
use lsgt::query::QueryType;
use lsgt::rng::derive_rng;
use lsgt::tokenizer::{orthonormal_rows, tokenize, TokenizerFlags};
use lsgt::train::{prepare, train, TrainConfig};
use lsgt::wl::{augment, build_proxy, lemma3_check, wl_distinguishes};

/// Criteria run one at a time so the runtime limits measure one workload.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {n} {name}: {verdict} ({detail})\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn model_config() -> ModelConfig {
    ModelConfig {
        d1: 32,
        d2: 24,
        d3: 8,
        d_model: 32,
        layers: 2,
        heads: 4,
        ffn: 64,
        ..ModelConfig::default()
    }
}

fn random_model(seed: u64) -> ModelParams {
    ModelParams::init(model_config(), common::toy_sizes(), seed).unwrap()
}

#[test]
fn criterion_1_gradient_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let prims = common::primitive_errors(50);
    let worst_prim = prims.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let worst_e2e = (0..50).map(common::check_end_to_end).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst_prim.1 < 1e-6 && worst_e2e < 1e-4 && elapsed < Duration::from_secs(60);
    report(
        1,
        "gradient fidelity",
        pass,
        &format!(
            "{} primitives, worst {} {:.1e}; end-to-end worst {:.1e}; {:.1?}",
            prims.len(),
            worst_prim.0,
            worst_prim.1,
            worst_e2e,
            elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_token_multiset_invariance() {
    let _g = serial();
    let params = random_model(1);
    let sizes = params.table_sizes();
    let queries = common::set_operator_queries(500, 41);
    let mut multiset_equal = 0;
    let mut worst_operand: f64 = 0.0;
    let mut worst_shuffle: f64 = 0.0;
    for (k, q) in queries.iter().enumerate() {
        let p = common::shuffle_operands(q, k as u64);
        let a = tokenize(q, &sizes, TokenizerFlags::default()).unwrap();
        let b = tokenize(&p, &sizes, TokenizerFlags::default()).unwrap();
        if a.multiset() == b.multiset() {
            multiset_equal += 1;
        }
        let ea = common::embed(&params, q, k as u64);
        worst_operand = worst_operand.max(common::linf(&ea, &common::embed(&params, &p, k as u64)));
        let basis = orthonormal_rows(a.n, params.config.d2, k as u64).unwrap();
        let order = random_order(a.len(), &mut derive_rng(k as u64, &[2]));
        let shuffled = params.encode_permuted(&a, &basis, Some(&order)).unwrap();
        worst_shuffle = worst_shuffle.max(common::linf(&ea, &shuffled));
    }
    let pass = multiset_equal == queries.len() && worst_operand < 1e-9 && worst_shuffle < 1e-9;
    report(
        2,
        "token-multiset invariance",
        pass,
        &format!(
            "{multiset_equal}/{} multisets equal; operand order {worst_operand:.1e}; token order {worst_shuffle:.1e}",
            queries.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_session_order_sensitivity() {
    let _g = serial();
    let params = random_model(2);
    let pool: Vec<SampledQuery> = QueryType::ALL
        .iter()
        .flat_map(|t| common::toy_queries(*t, 40, 43, Split::Train))
        .collect();
    let mut rng = derive_rng(3, &[]);
    let (mut tried, mut changed) = (0, 0);
    while tried < 500 {
        let q = &pool[rng.random_range(0..pool.len())].query;
        let Some(swapped) = common::swap_session_positions(q, &mut rng) else {
            continue;
        };
        tried += 1;
        let seed = rng.random::<u64>();
        if common::linf(&common::embed(&params, q, seed), &common::embed(&params, &swapped, seed)) > 1e-6 {
            changed += 1;
        }
    }
    let share = changed as f64 / tried as f64;
    let pass = share >= 0.95;
    report(
        3,
        "session-order sensitivity",
        pass,
        &format!("{changed}/{tried} swaps change the embedding ({:.1}%)", 100.0 * share),
    );
    assert!(pass);
}

#[test]
fn criterion_4_lemma3_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let r = lemma3_check(1000, 6, 0);
    let elapsed = start.elapsed();
    let pass = r.passed() && elapsed < Duration::from_secs(120);
    report(
        4,
        "augmentation preserves isomorphism",
        pass,
        &format!(
            "{} trials, {} isomorphic pairs, {} counterexamples, {:.1?}",
            r.trials,
            r.isomorphic_pairs,
            r.counterexamples.len(),
            elapsed
        ),
    );
    assert!(pass, "{r}");
}

#[test]
fn criterion_5_wl_surrogate() {
    let _g = serial();
    let pool: Vec<SampledQuery> = QueryType::ALL
        .iter()
        .flat_map(|t| common::toy_queries(*t, 30, 47, Split::Train))
        .collect();
    let proxy = |q: &lsgt::query::QueryGraph| augment(&build_proxy(q).unwrap());
    let mut rng = derive_rng(5, &[]);
    // half unrelated pairs, half near misses that only reorder one session
    let mut pairs = Vec::new();
    while pairs.len() < 200 {
        let a = pool[rng.random_range(0..pool.len())].query.clone();
        let b = if pairs.len() % 2 == 0 {
            pool[rng.random_range(0..pool.len())].query.clone()
        } else {
            match common::swap_session_positions(&a, &mut rng) {
                Some(b) => b,
                None => continue,
            }
        };
        if wl_distinguishes(&proxy(&a), &proxy(&b)) {
            pairs.push((a, b));
        }
    }
    let id_seeds = 10u64;
    let (mut compared, mut differ) = (0, 0);
    for (k, (a, b)) in pairs.iter().enumerate() {
        let params = random_model(100 + k as u64);
        for s in 0..id_seeds {
            compared += 1;
            if common::linf(&common::embed(&params, a, s), &common::embed(&params, b, s)) > 1e-6 {
                differ += 1;
            }
        }
    }
    let share = differ as f64 / compared as f64;
    let pass = share >= 0.99;
    report(
        5,
        "WL surrogate",
        pass,
        &format!(
            "{} distinguished pairs x {id_seeds} identifier seeds: {differ}/{compared} embeddings differ ({:.2}%)",
            pairs.len(),
            100.0 * share
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_metric_correctness() {
    let _g = serial();
    let r = common::fixture_report(false);
    let fixture_ok = r.mrr(QueryType::P1) == Some((1.0 + 0.5) / 2.0)
        && r.mrr(QueryType::In2S) == Some((0.375 + 1.0 / 6.0) / 2.0)
        && r.rows.len() == 2;
    let mc10 = common::monte_carlo_mrr(10, 10_000, 61);
    let mc100 = common::monte_carlo_mrr(100, 10_000, 62);
    let pass = fixture_ok && (mc10 - 0.29290).abs() <= 0.005 && (mc100 - 0.05187).abs() <= 0.005;
    report(
        6,
        "metric correctness",
        pass,
        &format!("fixture exact: {fixture_ok}; random N=10 {mc10:.5} (0.29290), N=100 {mc100:.5} (0.05187)"),
    );
    assert!(pass);
}

// Toy training protocol shared by criteria 7 to 9.
const STEPS: usize = 1000;
const LEARNING_RATE: f64 = 5e-3;
const BATCH: usize = 32;
const TRAIN_PER_TYPE: usize = 300;
const EVAL_PER_TYPE: usize = 100;

struct Run {
    report: EvalReport,
    elapsed: Duration,
}

fn train_queries() -> &'static [SampledQuery] {
    static Q: OnceLock<Vec<SampledQuery>> = OnceLock::new();
    Q.get_or_init(|| {
        QueryType::TRAINING
            .iter()
            .flat_map(|t| common::toy_queries(*t, TRAIN_PER_TYPE, 1, Split::Train))
            .collect()
    })
}

fn test_queries() -> &'static [SampledQuery] {
    static Q: OnceLock<Vec<SampledQuery>> = OnceLock::new();
    Q.get_or_init(|| {
        QueryType::ALL
            .iter()
            .flat_map(|t| common::toy_queries(*t, EVAL_PER_TYPE, 2, Split::Test))
            .collect()
    })
}

fn run(flags: AblationFlags, seed: u64) -> Run {
    let start = Instant::now();
    let params = random_model(seed);
    let data = prepare(&params, train_queries(), flags).unwrap();
    let cfg = TrainConfig {
        batch_size: BATCH,
        learning_rate: LEARNING_RATE,
        warmup_steps: 100,
        steps: STEPS,
        seed,
        log_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data, params, |_, _| {}).unwrap();
    assert_eq!(out.diverged_at, None);
    let report = evaluate_model(&out.params, flags, test_queries(), seed, &EvalOptions::default()).unwrap();
    Run {
        report,
        elapsed: start.elapsed(),
    }
}

fn full_seed0() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(AblationFlags::default(), 0))
}

fn random_report() -> &'static EvalReport {
    static R: OnceLock<EvalReport> = OnceLock::new();
    R.get_or_init(|| random_baseline(test_queries(), &common::toy_sizes(), 9, &EvalOptions::default()).unwrap())
}

fn ratio(t: QueryType) -> (f64, f64, f64) {
    let m = full_seed0().report.mrr(t).unwrap();
    let r = random_report().mrr(t).unwrap();
    (m, r, m / r)
}

#[test]
fn criterion_7_end_to_end_learning() {
    let _g = serial();
    let run = full_seed0();
    let (p1, p1r, p1x) = ratio(QueryType::P1);
    let (i2, i2r, i2x) = ratio(QueryType::I2S);
    let (n2, n2r, n2x) = ratio(QueryType::In2S);
    let pass = p1x >= 3.0 && i2x >= 2.0 && n2x >= 2.0 && run.elapsed < Duration::from_secs(600);
    report(
        7,
        "end-to-end learning signal",
        pass,
        &format!(
            "{STEPS} steps in {:.1?}; 1p {p1:.3} vs {p1r:.3} (x{p1x:.2}); 2iS {i2:.3} vs {i2r:.3} (x{i2x:.2}); 2inS {n2:.3} vs {n2r:.3} (x{n2x:.2})",
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_zero_shot_ood() {
    let _g = serial();
    let mut parts = Vec::new();
    let mut pass = true;
    for t in QueryType::OOD {
        assert!(!QueryType::TRAINING.contains(&t));
        let (m, r, _) = ratio(t);
        pass &= m > r;
        parts.push(format!("{t} {m:.3} vs {r:.3}"));
    }
    report(8, "zero-shot OOD", pass, &parts.join("; "));
    assert!(pass);
}

fn average(r: &EvalReport) -> f64 {
    r.rows.iter().map(|x| x.mrr).sum::<f64>() / r.rows.len() as f64
}

#[test]
fn criterion_9_ablation_direction() {
    let _g = serial();
    let variants = [
        ("full", AblationFlags::default()),
        (
            "no-logic",
            AblationFlags {
                drop_logic_tokens: true,
                ..Default::default()
            },
        ),
        (
            "no-position",
            AblationFlags {
                drop_session_positions: true,
                ..Default::default()
            },
        ),
    ];
    let mut means = Vec::new();
    let mut detail = Vec::new();
    for (name, flags) in variants {
        let per_seed: Vec<f64> = (0..3)
            .map(|seed| {
                if name == "full" && seed == 0 {
                    average(&full_seed0().report)
                } else {
                    average(&run(flags, seed).report)
                }
            })
            .collect();
        let mean = per_seed.iter().sum::<f64>() / 3.0;
        detail.push(format!(
            "{name} {mean:.4} [{}]",
            per_seed.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
        ));
        means.push(mean);
    }
    let pass = means[1] < means[0] && means[2] < means[0];
    report(9, "ablation direction", pass, &format!("mean of 18 types over 3 seeds: {}", detail.join("; ")));
    assert!(pass);
}
