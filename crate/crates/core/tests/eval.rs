mod common;

use lsgt::eval::{harmonic_mean_rank, merge_reports, pessimistic_rank, query_mrr, EvalReport};
use lsgt::query::QueryType;

#[test]
fn fixture_values_filtered() {
    let r = common::fixture_report(false);
    assert!(r.filtered);
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.mrr(QueryType::P1), Some((1.0 + 0.5) / 2.0));
    assert_eq!(r.mrr(QueryType::In2S), Some((0.375 + 1.0 / 6.0) / 2.0));
    let in2s = r.rows.iter().find(|x| x.qtype == QueryType::In2S).unwrap();
    assert_eq!((in2s.queries, in2s.hard_answers), (2, 3));
    assert_eq!(r.epfo_average, Some(0.75));
    assert_eq!(r.negation_average, r.mrr(QueryType::In2S));
    assert_eq!(r.ood_average, None);
}

#[test]
fn fixture_values_unfiltered() {
    let r = common::fixture_report(true);
    assert!(!r.filtered);
    assert_eq!(r.mrr(QueryType::P1), Some((1.0 + 1.0 / 3.0) / 2.0));
    assert_eq!(r.mrr(QueryType::In2S), Some(((0.5 + 0.2) / 2.0 + 1.0 / 6.0) / 2.0));
}

#[test]
fn per_query_values() {
    let (queries, scores) = common::metric_fixture();
    let expect = [Some(1.0), Some(0.5), Some(0.375), Some(1.0 / 6.0), None];
    for ((q, s), e) in queries.iter().zip(&scores).zip(expect) {
        assert_eq!(query_mrr(s, q, true), e);
    }
    assert_eq!(pessimistic_rank(&[0.2, 0.2, 0.3], 1, |c| c == 2), 2);
}

#[test]
fn harmonic_values() {
    assert!((harmonic_mean_rank(10) - 0.29290).abs() < 5e-6);
    assert!((harmonic_mean_rank(100) - 0.05187).abs() < 5e-6);
    assert_eq!(harmonic_mean_rank(1), 1.0);
}

#[test]
fn random_baseline_matches_the_harmonic_mean() {
    for (n, want) in [(10, 0.29290), (100, 0.05187)] {
        let got = common::monte_carlo_mrr(n, 10_000, 3);
        assert!((got - want).abs() < 0.005, "N={n}: {got}");
    }
}

#[test]
fn report_serialization_and_tables() {
    let r = common::fixture_report(false);
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
    let tsv = r.to_tsv();
    assert!(tsv.starts_with("type\tmrr\tqueries\thard_answers\n1p\t0.750000\t2\t2\n"));
    assert!(tsv.contains("avg_negation\t"));
    let table = merge_reports(&[("a".into(), r.clone()), ("b".into(), r)]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "run\t1p\t2inS\tavg_epfo\tavg_negation\tavg_ood");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with("\t-"));
}
