mod common;

use proptest::prelude::*;

use lsgt::graph::{Split, VertexKind};
use lsgt::model::{random_order, ModelParams};
use lsgt::query::QueryType;
use lsgt::tensor::Checkpoint;
use lsgt::tokenizer::{orthonormal_rows, tokenize, TokenizerFlags};

fn params(seed: u64) -> ModelParams {
    ModelParams::init(common::tiny_config(), common::toy_sizes(), seed).unwrap()
}

#[test]
fn init_is_seeded() {
    let a = params(3);
    let b = params(3);
    let c = params(4);
    let same = a.named().iter().zip(b.named()).all(|((_, x), (_, y))| x.data() == y.data());
    assert!(same);
    let differs = a.named().iter().zip(c.named()).any(|((_, x), (_, y))| x.data() != y.data());
    assert!(differs);
}

#[test]
fn checkpoint_round_trip_keeps_embeddings() {
    let p = params(5);
    let json = p.to_checkpoint().to_json().unwrap();
    let back = ModelParams::from_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
    for q in common::set_operator_queries(20, 2) {
        assert_eq!(common::embed(&p, &q, 9).data(), common::embed(&back, &q, 9).data());
    }
}

#[test]
fn scores_cover_the_typed_table() {
    let p = params(6);
    let sizes = common::toy_sizes();
    for (t, n) in [(QueryType::P1, sizes.items), (QueryType::Ip, sizes.attributes)] {
        let q = &common::toy_queries(t, 1, 3, Split::Train)[0];
        let e = common::embed(&p, &q.query, 0);
        let all = p.score_all(&e, t.answer_kind()).unwrap();
        assert_eq!(all.len(), n);
        let kind = t.answer_kind();
        let some: Vec<_> = (0..n as u32).step_by(3).map(|i| lsgt::graph::VertexId { kind, index: i }).collect();
        let picked = p.score(&e, &some).unwrap();
        for (v, s) in some.iter().zip(picked) {
            assert!((all[v.index as usize] - s).abs() < 1e-12);
        }
    }
    assert!(p.score_all(&lsgt::tensor::Tensor::zeros(1, 6), VertexKind::Session).is_err());
}

#[test]
fn loss_matches_log_softmax_by_hand() {
    let p = params(8);
    let q = &common::toy_queries(QueryType::P2, 1, 4, Split::Train)[0];
    let batch = common::examples(&p, &[q], 17);
    let e = p.encode(&batch[0].tokens, &batch[0].basis).unwrap();
    let scores = p.score_all(&e, batch[0].answer.kind).unwrap();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let expect = lse - scores[batch[0].answer.index as usize];
    let got = p.loss(&batch).unwrap();
    assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn token_order_does_not_change_the_embedding(i in 0usize..1000, seed in any::<u64>()) {
        let p = params(seed % 7);
        let qs = common::set_operator_queries(50, 1);
        let q = &qs[i % qs.len()];
        let seq = tokenize(q, &p.table_sizes(), TokenizerFlags::default()).unwrap();
        let basis = orthonormal_rows(seq.n, p.config.d2, seed).unwrap();
        let mut rng = lsgt::rng::derive_rng(seed, &[1]);
        let order = random_order(seq.len(), &mut rng);
        let a = p.encode(&seq, &basis).unwrap();
        let b = p.encode_permuted(&seq, &basis, Some(&order)).unwrap();
        prop_assert!(common::linf(&a, &b) < 1e-9);
    }
}
