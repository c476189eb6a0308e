mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::Rng;
use synthlab::corpus::{Corpus, MixtureSpec};
use synthlab::surrogate::{self, Capacity, CurveMixture, NGramModel, TrainConfig};
use synthlab::tokenizer::{TokenId, Tokenizer, WordPunctTokenizer};

/// Straight recount of the recursion from raw windows.
fn oracle(stream: &[TokenId], order: usize, history: &[TokenId], token: TokenId) -> f64 {
    let d = 0.75;
    let v: HashSet<_> = stream.iter().collect();
    let mut p = 1.0 / (v.len() + 1) as f64;
    let h = &history[history.len() - history.len().min(order - 1)..];
    for k in 1..=h.len() + 1 {
        let ctx = &h[h.len() + 1 - k..];
        let hits: Vec<&[TokenId]> = stream.windows(k).filter(|w| &w[..k - 1] == ctx).collect();
        if hits.is_empty() {
            continue;
        }
        let c = hits.iter().filter(|w| w[k - 1] == token).count() as f64;
        let n1 = hits.iter().map(|w| w[k - 1]).collect::<HashSet<_>>().len() as f64;
        let total = hits.len() as f64;
        p = (c - d).max(0.0) / total + d * n1 / total * p;
    }
    p
}

fn ids(v: &[u8]) -> Vec<TokenId> {
    v.iter().map(|&x| TokenId(x as u64 + 1)).collect()
}

fn normalized(m: &NGramModel, h: &[TokenId]) -> f64 {
    m.vocab().iter().map(|&t| m.prob(h, t)).sum::<f64>() + m.prob_unknown(h)
}

proptest! {
    #[test]
    fn matches_oracle_on_short_corpora(raw in prop::collection::vec(0u8..5, 2..=50), order in 1usize..=2, hist in prop::collection::vec(0u8..6, 0..2), tok in 0u8..6) {
        let s = ids(&raw);
        let m = surrogate::train(&s, order, 1).unwrap();
        let (h, t) = (ids(&hist), TokenId(tok as u64 + 1));
        prop_assert!((m.prob(&h, t) - oracle(&s, order, &h, t)).abs() <= 1e-12);
    }

    #[test]
    fn normalizes_for_every_context(raw in prop::collection::vec(0u8..8, 3..300), order in 1usize..=4, prune in 1u64..4, kn in any::<bool>(), hist in prop::collection::vec(0u8..9, 0..4)) {
        let s = ids(&raw);
        let mut cfg = TrainConfig::new(order, prune);
        cfg.kneser_ney = kn;
        let m = surrogate::train_with(&s, cfg).unwrap();
        prop_assert!((normalized(&m, &ids(&hist)) - 1.0).abs() <= 1e-9);
        let observed = &s[s.len() - (order - 1)..];
        prop_assert!((normalized(&m, observed) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn pruning_never_grows_the_model(raw in prop::collection::vec(0u8..6, 4..200), order in 1usize..=4) {
        let s = ids(&raw);
        let counts: Vec<u64> = [1u64, 2, 3, 5, 8, u64::MAX].iter().map(|&p| surrogate::train(&s, order, p).unwrap().parameter_count()).collect();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn binary_round_trip(raw in prop::collection::vec(0u8..6, 4..120), order in 1usize..=3) {
        let m = surrogate::train(&ids(&raw), order, 1).unwrap();
        let back = NGramModel::read_from(&m.to_bytes()[..]).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn unknown_tokens_never_get_zero_probability() {
    let m = surrogate::train(&ids(&[0, 1, 2, 0, 1]), 2, 1).unwrap();
    let e = surrogate::evaluate(&m, &[TokenId(99), TokenId(100), TokenId(1)], true).unwrap();
    assert!(e.cross_entropy_nats_per_token.is_finite());
    let per = e.per_token_losses.unwrap();
    let mean = per.iter().map(|r| r.loss_nats).sum::<f64>() / per.len() as f64;
    assert!((mean - e.cross_entropy_nats_per_token).abs() < 1e-12);
}

#[test]
fn more_data_helps_on_average() {
    // Stationary source: fixed first-order chain over 40 symbols.
    let mut r = common::rng(77);
    let next: Vec<Vec<u64>> = (0..40).map(|_| (0..4).map(|_| r.gen_range(1..=40)).collect()).collect();
    let sample = |r: &mut rand_chacha::ChaCha8Rng, n: usize| {
        let mut cur = r.gen_range(1..=40u64);
        (0..n)
            .map(|_| {
                cur = if r.gen_bool(0.1) { r.gen_range(1..=40) } else { next[cur as usize - 1][r.gen_range(0..4)] };
                TokenId(cur)
            })
            .collect::<Vec<_>>()
    };
    let eval = sample(&mut r, 5000);
    let (mut small, mut large) = (0.0, 0.0);
    for _ in 0..10 {
        let s = sample(&mut r, 4000);
        small += surrogate::evaluate(&surrogate::train(&s[..2000], 2, 1).unwrap(), &eval, false).unwrap().cross_entropy_nats_per_token;
        large += surrogate::evaluate(&surrogate::train(&s, 2, 1).unwrap(), &eval, false).unwrap().cross_entropy_nats_per_token;
    }
    assert!(large <= small, "2D mean {large} > D mean {small}");
}

#[test]
fn curve_records_follow_grid_order() {
    let tok = WordPunctTokenizer;
    let nat = Corpus::from_texts("nat", common::natural_texts(200, 3), &tok).unwrap();
    let syn = Corpus::from_texts("syn", common::synthetic_texts(200, 4), &tok).unwrap();
    let eval: Vec<TokenId> = common::natural_texts(20, 5).iter().flat_map(|(_, t)| tok.ids(t)).collect();
    let mixtures = vec![
        CurveMixture { id: "a".into(), spec: MixtureSpec::binary("nat", "syn", 0.0, 1, 1) },
        CurveMixture { id: "b".into(), spec: MixtureSpec::binary("nat", "syn", 0.5, 1, 1) },
    ];
    let caps = [Capacity { order: 1, prune_min_count: 1 }, Capacity { order: 2, prune_min_count: 1 }];
    let recs = surrogate::run_curve(&mixtures, &[1000, 2000, 4000], &caps, &[&nat, &syn], &tok, &eval).unwrap();
    assert_eq!(recs.len(), 12);
    assert_eq!(recs[0].mixture_id, "a");
    assert_eq!(recs[6].mixture_id, "b");
    assert_eq!(recs.iter().map(|r| r.d_tokens).take(6).collect::<Vec<_>>(), [1000, 1000, 2000, 2000, 4000, 4000]);
    assert!(recs[1].n_params > recs[0].n_params);
    assert!(surrogate::run_curve(&mixtures, &[2000, 1000], &caps, &[&nat, &syn], &tok, &eval).is_err());
}
