mod common;

use hirope::hier::{attention_scores, hirope_score, pair_score, windowed_pair_distances, windowed_score};
use hirope::metrics::{bucket_by_length, edit_similarity, recall};
use hirope::rope::rope_score;
use hirope::{DimSplit, HierPos, PositionStrategy, RotaryConfig, WindowConfig};
use proptest::prelude::*;

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rope_depends_only_on_distance(
        q in vec_of(16), k in vec_of(16), n in 0u64..5000, delta in 0u64..5000, shift in 0u64..100_000,
    ) {
        let cfg = RotaryConfig::with_default_base(16).unwrap();
        let a = rope_score(&q, &k, n + delta, n, &cfg).unwrap();
        let b = rope_score(&q, &k, n + delta + shift, n + shift, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn hirope_per_level_shift_invariance(
        q in vec_of(8), k in vec_of(8),
        sq in 0u64..200, sk in 0u64..200, tq in 0u64..200, tk in 0u64..200,
        shift_s in 0u64..10_000, shift_t in 0u64..10_000,
    ) {
        let cfg = RotaryConfig::with_default_base(8).unwrap();
        let split = DimSplit::new(vec![2, 2]).unwrap();
        let p = |s, t| HierPos::new(vec![s, t], s + t).unwrap();
        let a = hirope_score(&q, &k, &p(sq, tq), &p(sk, tk), &split, &cfg).unwrap();
        let b = hirope_score(&q, &k, &p(sq + shift_s, tq + shift_t), &p(sk + shift_s, tk + shift_t), &split, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn windowed_distances_stay_bounded(
        seg_len in 2u64..40, sq in 0u64..500, sk in 0u64..500, tq in 0u64..40, tk in 0u64..40, window in 1u64..64,
    ) {
        let (tq, tk) = (tq % seg_len, tk % seg_len);
        let (sq, sk) = (sq.max(sk), sq.min(sk));
        let gq = sq * seg_len + tq;
        let gk = sk * seg_len + tk;
        prop_assume!(gq >= gk);
        let split = DimSplit::new(vec![3, 5]).unwrap();
        let d = windowed_pair_distances(
            &HierPos::segmented(sq, tq, gq),
            &HierPos::segmented(sk, tk, gk),
            &split,
            WindowConfig::new(window).unwrap(),
        )
        .unwrap();
        // token-level pairs never see more than one segment's span
        for &v in &d[..5] {
            prop_assert!(v.unsigned_abs() < seg_len.max(window));
        }
        // coarse pairs see the segment distance plus at most window - 1
        for &v in &d[5..] {
            prop_assert!(v.unsigned_abs() <= (sq - sk).max(window) + window);
        }
    }

    #[test]
    fn recall_and_edit_similarity_are_bounded(
        pred in prop::collection::vec("[a-cA-C]{0,3}", 0..6),
        gold in prop::collection::vec("[a-cA-C]{1,3}", 1..6),
        a in "\\PC{0,12}", b in "\\PC{0,12}",
    ) {
        let r = recall(&pred, &gold).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let e = edit_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&e));
        let n = a.chars().count().max(b.chars().count());
        let expected = if n == 0 { 1.0 } else { 1.0 - common::levenshtein_oracle(&a, &b) as f64 / n as f64 };
        prop_assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn every_length_lands_in_one_bucket(lengths in prop::collection::vec(0u64..20_000, 0..50)) {
        let edges = [0, 2048, 4096, 8192, 16384];
        let b = bucket_by_length(&lengths, &edges).unwrap();
        let mut seen = vec![0; lengths.len()];
        for bucket in &b.buckets {
            for &i in &bucket.members {
                prop_assert!(bucket.lo <= lengths[i] && lengths[i] < bucket.hi);
                seen[i] += 1;
            }
        }
        for &i in &b.overflow {
            prop_assert!(lengths[i] >= 16384);
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}

#[test]
fn attention_matches_pairwise_for_every_strategy() {
    let cfg = RotaryConfig::with_default_base(8).unwrap();
    let mut rng = common::rng(11);
    let positions: Vec<HierPos> = (0..20u64).map(|i| HierPos::segmented(i / 6, i % 6, i)).collect();
    let flat: Vec<HierPos> = (0..20u64).map(HierPos::flat).collect();
    let qs: Vec<Vec<f64>> = (0..20).map(|_| common::random_vec(&mut rng, 8)).collect();
    let ks: Vec<Vec<f64>> = (0..20).map(|_| common::random_vec(&mut rng, 8)).collect();
    let cases = [
        (PositionStrategy::Origin, &flat),
        (
            PositionStrategy::HiRope {
                split: DimSplit::new(vec![2, 2]).unwrap(),
                window: WindowConfig::new(4).unwrap(),
            },
            &positions,
        ),
        (PositionStrategy::ReRope { window: 5 }, &flat),
        (PositionStrategy::SelfExtend { group: 3, neighbor: 4 }, &flat),
        (PositionStrategy::Ntk { scale: 4.0 }, &flat),
    ];
    for (strategy, pos) in cases {
        let m = attention_scores(&qs, &ks, pos, &strategy, &cfg).unwrap();
        for i in 0..20 {
            for j in 0..=i {
                let want = pair_score(&strategy, &qs[i], &ks[j], &pos[i], &pos[j], &cfg).unwrap();
                assert!((m.get(i, j) - want).abs() <= 1e-12, "{} ({i},{j})", strategy.name());
            }
        }
    }
}

#[test]
fn windowed_matches_oracle() {
    let cfg = RotaryConfig::with_default_base(16).unwrap();
    let mut rng = common::rng(5);
    let split = DimSplit::new(vec![3, 5]).unwrap();
    for window in [1, 3, 7, 20] {
        for gq in 0..30u64 {
            for gk in 0..=gq {
                let (q, k) = (common::random_vec(&mut rng, 16), common::random_vec(&mut rng, 16));
                let (lq, lk) = ([gq / 7, gq % 7], [gk / 7, gk % 7]);
                let got = windowed_score(
                    &q,
                    &k,
                    &HierPos::new(lq.to_vec(), gq).unwrap(),
                    &HierPos::new(lk.to_vec(), gk).unwrap(),
                    &split,
                    WindowConfig::new(window).unwrap(),
                    &cfg,
                )
                .unwrap();
                let want = common::windowed_score_oracle(&q, &k, (&lq, gq), (&lk, gk), &[3, 5], window, 10_000.0);
                assert!((got - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn three_level_hirope_matches_oracle() {
    let cfg = RotaryConfig::with_default_base(12).unwrap();
    let split = DimSplit::new(vec![1, 2, 3]).unwrap();
    let mut rng = common::rng(8);
    for _ in 0..200 {
        let (q, k) = (common::random_vec(&mut rng, 12), common::random_vec(&mut rng, 12));
        let lq = [3u64, 17, 250];
        let lk = [1u64, 4, 9];
        let got = hirope_score(
            &q,
            &k,
            &HierPos::new(lq.to_vec(), 1000).unwrap(),
            &HierPos::new(lk.to_vec(), 20).unwrap(),
            &split,
            &cfg,
        )
        .unwrap();
        let want = common::hirope_score_oracle(&q, &k, &lq, &lk, &[1, 2, 3], 10_000.0);
        assert!((got - want).abs() <= 1e-9);
    }
}
