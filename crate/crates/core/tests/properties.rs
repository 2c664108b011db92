use proptest::prelude::*;

use rapo_core::critique::{filter_dataset, CheckPlugin, ConstantCheck, CritiqueRecord, FlagKind, DEFAULT_LEAK_TOLERANCE};
use rapo_core::dataset::{seeded_permutation, split_dataset, Dataset, ImageSample, Provenance};
use rapo_core::metrics::{plcc, srcc};
use rapo_core::rapo::{compute_advantages, kl_approx, prob_ratio, surrogate_term};
use rapo_core::rewards::{abs_reward, binary_reward, pairwise_prob, rank_reward, GroupStats};

fn spread(v: &[f64]) -> bool {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() > 1e-6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pairwise_prob_is_a_probability_increasing_in_score(
        o in 0.0..1.0f64, mu in 0.0..1.0f64, vi in 0.0..0.1f64, vj in 0.0..0.1f64, bump in 1e-3..0.5f64,
    ) {
        let si = GroupStats { mu: 0.5, var: vi };
        let sj = GroupStats { mu, var: vj };
        let p = pairwise_prob(o, si, sj, 1e-6).unwrap();
        let q = pairwise_prob(o + bump, si, sj, 1e-6).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(q >= p);
    }

    #[test]
    fn abs_reward_falls_with_error(s in 0.0..1.0f64, e1 in 0.0..0.5f64, extra in 0.0..0.5f64) {
        let near = abs_reward(s + e1, s, 0.1, 1e-3);
        let far = abs_reward(s + e1 + extra, s, 0.1, 1e-3);
        prop_assert!(far <= near);
        prop_assert!(far >= 1e-3 && near <= 1.0 + 1e-3);
    }

    #[test]
    fn binary_reward_is_an_indicator(o in 0.0..1.0f64, s in 0.0..1.0f64) {
        let r = binary_reward(o, s, 0.05);
        prop_assert_eq!(r, if (o - s).abs() < 0.05 { 1.0 } else { 0.0 });
    }

    #[test]
    fn rank_reward_is_bounded_and_rewards_correct_order(
        mus in prop::collection::vec(0.0..1.0f64, 2..8), var in 1e-4..0.05f64,
    ) {
        let stats: Vec<GroupStats> = mus.iter().map(|&mu| GroupStats { mu, var }).collect();
        // the top-scored image gains by predicting higher
        let top = mus.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let lo = rank_reward(0.0, top, &stats, &mus, 1e-6).unwrap();
        let hi = rank_reward(1.0, top, &stats, &mus, 1e-6).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&lo) && (0.0..=1.0 + 1e-12).contains(&hi));
        prop_assert!(hi >= lo);
    }

    #[test]
    fn correlations_are_bounded_and_affine_invariant(
        pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..40), a in 0.1..5.0f64, b in -3.0..3.0f64,
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let gt: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(spread(&pred) && spread(&gt));
        let r = plcc(&pred, &gt).unwrap();
        let s = srcc(&pred, &gt).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r) && (-1.0..=1.0).contains(&s));
        let moved: Vec<f64> = pred.iter().map(|x| a * x + b).collect();
        prop_assert!((plcc(&moved, &gt).unwrap() - r).abs() < 1e-9);
        let warped: Vec<f64> = pred.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        prop_assert!((srcc(&warped, &gt).unwrap() - s).abs() < 1e-12);
        prop_assert!((plcc(&gt, &pred).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-5.0..5.0f64, 2..16)) {
        let a = compute_advantages(&rewards).unwrap();
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        if a.iter().all(|&x| x == 0.0) {
            let m = rewards.iter().sum::<f64>() / n;
            prop_assert!((rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).sqrt() < 1e-12);
        } else {
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((std - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_estimate_is_non_negative(lr in -30.0..0.0f64, lc in -30.0..0.0f64) {
        prop_assert!(kl_approx(lr, lc).unwrap() >= 0.0);
    }

    #[test]
    fn surrogate_never_exceeds_unclipped(lc in -5.0..0.0f64, lo in -5.0..0.0f64, adv in -3.0..3.0f64) {
        let r = prob_ratio(lc, lo).unwrap();
        let s = surrogate_term(r, adv, 0.2, 0.28);
        prop_assert!(s <= r * adv + 1e-12);
    }

    #[test]
    fn permutation_and_split_partition(n in 2usize..200, seed in any::<u64>(), ratio in 0.3..0.9f64) {
        let mut perm = seeded_permutation(n, seed);
        prop_assert_eq!(perm.clone(), seeded_permutation(n, seed));
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..n).collect::<Vec<_>>());
        let samples: Vec<ImageSample> = (0..n)
            .map(|i| ImageSample { id: format!("p{i}"), features: vec![i as f64], mos: (i as f64 / n as f64) })
            .collect();
        let ds = Dataset::new(samples, Provenance::Synthetic, true).unwrap();
        if let Ok((tr, te)) = split_dataset(&ds, ratio, seed) {
            let mut ids: Vec<String> = tr.samples().iter().chain(te.samples()).map(|s| s.id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }

    #[test]
    fn filter_partitions_every_record(
        texts in prop::collection::vec(("[a-z][a-z ]{0,19}", 0u8..3, 0.0..1.0f64), 0..30), flag_align in any::<bool>(),
    ) {
        let records: Vec<CritiqueRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, (t, kind, h))| {
                let text = match kind {
                    0 => t.clone(),
                    1 => format!("{t} scored {:.0} out of 10", h * 10.0),
                    _ => format!("{t} with 3 people"),
                };
                CritiqueRecord::new(format!("c{i}"), text, *h).unwrap()
            })
            .collect();
        let judge = ConstantCheck { name: "judge".into(), kind: FlagKind::Align, verdict: flag_align };
        let plugins: [&dyn CheckPlugin; 1] = [&judge];
        let out = filter_dataset(records.clone(), &plugins, DEFAULT_LEAK_TOLERANCE);
        prop_assert_eq!(out.kept.len() + out.rejected.len(), records.len());
        for k in &out.kept {
            prop_assert!(!out.rejected.iter().any(|r| r.record.id == k.id));
        }
        for r in &out.rejected {
            prop_assert!(!r.flags.is_clean() || r.unscreened.is_some());
        }
        if flag_align {
            prop_assert!(out.kept.is_empty());
        }
    }
}
