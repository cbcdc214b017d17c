//! Property-based invariants over randomly generated bags and weights.

use num_bigint::BigUint;
use proptest::collection::vec;
use proptest::prelude::*;

use llp_core::loss::{dllp_loss, rc_approx_loss, weighted_instance_loss, LossKind};
use llp_core::marginals::{
    approx_marginals, candidate_bag_probs, default_temperature, exact_marginals,
    leave_one_out_means, partition_function, DEFAULT_STATE_CAP,
};
use llp_core::model::softmax;
use llp_core::multiset::LabelMultiset;

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

prop_compose! {
    fn arb_bag(max_k: usize, max_c: usize)
        (c in 2..=max_c)
        (labels in vec(0..c, 1..=max_k), c in Just(c))
        -> LabelMultiset
    {
        LabelMultiset::from_labels(&labels, c).unwrap()
    }
}

fn arb_rows(k: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(vec(0.01..1.0f64, c..=c).prop_map(normalized), k..=k)
}

proptest! {
    #[test]
    fn enumeration_length_equals_the_multinomial_count(s in arb_bag(7, 4)) {
        let tuples = s.enumerate_assignments().unwrap();
        prop_assert_eq!(BigUint::from(tuples.len()), s.assignment_count());
        // Lexicographic and duplicate-free.
        for pair in tuples.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn removal_counting_identity(s in arb_bag(8, 5)) {
        let total: BigUint = s
            .support()
            .map(|y| s.remove_label(y).unwrap().assignment_count())
            .sum();
        prop_assert_eq!(total, s.assignment_count());
    }

    #[test]
    fn proportions_form_a_distribution(s in arb_bag(64, 8)) {
        let p = s.proportions();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn partition_function_is_positive_and_bounded_by_count(
        (s, rows) in arb_bag(6, 4).prop_flat_map(|s| {
            let (k, c) = (s.size(), s.num_classes());
            (Just(s), arb_rows(k, c))
        })
    ) {
        let z = partition_function(&s, &rows, DEFAULT_STATE_CAP).unwrap();
        prop_assert!(z > 0.0);
        // Each term is a product of row entries <= 1.
        let count = s.assignment_count().to_string().parse::<f64>().unwrap();
        prop_assert!(z <= count * (1.0 + 1e-12));
    }

    #[test]
    fn marginal_rows_are_distributions_on_the_support(
        (s, rows, t_scale) in arb_bag(8, 5).prop_flat_map(|s| {
            let (k, c) = (s.size(), s.num_classes());
            (Just(s), arb_rows(k, c), 0.25..4.0f64)
        })
    ) {
        let exact = exact_marginals(&s, &rows, DEFAULT_STATE_CAP).unwrap();
        let loo = leave_one_out_means(&rows);
        let t = default_temperature(s.size()) * t_scale;
        let approx = approx_marginals(&s, &rows, &loo, t).unwrap();
        for m in [exact.rows(), approx.rows()] {
            for row in m {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (class, &x) in row.iter().enumerate() {
                    prop_assert!(x >= 0.0);
                    if !s.contains(class) {
                        prop_assert_eq!(x, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn candidate_probabilities_sum_to_one(
        (s, mean, t) in arb_bag(10, 6).prop_flat_map(|s| {
            let c = s.num_classes();
            (Just(s), vec(0.0..1.0f64, c..=c).prop_map(normalized), 1e-3..1e3f64)
        })
    ) {
        let candidates: Vec<_> = s.support().map(|y| s.remove_label(y).unwrap()).collect();
        let probs = candidate_bag_probs(&candidates, &mean, t).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn approximation_is_exact_for_pairs(
        (s, rows, logits) in arb_bag(2, 5)
            .prop_filter("pairs only", |s| s.size() == 2)
            .prop_flat_map(|s| {
                let c = s.num_classes();
                (Just(s), arb_rows(2, c), vec(vec(-4.0..4.0f64, c..=c), 2..=2))
            })
    ) {
        let exact = llp_core::loss::rc_loss(&s, &rows, &logits, DEFAULT_STATE_CAP).unwrap();
        let approx = rc_approx_loss(&s, &rows, &logits, 1.0).unwrap();
        prop_assert!((exact.loss - approx.loss).abs() < 1e-12);
    }

    #[test]
    fn weighted_loss_is_nonnegative_with_the_closed_form_gradient(
        (k, c, logits, m) in (1usize..=5, 2usize..=5).prop_flat_map(|(k, c)| {
            (
                Just(k),
                Just(c),
                vec(vec(-6.0..6.0f64, c..=c), k..=k),
                vec(vec(0.0..1.0f64, c..=c).prop_map(normalized), k..=k),
            )
        })
    ) {
        let r = weighted_instance_loss(&logits, &m, LossKind::Proden).unwrap();
        prop_assert!(r.loss >= 0.0 && r.loss.is_finite());
        for (inst, row) in r.logit_grads.iter().enumerate() {
            let probs = softmax(&logits[inst]);
            for (class, &g) in row.iter().enumerate() {
                prop_assert_eq!(g, (probs[class] - m[inst][class]) / k as f64);
            }
            // Gradients over a full probability simplex difference sum to 0.
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        prop_assert_eq!(r.logit_grads.len(), k);
        prop_assert_eq!(r.logit_grads[0].len(), c);
    }

    #[test]
    fn dllp_loss_dominates_the_bag_entropy(
        (s, logits) in arb_bag(6, 5).prop_flat_map(|s| {
            let (k, c) = (s.size(), s.num_classes());
            (Just(s), vec(vec(-8.0..8.0f64, c..=c), k..=k))
        })
    ) {
        let r = dllp_loss(&s, &logits).unwrap();
        let entropy: f64 = s
            .proportions()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        prop_assert!(r.loss - entropy >= -1e-12);
    }

    #[test]
    fn softmax_is_a_translation_invariant_distribution(
        (logits, shift) in (vec(-30.0..30.0f64, 1..12), -50.0..50.0f64)
    ) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|&v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
