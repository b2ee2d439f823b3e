use ambiweight::eval::{filter_unambiguous, roc_auc};
use ambiweight::labelcore::{LabelMatrix, PairState};
use proptest::prelude::*;

/// Counts ordered (positive, negative) pairs: 2 for a win, 1 for a tie.
fn brute_force(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice_u = 0u64;
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            n_neg += 1;
            continue;
        }
        n_pos += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                twice_u += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice_u as f64 / (2 * n_pos * n_neg) as f64
}

fn two_class(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0i32..40, any::<bool>()), n)
        .prop_filter("both classes present", |v| {
            v.iter().any(|x| x.1) && v.iter().any(|x| !x.1)
        })
        .prop_map(|v| v.into_iter().map(|(s, l)| (f64::from(s), l)).unzip())
}

proptest! {
    #[test]
    fn equals_brute_force_with_ties((scores, labels) in two_class(2..400)) {
        let r = roc_auc(0, &scores, &labels).unwrap();
        prop_assert_eq!(r.auc, brute_force(&scores, &labels));
        prop_assert_eq!(r.n_pos + r.n_neg, scores.len());
    }

    #[test]
    fn invariant_under_strictly_monotone_maps((scores, labels) in two_class(2..300)) {
        let base = roc_auc(0, &scores, &labels).unwrap().auc;
        let cubic: Vec<f64> = scores.iter().map(|x| x * x * x + 3.0 * x - 7.0).collect();
        let exp: Vec<f64> = scores.iter().map(|x| (x / 10.0).exp()).collect();
        let flipped_sign: Vec<f64> = scores.iter().map(|x| -1.0 / (x + 100.0)).collect();
        for t in [cubic, exp, flipped_sign] {
            prop_assert_eq!(roc_auc(0, &t, &labels).unwrap().auc, base);
        }
    }

    #[test]
    fn complement_labels_give_one_minus_auc((scores, labels) in two_class(2..200)) {
        let a = roc_auc(0, &scores, &labels).unwrap().auc;
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let b = roc_auc(0, &scores, &flipped).unwrap().auc;
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filter_keeps_exactly_the_decided_pairs(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..150),
        k in 1usize..4,
    ) {
        // pad to k findings; only finding 0 is randomized
        let n = pairs.len();
        let mut targets = Vec::with_capacity(n * 2 * k);
        for &(a, a_bar) in &pairs {
            targets.extend([u8::from(a), u8::from(a_bar)]);
            targets.extend(std::iter::repeat_n(0u8, 2 * (k - 1)));
        }
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        let m = LabelMatrix::new(ids, k, targets).unwrap();
        let kept = filter_unambiguous(&m, 0).unwrap();
        let expected: Vec<usize> = (0..n).filter(|&i| pairs[i].0 != pairs[i].1).collect();
        prop_assert_eq!(&kept, &expected);
        for &i in &kept {
            let s = m.pair_state(i, 0);
            prop_assert!(s != PairState::Ambiguous && s != PairState::Contradiction);
        }
    }
}

#[test]
fn single_class_is_an_error() {
    assert!(roc_auc(0, &[0.1, 0.2], &[true, true]).is_err());
    assert!(roc_auc(0, &[0.1, f64::NAN], &[true, false]).is_err());
}
