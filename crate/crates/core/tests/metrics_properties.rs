use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use refsearch::MetricsReport;

fn labels() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..5, 0u8..5), 1..200)
}

fn split(pairs: &[(u8, u8)]) -> (Vec<String>, Vec<String>) {
    pairs.iter().map(|(t, p)| (format!("k{t}"), format!("k{p}"))).unzip()
}

proptest! {
    #[test]
    fn scores_are_bounded_and_macro_is_the_mean(pairs in labels()) {
        let (t, p) = split(&pairs);
        let r = MetricsReport::score(&t, &p).unwrap();
        let mean = r.per_class.values().map(|m| m.f1).sum::<f64>() / r.per_class.len() as f64;
        prop_assert!((r.macro_f1 - mean).abs() <= 1e-12);
        for m in r.per_class.values() {
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        }
        prop_assert_eq!(r.confusion.total(), pairs.len() as u64);
        prop_assert_eq!(r.item_count, pairs.len() as u64);
    }

    #[test]
    fn order_of_items_is_irrelevant(pairs in labels(), rot in any::<prop::sample::Index>()) {
        let (t, p) = split(&pairs);
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot.index(pairs.len()));
        rotated.reverse();
        let (t2, p2) = split(&rotated);
        prop_assert_eq!(MetricsReport::score(&t, &p).unwrap(), MetricsReport::score(&t2, &p2).unwrap());
    }

    #[test]
    fn confusion_margins_match_counts(pairs in labels()) {
        let (t, p) = split(&pairs);
        let c = MetricsReport::score(&t, &p).unwrap().confusion;
        for (i, label) in c.labels.iter().enumerate() {
            prop_assert_eq!(c.row_sum(i), t.iter().filter(|x| *x == label).count() as u64);
            prop_assert_eq!(c.column_sum(i), p.iter().filter(|x| *x == label).count() as u64);
        }
    }

    #[test]
    fn agrees_with_direct_counting(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..=100)) {
        let (t, p) = split(&pairs);
        let r = MetricsReport::score(&t, &p).unwrap();
        let mut f1s = Vec::new();
        for label in r.confusion.labels.iter() {
            let tp = t.iter().zip(&p).filter(|(a, b)| *a == label && *b == label).count() as f64;
            let fp = t.iter().zip(&p).filter(|(a, b)| *a != label && *b == label).count() as f64;
            let fn_ = t.iter().zip(&p).filter(|(a, b)| *a == label && *b != label).count() as f64;
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            let m = r.per_class[label];
            prop_assert!((m.precision - precision).abs() <= 1e-12);
            prop_assert!((m.recall - recall).abs() <= 1e-12);
            prop_assert!((m.f1 - f1).abs() <= 1e-12);
            f1s.push(f1);
        }
        prop_assert!((r.macro_f1 - f1s.iter().sum::<f64>() / f1s.len() as f64).abs() <= 1e-12);
    }

    #[test]
    fn json_round_trip(pairs in labels()) {
        let (t, p) = split(&pairs);
        let r = MetricsReport::score(&t, &p).unwrap();
        prop_assert_eq!(MetricsReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}

#[test]
fn ninety_ten_ten() {
    let mut truth = vec!["A"; 100];
    truth.extend(vec!["B"; 100]);
    let mut predicted = vec!["A"; 90];
    predicted.extend(vec!["B"; 10]);
    predicted.extend(vec!["A"; 10]);
    predicted.extend(vec!["B"; 90]);
    let r = MetricsReport::score(&truth, &predicted).unwrap();
    let a = r.per_class["A"];
    assert_abs_diff_eq!(a.precision, 0.9, epsilon = 1e-9);
    assert_abs_diff_eq!(a.recall, 0.9, epsilon = 1e-9);
    assert_abs_diff_eq!(a.f1, 0.9, epsilon = 1e-9);
    assert_abs_diff_eq!(r.macro_f1, 0.9, epsilon = 1e-9);
}

#[test]
fn perfect_predictions_score_exactly_one() {
    let labels = ["x", "y", "z", "x", "y", "z", "x"];
    let r = MetricsReport::score(&labels, &labels).unwrap();
    assert_eq!(r.macro_f1, 1.0);
    assert!(r.per_class.values().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(MetricsReport::score(&["a", "b"], &["a"]).is_err());
}
