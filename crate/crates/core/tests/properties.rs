mod common;

use common::*;
use proptest::prelude::*;
use std::rc::Rc;
use tabsae::data::{class_counts, stratified_split};
use tabsae::resample::{k_nearest, smote, smoteenn, squared_distance, ResampleConfig};
use tabsae::tensor::{Graph, Tensor};
use tabsae::train::{class_metrics, confusion_matrix, evaluate, roc_curve};

fn brute_knn(data: &[f64], width: usize, q: usize, pool: &[usize], k: usize) -> Vec<usize> {
    let row = |i: usize| &data[i * width..(i + 1) * width];
    let mut all: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&j| j != q)
        .map(|&j| (squared_distance(row(q), row(j)), j))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_full_sort(
        width in 1usize..4,
        cells in prop::collection::vec(-3i32..3, 8..120),
        k in 1usize..8,
        q_pick in any::<prop::sample::Index>(),
    ) {
        let n = cells.len() / width;
        prop_assume!(n >= 2);
        let data: Vec<f64> = cells[..n * width].iter().map(|&c| c as f64 * 0.5).collect();
        let pool: Vec<usize> = (0..n).collect();
        let q = q_pick.index(n);
        prop_assert_eq!(k_nearest(&data, width, q, &pool, k), brute_knn(&data, width, q, &pool, k));
    }

    #[test]
    fn trapezoid_auc_is_mann_whitney(
        raw in prop::collection::vec((0u32..20, any::<bool>()), 2..300),
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 20.0).collect();
        let positive: Vec<bool> = raw.iter().map(|(_, p)| *p).collect();
        match roc_curve(&scores, &positive) {
            Some(c) => {
                prop_assert!((c.auc - mann_whitney(&scores, &positive)).abs() <= 1e-12);
                prop_assert_eq!(c.points.first().copied(), Some([0.0, 0.0]));
                prop_assert_eq!(c.points.last().copied(), Some([1.0, 1.0]));
                prop_assert!(c.points.windows(2).all(|w| w[1][0] >= w[0][0] && w[1][1] >= w[0][1]));
            }
            None => prop_assert!(positive.iter().all(|&p| p) || positive.iter().all(|&p| !p)),
        }
    }

    #[test]
    fn confusion_and_rates_are_consistent(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = confusion_matrix(&truth, &pred, 3).unwrap();
        prop_assert_eq!(cm.iter().flatten().sum::<usize>(), pairs.len());
        for (c, m) in class_metrics(&cm).iter().enumerate() {
            for v in [m.precision, m.recall, m.f1, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.support, cm[c].iter().sum::<usize>());
        }
    }

    #[test]
    fn evaluation_accuracy_is_the_trace_share(
        rows in prop::collection::vec(((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 0usize..3), 1..100),
    ) {
        let probs: Vec<[f64; 3]> = rows.iter().map(|((a, b, c), _)| [*a, *b, *c]).collect();
        let labels: Vec<usize> = rows.iter().map(|(_, y)| *y).collect();
        let report = evaluate(&probs, &labels).unwrap();
        let trace: usize = (0..3).map(|c| report.confusion[c][c]).sum();
        prop_assert_eq!(report.overall_accuracy, trace as f64 / labels.len() as f64);
    }

    #[test]
    fn split_partitions_every_class(
        labels in prop::collection::vec(0usize..3, 30..300),
        seed in any::<u64>(),
    ) {
        let counts = class_counts(&labels);
        prop_assume!(counts.iter().all(|&c| c == 0 || c >= 5));
        let s = stratified_split(&labels, (0.6, 0.2, 0.2), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..3 {
            let in_train = s.train.iter().filter(|&&i| labels[i] == c).count() as f64;
            prop_assert!((in_train - 0.6 * counts[c] as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(cells in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([3, 4], cells).unwrap());
        let mask: Rc<[bool]> = Rc::from(vec![true, false, true, false]);
        let plain = g.softmax(x, 1).unwrap();
        let masked = g.masked_softmax(x, mask).unwrap();
        for row in g.value(plain).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for row in g.value(masked).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(row[1], 0.0);
            prop_assert_eq!(row[3], 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn resampling_invariants(
        seed in any::<u64>(),
        minority in 8usize..40,
        middle in 40usize..90,
        smote_k in 1usize..6,
        enn_half in 0usize..3,
    ) {
        let m = resample_fixture(seed, [120, middle, minority], 3);
        let cfg = ResampleConfig { smote_k, enn_k: 2 * enn_half + 1, seed };
        let (over, audit) = smote(&m, &cfg).unwrap();
        // originals come first, untouched
        prop_assert_eq!(&over.data[..m.data.len()], &m.data[..]);
        prop_assert_eq!(over.synthetic.iter().filter(|&&s| s).count(), audit.synthetic_rows);
        prop_assert_eq!(audit.after_smote, [120, 120, 120]);

        let (clean, audit) = smoteenn(&m, &cfg).unwrap();
        for c in 0..3 {
            prop_assert!(audit.after_enn[c] <= audit.after_smote[c]);
        }
        prop_assert_eq!(clean.n_rows() + audit.removed_rows, over.n_rows());
        prop_assert_eq!(class_counts(&clean.labels), audit.after_enn);
    }
}

#[test]
fn enn_is_idempotent_on_clean_rows_trend() {
    // a second ENN pass removes far fewer rows than the first
    let m = resample_fixture(9, [200, 80, 30], 3);
    let cfg = ResampleConfig::default();
    let (once, first) = smoteenn(&m, &cfg).unwrap();
    let (_, again) = tabsae::resample::enn(&once, &cfg).unwrap();
    assert!(again.len() < first.removed_rows, "{} vs {}", again.len(), first.removed_rows);
}
