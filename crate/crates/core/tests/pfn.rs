use std::sync::OnceLock;
use tabsae::models::{argmax, PfnConfig, PfnModel, TaskPrior};
use tabsae::Error;

fn held_out_accuracy(model: &PfnModel, tasks: u64) -> f64 {
    let bench = TaskPrior::linear_noise_free(64, 32);
    let (mut correct, mut total) = (0usize, 0usize);
    for s in 0..tasks {
        let t = bench.sample_task(1_000_000 + s);
        let probs = model.predict(&t.support_x, &t.support_y, t.n_features, &t.query_x).unwrap();
        for (p, &y) in probs.iter().zip(&t.query_y) {
            correct += usize::from(argmax(p) == y);
            total += 1;
        }
    }
    correct as f64 / total as f64
}

fn trained() -> &'static PfnModel {
    static MODEL: OnceLock<PfnModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut m = PfnModel::new(PfnConfig::default()).unwrap();
        m.meta_train(&TaskPrior::default(), 300, 8, 1e-3, 7).unwrap();
        m
    })
}

#[test]
fn class_marginal_matches_the_symmetric_prior() {
    let prior = TaskPrior::default();
    let mut fractions = [Vec::new(), Vec::new(), Vec::new()];
    for s in 0..1000 {
        let t = prior.sample_task(s);
        let labels: Vec<usize> = t.support_y.iter().chain(&t.query_y).copied().collect();
        for (c, f) in fractions.iter_mut().enumerate() {
            f.push(labels.iter().filter(|&&y| y == c).count() as f64 / labels.len() as f64);
        }
    }
    for (c, f) in fractions.iter().enumerate() {
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        assert!((mean - 1.0 / 3.0).abs() <= 3.0 * se, "class {c}: mean {mean:.4}, se {se:.4}");
    }
}

#[test]
fn supports_always_hold_two_classes_and_tasks_replay() {
    let prior = TaskPrior::default();
    for s in 0..1000 {
        let t = prior.sample_task(s);
        let mut seen = [false; 3];
        t.support_y.iter().for_each(|&y| seen[y] = true);
        assert!(seen.iter().filter(|&&b| b).count() >= 2, "task {s}");
        assert!((prior.min_support..=prior.max_support).contains(&t.n_support()));
    }
    assert_eq!(prior.sample_task(5), prior.sample_task(5));
    assert_ne!(prior.sample_task(5), prior.sample_task(6));
}

#[test]
fn noise_free_linear_supports_are_linearly_separable_by_their_teacher() {
    let prior = TaskPrior::linear_noise_free(40, 10);
    for s in 0..50 {
        let t = prior.sample_task(s);
        let f = t.n_features;
        for (i, &y) in t.support_y.iter().enumerate() {
            assert_eq!(t.teacher.label(&t.support_latent[i * f..(i + 1) * f]), y);
        }
    }
}

#[test]
fn untrained_model_is_at_chance() {
    let m = PfnModel::new(PfnConfig::default()).unwrap();
    let acc = held_out_accuracy(&m, 200);
    assert!((acc - 1.0 / 3.0).abs() <= 0.05, "untrained accuracy {acc:.4}");
}

#[test]
fn queries_do_not_see_each_other() {
    let m = trained();
    let t = TaskPrior::default().sample_task(77);
    let f = t.n_features;
    let together = m.predict(&t.support_x, &t.support_y, f, &t.query_x).unwrap();
    for (q, p) in t.query_x.chunks(f).zip(&together) {
        let alone = m.predict(&t.support_x, &t.support_y, f, q).unwrap();
        for c in 0..3 {
            assert!((alone[0][c] - p[c]).abs() <= 1e-12);
        }
    }
}

#[test]
fn support_order_does_not_matter() {
    let m = trained();
    let t = TaskPrior::default().sample_task(78);
    let f = t.n_features;
    let n = t.n_support();
    let order: Vec<usize> = (0..n).rev().collect();
    let xs: Vec<f64> = order.iter().flat_map(|&i| t.support_x[i * f..(i + 1) * f].to_vec()).collect();
    let ys: Vec<usize> = order.iter().map(|&i| t.support_y[i]).collect();
    let a = m.predict(&t.support_x, &t.support_y, f, &t.query_x).unwrap();
    let b = m.predict(&xs, &ys, f, &t.query_x).unwrap();
    for (p, q) in a.iter().zip(&b) {
        for c in 0..3 {
            assert!((p[c] - q[c]).abs() <= 1e-6);
        }
    }
}

#[test]
fn trained_model_learns_in_context() {
    let m = trained();
    let acc = held_out_accuracy(m, 200);
    assert!(acc >= 0.70, "held-out accuracy {acc:.4}");
    let log = m.meta.as_ref().unwrap();
    assert_eq!(log.tasks_seen(), 2400);
    let means = log.window_means(50);
    assert!(means.last().unwrap() < means.first().unwrap(), "{means:?}");
}

#[test]
fn unanimous_support_predicts_its_class() {
    let m = trained();
    let prior = TaskPrior::default();
    let (mut hits, mut cases) = (0, 0);
    for s in 0..100u64 {
        let t = prior.sample_task(5_000 + s);
        let f = t.n_features;
        let c = (s % 3) as usize;
        let ys = vec![c; t.n_support()];
        let probs = m.predict(&t.support_x, &ys, f, &t.support_x[..f]).unwrap();
        hits += usize::from(argmax(&probs[0]) == c);
        cases += 1;
    }
    assert!(hits as f64 >= 0.95 * cases as f64, "{hits}/{cases}");
}

#[test]
fn capacity_and_checksum_contracts() {
    let m = trained();
    let before = m.params().checksum();
    let big = TaskPrior::linear_noise_free(256, 4).sample_task(1);
    let f = big.n_features;
    let mut xs = big.support_x.clone();
    xs.extend_from_slice(&big.support_x[..f]);
    let mut ys = big.support_y.clone();
    ys.push(big.support_y[0]);
    let err = m.predict(&xs, &ys, f, &big.query_x).unwrap_err();
    assert!(matches!(err, Error::Capacity(_)), "{err}");
    let err = m.predict(&[0.0; 18], &[0, 1], 9, &[0.0; 9]).unwrap_err();
    assert!(matches!(err, Error::Capacity(_)), "{err}");
    m.predict(&big.support_x, &big.support_y, f, &big.query_x).unwrap();
    assert_eq!(m.params().checksum(), before);
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    let m = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pfn.json");
    m.checkpoint().unwrap().save(&path).unwrap();
    let back = PfnModel::from_checkpoint(&tabsae::models::Checkpoint::load(&path).unwrap()).unwrap();
    let t = TaskPrior::default().sample_task(3);
    let a = m.predict(&t.support_x, &t.support_y, t.n_features, &t.query_x).unwrap();
    let b = back.predict(&t.support_x, &t.support_y, t.n_features, &t.query_x).unwrap();
    assert_eq!(a, b);
    assert_eq!(back.meta, m.meta);
}
