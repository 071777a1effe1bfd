use deepsta::node2vec::{DistrictEmbedding, WalkConfig};
use deepsta::rng;
use deepsta::scenario::{generate, generate_with_truth, prepare, Panel, ScenarioConfig, Split};
use deepsta::training::{metrics, run_method, train, ExperimentConfig, TrainingData};
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn micro_data() -> &'static TrainingData {
    static DATA: OnceLock<TrainingData> = OnceLock::new();
    DATA.get_or_init(|| {
        let panel = generate(&ScenarioConfig::micro()).unwrap();
        TrainingData::build(&panel, &WalkConfig::default()).unwrap()
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn default_splits_are_chronological_eighty_ten_ten() {
    let p = generate(&ScenarioConfig::default()).unwrap();
    let s = p.splits;
    assert_eq!(s.calibration_end, 30);
    assert_eq!((s.train().len(), s.val().len(), s.test().len()), (136, 17, 17));
    assert_eq!((s.train().end, s.val().end), (s.val().start, s.test().start));
    assert_eq!(s.test().end, 200);
}

/// Scrambles every non-training row: labels, raw features, anomaly factors.
fn perturb_after_training(panel: &Panel, seed: u64) -> Panel {
    let mut p = panel.clone();
    let mut r = rng::stream(seed, &[]);
    let train_end = p.splits.train_end;
    for row in p.rows.iter_mut().filter(|row| row.day >= train_end) {
        row.y = r.random_range(0.02..0.98);
        for a in row.a.iter_mut() {
            *a = r.random_range(0.0..500.0);
        }
        // Numeric columns only; categorical levels stay valid.
        row.c[0] = r.random_range(0.0..300.0);
    }
    p
}

#[test]
fn normalization_ignores_validation_and_test_rows() {
    let panel = generate(&ScenarioConfig::default()).unwrap();
    let (ds, stats) = prepare(&panel).unwrap();
    let (ds2, stats2) = prepare(&perturb_after_training(&panel, 3)).unwrap();
    assert_eq!(stats, stats2);
    for d in 0..panel.splits.train_end {
        for i in 0..ds.n_couriers {
            assert_eq!(ds.c(i, d), ds2.c(i, d));
            assert_eq!(ds.a(i, d), ds2.a(i, d));
            assert_eq!(ds.y(i, d), ds2.y(i, d));
        }
    }
    assert_eq!(stats.fit_days, (panel.splits.calibration_end, panel.splits.train_end));
}

#[test]
fn outbreak_depresses_test_period() {
    let (mut gap, seeds) = (0.0, 4);
    for seed in 0..seeds {
        let p = generate(&ScenarioConfig {
            seed,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let by = |r: std::ops::Range<usize>| mean(p.rows.iter().filter(|x| r.contains(&x.day)).map(|x| x.y));
        gap += by(p.splits.train()) - by(p.splits.test());
    }
    let gap = gap / seeds as f64;
    assert!(gap >= 0.05, "mean train-test gap {gap}");
}

#[test]
fn nearby_districts_lock_down_together() {
    let (mut near, mut far) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let cfg = ScenarioConfig {
            seed,
            ..ScenarioConfig::default()
        };
        let (_, t) = generate_with_truth(&cfg).unwrap();
        let m = cfg.n_districts;
        for u in 0..m {
            for v in (u + 1)..m {
                let (mut inter, mut union) = (0, 0);
                for day in &t.locked {
                    inter += (day[u] && day[v]) as usize;
                    union += (day[u] || day[v]) as usize;
                }
                let j = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
                if t.district_distance[u][v] <= cfg.cluster_radius {
                    near.push(j);
                } else {
                    far.push(j);
                }
            }
        }
    }
    let (n, f) = (mean(near.into_iter()), mean(far.into_iter()));
    assert!(n > f, "near {n} far {f}");
}

#[test]
fn training_batches_precede_validation() {
    let data = micro_data();
    let val_start = data.dataset.splits.val().start;
    let train = data.samples(Split::Train, 7);
    assert!(!train.is_empty());
    assert!(train.iter().all(|&(_, d)| d >= 7 && d < val_start));
    assert!(data.samples(Split::Val, 7).iter().all(|&(_, d)| (val_start..data.dataset.splits.test().start).contains(&d)));
}

fn short_run(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        epochs: 4,
        lr: 1e-3,
        max_batches: 4,
        seed,
        ..ExperimentConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = micro_data();
    let a = train(&short_run(5), data).unwrap();
    let b = train(&short_run(5), data).unwrap();
    assert_eq!(a.report.loss_curve, b.report.loss_curve);
    assert_eq!(a.report.val_curve, b.report.val_curve);
    assert_eq!(a.model, b.model);
    let c = train(&short_run(6), data).unwrap();
    assert_ne!(a.report.loss_curve, c.report.loss_curve);
}

#[test]
fn retained_checkpoint_is_the_validation_argmin() {
    let data = micro_data();
    let t = train(&short_run(2), data).unwrap();
    let r = &t.report;
    assert_eq!(r.val_curve.len(), 4);
    assert!(r.val.mae <= *r.val_curve.last().unwrap());
    let min = r.val_curve.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.val.mae, min);
    assert_eq!(r.val_curve[r.best_epoch - 1], min);
}

#[test]
fn reported_metrics_match_brute_force_from_predictions() {
    let data = micro_data();
    let t = train(&short_run(1), data).unwrap();
    let inputs = data.inputs(&t.model.cfg).unwrap();
    for (split, m) in [(Split::Train, t.report.train), (Split::Val, t.report.val), (Split::Test, t.report.test)] {
        let s = data.samples(split, 7);
        let preds = t.model.predict(&inputs, &s).unwrap();
        let (mut ae, mut se) = (0.0, 0.0);
        for (&(i, d), p) in s.iter().zip(&preds) {
            let r = data.dataset.y(i, d) - p;
            ae += r.abs();
            se += r * r;
        }
        assert_eq!(m.mae, ae / s.len() as f64);
        assert_eq!(m.mse, se / s.len() as f64);
        assert_eq!(m.n, s.len());
    }
}

#[test]
fn baselines_run_on_every_split() {
    let data = micro_data();
    for tag in ["baseline:ma", "baseline:persistence", "baseline:lr"] {
        let r = run_method(&ExperimentConfig { variant: tag.into(), ..ExperimentConfig::default() }, data).unwrap();
        for m in [r.train, r.val, r.test] {
            assert!(m.mae.is_finite() && m.mae >= 0.0 && m.mae * m.mae <= m.mse + 1e-15, "{tag}");
        }
    }
}

#[test]
fn zero_road_embedding_is_accepted() {
    let panel = generate(&ScenarioConfig::micro()).unwrap();
    let data = TrainingData::with_embedding(&panel, DistrictEmbedding::zeros(3, 128)).unwrap();
    let r = run_method(&short_run(0), &data).unwrap();
    assert!(r.test.mae.is_finite());
}

proptest! {
    #[test]
    fn squared_mae_never_exceeds_mse(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..200)) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = metrics(&y, &p).unwrap();
        prop_assert!(m.mae >= 0.0 && m.mse >= 0.0);
        prop_assert!(m.mae * m.mae <= m.mse * (1.0 + 1e-12) + 1e-300);
    }
}
