mod common;

use std::collections::HashSet;

use common::rng;
use ddstn::data::{generate_synthetic, make_fold_plan, GenConfig};
use ddstn::eval::{cross_validate, mean_sd, metrics, roc_auc, RunSpec};
use ddstn::train::{Algorithm, TrainConfig};
use ddstn::Error;
use proptest::prelude::*;
use rand::Rng;

fn pairs_oracle(scores: &[f64], labels: &[i8]) -> f64 {
    let (mut wins, mut total) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li > 0 && lj < 0 {
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

fn random_case(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<i8>) {
    loop {
        let n = r.random_range(2..60);
        // coarse grid so ties are common
        let levels = r.random_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 * 0.25 - 1.0).collect();
        let labels: Vec<i8> = (0..n).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
        if labels.contains(&1) && labels.contains(&-1) {
            return (scores, labels);
        }
    }
}

#[test]
fn auc_matches_all_pairs_ranking() {
    let mut r = rng(31);
    let mut tied = 0;
    for _ in 0..200 {
        let (scores, labels) = random_case(&mut r);
        let unique: HashSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if unique.len() < scores.len() {
            tied += 1;
        }
        let roc = roc_auc(&scores, &labels).unwrap();
        assert!((roc.auc - pairs_oracle(&scores, &labels)).abs() <= 1e-12);
    }
    assert!(tied >= 100);
}

#[test]
fn roc_shape_invariants() {
    let mut r = rng(32);
    for _ in 0..100 {
        let (scores, labels) = random_case(&mut r);
        let roc = roc_auc(&scores, &labels).unwrap();
        let (first, last) = (roc.points[0], *roc.points.last().unwrap());
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold < w[0].threshold);
        }
    }
}

#[test]
fn auc_invariant_under_monotone_transform() {
    let mut r = rng(33);
    for _ in 0..100 {
        let (scores, labels) = random_case(&mut r);
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 0.5).collect();
        assert_eq!(a, roc_auc(&mapped, &labels).unwrap().auc);
    }
}

#[test]
fn youden_identity_on_random_outcomes() {
    let mut r = rng(34);
    let mut done = 0;
    while done < 1000 {
        let n = r.random_range(2..40);
        let truth: Vec<i8> = (0..n).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
        if !(truth.contains(&1) && truth.contains(&-1)) {
            continue;
        }
        let pred: Vec<i8> = (0..n).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
        let m = metrics(&pred, &truth).unwrap();
        assert_eq!(m.yi, m.sen + m.spe - 1.0);
        for v in [m.acc, m.sen, m.spe] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!((-1.0..=1.0).contains(&m.yi));
        done += 1;
    }
}

#[test]
fn youden_table_values() {
    // 8645 of 10000 positives and 8731 of 10000 negatives recovered
    let mut truth = vec![1i8; 10_000];
    truth.extend(vec![-1i8; 10_000]);
    let pred: Vec<i8> = (0..20_000)
        .map(|i| match i {
            0..8645 => 1,
            8645..10_000 => -1,
            10_000..18_731 => -1,
            _ => 1,
        })
        .collect();
    let m = metrics(&pred, &truth).unwrap();
    assert_eq!((m.sen, m.spe), (0.8645, 0.8731));
    assert!((m.yi - 0.7376).abs() < 1e-12);
    assert_eq!(format!("{:.2}", 100.0 * m.yi), "73.76");
}

#[test]
fn metric_errors() {
    assert!(matches!(metrics(&[1, -1], &[1, 1]), Err(Error::Metric(_))));
    assert!(matches!(metrics(&[1], &[1, -1]), Err(Error::Contract(_))));
    assert!(matches!(roc_auc(&[0.2, f64::NAN], &[1, -1]), Err(Error::Metric(_))));
}

#[test]
fn cross_validation_cardinality_and_hygiene() {
    let ds = generate_synthetic(&GenConfig {
        n_paired: 20,
        n_unpaired: 31,
        seed: 2,
        ..GenConfig::default()
    })
    .unwrap();
    let plan = make_fold_plan(&ds, 3, 2).unwrap();
    for algorithm in [Algorithm::Ddstn, Algorithm::CnnSvm] {
        let run = RunSpec {
            algorithm,
            config: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            specs: None,
        };
        let report = cross_validate(&ds, &plan, &run).unwrap();
        assert_eq!(report.folds.len(), 3);
        let accs: Vec<f64> = report.folds.iter().map(|f| f.metrics.acc).collect();
        assert_eq!(report.aggregate.acc, mean_sd(&accs));
        assert!((report.aggregate.acc.mean - accs.iter().sum::<f64>() / 3.0).abs() < 1e-15);

        let paired: HashSet<usize> = ds.paired_ids().into_iter().collect();
        let mut tested = HashSet::new();
        for f in &report.folds {
            let train: HashSet<usize> = f.train_ids.iter().copied().collect();
            assert!(paired.is_subset(&train));
            for id in &f.test_ids {
                assert!(!paired.contains(id) && !train.contains(id));
                assert!(tested.insert(*id));
            }
            assert_eq!(f.test_ids.len(), f.test_scores.len());
            assert_eq!(f.metrics.yi, f.metrics.sen + f.metrics.spe - 1.0);
        }
        assert_eq!(tested, ds.unpaired_ids().into_iter().collect::<HashSet<_>>());
        let pooled: usize = report.folds.iter().map(|f| f.test_ids.len()).sum();
        assert_eq!(pooled, 31);
    }
}

#[test]
fn training_failures_name_algorithm_and_fold() {
    let ds = generate_synthetic(&GenConfig {
        n_paired: 10,
        n_unpaired: 12,
        separation_t: 2.0,
        ..GenConfig::default()
    })
    .unwrap();
    let plan = make_fold_plan(&ds, 3, 0).unwrap();
    let run = RunSpec {
        algorithm: Algorithm::Ddstn,
        config: TrainConfig {
            epochs: 2,
            optimizer: ddstn::optim::OptimizerKind::Sgd { lr: 1e300 },
            ..TrainConfig::default()
        },
        specs: None,
    };
    match cross_validate(&ds, &plan, &run) {
        Err(e @ Error::Training { .. }) => {
            assert_eq!(e.exit_code(), 1);
            let msg = e.to_string();
            assert!(msg.contains("ddstn") && msg.contains("fold 0"), "{msg}");
        }
        other => panic!("expected training failure, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn perfect_separation_gives_auc_one(
        pos in prop::collection::vec(1.0f64..5.0, 1..20),
        neg in prop::collection::vec(-5.0f64..0.99, 1..20),
    ) {
        let scores: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        let labels: Vec<i8> = pos.iter().map(|_| 1).chain(neg.iter().map(|_| -1)).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap().auc, 1.0);
    }

    #[test]
    fn sample_sd_matches_definition(values in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        let s = mean_sd(&values);
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((s.mean - m).abs() < 1e-12 && (s.sd - var.sqrt()).abs() < 1e-12);
    }
}
