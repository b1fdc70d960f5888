mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use triage_core::features::{FeatureConfig, FeatureExtractor};
use triage_core::harness::{training_design, EvaluationPlan};
use triage_core::models::logistic::loss_and_grad;
use triage_core::models::tree::{best_exact_split, Columns, Tree, TreeParams};
use triage_core::models::{dummy_score, fit_design, Design, Family, Hyperparameters, ModelSpec};
use triage_core::rng::rng_from;
use triage_core::Day;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn logistic_instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
    (1usize..5, 2usize..12).prop_flat_map(|(p, n)| {
        (
            Just(p),
            prop::collection::vec(-3.0..3.0f64, n * p),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f64), n),
            prop::collection::vec(-2.0..2.0f64, p),
            -2.0..2.0f64,
            0.0..1.0f64,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn logistic_gradient_matches_central_differences((p, x, y, w, b, l2) in logistic_instance()) {
        let (_, grad, grad_b) = loss_and_grad(&x, &y, &w, b, l2);
        let eps = 1e-5;
        for j in 0..p {
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[j] += eps;
            lo[j] -= eps;
            let fd = (loss_and_grad(&x, &y, &hi, b, l2).0 - loss_and_grad(&x, &y, &lo, b, l2).0) / (2.0 * eps);
            prop_assert!(rel_err(grad[j], fd) < 1e-5 || (grad[j] - fd).abs() < 1e-9, "w[{}]: {} vs {}", j, grad[j], fd);
        }
        let fd_b = (loss_and_grad(&x, &y, &w, b + eps, l2).0 - loss_and_grad(&x, &y, &w, b - eps, l2).0) / (2.0 * eps);
        prop_assert!(rel_err(grad_b, fd_b) < 1e-5 || (grad_b - fd_b).abs() < 1e-9);
    }
}

/// Gini impurity weighted by child size, computed from scratch.
fn child_impurity(members: &[bool]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let n = members.len() as f64;
    let p = members.iter().filter(|b| **b).count() as f64 / n;
    n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
}

/// Minimum impurity over every threshold that separates two observed values.
fn exhaustive_best(col: &[f64], labels: &[bool], min_leaf: usize) -> Option<f64> {
    let mut values: Vec<f64> = col.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut best: Option<f64> = None;
    for v in &values[..values.len().saturating_sub(1)] {
        let left: Vec<bool> = col.iter().zip(labels).filter(|(x, _)| *x <= v).map(|(_, y)| *y).collect();
        let right: Vec<bool> = col.iter().zip(labels).filter(|(x, _)| *x > v).map(|(_, y)| *y).collect();
        if left.len() < min_leaf.max(1) || right.len() < min_leaf.max(1) {
            continue;
        }
        let imp = child_impurity(&left) + child_impurity(&right);
        if best.is_none_or(|b| imp < b) {
            best = Some(imp);
        }
    }
    best
}

fn small_dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>, usize)> {
    (2usize..=12, 1usize..4).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(prop::collection::vec((0u8..5).prop_map(f64::from), n), p),
            prop::collection::vec(any::<bool>(), n),
            1usize..4,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]
    #[test]
    fn cart_split_matches_exhaustive_search((cols, labels, min_leaf) in small_dataset()) {
        let data = Columns { cols: &cols, labels: &labels };
        let samples: Vec<u32> = (0..labels.len() as u32).collect();
        let mut overall: Option<f64> = None;
        for (f, col) in cols.iter().enumerate() {
            let got = best_exact_split(&data, &samples, f, min_leaf);
            let want = exhaustive_best(col, &labels, min_leaf);
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => {
                    prop_assert!((g.impurity - w).abs() < 1e-9, "feature {}: {} vs {}", f, g.impurity, w);
                    let left: Vec<bool> = col.iter().zip(&labels).filter(|(x, _)| **x <= g.threshold).map(|(_, y)| *y).collect();
                    let right: Vec<bool> = col.iter().zip(&labels).filter(|(x, _)| **x > g.threshold).map(|(_, y)| *y).collect();
                    prop_assert!((child_impurity(&left) + child_impurity(&right) - w).abs() < 1e-9);
                }
                (g, w) => prop_assert!(false, "feature {}: {:?} vs {:?}", f, g, w),
            }
            if let Some(w) = exhaustive_best(col, &labels, min_leaf) {
                overall = Some(overall.map_or(w, |o: f64| o.min(w)));
            }
        }
        let params = TreeParams { max_depth: Some(1), min_samples_leaf: min_leaf, max_features: usize::MAX, random_thresholds: false };
        let (_, imp) = Tree::grow(&data, samples, &params, &mut rng_from(0));
        let parent = child_impurity(&labels);
        let gain: f64 = imp.iter().sum();
        let n = labels.len();
        let pos = labels.iter().filter(|b| **b).count();
        let splittable = pos != 0 && pos != n && n >= 2 * min_leaf;
        let want = match overall {
            Some(o) if splittable && parent - o > 1e-12 => parent - o,
            _ => 0.0,
        };
        prop_assert!((gain - want).abs() < 1e-9, "root gain {} vs {}", gain, want);
    }
}

fn planted_design(n: usize, seed: u64) -> Design {
    let mut rng = rng_from(seed);
    let mut rows = Vec::with_capacity(n * 4);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        use rand::Rng;
        let x: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
        labels.push(x[0] + 0.3 * rng.gen::<f64>() > 0.65);
        rows.extend(x);
    }
    Design::new(rows, 4, labels)
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("x{i}")).collect()
}

#[test]
fn forests_are_identical_across_runs_and_thread_counts() {
    let design = planted_design(600, 3);
    for family in [Family::RandomForest, Family::ExtraTrees] {
        let spec = ModelSpec::new(family, Hyperparameters { n_trees: 24, max_depth: Some(6), ..Default::default() }, 11);
        let reference = serde_json::to_string(&fit_design(&spec, &design, names(4), Day(0)).unwrap()).unwrap();
        let again = serde_json::to_string(&fit_design(&spec, &design, names(4), Day(0)).unwrap()).unwrap();
        assert_eq!(reference, again);
        #[cfg(feature = "parallel")]
        for threads in [1, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let model = pool.install(|| fit_design(&spec, &design, names(4), Day(0)).unwrap());
            assert_eq!(serde_json::to_string(&model).unwrap(), reference, "{family} with {threads} threads");
        }
    }
}

#[test]
fn different_seeds_give_different_forests() {
    let design = planted_design(300, 4);
    let h = Hyperparameters { n_trees: 10, ..Default::default() };
    let a = fit_design(&ModelSpec::new(Family::RandomForest, h.clone(), 1), &design, names(4), Day(0)).unwrap();
    let b = fit_design(&ModelSpec::new(Family::RandomForest, h, 2), &design, names(4), Day(0)).unwrap();
    assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn scores_are_probabilities_and_importance_finds_signal() {
    let design = planted_design(800, 5);
    for family in [Family::DecisionTree, Family::RandomForest, Family::ExtraTrees, Family::ScaledLogistic] {
        let spec = ModelSpec::new(family, Hyperparameters { n_trees: 30, ..Default::default() }, 9);
        let model = fit_design(&spec, &design, names(4), Day(0)).unwrap();
        let scores = model.score_rows(&planted_design(200, 6).rows);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)), "{family}");
        let imp = model.importance_map();
        assert!((imp.values().sum::<f64>() - 1.0).abs() < 1e-9, "{family}");
        let top = imp.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(top, "x0", "{family}");
    }
}

#[test]
fn forest_beats_dummy_accuracy_on_synthetic_examples() {
    let store = common::synth_store(6000, 21, 1.5);
    let first = store.first_date().unwrap();
    let plan = EvaluationPlan { train_start: first, max_train_examples: 2000, seed: 5, ..Default::default() };
    let refit = store.extraction_date();
    let ext = FeatureExtractor::new(&store, refit, FeatureConfig::default());
    let design = training_design(&store, &ext, &plan, refit).unwrap();
    assert_eq!(design.n, 2000);
    let mut order: Vec<usize> = (0..design.n).collect();
    order.shuffle(&mut rng_from(8));
    let (train, test) = order.split_at(1400);
    let take = |idx: &[usize]| {
        let rows = idx.iter().flat_map(|&i| design.rows[i * design.p..(i + 1) * design.p].to_vec()).collect();
        Design::new(rows, design.p, idx.iter().map(|&i| design.labels[i]).collect())
    };
    let (tr, te) = (take(train), take(test));
    let spec = ModelSpec::new(Family::RandomForest, Hyperparameters { max_depth: Some(10), ..Default::default() }, 3);
    let model = fit_design(&spec, &tr, ext.schema().names().to_vec(), refit).unwrap();
    let scores = model.score_rows(&te.rows);
    let acc = |pred: &mut dyn Iterator<Item = bool>| {
        pred.zip(&te.labels).filter(|(p, y)| p == *y).count() as f64 / te.n as f64
    };
    let rf = acc(&mut scores.iter().map(|s| *s >= 0.5));
    let dummy = acc(&mut (0..te.n).map(|i| dummy_score(3, &format!("row{i}"), refit) >= 0.5));
    assert!(rf - dummy >= 0.15, "forest accuracy {rf:.3} vs dummy {dummy:.3}");
}
