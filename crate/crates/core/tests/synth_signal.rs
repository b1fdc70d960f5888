mod common;

use triage_core::features::{assemble_with, FeatureConfig, FeatureExtractor};
use triage_core::harness::{precision_at_k, training_design, EvaluationPlan, RankedEntry, RankedList};
use triage_core::labels::label;
use triage_core::models::{dummy_score, fit_design, Design, Family, Hyperparameters, ModelSpec};
use triage_core::synth::{generate, plant_prescription_tail, SynthConfig};
use triage_core::{Day, Unit};

const COUNT_90D: &str = "events.all.count_90d";

#[test]
fn depth_two_tree_on_recent_activity_beats_dummy() {
    let store = common::synth_store(6000, 17, 3.0);
    let first = store.first_date().unwrap();
    let end = store.extraction_date();
    let refit = end.minus(183 + 8 * 7);
    let plan = EvaluationPlan { train_start: first, max_train_examples: 0, ..Default::default() };
    let ext = FeatureExtractor::new(&store, refit, FeatureConfig::default());
    let col = ext.schema().position(COUNT_90D).unwrap();
    let full = training_design(&store, &ext, &plan, refit).unwrap();
    let single = Design::new(full.cols[col].clone(), 1, full.labels.clone());
    let spec = ModelSpec::new(
        Family::DecisionTree,
        Hyperparameters { max_depth: Some(2), min_samples_leaf: 1, ..Default::default() },
        0,
    );
    let tree = fit_design(&spec, &single, vec![COUNT_90D.into()], refit).unwrap();
    let k = 100;
    for w in 0..8 {
        let t = refit.plus(7 * w);
        let vectors = assemble_with(&ext, Unit::Mat, t);
        let entry = |v: &triage_core::features::FeatureVector, score: f64| {
            let idx = store.case_index(&v.case_id).unwrap();
            RankedEntry {
                case_id: v.case_id.clone(),
                score,
                opened_at: store.case(idx).opened_at,
                label: label(&store, idx, t, 183),
            }
        };
        let tree_list = RankedList::new(
            t,
            "tree",
            vectors.iter().map(|v| entry(v, tree.score_rows(&[v.values[col]])[0])).collect(),
        );
        let dummy_list =
            RankedList::new(t, "dummy", vectors.iter().map(|v| entry(v, dummy_score(1, &v.case_id, t))).collect());
        let p_tree = precision_at_k(&tree_list, k).unwrap().value;
        let p_dummy = precision_at_k(&dummy_list, k).unwrap().value;
        assert!(p_tree > p_dummy, "week {w}: tree {p_tree:.3} vs dummy {p_dummy:.3}");
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Pooled (count_90d, label) pairs over open MAT cases on a 28-day grid.
fn activity_label_pairs(activity_effect: f64) -> (Vec<f64>, Vec<f64>) {
    let cfg = SynthConfig { n_cases: 10_000, seed: 29, activity_effect, category_effect: 0.0, ..SynthConfig::default() };
    let store = generate(&cfg).unwrap();
    let first = store.first_date().unwrap();
    let last = store.extraction_date().minus(183);
    let ext = FeatureExtractor::new(&store, last, FeatureConfig::default());
    let col = ext.schema().position(COUNT_90D).unwrap();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut t = first.plus(90);
    while t <= last {
        for v in assemble_with(&ext, Unit::Mat, t) {
            let idx = store.case_index(&v.case_id).unwrap();
            xs.push(v.values[col]);
            ys.push(label(&store, idx, t, 183).unwrap() as u8 as f64);
        }
        t = t.plus(28);
    }
    (xs, ys)
}

#[test]
fn no_activity_signal_means_no_correlation() {
    let (xs, ys) = activity_label_pairs(0.0);
    let r = pearson(&xs, &ys);
    assert!(r.abs() < 0.05, "r = {r:.4} over {} pairs", xs.len());
}

#[test]
fn planted_activity_signal_shows_up_as_correlation() {
    let (xs, ys) = activity_label_pairs(1.5);
    assert!(pearson(&xs, &ys) > 0.1);
}

#[test]
fn backlog_grows_at_the_net_arrival_rate() {
    let cfg = SynthConfig {
        n_cases: 0,
        date_span: (Day::from_ymd(2021, 1, 1), Day::from_ymd(2021, 12, 31)),
        ..SynthConfig::default()
    };
    let store = generate(&cfg).unwrap();
    let open = store.open_any_indices(store.extraction_date()).len() as f64;
    let expected = (1831.0 - 746.0 - 217.0) * 12.0;
    assert!((open - expected).abs() <= 0.1 * expected, "open backlog {open} vs {expected}");
    assert!(store.rejects().is_empty());
}

#[test]
fn planted_tail_ages_exactly_the_fraction() {
    let store = common::synth_store(3000, 4, 1.5);
    let end = store.extraction_date();
    let open = store.open_any_indices(end);
    let planted = plant_prescription_tail(&store, 0.3, 4000, 9).unwrap();
    let aged = open
        .iter()
        .filter(|&&i| end.days_since(planted.case(i).opened_at) >= 4000)
        .count();
    let before = open.iter().filter(|&&i| end.days_since(store.case(i).opened_at) >= 4000).count();
    assert_eq!(before, 0);
    assert_eq!(aged, (0.3 * open.len() as f64).round() as usize);
    assert_eq!(planted.open_any_indices(end), open);
}
