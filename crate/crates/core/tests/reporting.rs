mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tractmil::geodata::{load_boundaries, TractBoundary};
use tractmil::metrics::{
    dump_attention, emit_prediction_map, evaluate, predict, EvalReport, DEFAULT_THRESHOLD,
};
use tractmil::{mil, GatedAttentionModel, Label, TractBag};

fn fixture(seed: u64, n: usize) -> (GatedAttentionModel, Vec<TractBag>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(&mut rng, 6, 4);
    let bags = (0..n)
        .map(|i| {
            let mut bag = random_bag(&mut rng, &format!("{i:011}"), 1 + i % 7, 6);
            bag.label = Some(Label::from(i % 3 == 0));
            bag
        })
        .collect();
    (model, bags)
}

fn square(id: &str, x: f64) -> TractBoundary {
    TractBoundary::polygon(
        id,
        vec![vec![[x, 0.0], [x + 1.0, 0.0], [x + 1.0, 1.0], [x, 1.0], [x, 0.0]]],
    )
}

#[test]
fn confusion_counts_equal_a_recount_of_predictions() {
    let (model, bags) = fixture(1, 200);
    let refs: Vec<&TractBag> = bags.iter().collect();
    let report = evaluate(&model, &refs, DEFAULT_THRESHOLD).unwrap();
    let preds = predict(&model, &refs, DEFAULT_THRESHOLD).unwrap();
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for p in &preds {
        let truth = p.label.unwrap() == Label::Insecure;
        let flagged = p.p_insecure >= 0.5;
        match (truth, flagged) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    assert_eq!((report.tp, report.fp, report.fn_, report.tn), (tp, fp, fn_, tn));
    assert_eq!(report.total(), bags.len() as u64);
}

#[test]
fn unlabeled_bags_cannot_be_evaluated() {
    let (model, mut bags) = fixture(2, 4);
    bags[2].label = None;
    let refs: Vec<&TractBag> = bags.iter().collect();
    assert!(evaluate(&model, &refs, DEFAULT_THRESHOLD).is_err());
}

#[test]
fn attention_dump_matches_forward_exactly() {
    let (model, bags) = fixture(3, 40);
    let refs: Vec<&TractBag> = bags.iter().collect();
    let records = dump_attention(&model, &refs, None).unwrap();
    assert_eq!(records.len(), bags.iter().map(TractBag::len).sum::<usize>());
    for bag in &bags {
        let out = mil::forward(bag, &model, None).unwrap();
        let rows: Vec<_> = records.iter().filter(|r| r.tract_id == bag.tract_id).collect();
        let total: f64 = rows.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for (rank, r) in rows.iter().enumerate() {
            assert_eq!(r.rank, rank + 1);
            let k = bag.instances.iter().position(|i| i.image_id == r.image_id).unwrap();
            assert_eq!(r.weight.to_bits(), out.attention[k].to_bits());
        }
        assert!(rows.windows(2).all(|w| w[0].weight >= w[1].weight));
    }
}

#[test]
fn prediction_map_has_one_feature_per_mapped_tract() {
    let (model, bags) = fixture(4, 3);
    let refs: Vec<&TractBag> = bags.iter().collect();
    let boundaries = vec![square(&bags[0].tract_id, 0.0), square(&bags[1].tract_id, 2.0)];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.geojson");
    let summary = emit_prediction_map(&model, &refs, &boundaries, DEFAULT_THRESHOLD, &path).unwrap();
    assert_eq!((summary.features, summary.skipped), (2, 1));

    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["type"], "FeatureCollection");
    let features = doc["features"].as_array().unwrap();
    assert_eq!(features.len(), 2);
    let preds = predict(&model, &refs, DEFAULT_THRESHOLD).unwrap();
    for (feature, pred) in features.iter().zip(&preds) {
        assert_eq!(feature["type"], "Feature");
        assert_eq!(feature["properties"]["geoid"], pred.tract_id.as_str());
        let p = feature["properties"]["p_insecure"].as_f64().unwrap();
        assert!((p - pred.p_insecure).abs() < 1e-6);
    }
    // the written geometry reads back as the same boundaries
    let back = load_boundaries(&path, "geoid").unwrap();
    assert_eq!(back, boundaries);
}

fn label(b: bool) -> Label {
    Label::from(b)
}

proptest! {
    #[test]
    fn relabeling_swaps_per_class_f1(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..60)) {
        let original = EvalReport::from_predictions(pairs.iter().map(|&(t, p)| (label(t), label(p))));
        let swapped = EvalReport::from_predictions(pairs.iter().map(|&(t, p)| (label(!t), label(!p))));
        prop_assert_eq!(original.f1_insecure.to_bits(), swapped.f1_secure.to_bits());
        prop_assert_eq!(original.f1_secure.to_bits(), swapped.f1_insecure.to_bits());
        prop_assert_eq!(original.accuracy.to_bits(), swapped.accuracy.to_bits());
    }

    #[test]
    fn raising_the_threshold_never_adds_positives(seed in 0u64..500, lo in 0.0f64..1.0, step in 0.0f64..1.0) {
        let hi = (lo + step).min(1.0);
        let (model, bags) = fixture(seed, 12);
        let refs: Vec<&TractBag> = bags.iter().collect();
        let a = evaluate(&model, &refs, lo).unwrap();
        let b = evaluate(&model, &refs, hi).unwrap();
        prop_assert!(b.tp <= a.tp);
        prop_assert!(b.tn >= a.tn);
    }

    #[test]
    fn metrics_stay_in_the_unit_interval(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let r = EvalReport::from_counts(tp, fp, fn_, tn);
        for x in [r.f1_insecure, r.f1_secure, r.f1_average] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if r.total() > 0 {
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
        }
    }
}
