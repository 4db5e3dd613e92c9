//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! default harness so the report reads top to bottom; exits non-zero if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tractmil::fusion::fit_income_stats;
use tractmil::geodata::{
    assign_points, holdout_city_split, stratified_split, Partition, SplitPlan, TractBoundary,
};
use tractmil::metrics::{evaluate, DEFAULT_THRESHOLD};
use tractmil::synth::{generate, SynthConfig};
use tractmil::trainer::{train, TrainConfig};
use tractmil::{mil, GatedAttentionModel, InstanceEmbedding, Label, LossConfig, TractBag};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let configs = 120;
    let mut worst: f64 = 0.0;
    for seed in 0..configs {
        // a third of the configurations run with a dropout mask, a third with
        // the income weight
        let err = gradient_check_error(10_000 + seed, seed % 3 == 1, seed % 3 == 2);
        ensure(err < 1e-5, || format!("seed {}: relative error {err:.3e}", 10_000 + seed))?;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{configs} configs, worst relative error {worst:.2e}, {elapsed:.2?}"))
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let k = rng.random_range(1..=20);
        let m = rng.random_range(2..=16);
        let l = rng.random_range(2..=8);
        let bag = random_bag(&mut rng, "p", k, m);
        let model = random_model(&mut rng, m, l);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = bag.clone();
        shuffled.instances = perm.iter().map(|&j| bag.instances[j].clone()).collect();

        let a = mil::forward(&bag, &model, None).map_err(|e| e.to_string())?;
        let b = mil::forward(&shuffled, &model, None).map_err(|e| e.to_string())?;
        let diff = (a.logit - b.logit).abs();
        ensure(diff <= 1e-12, || format!("bag {i}: logits differ by {diff:e}"))?;
        for (pos, &j) in perm.iter().enumerate() {
            ensure(b.attention[pos] == a.attention[j], || {
                format!("bag {i}: attention not permuted at {pos}")
            })?;
        }
        worst = worst.max(diff);
    }
    Ok(format!("1000 bags, max logit difference {worst:.1e}, attention permuted exactly"))
}

fn mean_pool_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let k = rng.random_range(1..=30);
        let m = rng.random_range(1..=32);
        let bag = random_bag(&mut rng, "d", k, m);
        let mut model = random_model(&mut rng, m, 4);
        model.v.as_mut_slice().fill(0.0);
        model.u.as_mut_slice().fill(0.0);
        let out = mil::forward(&bag, &model, None).map_err(|e| e.to_string())?;
        for j in 0..m {
            let mean = bag.instances.iter().map(|x| x.features[j]).sum::<f64>() / k as f64;
            worst = worst.max((out.pooled[j] - mean).abs());
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("500 bags, max deviation from the mean {worst:.1e}"))
}

fn loss_oracle() -> Outcome {
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for i in 0..=1200 {
        let z = -30.0 + i as f64 * 0.05;
        for label in [Label::Secure, Label::Insecure] {
            let d = (mil::loss(z, label, &cfg) - textbook_bce(z, label.as_f64())).abs();
            ensure(d < 1e-10, || format!("z = {z}: difference {d:e}"))?;
            worst = worst.max(d);
            n += 1;
        }
    }
    Ok(format!("{n} points on [-30, 30], max difference {worst:.1e}"))
}

fn benchmark_split(bags: &[TractBag]) -> SplitPlan {
    stratified_split(bags, (0.6, 0.2, 0.2), 0).unwrap()
}

fn synthetic_benchmark() -> Outcome {
    let start = Instant::now();
    let ds = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let split = benchmark_split(&ds.bags);
    let test = split.select(&ds.bags, Partition::Test).map_err(|e| e.to_string())?;

    let attention = train(&ds.bags, &split, &benchmark_config()).map_err(|e| e.to_string())?;
    let report = evaluate(&attention.model, &test, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let ablation_cfg = TrainConfig {
        freeze_attention: true,
        ..benchmark_config()
    };
    let mean_pool = train(&ds.bags, &split, &ablation_cfg).map_err(|e| e.to_string())?;
    let ablation = evaluate(&mean_pool.model, &test, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let witness = witness_rank1_rate(&attention.model, &test, &ds.witnesses);
    let elapsed = start.elapsed();

    let summary = format!(
        "accuracy {:.3}, macro-F1 {:.3}, mean-pool accuracy {:.3}, witness rank-1 {:.1}%, {elapsed:.2?}",
        report.accuracy,
        report.f1_average,
        ablation.accuracy,
        100.0 * witness
    );
    ensure(report.accuracy >= 0.90, || format!("accuracy below 0.90: {summary}"))?;
    ensure(report.f1_average >= 0.85, || format!("macro-F1 below 0.85: {summary}"))?;
    ensure(report.accuracy - ablation.accuracy >= 0.05, || {
        format!("ablation gap below 0.05: {summary}")
    })?;
    ensure(witness >= 0.90, || format!("witness rate below 90%: {summary}"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn spatial_join_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let polygons: Vec<Vec<Vec<[f64; 2]>>> = (0..50)
        .map(|_| vec![random_convex_ring(&mut rng, 10.0)])
        .collect();
    let points: Vec<(f64, f64)> = (0..1000)
        .map(|_| (rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0)))
        .collect();
    let boundaries: Vec<TractBoundary> = polygons
        .iter()
        .enumerate()
        .map(|(i, rings)| TractBoundary::polygon(format!("{i:011}"), rings.clone()))
        .collect();
    let got = assign_points(&points, &boundaries).map_err(|e| e.to_string())?;
    let mut matched = 0;
    for (i, &(x, y)) in points.iter().enumerate() {
        let want = brute_force_assign(&polygons, x, y).map(|p| format!("{p:011}"));
        ensure(got.tracts[i] == want, || {
            format!("point {i} ({x}, {y}): {:?} vs {want:?}", got.tracts[i])
        })?;
        matched += want.is_some() as usize;
    }
    Ok(format!(
        "1000 points x 50 polygons, {matched} inside, {} overlapping, all equal",
        got.ambiguous
    ))
}

/// A bag whose single instance drives the logit to ±1 under `unit_model`.
fn scripted_bag(id: usize, truth: bool, flagged: bool) -> TractBag {
    TractBag {
        tract_id: format!("{id:011}"),
        instances: vec![InstanceEmbedding {
            image_id: format!("m{id}"),
            lat: 0.0,
            lon: 0.0,
            city: "c".into(),
            features: vec![if flagged { 1.0 } else { -1.0 }],
        }],
        label: Some(Label::from(truth)),
        income: None,
        city: "c".into(),
    }
}

fn metrics_oracle() -> Outcome {
    let mut model = GatedAttentionModel::zeros(1, 1);
    model.w_clf[0] = 1.0;
    let mut checked = 0;
    for tp in 0..=5u64 {
        for fp in 0..=5u64 {
            for fn_ in 0..=5u64 {
                for tn in 0..=5u64 {
                    let n = tp + fp + fn_ + tn;
                    if n == 0 {
                        continue;
                    }
                    let mut bags = Vec::new();
                    for (count, truth, flagged) in
                        [(tp, true, true), (fp, false, true), (fn_, true, false), (tn, false, false)]
                    {
                        for _ in 0..count {
                            bags.push(scripted_bag(bags.len(), truth, flagged));
                        }
                    }
                    let refs: Vec<&TractBag> = bags.iter().collect();
                    let r = evaluate(&model, &refs, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;

                    let f1 = |t: u64, p: u64, q: u64| {
                        let d = t as f64 + 0.5 * (p as f64 + q as f64);
                        if d == 0.0 { 0.0 } else { t as f64 / d }
                    };
                    let want_ins = f1(tp, fp, fn_);
                    let want_sec = f1(tn, fn_, fp);
                    let want_acc = (tp + tn) as f64 / n as f64;
                    let ok = (r.tp, r.fp, r.fn_, r.tn) == (tp, fp, fn_, tn)
                        && r.f1_insecure == want_ins
                        && r.f1_secure == want_sec
                        && r.accuracy == want_acc
                        && r.f1_average == (want_ins + want_sec) / 2.0;
                    ensure(ok, || format!("tp={tp} fp={fp} fn={fn_} tn={tn}: {r:?}"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} non-empty confusion matrices equal exactly"))
}

fn split_properties() -> Outcome {
    let ds = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let plan = stratified_split(&ds.bags, (0.6, 0.2, 0.2), 11).map_err(|e| e.to_string())?;
    let again = stratified_split(&ds.bags, (0.6, 0.2, 0.2), 11).map_err(|e| e.to_string())?;
    ensure(plan == again, || "same seed gave different plans".into())?;
    let other = stratified_split(&ds.bags, (0.6, 0.2, 0.2), 12).map_err(|e| e.to_string())?;
    ensure(plan != other, || "different seeds gave the same plan".into())?;

    let positive = |id: &String| {
        ds.bags.iter().find(|b| &b.tract_id == id).unwrap().label == Some(Label::Insecure)
    };
    let mut all: Vec<&String> = Vec::new();
    let global = ds.bags.iter().filter(|b| b.label == Some(Label::Insecure)).count() as f64
        / ds.bags.len() as f64;
    let mut shares = Vec::new();
    for part in [Partition::Train, Partition::Validation, Partition::Test] {
        let ids = plan.ids(part);
        let share = ids.iter().filter(|id| positive(id)).count() as f64 / ids.len() as f64;
        ensure((share - global).abs() <= 1.0 / ids.len() as f64, || {
            format!("{part:?}: share {share:.4} vs {global:.4} over {} tracts", ids.len())
        })?;
        shares.push(format!("{share:.3}"));
        all.extend(ids);
    }
    let n = all.len();
    all.sort();
    all.dedup();
    ensure(n == all.len(), || "partitions overlap".into())?;
    ensure(n == ds.bags.len(), || format!("{n} of {} tracts assigned", ds.bags.len()))?;

    let holdout = holdout_city_split(&ds.bags, "Austin", 0.1, 3).map_err(|e| e.to_string())?;
    let mut want: Vec<&str> = ds
        .bags
        .iter()
        .filter(|b| b.city == "Austin")
        .map(|b| b.tract_id.as_str())
        .collect();
    let mut got: Vec<&str> = holdout.test.iter().map(String::as_str).collect();
    want.sort();
    got.sort();
    ensure(got == want, || "holdout test set is not exactly the Austin tracts".into())?;
    ensure(
        holdout_city_split(&ds.bags, "Atlantis", 0.1, 3).is_err(),
        || "unknown city accepted".into(),
    )?;
    Ok(format!(
        "stratified shares {} (global {global:.3}), disjoint and exhaustive; Austin holdout = {} tracts",
        shares.join("/"),
        got.len()
    ))
}

fn bitwise(model: &GatedAttentionModel) -> Vec<u64> {
    model
        .v
        .as_slice()
        .iter()
        .chain(model.u.as_slice())
        .chain(&model.w_attn)
        .chain(&model.w_clf)
        .chain(std::iter::once(&model.b))
        .map(|x| x.to_bits())
        .collect()
}

fn fusion_ablation() -> Outcome {
    let ds = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let split = benchmark_split(&ds.bags);
    let base = benchmark_config();

    let image_only = train(&ds.bags, &split, &base).map_err(|e| e.to_string())?;
    let frozen_cfg = TrainConfig {
        fusion: true,
        freeze_income_weight: true,
        ..base.clone()
    };
    let frozen = train(&ds.bags, &split, &frozen_cfg).map_err(|e| e.to_string())?;
    ensure(bitwise(&image_only.model) == bitwise(&frozen.model), || {
        "frozen-income run diverged from the image-only parameters".into()
    })?;
    ensure(
        format!("{:?}", image_only.history) == format!("{:?}", frozen.history),
        || "frozen-income history differs".into(),
    )?;

    let train_bags = split.select(&ds.bags, Partition::Train).map_err(|e| e.to_string())?;
    let stats = fit_income_stats(train_bags.iter().copied()).map_err(|e| e.to_string())?;
    let z: Vec<f64> = train_bags.iter().map(|b| stats.z_score(b.income)).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / z.len() as f64;
    ensure(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9, || {
        format!("z-score mean {mean:e}, variance {var}")
    })?;

    let fused_cfg = TrainConfig {
        fusion: true,
        ..base
    };
    let fused = train(&ds.bags, &split, &fused_cfg).map_err(|e| e.to_string())?;
    let f_img = image_only.history.best_val_macro_f1().unwrap();
    let f_fused = fused.history.best_val_macro_f1().unwrap();
    ensure(f_fused >= f_img - 0.01, || {
        format!("fused validation macro-F1 {f_fused:.3} vs image-only {f_img:.3}")
    })?;
    Ok(format!(
        "frozen run bitwise identical; z mean {mean:.1e}, var-1 {:.1e}; val macro-F1 fused {f_fused:.3} vs image-only {f_img:.3}",
        var - 1.0
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient oracle", gradient_oracle),
        ("permutation invariance", permutation_invariance),
        ("mean-pool degeneracy", mean_pool_degeneracy),
        ("loss oracle", loss_oracle),
        ("synthetic benchmark", synthetic_benchmark),
        ("spatial-join oracle", spatial_join_oracle),
        ("metrics oracle", metrics_oracle),
        ("split properties", split_properties),
        ("fusion ablation", fusion_ablation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
