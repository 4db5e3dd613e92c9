//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tractmil::metrics::dump_attention;
use tractmil::trainer::TrainConfig;
use tractmil::{
    mil, DropoutMask, GatedAttentionModel, GradientSet, IncomeStats, InstanceEmbedding, Label,
    LossConfig, TractBag,
};

pub fn random_bag(rng: &mut ChaCha8Rng, id: &str, k: usize, m: usize) -> TractBag {
    let instances = (0..k)
        .map(|i| InstanceEmbedding {
            image_id: format!("{id}-{i}"),
            lat: 30.0 + rng.random::<f64>(),
            lon: -97.0 + rng.random::<f64>(),
            city: "Testville".into(),
            features: (0..m).map(|_| rng.random_range(-1.5..1.5)).collect(),
        })
        .collect();
    TractBag::new(id, instances, Some(Label::Insecure), None, "Testville").unwrap()
}

/// Random model with weights large enough that the tanh and sigmoid gates
/// operate away from their linear regimes.
pub fn random_model(rng: &mut ChaCha8Rng, m: usize, l: usize) -> GatedAttentionModel {
    let mut model = GatedAttentionModel::zeros(m, l);
    for x in model.v.as_mut_slice().iter_mut().chain(model.u.as_mut_slice()) {
        *x = rng.random_range(-1.0..1.0);
    }
    for x in model.w_attn.iter_mut().chain(&mut model.w_clf) {
        *x = rng.random_range(-1.0..1.0);
    }
    model.b = rng.random_range(-0.5..0.5);
    model
}

/// Mutable references to every scalar parameter, in a fixed order.
pub fn params_mut(model: &mut GatedAttentionModel) -> Vec<&mut f64> {
    let mut out: Vec<&mut f64> = Vec::new();
    out.extend(model.v.as_mut_slice().iter_mut());
    out.extend(model.u.as_mut_slice().iter_mut());
    out.extend(model.w_attn.iter_mut());
    out.extend(model.w_clf.iter_mut());
    out.push(&mut model.b);
    if let Some(block) = model.fusion.as_mut() {
        out.push(&mut block.w_inc);
    }
    out
}

pub fn flat_grads(g: &GradientSet) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(g.dv.as_slice());
    out.extend_from_slice(g.du.as_slice());
    out.extend_from_slice(&g.dw_attn);
    out.extend_from_slice(&g.dw_clf);
    out.push(g.db);
    out.extend(g.dw_inc);
    out
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of loss∘forward for every parameter.
pub fn finite_difference_grads(
    bag: &TractBag,
    label: Label,
    model: &GatedAttentionModel,
    cfg: &LossConfig,
    mask: Option<&DropoutMask>,
) -> Vec<f64> {
    let eval = |m: &GatedAttentionModel| {
        let out = mil::forward(bag, m, mask).unwrap();
        mil::loss(out.logit, label, cfg)
    };
    let n = params_mut(&mut model.clone()).len();
    (0..n)
        .map(|i| {
            let mut plus = model.clone();
            *params_mut(&mut plus)[i] += FD_STEP;
            let mut minus = model.clone();
            *params_mut(&mut minus)[i] -= FD_STEP;
            (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Relative error with a floor on the denominator, so entries that are zero
/// up to rounding are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub const REL_FLOOR: f64 = 1e-4;

/// Binary cross-entropy written directly from its definition.
pub fn textbook_bce(logit: f64, y: f64) -> f64 {
    let p = 1.0 / (1.0 + (-logit).exp());
    // 1 − σ(z) written as σ(−z) to avoid cancellation for large z
    let q = 1.0 / (1.0 + logit.exp());
    -(y * p.ln() + (1.0 - y) * q.ln())
}

/// Worst relative error between analytic and numeric gradients for one
/// random configuration (K ≤ 8, M ≤ 16, L ≤ 8).
pub fn gradient_check_error(seed: u64, dropout: bool, fusion: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=8);
    let m = rng.random_range(2..=16);
    let l = rng.random_range(2..=8);
    let mut bag = random_bag(&mut rng, "t", k, m);
    let mut model = random_model(&mut rng, m, l);
    if fusion {
        model = model.with_fusion(IncomeStats { mean: 50_000.0, std: 12_000.0 });
        model.fusion.as_mut().unwrap().w_inc = rng.random_range(-1.0..1.0);
        bag.income = Some(rng.random_range(20_000.0..90_000.0));
    }
    let cfg = LossConfig {
        pos_weight: if rng.random::<bool>() { 1.0 } else { 2.57 },
        label_smoothing: if rng.random::<bool>() { 0.0 } else { 0.1 },
        dropout_rate: if dropout { 0.3 } else { 0.0 },
    };
    let mask = dropout.then(|| {
        DropoutMask::sample(k, m, cfg.dropout_rate, &mut rng).with_covariate(rng.random())
    });
    let label = if rng.random::<bool>() { Label::Insecure } else { Label::Secure };

    let analytic = mil::backward(&bag, label, &model, &cfg, mask.as_ref()).unwrap();
    let numeric = finite_difference_grads(&bag, label, &model, &cfg, mask.as_ref());
    let analytic = flat_grads(&analytic.grads);
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Even-odd crossing count, written independently of the library: a
/// horizontal ray to +x crosses edge (a, b) when the edge straddles the ray's
/// y and the intersection lies right of the point.
pub fn brute_force_inside(rings: &[Vec<[f64; 2]>], x: f64, y: f64) -> bool {
    let mut crossings = 0usize;
    for ring in rings {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            let straddles = (a[1] <= y && y < b[1]) || (b[1] <= y && y < a[1]);
            if straddles {
                let t = (y - a[1]) / (b[1] - a[1]);
                if x < a[0] + t * (b[0] - a[0]) {
                    crossings += 1;
                }
            }
        }
    }
    crossings % 2 == 1
}

/// First polygon (in input order) containing the point, by exhaustive scan.
pub fn brute_force_assign(polygons: &[Vec<Vec<[f64; 2]>>], x: f64, y: f64) -> Option<usize> {
    polygons.iter().position(|rings| brute_force_inside(rings, x, y))
}

/// Convex polygon: vertices on a circle at sorted random angles, closed.
pub fn random_convex_ring(rng: &mut ChaCha8Rng, extent: f64) -> Vec<[f64; 2]> {
    let cx = rng.random_range(0.0..extent);
    let cy = rng.random_range(0.0..extent);
    let r = rng.random_range(0.2..extent / 6.0);
    let n = rng.random_range(3..=10);
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    let mut ring: Vec<[f64; 2]> = angles
        .iter()
        .map(|t| [cx + r * t.cos(), cy + r * t.sin()])
        .collect();
    ring.push(ring[0]);
    ring
}

/// Training settings used for the planted-witness benchmark.
pub fn benchmark_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 16,
        l_dim: 8,
        dropout_rate: 0.5,
        patience: 20,
        ..TrainConfig::default()
    }
}

/// Fraction of positive bags whose top-attended instance is a planted witness.
pub fn witness_rank1_rate(
    model: &GatedAttentionModel,
    bags: &[&TractBag],
    witnesses: &BTreeSet<String>,
) -> f64 {
    let positives: Vec<&TractBag> = bags
        .iter()
        .copied()
        .filter(|b| b.label == Some(Label::Insecure))
        .collect();
    let top = dump_attention(model, &positives, Some(1)).unwrap();
    assert_eq!(top.len(), positives.len());
    let hits = top.iter().filter(|r| witnesses.contains(&r.image_id)).count();
    hits as f64 / positives.len() as f64
}
