//! Gated-attention pooling, the tract classifier, the weighted loss and its
//! analytic gradients.

use rand::Rng;

use crate::bag::{Label, TractBag};
use crate::error::{Error, Result};
use crate::fusion;
use crate::linalg::{dot, sigmoid, softplus, Matrix};
use crate::model::{GatedAttentionModel, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Multiplier on the positive (food-insecure) term.
    pub pos_weight: f64,
    /// Symmetric label smoothing ε; targets become `y(1−ε) + ε/2`.
    pub label_smoothing: f64,
    pub dropout_rate: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            pos_weight: 1.0,
            label_smoothing: 0.0,
            dropout_rate: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_weight.is_finite() && self.pos_weight > 0.0) {
            return Err(Error::Config(format!(
                "pos_weight must be positive, got {}",
                self.pos_weight
            )));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must lie in [0, 0.5), got {}",
                self.label_smoothing
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn smoothed_target(&self, label: Label) -> f64 {
        label.as_f64() * (1.0 - self.label_smoothing) + self.label_smoothing / 2.0
    }
}

/// Inverted-dropout keep flags over a bag's `K×M` embedding entries, plus
/// one flag for the fused income covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    covariate: bool,
    rate: f64,
}

impl DropoutMask {
    pub fn new(keep: Vec<bool>, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            keep,
            covariate: true,
            rate,
        })
    }

    pub fn sample<R: Rng + ?Sized>(k: usize, m: usize, rate: f64, rng: &mut R) -> Self {
        let keep = (0..k * m).map(|_| rng.random::<f64>() >= rate).collect();
        Self {
            keep,
            covariate: true,
            rate,
        }
    }

    /// Sets the income covariate's keep flag (kept by default).
    pub fn with_covariate(mut self, keep: bool) -> Self {
        self.covariate = keep;
        self
    }

    /// Multiplier applied to the income z-score: 0 when dropped, otherwise
    /// the inverted-dropout scale.
    pub fn covariate_scale(&self) -> f64 {
        if self.covariate {
            1.0 / (1.0 - self.rate)
        } else {
            0.0
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logit: f64,
    pub attention: Vec<f64>,
    pub pooled: Vec<f64>,
}

/// The bag's `K×M` instance matrix, with dropout applied when a mask is given.
pub fn instance_matrix(bag: &TractBag, mask: Option<&DropoutMask>) -> Result<Matrix> {
    let h = Matrix::from_rows(
        &bag.instances
            .iter()
            .map(|i| i.features.as_slice())
            .collect::<Vec<_>>(),
    )?;
    match mask {
        None => Ok(h),
        Some(mask) => apply_dropout(h, mask),
    }
}

fn apply_dropout(mut h: Matrix, mask: &DropoutMask) -> Result<Matrix> {
    if mask.keep.len() != h.rows() * h.cols() {
        return Err(Error::Shape(format!(
            "dropout mask has {} flags for a {}x{} bag",
            mask.keep.len(),
            h.rows(),
            h.cols()
        )));
    }
    let scale = 1.0 / (1.0 - mask.rate);
    for (x, &keep) in h.as_mut_slice().iter_mut().zip(&mask.keep) {
        *x = if keep { *x * scale } else { 0.0 };
    }
    Ok(h)
}

/// Per-instance gate activations, kept for the backward pass.
struct Gates {
    tanh: Matrix,
    sig: Matrix,
    scores: Vec<f64>,
}

fn gates(h: &Matrix, model: &GatedAttentionModel) -> Result<Gates> {
    if h.rows() == 0 {
        return Err(Error::Shape("attention over an empty bag".into()));
    }
    if h.cols() != model.m() {
        return Err(Error::Shape(format!(
            "bag has {} features per instance, model expects {}",
            h.cols(),
            model.m()
        )));
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("instance embeddings".into()));
    }
    let (k, l) = (h.rows(), model.l());
    let mut tanh = Matrix::zeros(k, l);
    let mut sig = Matrix::zeros(k, l);
    let mut scores = Vec::with_capacity(k);
    for i in 0..k {
        let hi = h.row(i);
        let t = tanh.row_mut(i);
        for (j, tj) in t.iter_mut().enumerate() {
            *tj = dot(model.v.row(j), hi).tanh();
        }
        let g = sig.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = sigmoid(dot(model.u.row(j), hi));
        }
        let s: f64 = model
            .w_attn
            .iter()
            .zip(tanh.row(i).iter().zip(sig.row(i)))
            .map(|(w, (t, g))| w * t * g)
            .sum();
        scores.push(s);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("attention scores".into()));
    }
    Ok(Gates { tanh, sig, scores })
}

/// Max-shifted softmax. The normalizer is summed in sorted order so that
/// permuting the inputs permutes the outputs bit for bit.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let mut sorted = exps.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention weight of every instance in `h` (one row per instance).
pub fn attention_scores(h: &Matrix, model: &GatedAttentionModel) -> Result<Vec<f64>> {
    Ok(softmax(&gates(h, model)?.scores))
}

/// Attention-weighted average of the rows of `h`.
pub fn pool_bag(h: &Matrix, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != h.rows() {
        return Err(Error::Shape(format!(
            "{} attention weights for {} instances",
            a.len(),
            h.rows()
        )));
    }
    let total: f64 = a.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Shape(format!("attention weights sum to {total}, not 1")));
    }
    let mut pooled = vec![0.0; h.cols()];
    for (k, &ak) in a.iter().enumerate() {
        for (p, x) in pooled.iter_mut().zip(h.row(k)) {
            *p += ak * x;
        }
    }
    Ok(pooled)
}

/// Image-only tract logit `w_clfᵀ n + b`.
pub fn predict_logit(pooled: &[f64], model: &GatedAttentionModel) -> Result<f64> {
    if pooled.len() != model.m() {
        return Err(Error::Shape(format!(
            "pooled vector has length {}, model expects {}",
            pooled.len(),
            model.m()
        )));
    }
    if pooled.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("pooled vector".into()));
    }
    Ok(dot(&model.w_clf, pooled) + model.b)
}

/// The income term's input: the z-score, dropped or rescaled under a mask.
fn covariate(income: Option<f64>, model: &GatedAttentionModel, mask: Option<&DropoutMask>) -> Option<f64> {
    let block = model.fusion?;
    let z = block.stats.z_score(income);
    Some(mask.map_or(z, |m| z * m.covariate_scale()))
}

fn tract_logit(pooled: &[f64], z: Option<f64>, model: &GatedAttentionModel) -> Result<f64> {
    match z {
        Some(z) => fusion::fused_logit_from_z(pooled, z, model),
        None => predict_logit(pooled, model),
    }
}

/// Attention, pooling and classification of one bag. Pass a mask only in
/// training; inference leaves embeddings untouched.
pub fn forward(
    bag: &TractBag,
    model: &GatedAttentionModel,
    mask: Option<&DropoutMask>,
) -> Result<ForwardOutput> {
    let h = instance_matrix(bag, mask)?;
    let attention = attention_scores(&h, model)?;
    let pooled = pool_bag(&h, &attention)?;
    let logit = tract_logit(&pooled, covariate(bag.income, model, mask), model)?;
    Ok(ForwardOutput {
        logit,
        attention,
        pooled,
    })
}

/// Weighted, label-smoothed binary cross-entropy on a logit.
pub fn loss(logit: f64, label: Label, cfg: &LossConfig) -> f64 {
    let y = cfg.smoothed_target(label);
    // −log σ(z) = softplus(−z), −log(1 − σ(z)) = softplus(z)
    cfg.pos_weight * y * softplus(-logit) + (1.0 - y) * softplus(logit)
}

/// Derivative of [`loss`] with respect to the logit.
pub fn loss_grad(logit: f64, label: Label, cfg: &LossConfig) -> f64 {
    let y = cfg.smoothed_target(label);
    let p = sigmoid(logit);
    cfg.pos_weight * y * (p - 1.0) + (1.0 - y) * p
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub logit: f64,
    pub grads: GradientSet,
}

/// Loss of one bag and its exact gradient with respect to every parameter.
/// Weight decay is left to the optimizer.
pub fn backward(
    bag: &TractBag,
    label: Label,
    model: &GatedAttentionModel,
    cfg: &LossConfig,
    mask: Option<&DropoutMask>,
) -> Result<Backward> {
    let h = instance_matrix(bag, mask)?;
    let gates = gates(&h, model)?;
    let a = softmax(&gates.scores);
    let pooled = pool_bag(&h, &a)?;
    let z = covariate(bag.income, model, mask);
    let logit = tract_logit(&pooled, z, model)?;
    let value = loss(logit, label, cfg);
    let delta = loss_grad(logit, label, cfg);

    let mut grads = GradientSet::zeros_like(model);
    grads.db = delta;
    for (g, p) in grads.dw_clf.iter_mut().zip(&pooled) {
        *g = delta * p;
    }
    grads.dw_inc = z.map(|z| delta * z);

    // ∂L/∂a_k = δ · w_clfᵀ h_k; then through the softmax.
    let da: Vec<f64> = (0..h.rows())
        .map(|k| delta * dot(&model.w_clf, h.row(k)))
        .collect();
    let mean_da: f64 = a.iter().zip(&da).map(|(ak, dak)| ak * dak).sum();
    let l = model.l();
    let mut dpre_v = vec![0.0; l];
    let mut dpre_u = vec![0.0; l];
    for k in 0..h.rows() {
        let ds = a[k] * (da[k] - mean_da);
        if ds == 0.0 {
            continue;
        }
        let (t, g) = (gates.tanh.row(k), gates.sig.row(k));
        for j in 0..l {
            grads.dw_attn[j] += ds * t[j] * g[j];
            let de = ds * model.w_attn[j];
            dpre_v[j] = de * g[j] * (1.0 - t[j] * t[j]);
            dpre_u[j] = de * t[j] * g[j] * (1.0 - g[j]);
        }
        grads.dv.add_outer(1.0, &dpre_v, h.row(k));
        grads.du.add_outer(1.0, &dpre_u, h.row(k));
    }

    if !value.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!("loss or gradient for tract {}", bag.tract_id)));
    }
    Ok(Backward {
        loss: value,
        logit,
        grads,
    })
}
