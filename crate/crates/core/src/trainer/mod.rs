//! Training loop: class weighting, mini-batch Adam, validation-based model
//! selection with early stopping, and checkpoints.

mod adam;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState, Frozen, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};

use crate::bag::{Label, TractBag};
use crate::error::{Error, Result};
use crate::fusion::fit_income_stats;
use crate::geodata::{Partition, SplitPlan};
use crate::linalg::sigmoid;
use crate::metrics::{evaluate, DEFAULT_THRESHOLD};
use crate::mil::{self, DropoutMask, LossConfig};
use crate::model::{GatedAttentionModel, GradientSet};

/// Positive-class loss weight: `auto` derives N0/N1 from the training
/// partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PosWeight {
    Auto,
    Fixed(f64),
}

impl FromStr for PosWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(PosWeight::Auto);
        }
        match s.parse::<f64>() {
            Ok(w) if w.is_finite() && w > 0.0 => Ok(PosWeight::Fixed(w)),
            _ => Err(Error::Config(format!(
                "pos_weight must be `auto` or a positive number, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for PosWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PosWeight::Auto => f.write_str("auto"),
            PosWeight::Fixed(w) => write!(f, "{w}"),
        }
    }
}

impl From<PosWeight> for String {
    fn from(w: PosWeight) -> String {
        w.to_string()
    }
}

impl TryFrom<String> for PosWeight {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub pos_weight: PosWeight,
    /// Attention hidden dimension L.
    pub l_dim: usize,
    /// Late-fuse the normalized tract income into the classifier.
    pub fusion: bool,
    /// Hold `V` and `U` at zero: plain mean pooling.
    pub freeze_attention: bool,
    /// Hold the income weight at its initial 0.
    pub freeze_income_weight: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            dropout_rate: 0.9,
            batch_size: 64,
            label_smoothing: 0.1,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            pos_weight: PosWeight::Auto,
            l_dim: 128,
            fusion: false,
            freeze_attention: false,
            freeze_income_weight: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("dropout_rate", self.dropout_rate),
            ("label_smoothing", self.label_smoothing),
        ];
        for (name, r) in rates {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {r}")));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.l_dim == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and l_dim must be ≥ 1".into(),
            ));
        }
        self.loss_config(1.0).validate()
    }

    pub fn loss_config(&self, pos_weight: f64) -> LossConfig {
        LossConfig {
            pos_weight,
            label_smoothing: self.label_smoothing,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            frozen: Frozen {
                attention: self.freeze_attention,
                income_weight: self.freeze_income_weight,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode (dropout on) forward passes of the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best_val_macro_f1(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.val_macro_f1).reduce(f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GatedAttentionModel,
    pub history: TrainHistory,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub pos_weight: f64,
}

/// `N0 / N1` over the given (training) bags.
pub fn compute_pos_weight<'a, I>(bags: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a TractBag>,
{
    let (mut n0, mut n1) = (0usize, 0usize);
    for bag in bags {
        match bag.require_label()? {
            Label::Secure => n0 += 1,
            Label::Insecure => n1 += 1,
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateClass(format!(
            "training partition has {n0} secure and {n1} insecure tracts"
        )));
    }
    Ok(n0 as f64 / n1 as f64)
}

/// Mean loss and mean gradient over a batch. Per-bag work may run in
/// parallel; the reduction is in batch order.
pub fn batch_gradient(
    model: &GatedAttentionModel,
    batch: &[(&TractBag, Option<DropoutMask>)],
    loss_cfg: &LossConfig,
) -> Result<(f64, GradientSet, Vec<f64>)> {
    let results: Vec<mil::Backward> = batch
        .par_iter()
        .map(|(bag, mask)| {
            let label = bag.require_label()?;
            mil::backward(bag, label, model, loss_cfg, mask.as_ref()).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFinite(format!(
                    "loss diverged on tract {}",
                    bag.tract_id
                )),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let mut total = GradientSet::zeros_like(model);
    let mut loss = 0.0;
    for r in &results {
        total.accumulate(&r.grads);
        loss += r.loss;
    }
    let n = results.len() as f64;
    total.scale(1.0 / n);
    let logits = results.iter().map(|r| r.logit).collect();
    Ok((loss / n, total, logits))
}

/// Trains on the plan's training partition and returns the parameters from
/// the epoch with the best validation macro-F1 (earliest on ties).
pub fn train(bags: &[TractBag], split: &SplitPlan, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    split.check_disjoint()?;
    let train_bags = split.select(bags, Partition::Train)?;
    let val_bags = split.select(bags, Partition::Validation)?;
    if train_bags.is_empty() || val_bags.is_empty() {
        return Err(Error::DegenerateClass(format!(
            "split has {} training and {} validation tracts",
            train_bags.len(),
            val_bags.len()
        )));
    }
    for bag in train_bags.iter().chain(&val_bags) {
        bag.validate()?;
        bag.require_label()?;
    }
    let m = train_bags[0].dim();
    let auto_weight = compute_pos_weight(train_bags.iter().copied())?;
    let pos_weight = match cfg.pos_weight {
        PosWeight::Auto => auto_weight,
        PosWeight::Fixed(w) => w,
    };
    let loss_cfg = cfg.loss_config(pos_weight);
    loss_cfg.validate()?;
    let adam_cfg = cfg.adam();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Income-covariate dropout draws from its own stream so that enabling
    // fusion leaves every other draw (init, shuffles, masks) unchanged.
    let mut covariate_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    covariate_rng.set_stream(1);
    let mut model = GatedAttentionModel::init(m, cfg.l_dim, &mut rng);
    if cfg.freeze_attention {
        model.v.as_mut_slice().fill(0.0);
        model.u.as_mut_slice().fill(0.0);
    }
    if cfg.fusion {
        model = model.with_fusion(fit_income_stats(train_bags.iter().copied())?);
    }
    let mut state = AdamState::new(&model);
    info!(
        "training on {} tracts (validation {}), M={m}, L={}, pos_weight={pos_weight:.4}",
        train_bags.len(),
        val_bags.len(),
        cfg.l_dim
    );

    let mut order: Vec<usize> = (0..train_bags.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, GatedAttentionModel)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            // Masks come from the sequential stream so results do not depend
            // on how the batch is scheduled across threads.
            let batch: Vec<(&TractBag, Option<DropoutMask>)> = chunk
                .iter()
                .map(|&i| {
                    let bag = train_bags[i];
                    let mask = (cfg.dropout_rate > 0.0).then(|| {
                        let mask = DropoutMask::sample(bag.len(), m, cfg.dropout_rate, &mut rng);
                        if cfg.fusion {
                            mask.with_covariate(covariate_rng.random::<f64>() >= cfg.dropout_rate)
                        } else {
                            mask
                        }
                    });
                    (bag, mask)
                })
                .collect();
            let (batch_loss, grads, logits) = batch_gradient(&model, &batch, &loss_cfg)?;
            loss_sum += batch_loss * chunk.len() as f64;
            correct += batch
                .iter()
                .zip(&logits)
                .filter(|((bag, _), &z)| {
                    Label::from(sigmoid(z) >= DEFAULT_THRESHOLD) == bag.label.expect("validated")
                })
                .count();
            adam_step(&mut model, &grads, &mut state, &adam_cfg)?;
        }
        let val = evaluate(&model, &val_bags, DEFAULT_THRESHOLD)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_bags.len() as f64,
            train_accuracy: correct as f64 / train_bags.len() as f64,
            val_accuracy: val.accuracy,
            val_macro_f1: val.f1_average,
        };
        debug!("{record:?}");
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(f1, _, _)| val.f1_average > *f1) {
            best = Some((val.f1_average, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (f1, best_epoch, model) = best.expect("at least one epoch");
    info!("selected epoch {best_epoch} (validation macro-F1 {f1:.4})");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        pos_weight,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

/// Trains once per `(learning_rate, dropout_rate)` candidate and scores each
/// on the fixed validation partition. Results keep candidate order.
pub fn hyperparameter_search(
    bags: &[TractBag],
    split: &SplitPlan,
    base: &TrainConfig,
    candidates: &[(f64, f64)],
) -> Result<Vec<SearchResult>> {
    candidates
        .iter()
        .map(|&(learning_rate, dropout_rate)| {
            let cfg = TrainConfig {
                learning_rate,
                dropout_rate,
                ..base.clone()
            };
            let outcome = train(bags, split, &cfg)?;
            let best = outcome.history.epochs[outcome.best_epoch - 1];
            Ok(SearchResult {
                learning_rate,
                dropout_rate,
                best_epoch: outcome.best_epoch,
                val_accuracy: best.val_accuracy,
                val_macro_f1: best.val_macro_f1,
            })
        })
        .collect()
}
