//! Confusion-matrix metrics, attention dumps and prediction maps.

mod map;

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{Label, TractBag};
use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::mil;
use crate::model::GatedAttentionModel;

pub use map::{emit_prediction_map, prediction_map, MapSummary};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `TP / (TP + ½(FP + FN))`, or 0 when the denominator vanishes.
pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = tp as f64 + 0.5 * (fp + fn_) as f64;
    if denom == 0.0 {
        0.0
    } else {
        tp as f64 / denom
    }
}

/// Class 1 (food insecure) is the positive class for `tp`/`fp`/`fn_`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub f1_insecure: f64,
    pub f1_secure: f64,
    /// Unweighted mean of the two per-class scores.
    pub f1_average: f64,
}

impl EvalReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let n = tp + fp + fn_ + tn;
        let accuracy = if n == 0 {
            0.0
        } else {
            (tp + tn) as f64 / n as f64
        };
        let f1_insecure = f1_score(tp, fp, fn_);
        // With class 0 as positive, TN plays TP and FN/FP swap roles.
        let f1_secure = f1_score(tn, fn_, fp);
        Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy,
            f1_insecure,
            f1_secure,
            f1_average: (f1_insecure + f1_secure) / 2.0,
        }
    }

    pub fn from_predictions<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (Label, Label)>,
    {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (truth, predicted) in pairs {
            match (truth, predicted) {
                (Label::Insecure, Label::Insecure) => tp += 1,
                (Label::Secure, Label::Insecure) => fp += 1,
                (Label::Insecure, Label::Secure) => fn_ += 1,
                (Label::Secure, Label::Secure) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tracts       {}", self.total())?;
        writeln!(
            f,
            "confusion    tp={} fp={} fn={} tn={}",
            self.tp, self.fp, self.fn_, self.tn
        )?;
        writeln!(f, "accuracy     {:.4}", self.accuracy)?;
        writeln!(f, "f1 insecure  {:.4}", self.f1_insecure)?;
        writeln!(f, "f1 secure    {:.4}", self.f1_secure)?;
        write!(f, "f1 average   {:.4}", self.f1_average)
    }
}

/// Inference-mode prediction for one tract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tract_id: String,
    pub logit: f64,
    pub p_insecure: f64,
    pub predicted: Label,
    pub label: Option<Label>,
    pub attention: Vec<f64>,
}

/// Forward pass over every bag (no dropout), in input order.
pub fn predict(
    model: &GatedAttentionModel,
    bags: &[&TractBag],
    threshold: f64,
) -> Result<Vec<Prediction>> {
    bags.par_iter()
        .map(|bag| {
            let out = mil::forward(bag, model, None)?;
            let p = sigmoid(out.logit);
            Ok(Prediction {
                tract_id: bag.tract_id.clone(),
                logit: out.logit,
                p_insecure: p,
                predicted: Label::from(p >= threshold),
                label: bag.label,
                attention: out.attention,
            })
        })
        .collect()
}

/// Accuracy and per-class F1 of thresholded predictions. Every bag must be
/// labeled.
pub fn evaluate(
    model: &GatedAttentionModel,
    bags: &[&TractBag],
    threshold: f64,
) -> Result<EvalReport> {
    for bag in bags {
        bag.require_label()?;
    }
    let preds = predict(model, bags, threshold)?;
    Ok(EvalReport::from_predictions(preds.iter().map(|p| {
        (p.label.expect("checked above"), p.predicted)
    })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub tract_id: String,
    pub image_id: String,
    pub weight: f64,
    /// 1 = highest weight in the tract; ties keep input order.
    pub rank: usize,
}

/// Attention weights per tract, sorted descending, optionally truncated to
/// the `top_k` highest per tract.
pub fn dump_attention(
    model: &GatedAttentionModel,
    bags: &[&TractBag],
    top_k: Option<usize>,
) -> Result<Vec<AttentionRecord>> {
    let preds = predict(model, bags, DEFAULT_THRESHOLD)?;
    let mut out = Vec::new();
    for (bag, pred) in bags.iter().zip(preds) {
        let mut order: Vec<usize> = (0..bag.len()).collect();
        order.sort_by(|&a, &b| pred.attention[b].total_cmp(&pred.attention[a]));
        let keep = top_k.unwrap_or(order.len()).min(order.len());
        out.extend(order[..keep].iter().enumerate().map(|(r, &k)| AttentionRecord {
            tract_id: bag.tract_id.clone(),
            image_id: bag.instances[k].image_id.clone(),
            weight: pred.attention[k],
            rank: r + 1,
        }));
    }
    Ok(out)
}

/// Writes attention records as CSV with columns
/// `tract_id,image_id,weight,rank`.
pub fn write_attention(path: &Path, records: &[AttentionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    })?;
    for rec in records {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
