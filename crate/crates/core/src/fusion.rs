//! Late fusion of the pooled image representation with a normalized
//! median-household-income covariate.

use serde::{Deserialize, Serialize};

use crate::bag::TractBag;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::GatedAttentionModel;

/// Training-partition income statistics (USD/year). `std` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncomeStats {
    pub mean: f64,
    pub std: f64,
}

impl IncomeStats {
    /// Normalized income; a missing income maps to 0, the training mean.
    pub fn z_score(&self, income: Option<f64>) -> f64 {
        match income {
            Some(x) => (x - self.mean) / self.std,
            None => 0.0,
        }
    }
}

/// Mean and population standard deviation of the known incomes in `bags`.
/// Call with training bags only.
pub fn fit_income_stats<'a, I>(bags: I) -> Result<IncomeStats>
where
    I: IntoIterator<Item = &'a TractBag>,
{
    let incomes: Vec<f64> = bags.into_iter().filter_map(|b| b.income).collect();
    if incomes.is_empty() {
        return Err(Error::FusionUnavailable(
            "no training tract has a known income".into(),
        ));
    }
    if incomes.len() < 2 {
        return Err(Error::FusionUnavailable(format!(
            "need at least 2 training tracts with known income, found {}",
            incomes.len()
        )));
    }
    if let Some(bad) = incomes.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("income {bad}")));
    }
    let n = incomes.len() as f64;
    let mean = incomes.iter().sum::<f64>() / n;
    let var = incomes.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::DegenerateClass(format!(
            "all {} training incomes equal {mean}; cannot normalize",
            incomes.len()
        )));
    }
    Ok(IncomeStats { mean, std })
}

/// `w_clfᵀ n + w_inc · z + b` where `z` is the normalized income.
pub fn fused_logit(
    pooled: &[f64],
    income: Option<f64>,
    model: &GatedAttentionModel,
) -> Result<f64> {
    let block = model
        .fusion
        .ok_or_else(|| Error::FusionUnavailable("model has no fusion block".into()))?;
    fused_logit_from_z(pooled, block.stats.z_score(income), model)
}

/// [`fused_logit`] with the covariate already normalized (and, in training,
/// possibly dropped out).
pub(crate) fn fused_logit_from_z(pooled: &[f64], z: f64, model: &GatedAttentionModel) -> Result<f64> {
    let block = model
        .fusion
        .ok_or_else(|| Error::FusionUnavailable("model has no fusion block".into()))?;
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
    Ok(dot(&model.w_clf, pooled) + block.w_inc * z + model.b)
}
