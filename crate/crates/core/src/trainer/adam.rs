use crate::error::{Error, Result};
use crate::model::{GatedAttentionModel, GradientSet};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, shaped like the gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: GradientSet,
    pub second: GradientSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &GatedAttentionModel) -> Self {
        Self {
            first: GradientSet::zeros_like(model),
            second: GradientSet::zeros_like(model),
            t: 0,
        }
    }
}

/// Which parameter groups the optimizer leaves untouched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Frozen {
    /// `V` and `U` (and with them the attention head).
    pub attention: bool,
    pub income_weight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub frozen: Frozen,
}

struct Step {
    lr: f64,
    bc1: f64,
    bc2: f64,
}

impl Step {
    fn apply(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], decay: f64) {
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            let g = g + decay * *p;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / self.bc1;
            let v_hat = *v / self.bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

/// One Adam update with L2 weight decay folded into the gradient of `V`,
/// `U`, `w_attn`, `w_clf` and `w_inc`. The bias is not decayed.
pub fn adam_step(
    model: &mut GatedAttentionModel,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient; optimizer step aborted".into()));
    }
    if grads.dv.as_slice().len() != model.v.as_slice().len()
        || grads.dw_attn.len() != model.l()
        || grads.dw_clf.len() != model.m()
        || state.first.dw_clf.len() != model.m()
        || state.first.dw_attn.len() != model.l()
    {
        return Err(Error::Shape("gradient or optimizer state does not match model".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let step = Step {
        lr: cfg.learning_rate,
        bc1: 1.0 - BETA1.powi(t),
        bc2: 1.0 - BETA2.powi(t),
    };
    let decay = cfg.weight_decay;
    let (m, v) = (&mut state.first, &mut state.second);

    if !cfg.frozen.attention {
        step.apply(model.v.as_mut_slice(), grads.dv.as_slice(), m.dv.as_mut_slice(), v.dv.as_mut_slice(), decay);
        step.apply(model.u.as_mut_slice(), grads.du.as_slice(), m.du.as_mut_slice(), v.du.as_mut_slice(), decay);
        step.apply(&mut model.w_attn, &grads.dw_attn, &mut m.dw_attn, &mut v.dw_attn, decay);
    }
    step.apply(&mut model.w_clf, &grads.dw_clf, &mut m.dw_clf, &mut v.dw_clf, decay);
    step.apply(
        std::slice::from_mut(&mut model.b),
        std::slice::from_ref(&grads.db),
        std::slice::from_mut(&mut m.db),
        std::slice::from_mut(&mut v.db),
        0.0,
    );
    if !cfg.frozen.income_weight {
        if let (Some(block), Some(g), Some(mi), Some(vi)) = (
            model.fusion.as_mut(),
            grads.dw_inc,
            m.dw_inc.as_mut(),
            v.dw_inc.as_mut(),
        ) {
            step.apply(
                std::slice::from_mut(&mut block.w_inc),
                &[g],
                std::slice::from_mut(mi),
                std::slice::from_mut(vi),
                decay,
            );
        }
    }
    Ok(())
}
