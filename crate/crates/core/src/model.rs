//! Learnable parameters of the gated-attention bag classifier.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::IncomeStats;
use crate::linalg::Matrix;

/// Late-fusion income term: the weight on the normalized income and the
/// training-set statistics used to normalize it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionBlock {
    pub w_inc: f64,
    pub stats: IncomeStats,
}

/// Parameters of the attention head (`v`, `u`, `w_attn`) and the linear
/// tract classifier (`w_clf`, `b`).
///
/// Attention score of an instance `h` is `w_attnᵀ (tanh(V h) ⊙ σ(U h))`;
/// `V` and `U` are `L×M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedAttentionModel {
    pub v: Matrix,
    pub u: Matrix,
    pub w_attn: Vec<f64>,
    pub w_clf: Vec<f64>,
    pub b: f64,
    pub fusion: Option<FusionBlock>,
}

impl GatedAttentionModel {
    /// All-zero parameters. Attention is uniform and every logit is 0.
    pub fn zeros(m: usize, l: usize) -> Self {
        Self {
            v: Matrix::zeros(l, m),
            u: Matrix::zeros(l, m),
            w_attn: vec![0.0; l],
            w_clf: vec![0.0; m],
            b: 0.0,
            fusion: None,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(m: usize, l: usize, rng: &mut R) -> Self {
        let mut model = Self::zeros(m, l);
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let a = glorot(m, l);
        for x in model.v.as_mut_slice() {
            *x = rng.random_range(-a..a);
        }
        for x in model.u.as_mut_slice() {
            *x = rng.random_range(-a..a);
        }
        let a = glorot(l, 1);
        for x in &mut model.w_attn {
            *x = rng.random_range(-a..a);
        }
        let a = glorot(m, 1);
        for x in &mut model.w_clf {
            *x = rng.random_range(-a..a);
        }
        model
    }

    /// Embedding dimension M.
    pub fn m(&self) -> usize {
        self.w_clf.len()
    }

    /// Attention hidden dimension L.
    pub fn l(&self) -> usize {
        self.w_attn.len()
    }

    pub fn with_fusion(mut self, stats: IncomeStats) -> Self {
        self.fusion = Some(FusionBlock { w_inc: 0.0, stats });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (m, l) = (self.m(), self.l());
        if m == 0 || l == 0 {
            return Err(Error::Shape(format!("model dimensions m={m}, l={l} must be ≥ 1")));
        }
        for (name, mat) in [("V", &self.v), ("U", &self.u)] {
            if mat.rows() != l || mat.cols() != m {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {l}x{m}",
                    mat.rows(),
                    mat.cols()
                )));
            }
        }
        let finite = self.v.is_finite()
            && self.u.is_finite()
            && self.w_attn.iter().chain(&self.w_clf).all(|x| x.is_finite())
            && self.b.is_finite()
            && self.fusion.is_none_or(|f| {
                f.w_inc.is_finite() && f.stats.mean.is_finite() && f.stats.std.is_finite()
            });
        if !finite {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}

/// Gradients of the loss, one entry per model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub dv: Matrix,
    pub du: Matrix,
    pub dw_attn: Vec<f64>,
    pub dw_clf: Vec<f64>,
    pub db: f64,
    pub dw_inc: Option<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &GatedAttentionModel) -> Self {
        let (m, l) = (model.m(), model.l());
        Self {
            dv: Matrix::zeros(l, m),
            du: Matrix::zeros(l, m),
            dw_attn: vec![0.0; l],
            dw_clf: vec![0.0; m],
            db: 0.0,
            dw_inc: model.fusion.map(|_| 0.0),
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &GradientSet) {
        add_into(self.dv.as_mut_slice(), other.dv.as_slice());
        add_into(self.du.as_mut_slice(), other.du.as_slice());
        add_into(&mut self.dw_attn, &other.dw_attn);
        add_into(&mut self.dw_clf, &other.dw_clf);
        self.db += other.db;
        if let (Some(a), Some(b)) = (self.dw_inc.as_mut(), other.dw_inc) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for x in self
            .dv
            .as_mut_slice()
            .iter_mut()
            .chain(self.du.as_mut_slice())
            .chain(&mut self.dw_attn)
            .chain(&mut self.dw_clf)
        {
            *x *= s;
        }
        self.db *= s;
        if let Some(d) = self.dw_inc.as_mut() {
            *d *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dv.is_finite()
            && self.du.is_finite()
            && self.dw_attn.iter().chain(&self.dw_clf).all(|x| x.is_finite())
            && self.db.is_finite()
            && self.dw_inc.is_none_or(f64::is_finite)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
