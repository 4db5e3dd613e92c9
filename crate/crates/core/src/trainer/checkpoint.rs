//! Self-describing JSON checkpoints. Floats are written in shortest
//! round-trip form, so save/load is exact.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::fusion::IncomeStats;
use crate::linalg::Matrix;
use crate::model::{FusionBlock, GatedAttentionModel};

use super::TrainConfig;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GatedAttentionModel,
    pub train_config: Option<TrainConfig>,
}

fn field_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn get<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value> {
    obj.get(field).ok_or_else(|| field_err(field, "missing"))
}

fn get_dim(obj: &Map<String, Value>, field: &str) -> Result<usize> {
    get(obj, field)?
        .as_u64()
        .filter(|&d| d >= 1)
        .map(|d| d as usize)
        .ok_or_else(|| field_err(field, "expected a positive integer"))
}

fn get_f64(obj: &Map<String, Value>, field: &str) -> Result<f64> {
    get(obj, field)?
        .as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| field_err(field, "expected a finite number"))
}

fn get_vec(obj: &Map<String, Value>, field: &str, len: usize) -> Result<Vec<f64>> {
    let arr = get(obj, field)?
        .as_array()
        .ok_or_else(|| field_err(field, "expected an array"))?;
    if arr.len() != len {
        return Err(field_err(
            field,
            format!("expected {len} entries, found {}", arr.len()),
        ));
    }
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| field_err(field, format!("entry {i} is not a finite number")))
        })
        .collect()
}

pub fn checkpoint_to_json(model: &GatedAttentionModel, cfg: Option<&TrainConfig>) -> Result<Value> {
    model.validate()?;
    let mut doc = json!({
        "format_version": FORMAT_VERSION,
        "m": model.m(),
        "l": model.l(),
        "V": model.v.as_slice(),
        "U": model.u.as_slice(),
        "w_attn": model.w_attn,
        "w_clf": model.w_clf,
        "b": model.b,
    });
    if let Some(block) = model.fusion {
        doc["fusion"] = json!({
            "w_inc": block.w_inc,
            "income_mean": block.stats.mean,
            "income_std": block.stats.std,
        });
    }
    if let Some(cfg) = cfg {
        doc["train_config"] = serde_json::to_value(cfg)?;
    }
    Ok(doc)
}

pub fn checkpoint_from_json(doc: &Value) -> Result<Checkpoint> {
    let obj = doc
        .as_object()
        .ok_or_else(|| field_err("<root>", "expected a JSON object"))?;
    let version = get(obj, "format_version")?
        .as_u64()
        .ok_or_else(|| field_err("format_version", "expected an integer"))?;
    if version != FORMAT_VERSION {
        return Err(field_err(
            "format_version",
            format!("unsupported version {version}"),
        ));
    }
    let m = get_dim(obj, "m")?;
    let l = get_dim(obj, "l")?;
    let v = Matrix::from_vec(l, m, get_vec(obj, "V", l * m)?)?;
    let u = Matrix::from_vec(l, m, get_vec(obj, "U", l * m)?)?;
    let fusion = match obj.get("fusion") {
        None | Some(Value::Null) => None,
        Some(Value::Object(f)) => {
            let std = get_f64(f, "income_std")?;
            if std <= 0.0 {
                return Err(field_err("income_std", "must be positive"));
            }
            Some(FusionBlock {
                w_inc: get_f64(f, "w_inc")?,
                stats: IncomeStats {
                    mean: get_f64(f, "income_mean")?,
                    std,
                },
            })
        }
        Some(_) => return Err(field_err("fusion", "expected an object")),
    };
    let train_config = match obj.get("train_config") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value(v.clone())
                .map_err(|e| field_err("train_config", e.to_string()))?,
        ),
    };
    let model = GatedAttentionModel {
        v,
        u,
        w_attn: get_vec(obj, "w_attn", l)?,
        w_clf: get_vec(obj, "w_clf", m)?,
        b: get_f64(obj, "b")?,
        fusion,
    };
    Ok(Checkpoint {
        model,
        train_config,
    })
}

pub fn save_checkpoint(path: &Path, model: &GatedAttentionModel, cfg: Option<&TrainConfig>) -> Result<()> {
    let doc = checkpoint_to_json(model, cfg)?;
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text)?;
    checkpoint_from_json(&doc)
}
