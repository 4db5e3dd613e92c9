use std::collections::HashMap;
use std::path::Path;

use log::warn;
use serde_json::{json, Value};

use crate::bag::TractBag;
use crate::error::{Error, Result};
use crate::geodata::TractBoundary;
use crate::model::GatedAttentionModel;

use super::{dump_attention, predict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapSummary {
    pub features: usize,
    /// Bags without a boundary.
    pub skipped: usize,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// GeoJSON FeatureCollection with one feature per predicted tract, copying
/// the tract boundary geometry.
pub fn prediction_map(
    model: &GatedAttentionModel,
    bags: &[&TractBag],
    boundaries: &[TractBoundary],
    threshold: f64,
) -> Result<(Value, MapSummary)> {
    let by_id: HashMap<&str, &TractBoundary> = boundaries
        .iter()
        .map(|b| (b.tract_id.as_str(), b))
        .collect();
    let preds = predict(model, bags, threshold)?;
    let attention = dump_attention(model, bags, Some(3))?;
    let mut top: HashMap<&str, Vec<&str>> = HashMap::new();
    for rec in &attention {
        top.entry(rec.tract_id.as_str())
            .or_default()
            .push(rec.image_id.as_str());
    }

    let mut features = Vec::with_capacity(preds.len());
    let mut skipped = 0;
    for pred in &preds {
        let Some(boundary) = by_id.get(pred.tract_id.as_str()) else {
            warn!("tract {} has no boundary; left off the map", pred.tract_id);
            skipped += 1;
            continue;
        };
        features.push(json!({
            "type": "Feature",
            "properties": {
                "geoid": pred.tract_id,
                "p_insecure": round6(pred.p_insecure),
                "predicted": u8::from(pred.predicted),
                "label": pred.label.map(u8::from),
                "top_image_ids": top.get(pred.tract_id.as_str()).cloned().unwrap_or_default(),
            },
            "geometry": boundary.to_geojson_geometry(),
        }));
    }
    let summary = MapSummary {
        features: features.len(),
        skipped,
    };
    Ok((
        json!({ "type": "FeatureCollection", "features": features }),
        summary,
    ))
}

pub fn emit_prediction_map(
    model: &GatedAttentionModel,
    bags: &[&TractBag],
    boundaries: &[TractBoundary],
    threshold: f64,
    path: &Path,
) -> Result<MapSummary> {
    let (doc, summary) = prediction_map(model, bags, boundaries, threshold)?;
    let text = serde_json::to_string(&doc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(summary)
}
