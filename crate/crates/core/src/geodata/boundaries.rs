//! Tract polygons, the even-odd containment test, and the grid index used to
//! join image locations to tracts.

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Closed ring of `(lon, lat)` vertices; first vertex equals the last.
pub type Ring = Vec<[f64; 2]>;

/// Exterior ring followed by zero or more holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub rings: Vec<Ring>,
}

impl Polygon {
    /// Even-odd rule over all rings, so holes are excluded.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        self.rings
            .iter()
            .fold(false, |inside, ring| inside ^ ring_crossings_odd(ring, lon, lat))
    }
}

fn ring_crossings_odd(ring: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut odd = false;
    for edge in ring.windows(2) {
        let ([xi, yi], [xj, yj]) = (edge[0], edge[1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            odd = !odd;
        }
    }
    odd
}

#[derive(Debug, Clone, PartialEq)]
pub struct TractBoundary {
    pub tract_id: String,
    pub polygons: Vec<Polygon>,
    /// Whether the source geometry was a MultiPolygon.
    pub multi: bool,
}

impl TractBoundary {
    pub fn polygon(tract_id: impl Into<String>, rings: Vec<Ring>) -> Self {
        Self {
            tract_id: tract_id.into(),
            polygons: vec![Polygon { rings }],
            multi: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::Geometry {
            geoid: self.tract_id.clone(),
            msg,
        };
        if self.polygons.is_empty() {
            return Err(err("no polygons".into()));
        }
        for (p, poly) in self.polygons.iter().enumerate() {
            if poly.rings.is_empty() {
                return Err(err(format!("polygon {p} has no rings")));
            }
            for (r, ring) in poly.rings.iter().enumerate() {
                if ring.len() < 4 {
                    return Err(err(format!(
                        "polygon {p} ring {r} has {} vertices, need at least 4",
                        ring.len()
                    )));
                }
                if ring.first() != ring.last() {
                    return Err(err(format!("polygon {p} ring {r} is not closed")));
                }
                if ring.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(err(format!("polygon {p} ring {r} has a non-finite vertex")));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        self.polygons.iter().any(|p| p.contains(lon, lat))
    }

    /// `(min_lon, min_lat, max_lon, max_lat)` of the exterior rings.
    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for ring in self.polygons.iter().filter_map(|p| p.rings.first()) {
            for &[x, y] in ring {
                b[0] = b[0].min(x);
                b[1] = b[1].min(y);
                b[2] = b[2].max(x);
                b[3] = b[3].max(y);
            }
        }
        b
    }

    pub fn to_geojson_geometry(&self) -> Value {
        let poly = |p: &Polygon| json!(p.rings);
        if self.multi {
            json!({
                "type": "MultiPolygon",
                "coordinates": self.polygons.iter().map(poly).collect::<Vec<_>>(),
            })
        } else {
            json!({ "type": "Polygon", "coordinates": poly(&self.polygons[0]) })
        }
    }
}

fn parse_rings(geoid: &str, v: &Value) -> Result<Vec<Ring>> {
    let bad = || Error::Geometry {
        geoid: geoid.to_string(),
        msg: "malformed polygon coordinates".into(),
    };
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|pt| {
                    let pt = pt.as_array().filter(|p| p.len() >= 2).ok_or_else(bad)?;
                    Ok([
                        pt[0].as_f64().ok_or_else(bad)?,
                        pt[1].as_f64().ok_or_else(bad)?,
                    ])
                })
                .collect()
        })
        .collect()
}

fn property_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a GeoJSON FeatureCollection of Polygon/MultiPolygon tracts.
pub fn parse_boundaries(doc: &Value, geoid_property: &str) -> Result<Vec<TractBoundary>> {
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .filter(|_| doc.get("type").and_then(Value::as_str) == Some("FeatureCollection"))
        .ok_or_else(|| Error::Config("boundary file is not a FeatureCollection".into()))?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        let geoid = feature
            .get("properties")
            .and_then(|p| p.get(geoid_property))
            .and_then(property_string)
            .ok_or_else(|| {
                Error::Config(format!("feature {i} lacks a `{geoid_property}` property"))
            })?;
        let geometry = feature.get("geometry").ok_or_else(|| Error::Geometry {
            geoid: geoid.clone(),
            msg: "missing geometry".into(),
        })?;
        let coords = geometry.get("coordinates").unwrap_or(&Value::Null);
        let boundary = match geometry.get("type").and_then(Value::as_str) {
            Some("Polygon") => TractBoundary::polygon(geoid.clone(), parse_rings(&geoid, coords)?),
            Some("MultiPolygon") => {
                let parts = coords.as_array().ok_or_else(|| Error::Geometry {
                    geoid: geoid.clone(),
                    msg: "malformed multipolygon coordinates".into(),
                })?;
                TractBoundary {
                    tract_id: geoid.clone(),
                    polygons: parts
                        .iter()
                        .map(|p| parse_rings(&geoid, p).map(|rings| Polygon { rings }))
                        .collect::<Result<_>>()?,
                    multi: true,
                }
            }
            other => {
                return Err(Error::Geometry {
                    geoid,
                    msg: format!("unsupported geometry type {other:?}"),
                })
            }
        };
        boundary.validate()?;
        if !seen.insert(geoid.clone()) {
            return Err(Error::Geometry {
                geoid,
                msg: "duplicate GEOID in boundary set".into(),
            });
        }
        out.push(boundary);
    }
    Ok(out)
}

pub fn load_boundaries(path: &Path, geoid_property: &str) -> Result<Vec<TractBoundary>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text)?;
    parse_boundaries(&doc, geoid_property)
}

pub fn boundaries_to_geojson(boundaries: &[TractBoundary], geoid_property: &str) -> Value {
    let features: Vec<Value> = boundaries
        .iter()
        .map(|b| {
            json!({
                "type": "Feature",
                "properties": { geoid_property: b.tract_id },
                "geometry": b.to_geojson_geometry(),
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_boundaries(path: &Path, boundaries: &[TractBoundary], geoid_property: &str) -> Result<()> {
    let doc = boundaries_to_geojson(boundaries, geoid_property);
    let text = serde_json::to_string(&doc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Uniform grid over the boundaries' extent; each cell lists, in file order,
/// the boundaries whose bounding box overlaps it.
#[derive(Debug)]
pub struct SpatialIndex<'a> {
    boundaries: &'a [TractBoundary],
    bboxes: Vec<[f64; 4]>,
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    cells: Vec<Vec<usize>>,
}

impl<'a> SpatialIndex<'a> {
    pub fn build(boundaries: &'a [TractBoundary]) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::Config("no tract boundaries to join against".into()));
        }
        for b in boundaries {
            b.validate()?;
        }
        let bboxes: Vec<[f64; 4]> = boundaries.iter().map(TractBoundary::bbox).collect();
        let mut extent = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for b in &bboxes {
            extent[0] = extent[0].min(b[0]);
            extent[1] = extent[1].min(b[1]);
            extent[2] = extent[2].max(b[2]);
            extent[3] = extent[3].max(b[3]);
        }
        let side = ((boundaries.len() as f64).sqrt().ceil() as usize).clamp(1, 1024);
        let dims = [side, side];
        let cell = [
            ((extent[2] - extent[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((extent[3] - extent[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut index = Self {
            boundaries,
            bboxes,
            origin: [extent[0], extent[1]],
            cell,
            dims,
            cells: vec![Vec::new(); side * side],
        };
        for (i, b) in index.bboxes.clone().iter().enumerate() {
            let (x0, y0) = index.cell_of(b[0], b[1]);
            let (x1, y1) = index.cell_of(b[2], b[3]);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    index.cells[cy * side + cx].push(i);
                }
            }
        }
        Ok(index)
    }

    fn cell_of(&self, lon: f64, lat: f64) -> (usize, usize) {
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        (
            clamp((lon - self.origin[0]) / self.cell[0], self.dims[0]),
            clamp((lat - self.origin[1]) / self.cell[1], self.dims[1]),
        )
    }

    /// Indices (file order) of every boundary containing the point.
    pub fn locate_all(&self, lon: f64, lat: f64) -> Vec<usize> {
        let (cx, cy) = self.cell_of(lon, lat);
        self.cells[cy * self.dims[0] + cx]
            .iter()
            .copied()
            .filter(|&i| {
                let b = &self.bboxes[i];
                lon >= b[0] && lon <= b[2] && lat >= b[1] && lat <= b[3]
            })
            .filter(|&i| self.boundaries[i].contains(lon, lat))
            .collect()
    }

    pub fn boundary(&self, i: usize) -> &TractBoundary {
        &self.boundaries[i]
    }
}

/// Outcome of joining points to tracts. `tracts[i]` belongs to the i-th input
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub tracts: Vec<Option<String>>,
    pub unmatched: usize,
    pub ambiguous: usize,
}

impl Assignment {
    pub fn matched(&self) -> usize {
        self.tracts.len() - self.unmatched
    }
}

/// Assigns each `(lon, lat)` point to the first boundary (in file order) that
/// contains it. Results follow input order regardless of worker count.
pub fn assign_points(points: &[(f64, f64)], boundaries: &[TractBoundary]) -> Result<Assignment> {
    let index = SpatialIndex::build(boundaries)?;
    let hits: Vec<Vec<usize>> = points
        .par_iter()
        .map(|&(lon, lat)| index.locate_all(lon, lat))
        .collect();
    let mut unmatched = 0;
    let mut ambiguous = 0;
    let tracts = hits
        .into_iter()
        .zip(points)
        .map(|(hit, &(lon, lat))| match hit.as_slice() {
            [] => {
                unmatched += 1;
                None
            }
            [first, rest @ ..] => {
                if !rest.is_empty() {
                    ambiguous += 1;
                    warn!(
                        "point ({lon}, {lat}) lies in {} tracts; using {}",
                        hit.len(),
                        index.boundary(*first).tract_id
                    );
                }
                Some(index.boundary(*first).tract_id.clone())
            }
        })
        .collect();
    Ok(Assignment {
        tracts,
        unmatched,
        ambiguous,
    })
}
