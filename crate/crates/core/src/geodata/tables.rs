//! Atlas label table and income table (both CSV with a header row).

use std::collections::HashMap;
use std::path::Path;

use log::warn;

use crate::bag::Label;
use crate::error::{Error, Result};

/// Column names of the atlas table. The flags default to the Food Access
/// Research Atlas low-income/low-access tract indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasColumns {
    pub tract: String,
    pub flags: [String; 4],
}

impl Default for AtlasColumns {
    fn default() -> Self {
        Self {
            tract: "CensusTract".into(),
            flags: [
                "LILATracts_1And10".into(),
                "LILATracts_halfAnd10".into(),
                "LILATracts_1And20".into(),
                "LILATracts_Vehicle".into(),
            ],
        }
    }
}

/// Zero-pads an all-digit tract code to the 11-character GEOID form
/// (spreadsheets tend to drop the leading zero of two-digit state codes).
pub fn normalize_geoid(raw: &str) -> String {
    let s = raw.trim();
    if !s.is_empty() && s.len() < 11 && s.bytes().all(|b| b.is_ascii_digit()) {
        format!("{s:0>11}")
    } else {
        s.to_string()
    }
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "1.0" => Some(true),
        "0" | "false" | "" | "0.0" => Some(false),
        _ => None,
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
            available: headers.iter().map(str::to_string).collect(),
        })
}

/// Tract label = OR of the four atlas flags.
pub fn load_atlas(path: &Path, columns: &AtlasColumns) -> Result<HashMap<String, Label>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader.headers()?.clone();
    let tract_col = column_index(&headers, &columns.tract)?;
    let flag_cols = columns
        .flags
        .iter()
        .map(|f| column_index(&headers, f))
        .collect::<Result<Vec<_>>>()?;

    let mut labels = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let format_err = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let geoid = normalize_geoid(row.get(tract_col).unwrap_or(""));
        if geoid.is_empty() {
            return Err(format_err("empty tract id".into()));
        }
        let mut insecure = false;
        for (&col, name) in flag_cols.iter().zip(&columns.flags) {
            let raw = row.get(col).unwrap_or("");
            insecure |= parse_flag(raw)
                .ok_or_else(|| format_err(format!("column {name}: unrecognized flag {raw:?}")))?;
        }
        if labels.insert(geoid.clone(), Label::from(insecure)).is_some() {
            return Err(format_err(format!("duplicate tract {geoid}")));
        }
    }
    Ok(labels)
}

pub const INCOME_TRACT_COLUMN: &str = "GEOID";
pub const INCOME_VALUE_COLUMN: &str = "median_household_income";

/// Median household income per tract. Empty cells are treated as missing, as
/// are negative values (the ACS uses negative sentinels for suppressed data).
pub fn load_incomes(path: &Path) -> Result<HashMap<String, f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader.headers()?.clone();
    let tract_col = column_index(&headers, INCOME_TRACT_COLUMN)?;
    let value_col = column_index(&headers, INCOME_VALUE_COLUMN)?;
    let mut out = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let geoid = normalize_geoid(row.get(tract_col).unwrap_or(""));
        let raw = row.get(value_col).unwrap_or("").trim();
        if raw.is_empty() {
            continue;
        }
        let value: f64 = raw.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            line: i + 2,
            msg: format!("income {raw:?} is not a number"),
        })?;
        if !value.is_finite() || value < 0.0 {
            warn!("tract {geoid}: income {raw} treated as missing");
            continue;
        }
        out.insert(geoid, value);
    }
    Ok(out)
}
