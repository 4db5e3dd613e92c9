use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};

use crate::bag::InstanceEmbedding;
use crate::error::{Error, Result};

/// Reads newline-delimited JSON embedding records
/// (`{image_id, lat, lon, city, embedding}`), enforcing one embedding
/// dimension across the file and unique image ids.
pub fn load_embeddings(path: &Path) -> Result<Vec<InstanceEmbedding>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let format_err = |line: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out: Vec<InstanceEmbedding> = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceEmbedding =
            serde_json::from_str(&line).map_err(|e| format_err(lineno, e.to_string()))?;
        rec.validate().map_err(|e| format_err(lineno, e.to_string()))?;
        if let Some(first) = out.first() {
            if rec.features.len() != first.features.len() {
                return Err(format_err(
                    lineno,
                    format!(
                        "embedding has {} dimensions, expected {}",
                        rec.features.len(),
                        first.features.len()
                    ),
                ));
            }
        }
        if !ids.insert(rec.image_id.clone()) {
            return Err(format_err(
                lineno,
                format!("duplicate image_id {:?}", rec.image_id),
            ));
        }
        out.push(rec);
    }
    match out.first() {
        None => warn!("{}: no embedding records", path.display()),
        Some(first) => info!(
            "{}: {} embeddings, M = {}",
            path.display(),
            out.len(),
            first.features.len()
        ),
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, instances: &[InstanceEmbedding]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
