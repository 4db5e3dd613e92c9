//! Ingestion of embeddings, atlas labels, tract boundaries and incomes;
//! spatial join of images to tracts; bag construction; split plans.

mod bags;
mod boundaries;
mod embeddings;
mod split;
mod tables;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};

pub use bags::{build_bags, BagSet};
pub use boundaries::{
    assign_points, boundaries_to_geojson, load_boundaries, parse_boundaries, write_boundaries,
    Assignment, Polygon, Ring, SpatialIndex, TractBoundary,
};
pub use embeddings::{load_embeddings, write_embeddings};
pub use split::{holdout_city_split, stratified_split, Partition, SplitMethod, SplitPlan};
pub use tables::{
    load_atlas, load_incomes, normalize_geoid, AtlasColumns, INCOME_TRACT_COLUMN,
    INCOME_VALUE_COLUMN,
};

use crate::bag::InstanceEmbedding;
use crate::error::Result;

pub const DEFAULT_GEOID_PROPERTY: &str = "GEOID10";

#[derive(Debug, Clone, PartialEq)]
pub struct TractAssignment {
    pub by_image: HashMap<String, String>,
    pub unmatched: usize,
    pub ambiguous: usize,
}

/// Maps each image to the tract containing its location. Unmatched images are
/// dropped (and counted).
pub fn assign_to_tracts(
    instances: &[InstanceEmbedding],
    boundaries: &[TractBoundary],
) -> Result<TractAssignment> {
    let points: Vec<(f64, f64)> = instances.iter().map(|i| (i.lon, i.lat)).collect();
    let assignment = assign_points(&points, boundaries)?;
    if assignment.unmatched > 0 {
        warn!(
            "{} of {} images fall outside every tract and are dropped",
            assignment.unmatched,
            instances.len()
        );
    }
    let by_image = instances
        .iter()
        .zip(assignment.tracts)
        .filter_map(|(inst, tract)| tract.map(|t| (inst.image_id.clone(), t)))
        .collect();
    Ok(TractAssignment {
        by_image,
        unmatched: assignment.unmatched,
        ambiguous: assignment.ambiguous,
    })
}

/// Locations of the four pipeline input files.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub embeddings: PathBuf,
    pub boundaries: PathBuf,
    pub atlas: PathBuf,
    pub income: Option<PathBuf>,
    pub geoid_property: String,
    pub atlas_columns: AtlasColumns,
}

impl DataPaths {
    pub fn new(embeddings: &Path, boundaries: &Path, atlas: &Path) -> Self {
        Self {
            embeddings: embeddings.to_path_buf(),
            boundaries: boundaries.to_path_buf(),
            atlas: atlas.to_path_buf(),
            income: None,
            geoid_property: DEFAULT_GEOID_PROPERTY.to_string(),
            atlas_columns: AtlasColumns::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub bags: BagSet,
    pub boundaries: Vec<TractBoundary>,
    pub assignment: TractAssignment,
}

/// Full ingestion: load every input, join images to tracts, build bags.
pub fn load_dataset(paths: &DataPaths) -> Result<Dataset> {
    let instances = load_embeddings(&paths.embeddings)?;
    let boundaries = load_boundaries(&paths.boundaries, &paths.geoid_property)?;
    let labels = load_atlas(&paths.atlas, &paths.atlas_columns)?;
    let incomes = paths.income.as_deref().map(load_incomes).transpose()?;
    let assignment = assign_to_tracts(&instances, &boundaries)?;
    let bags = build_bags(&instances, &assignment.by_image, &labels, incomes.as_ref());
    info!(
        "{} images in {} tract bags ({} labeled)",
        instances.len() - assignment.unmatched,
        bags.bags.len(),
        bags.bags.iter().filter(|b| b.label.is_some()).count()
    );
    Ok(Dataset {
        bags,
        boundaries,
        assignment,
    })
}
