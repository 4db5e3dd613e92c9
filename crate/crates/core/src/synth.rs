//! Deterministic planted-witness benchmark: synthetic cities of grid-square
//! tracts whose positive bags contain a few instances shifted along a hidden
//! direction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bag::{InstanceEmbedding, Label, TractBag};
use crate::error::{Error, Result};
use crate::geodata::{self, AtlasColumns, TractBoundary};

/// Names for the first synthetic cities; more are numbered.
pub const CITY_NAMES: [&str; 25] = [
    "New York", "Los Angeles", "Chicago", "Houston", "Phoenix", "Philadelphia",
    "San Antonio", "San Diego", "Dallas", "Austin", "San Jose", "Jacksonville",
    "Fort Worth", "Columbus", "Charlotte", "Indianapolis", "San Francisco",
    "Seattle", "Denver", "Washington", "Nashville", "Oklahoma City", "El Paso",
    "Boston", "Portland",
];

const GRID_SPACING: f64 = 1.25;
const GRID_ORIGIN: [f64; 2] = [-170.0, -80.0];
const MAX_GRID_SIDE: usize = 128;
/// Keeps sampled locations off the square edges.
const EDGE_MARGIN: f64 = 1e-3;

const INCOME_MEAN: f64 = 55_000.0;
const INCOME_STD: f64 = 10_000.0;
const INCOME_PENALTY: f64 = 15_000.0;
const INCOME_FLOOR: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_tracts: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub m: usize,
    pub positive_rate: f64,
    /// Fraction of a positive bag's instances drawn from the witness
    /// distribution (rounded up).
    pub witness_rate: f64,
    /// Distance between witness and background means.
    pub separation: f64,
    pub noise_std: f64,
    pub n_cities: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tracts: 600,
            k_min: 5,
            k_max: 20,
            m: 32,
            positive_rate: 0.28,
            witness_rate: 0.2,
            separation: 2.0,
            noise_std: 0.6,
            n_cities: 25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_tracts == 0 || self.m == 0 || self.n_cities == 0 {
            return fail("n_tracts, m and n_cities must be ≥ 1".into());
        }
        if self.k_min < 1 || self.k_min > self.k_max {
            return fail(format!(
                "bag size range [{}, {}] is empty or starts below 1",
                self.k_min, self.k_max
            ));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return fail(format!("positive_rate {} outside (0, 1)", self.positive_rate));
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return fail(format!("witness_rate {} outside (0, 1]", self.witness_rate));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return fail(format!("separation {} must be ≥ 0", self.separation));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std {} must be > 0", self.noise_std));
        }
        if grid_side(self.n_tracts) > MAX_GRID_SIDE {
            return fail(format!("n_tracts {} does not fit on the grid", self.n_tracts));
        }
        Ok(())
    }

    /// Number of positive tracts, fixed by quota.
    pub fn n_positive(&self) -> usize {
        (self.positive_rate * self.n_tracts as f64).round() as usize
    }
}

fn grid_side(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

pub fn city_name(i: usize) -> String {
    CITY_NAMES
        .get(i)
        .map_or_else(|| format!("City {:02}", i + 1), |s| s.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub bags: Vec<TractBag>,
    pub boundaries: Vec<TractBoundary>,
    pub incomes: BTreeMap<String, f64>,
    /// Image ids of planted witness instances.
    pub witnesses: BTreeSet<String>,
    /// Unit vector along which witnesses are shifted.
    pub direction: Vec<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let direction = loop {
        let v: Vec<f64> = (0..cfg.m).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
        }
    };

    let mut order: Vec<usize> = (0..cfg.n_tracts).collect();
    order.shuffle(&mut rng);
    let mut positive = vec![false; cfg.n_tracts];
    for &i in &order[..cfg.n_positive()] {
        positive[i] = true;
    }

    let noise = Normal::new(0.0, cfg.noise_std).expect("validated");
    let income_dist = Normal::new(INCOME_MEAN, INCOME_STD).expect("constant");
    let side = grid_side(cfg.n_tracts);
    let witness_mean: Vec<f64> = direction.iter().map(|d| d * cfg.separation).collect();

    let mut bags = Vec::with_capacity(cfg.n_tracts);
    let mut boundaries = Vec::with_capacity(cfg.n_tracts);
    let mut incomes = BTreeMap::new();
    let mut witnesses = BTreeSet::new();
    for (i, &is_pos) in positive.iter().enumerate() {
        let tract_id = format!("99{i:09}");
        let city = city_name(i % cfg.n_cities);
        let x0 = GRID_ORIGIN[0] + GRID_SPACING * (i % side) as f64;
        let y0 = GRID_ORIGIN[1] + GRID_SPACING * (i / side) as f64;
        boundaries.push(TractBoundary::polygon(
            tract_id.clone(),
            vec![vec![[x0, y0], [x0 + 1.0, y0], [x0 + 1.0, y0 + 1.0], [x0, y0 + 1.0], [x0, y0]]],
        ));

        let k = rng.random_range(cfg.k_min..=cfg.k_max);
        let mut is_witness = vec![false; k];
        if is_pos {
            let n_wit = ((cfg.witness_rate * k as f64).ceil() as usize).min(k);
            for j in index::sample(&mut rng, k, n_wit) {
                is_witness[j] = true;
            }
        }
        let instances = is_witness
            .iter()
            .enumerate()
            .map(|(j, &wit)| {
                let image_id = format!("{tract_id}-{j:03}");
                if wit {
                    witnesses.insert(image_id.clone());
                }
                let features = (0..cfg.m)
                    .map(|d| {
                        let mean = if wit { witness_mean[d] } else { 0.0 };
                        mean + noise.sample(&mut rng)
                    })
                    .collect();
                let lon = rng.random_range(x0 + EDGE_MARGIN..x0 + 1.0 - EDGE_MARGIN);
                let lat = rng.random_range(y0 + EDGE_MARGIN..y0 + 1.0 - EDGE_MARGIN);
                InstanceEmbedding {
                    image_id,
                    lat,
                    lon,
                    city: city.clone(),
                    features,
                }
            })
            .collect();

        let mut income = income_dist.sample(&mut rng);
        if is_pos {
            income -= INCOME_PENALTY;
        }
        let income = income.max(INCOME_FLOOR);
        incomes.insert(tract_id.clone(), income);
        bags.push(TractBag {
            tract_id,
            instances,
            label: Some(Label::from(is_pos)),
            income: Some(income),
            city,
        });
    }
    Ok(SynthDataset {
        bags,
        boundaries,
        incomes,
        witnesses,
        direction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub embeddings: PathBuf,
    pub boundaries: PathBuf,
    pub atlas: PathBuf,
    pub income: PathBuf,
    pub witnesses: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            embeddings: dir.join("embeddings.jsonl"),
            boundaries: dir.join("boundaries.geojson"),
            atlas: dir.join("atlas.csv"),
            income: dir.join("income.csv"),
            witnesses: dir.join("witnesses.txt"),
        }
    }
}

/// Writes the dataset as the four pipeline input files plus a witness list.
/// A positive tract sets one of the four atlas flags, chosen by tract index.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir);

    let instances: Vec<InstanceEmbedding> = ds
        .bags
        .iter()
        .flat_map(|b| b.instances.iter().cloned())
        .collect();
    geodata::write_embeddings(&files.embeddings, &instances)?;
    geodata::write_boundaries(&files.boundaries, &ds.boundaries, geodata::DEFAULT_GEOID_PROPERTY)?;

    let columns = AtlasColumns::default();
    let mut atlas = csv::Writer::from_path(&files.atlas)?;
    let mut header = vec![columns.tract.as_str()];
    header.extend(columns.flags.iter().map(String::as_str));
    atlas.write_record(&header)?;
    for (i, bag) in ds.bags.iter().enumerate() {
        let insecure = bag.label.is_some_and(Label::is_insecure);
        let mut row = vec![bag.tract_id.clone()];
        row.extend((0..4).map(|f| if insecure && f == i % 4 { "1" } else { "0" }.to_string()));
        atlas.write_record(&row)?;
    }
    atlas.flush().map_err(|e| Error::io(&files.atlas, e))?;

    let mut income = csv::Writer::from_path(&files.income)?;
    income.write_record([geodata::INCOME_TRACT_COLUMN, geodata::INCOME_VALUE_COLUMN])?;
    for (tract, value) in &ds.incomes {
        income.write_record([tract.clone(), value.to_string()])?;
    }
    income.flush().map_err(|e| Error::io(&files.income, e))?;

    let file = File::create(&files.witnesses).map_err(|e| Error::io(&files.witnesses, e))?;
    let mut w = BufWriter::new(file);
    for id in &ds.witnesses {
        writeln!(w, "{id}").map_err(|e| Error::io(&files.witnesses, e))?;
    }
    w.flush().map_err(|e| Error::io(&files.witnesses, e))?;
    Ok(files)
}
