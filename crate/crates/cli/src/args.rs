use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tractmil::geodata::{AtlasColumns, DataPaths, Partition, DEFAULT_GEOID_PROPERTY};
use tractmil::metrics::DEFAULT_THRESHOLD;
use tractmil::synth::SynthConfig;
use tractmil::trainer::{PosWeight, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "tractmil",
    version,
    about = "Classify census tracts as food-insecure from bags of street-view embeddings",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Worker threads for bag-parallel sections (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-witness synthetic dataset as pipeline input files.
    Synth(SynthArgs),
    /// Ingest the inputs, build tract bags and write a stratified split plan.
    Prepare(PrepareArgs),
    /// Train the gated-attention model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one partition of a split plan.
    Eval(EvalArgs),
    /// Dump per-image attention weights as CSV.
    Attention(AttentionArgs),
    /// Write a GeoJSON map of tract predictions.
    Map(MapArgs),
    /// Leave-one-city-out: split, train and evaluate on the held-out city.
    HoldoutCity(HoldoutArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Newline-delimited JSON embeddings, one record per image.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// GeoJSON FeatureCollection of tract boundaries.
    #[arg(long)]
    pub boundaries: PathBuf,
    /// Atlas CSV with the tract column and the access flag columns.
    #[arg(long)]
    pub atlas: PathBuf,
    /// CSV of GEOID,median_household_income.
    #[arg(long)]
    pub income: Option<PathBuf>,
    /// Feature property holding the tract GEOID.
    #[arg(long, default_value = DEFAULT_GEOID_PROPERTY)]
    pub geoid_property: String,
    #[arg(long, default_value = "CensusTract")]
    pub atlas_tract_column: String,
    /// The four atlas flag columns; a tract is food-insecure if any is set.
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 4,
        default_value = "LILATracts_1And10,LILATracts_halfAnd10,LILATracts_1And20,LILATracts_Vehicle"
    )]
    pub atlas_flags: Vec<String>,
}

impl DataArgs {
    pub fn paths(&self) -> DataPaths {
        let mut paths = DataPaths::new(&self.embeddings, &self.boundaries, &self.atlas);
        paths.income = self.income.clone();
        paths.geoid_property = self.geoid_property.clone();
        let flags: [String; 4] = self
            .atlas_flags
            .clone()
            .try_into()
            .expect("clap enforces four flag columns");
        paths.atlas_columns = AtlasColumns {
            tract: self.atlas_tract_column.clone(),
            flags,
        };
        paths
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut out = vec![
            self.embeddings.clone(),
            self.boundaries.clone(),
            self.atlas.clone(),
        ];
        out.extend(self.income.clone());
        out
    }
}

/// Training flags; anything left unset takes the library default.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `auto` (N0/N1 over the training partition) or a number.
    #[arg(long)]
    pub pos_weight: Option<PosWeight>,
    /// Attention hidden dimension.
    #[arg(long)]
    pub l_dim: Option<usize>,
    /// Late-fuse normalized tract income (needs --income).
    #[arg(long)]
    pub fusion: bool,
    /// Mean-pooling ablation: keep the attention projections at zero.
    #[arg(long)]
    pub freeze_attention: bool,
    /// Fusion ablation: keep the income weight at zero.
    #[arg(long)]
    pub freeze_income_weight: bool,
}

impl TrainFlags {
    pub fn resolve(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            dropout_rate: self.dropout.unwrap_or(d.dropout_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            label_smoothing: self.label_smoothing.unwrap_or(d.label_smoothing),
            max_epochs: self.epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            seed: self.seed.unwrap_or(d.seed),
            pos_weight: self.pos_weight.unwrap_or(d.pos_weight),
            l_dim: self.l_dim.unwrap_or(d.l_dim),
            fusion: self.fusion,
            freeze_attention: self.freeze_attention,
            freeze_income_weight: self.freeze_income_weight,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_tracts: Option<usize>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub positive_rate: Option<f64>,
    #[arg(long)]
    pub witness_rate: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub n_cities: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthArgs {
    pub fn resolve(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            n_tracts: self.n_tracts.unwrap_or(d.n_tracts),
            k_min: self.k_min.unwrap_or(d.k_min),
            k_max: self.k_max.unwrap_or(d.k_max),
            m: self.m.unwrap_or(d.m),
            positive_rate: self.positive_rate.unwrap_or(d.positive_rate),
            witness_rate: self.witness_rate.unwrap_or(d.witness_rate),
            separation: self.separation.unwrap_or(d.separation),
            noise_std: self.noise_std.unwrap_or(d.noise_std),
            n_cities: self.n_cities.unwrap_or(d.n_cities),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Split plan file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.6,0.2,0.2")]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Split plan written by `prepare`.
    #[arg(long)]
    pub split: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionArg {
    Train,
    Validation,
    Test,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Partition::Train,
            PartitionArg::Validation => Partition::Validation,
            PartitionArg::Test => Partition::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
    pub partition: PartitionArg,
    /// Probability at or above which a tract is predicted food-insecure.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Restrict to one partition of this split plan (default: every tract).
    #[arg(long, requires = "partition")]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, requires = "split")]
    pub partition: Option<PartitionArg>,
    /// Keep only the highest-weighted images per tract.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// GeoJSON file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HoldoutArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// City whose tracts form the test set.
    #[arg(long)]
    pub city: String,
    /// Per-class fraction of the remaining tracts used for validation.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Output directory for split.json, checkpoint.json and report.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written next to an earlier run's artifact.
    #[arg(long)]
    pub manifest: PathBuf,
}
