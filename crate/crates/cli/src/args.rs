use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

/// Train line models, generate and score pools, and serve curation sessions.
#[derive(Debug, Parser)]
#[command(name = "seedline", version)]
pub struct Cli {
    /// JSON object of flag values (snake_case keys). Flags given on the
    /// command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the line VAE.
    TrainVae(TrainVaeArgs),
    /// Train the baseline language model used for surprisal.
    TrainLm(TrainLmArgs),
    /// Sample a scored pool of lines as JSONL.
    Generate(GenerateArgs),
    /// Score lines from a text file.
    Score(ScoreArgs),
    /// Run the HTTP curation service.
    Serve(ServeArgs),
    /// Print a saved session as text or JSON.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

/// Corpus loading flags shared by both trainers.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CorpusFlags {
    /// JSONL corpus of `{"text", "tag"?}` records. Defaults to the bundled
    /// demo corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Words seen fewer times map to the unknown token.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Fraction of lines held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Seed of the train/validation split.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Maximum tokens per line.
    #[arg(long)]
    pub max_len: Option<usize>,
}

/// Optimisation flags shared by both trainers.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainFlags {
    /// Checkpoint to write; the sidecar goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch metrics log. Defaults to `<out>.metrics.jsonl`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// SGD momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub d_embed: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainVaeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub d_z: Option<usize>,
    /// Epochs over which the KL weight rises linearly to 1.
    #[arg(long)]
    pub kl_anneal_epochs: Option<usize>,
    #[arg(long)]
    pub word_dropout: Option<f64>,
    /// Condition encoder and decoder on the record tags.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub conditional: Option<bool>,
    #[arg(long)]
    pub tag_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainLmArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
}

/// Band selection shared by `generate` and `score`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct BandFlags {
    /// Keep lines between these quantiles of the reference surprisals.
    #[arg(long, num_args = 2, value_names = ["Q_LOW", "Q_HIGH"], conflicts_with = "band_absolute")]
    pub band_quantiles: Option<Vec<f64>>,
    /// Keep lines whose surprisal (nats/token) lies in this interval.
    #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"])]
    pub band_absolute: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub vae: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Number of prior samples drawn before dedup and filtering.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub band: BandFlags,
    /// Prior samples drawn to place a quantile band.
    #[arg(long)]
    pub reference_size: Option<usize>,
    /// Training corpus for novelty. Defaults to the bundled demo corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Theme tag for conditional models.
    #[arg(long)]
    pub tag: Option<String>,
    /// JSONL output. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Training corpus for novelty. Defaults to the bundled demo corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Plain text, one line per line.
    #[arg(long)]
    pub lines: Option<PathBuf>,
    /// Quantile bands are placed over the scored lines themselves.
    #[command(flatten)]
    #[serde(flatten)]
    pub band: BandFlags,
    /// JSON report output. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub vae: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Training corpus for novelty. Defaults to the bundled demo corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory holding one JSON file per session.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    /// 0 picks a free port.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub reference_size: Option<usize>,
    #[arg(long)]
    pub reference_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Text,
    Json,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    /// Session JSON file, as stored in the service data directory.
    #[arg(long)]
    pub session: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

/// Overlays command-line values on the `--config` file. Unset flags leave
/// the file's value in place; unknown keys in the file are rejected.
pub fn merge_config<A>(flags: A, config: Option<&Path>) -> Result<A, CliError>
where
    A: Serialize + DeserializeOwned + Default,
{
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(file) = file else {
        return Err(CliError::usage(format!("config {} must be a JSON object", path.display())));
    };
    let known = as_object(&A::default());
    let mut merged = Map::new();
    for (key, value) in file {
        let key = key.replace('-', "_");
        if !known.contains_key(&key) {
            return Err(CliError::usage(format!("unknown config key {key:?}")));
        }
        merged.insert(key, value);
    }
    for (key, value) in as_object(&flags) {
        if !value.is_null() {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("invalid config: {e}")))
}

fn as_object<A: Serialize>(a: &A) -> Map<String, Value> {
    match serde_json::to_value(a) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}
