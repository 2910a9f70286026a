//! `binn`: generate synthetic data, build masks, train ensembles, evaluate
//! on genotype-only data, run sensitivity analysis and summarize results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use binn::BinnError;

/// Validation failures exit with 2, everything else that goes wrong with 3.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "binn", version, about = "Biologically-informed neural networks for genomic prediction")]
pub struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; all randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (defaults to the current directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic genotype/metabolite/phenotype dataset.
    Generate(GenerateArgs),
    /// Build a genotype-to-entity mask from data or a pathway table.
    BuildMask(BuildMaskArgs),
    /// Run the cross-validated experiment and save the ensemble.
    Train(TrainArgs),
    /// Predict with a saved ensemble from genotypes alone.
    Evaluate(EvaluateArgs),
    /// Rank entities by latent-clamping sensitivity.
    Sensitivity(SensitivityArgs),
    /// Summarize metrics into median/IQR tables and long-format CSVs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub genotype: Option<PathBuf>,
    #[arg(long)]
    pub phenotype: Option<PathBuf>,
    /// Measured intermediates (expression or metabolite levels).
    #[arg(long, visible_aliases = ["expression", "metabolites"])]
    pub intermediates: Option<PathBuf>,
    #[arg(long)]
    pub populations: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n_lines: Option<usize>,
    /// Metabolite with the largest phenotype weight (A, S, CK or SL).
    #[arg(long)]
    pub dominant: Option<String>,
    /// Separate seed for the noise streams.
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BuildMaskArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON map from entity id to marker ids.
    #[arg(long)]
    pub pathway_table: Option<PathBuf>,
    #[arg(long)]
    pub l1_ratio: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Output file (defaults to `<out-dir>/mask.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Precomputed mask file.
    #[arg(long, conflicts_with = "pathway_table")]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub pathway_table: Option<PathBuf>,
    /// Comma-separated families, e.g. `binn_mse,ridge,fcn`.
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub l1_ratio: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Candidate soft/hard constraint weights.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    /// pooled, within_population or leave_one_population_out.
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub genotype: PathBuf,
    /// Observed phenotypes; adds a metrics table when given.
    #[arg(long)]
    pub phenotype: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    /// Rejected: deployment uses genotypes only.
    #[arg(long, hide = true, visible_aliases = ["expression", "metabolites"])]
    pub intermediates: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub genotype: PathBuf,
    /// Measured intermediates for latent-versus-truth diagnostics.
    #[arg(long, visible_aliases = ["expression", "metabolites"])]
    pub intermediates: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    /// Restrict to members of one replicate seed.
    #[arg(long)]
    pub replicate: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    /// 1-based omics layer; defaults to the last.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Clamp offset in latent standard deviations.
    #[arg(long)]
    pub perturb_scale: Option<f64>,
    /// Flag the first N entities in the CSV.
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metrics CSV written by `train`.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Latent correlation CSV written by `train`.
    #[arg(long)]
    pub latent: Option<PathBuf>,
    /// Family that percent changes are measured against.
    #[arg(long, default_value = "ridge")]
    pub baseline: String,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<BinnError>() {
            return match e {
                BinnError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                e if e.is_validation() => 2,
                _ => 3,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
