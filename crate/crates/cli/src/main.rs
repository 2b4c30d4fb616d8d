//! `phylotrace`: evolutionary trees from model weights and response embeddings.

mod commands;
mod manifest;
mod render;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phylotrace::metrics::MetricKind;
use phylotrace::phylo::{ConsensusRule, RfMode};
use phylotrace::simulate::NodeSelection;
use serde::{Serialize, Serializer};

/// Bad invocation: reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn display<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn display_all<T: Display, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(ToString::to_string))
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_rule(s: &str) -> Result<ConsensusRule, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_mode(s: &str) -> Result<RfMode, String> {
    s.parse()
}

fn parse_nodes(s: &str) -> Result<NodeSelection, String> {
    s.parse()
}

#[derive(Clone, Copy, Debug, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Parser)]
#[command(name = "phylotrace", version, about = "Evolutionary trees from neural-network weights and embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise distance matrix over tensor archives
    Distances(DistancesArgs),
    /// Neighbor-joining tree from a distance-matrix CSV
    Tree(TreeArgs),
    /// Strict or majority-rule consensus of Newick trees
    Consensus(ConsensusArgs),
    /// Robinson-Foulds distance between two Newick trees
    Rf(RfArgs),
    /// Fraction of random trees closer to the truth than an estimate
    Permtest(PermtestArgs),
    /// Rank layers by mean pairwise distance
    Layers(LayersArgs),
    /// Synthetic controlled reconstruction experiment
    Simulate(SimulateArgs),
    /// Trees from response embeddings
    Embed(EmbedArgs),
    /// Two-component PCA of the embeddings for one prompt
    Pca(PcaArgs),
}

#[derive(Args, Serialize)]
pub struct DistancesArgs {
    /// Tensor archives, one per model; the file stem is the model id
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// l1, l2, cosine, correlation, threshold or threshold:<eps>
    #[arg(long, default_value = "l2", value_parser = parse_metric)]
    #[serde(serialize_with = "display")]
    pub metric: MetricKind,
    /// Also write one matrix per layer (requires --out-dir)
    #[arg(long)]
    pub per_layer: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Serialize)]
pub struct TreeArgs {
    /// Distance-matrix CSV
    pub matrix: PathBuf,
    /// Print an ASCII drawing after the Newick line
    #[arg(long)]
    pub ascii: bool,
    /// Write tree.svg (requires --out-dir)
    #[arg(long)]
    pub svg: bool,
    /// Write tree.dot (requires --out-dir)
    #[arg(long)]
    pub dot: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct ConsensusArgs {
    /// Newick files; each may hold several `;`-terminated trees
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// strict, majority or majority:<p> with p in [0.5, 1)
    #[arg(long, default_value = "majority", value_parser = parse_rule)]
    #[serde(serialize_with = "display")]
    pub rule: ConsensusRule,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct RfArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// unrooted (splits) or rooted (clades)
    #[arg(long, default_value = "unrooted", value_parser = parse_mode)]
    pub mode: RfMode,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Serialize)]
pub struct PermtestArgs {
    pub estimated: PathBuf,
    pub truth: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "unrooted", value_parser = parse_mode)]
    pub mode: RfMode,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Serialize)]
pub struct LayersArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "l2", value_parser = parse_metric)]
    #[serde(serialize_with = "display")]
    pub metric: MetricKind,
    /// Show only the k layers with the largest mean distance
    #[arg(long)]
    pub top: Option<usize>,
    /// Show only the k layers with the smallest mean distance
    #[arg(long, conflicts_with = "top")]
    pub bottom: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Serialize)]
pub struct SimulateArgs {
    /// Training-tree config JSON (an object or an array of objects)
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    pub config: Vec<PathBuf>,
    /// Number of random configurations to generate
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub drift: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    #[arg(long, default_value_t = 1000)]
    pub layer_size: usize,
    /// Comma-separated metrics
    #[arg(long, value_delimiter = ',', default_value = "l1,l2,cosine,correlation,threshold", value_parser = parse_metric)]
    #[serde(serialize_with = "display_all")]
    pub metrics: Vec<MetricKind>,
    /// leaves or all
    #[arg(long, default_value = "leaves", value_parser = parse_nodes)]
    pub nodes: NodeSelection,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expected empty entries before each dataset (random configs)
    #[arg(long, default_value_t = 0.7)]
    pub lambda: f64,
    /// Keep the dataset order instead of shuffling (random configs)
    #[arg(long)]
    pub no_permute: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Serialize)]
pub struct EmbedArgs {
    /// JSONL corpus
    pub corpus: PathBuf,
    /// per-dataset, global, dataset:<d> or prompt:<d>:<p>
    #[arg(long, default_value = "per-dataset")]
    pub scope: String,
    #[arg(long, default_value = "cosine", value_parser = parse_metric)]
    #[serde(serialize_with = "display")]
    pub metric: MetricKind,
    /// Ground-truth Newick tree for an RF table
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Serialize)]
pub struct PcaArgs {
    pub corpus: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("PHYLOTRACE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("PHYLOTRACE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Distances(a) => commands::distances(&a, &mut out),
        Command::Tree(a) => commands::tree(&a, &mut out),
        Command::Consensus(a) => commands::consensus(&a, &mut out),
        Command::Rf(a) => commands::rf(&a, &mut out),
        Command::Permtest(a) => commands::permtest(&a, &mut out),
        Command::Layers(a) => commands::layers(&a, &mut out),
        Command::Simulate(a) => commands::simulate(&a, &mut out),
        Command::Embed(a) => commands::embed(&a, &mut out),
        Command::Pca(a) => commands::pca(&a, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("phylotrace: error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
