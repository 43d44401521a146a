use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "canvas-forge",
    version,
    about = "Curate open-license image catalogs, caption them, cache latents, train and evaluate a toy diffusion model, and plan training cost",
    arg_required_else_help = true,
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Write the result to this file instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Human-readable output: aligned tables where available, indented JSON otherwise
    #[arg(long, global = true)]
    pub pretty: bool,
    /// JSON object of flag values; explicit flags take precedence
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to --out or the main output, else stderr)
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Worker threads for commands that run independent jobs
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub workers: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// License partitioning and alt-text statistics
    #[command(subcommand, arg_required_else_help = true)]
    Catalog(CatalogCommand),
    /// Synthetic captioning through a captioner service
    #[command(subcommand, arg_required_else_help = true)]
    Caption(CaptionCommand),
    /// Latent precomputation into checksummed shards
    #[command(subcommand, arg_required_else_help = true)]
    Latents(LatentsCommand),
    /// Train the denoiser on cached latents
    #[command(arg_required_else_help = true)]
    Train(TrainArgs),
    /// Draw samples from a checkpoint
    #[command(arg_required_else_help = true)]
    Sample(SampleArgs),
    /// FID, KID, CLIP score and CLIP-FID over feature files
    #[command(subcommand, arg_required_else_help = true)]
    Metrics(MetricsCommand),
    /// Pairwise preference rates and parity tests
    #[command(subcommand, arg_required_else_help = true)]
    Prefs(PrefsCommand),
    /// Training cost, memorisation capacity and speedup ledgers
    #[command(subcommand, arg_required_else_help = true)]
    Plan(PlanCommand),
    /// Dataset-size sweeps
    #[command(subcommand, arg_required_else_help = true)]
    Sweep(SweepCommand),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Catalog(CatalogCommand::Partition(_)) => "catalog partition",
            Command::Catalog(CatalogCommand::Stats(_)) => "catalog stats",
            Command::Caption(CaptionCommand::Run(_)) => "caption run",
            Command::Caption(CaptionCommand::Stats(_)) => "caption stats",
            Command::Latents(LatentsCommand::Precompute(_)) => "latents precompute",
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Metrics(MetricsCommand::Fid(_)) => "metrics fid",
            Command::Metrics(MetricsCommand::Kid(_)) => "metrics kid",
            Command::Metrics(MetricsCommand::Clipscore(_)) => "metrics clipscore",
            Command::Metrics(MetricsCommand::Clipfid(_)) => "metrics clipfid",
            Command::Prefs(PrefsCommand::Rate(_)) => "prefs rate",
            Command::Prefs(PrefsCommand::Test(_)) => "prefs test",
            Command::Plan(PlanCommand::Cost(_)) => "plan cost",
            Command::Plan(PlanCommand::Capacity(_)) => "plan capacity",
            Command::Plan(PlanCommand::Speedup(_)) => "plan speedup",
            Command::Sweep(SweepCommand::Scarcity(_)) => "sweep scarcity",
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    /// Pick from the file extension (.csv is CSV, anything else JSON-Lines)
    Auto,
    Jsonl,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct RecordsIn {
    /// Catalog records (JSON-Lines or CSV with a header)
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = RecordFormat::Auto)]
    pub format: RecordFormat,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CatalogCommand {
    /// Split records into the commercial, non-commercial and excluded pools
    #[command(arg_required_else_help = true)]
    Partition(PartitionArgs),
    /// Per-license counts, or weighted alt-text rates from per-license rows
    #[command(arg_required_else_help = true)]
    Stats(CatalogStatsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub records: RecordsIn,
    /// Directory for c.jsonl, nc.jsonl and excluded.jsonl
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Alt-text blacklist, one pattern per line (replaces the built-in list)
    #[arg(long, value_name = "PATH")]
    pub blacklist: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).multiple(true).args(["input", "rates"])))]
pub struct CatalogStatsArgs {
    /// Catalog records (JSON-Lines or CSV with a header)
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RecordFormat::Auto)]
    pub format: RecordFormat,
    /// CSV with columns license,count,pct
    #[arg(long, value_name = "PATH")]
    pub rates: Option<PathBuf>,
    /// Alt-text blacklist, one pattern per line (replaces the built-in list)
    #[arg(long, value_name = "PATH")]
    pub blacklist: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptionCommand {
    /// Caption every record not already in the cache
    #[command(arg_required_else_help = true)]
    Run(CaptionRunArgs),
    /// Trigram diversity of a caption file or caption cache
    #[command(arg_required_else_help = true)]
    Stats(CaptionStatsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CaptionRunArgs {
    #[command(flatten)]
    pub records: RecordsIn,
    /// Caption cache (JSON-Lines); created if missing
    #[arg(long, value_name = "PATH")]
    pub cache: PathBuf,
    /// Image files named <id> or <id>.<ext>
    #[arg(long, value_name = "DIR")]
    pub images_dir: Option<PathBuf>,
    /// Base URL of the captioner service
    #[arg(long, env = "CANVAS_FORGE_CAPTIONER_URL", value_name = "URL", conflicts_with = "mock")]
    pub captioner_url: Option<String>,
    /// Use the in-process deterministic captioner
    #[arg(long)]
    pub mock: bool,
    /// JSON object mapping image id to caption, for --mock
    #[arg(long, value_name = "PATH", requires = "mock")]
    pub mock_fixtures: Option<PathBuf>,
    /// Make every n-th mock call fail once, for --mock
    #[arg(long, value_name = "N", requires = "mock")]
    pub mock_fail_every: Option<usize>,
    /// Captioner identity recorded in the cache key
    #[arg(long, value_name = "ID")]
    pub captioner_id: Option<String>,
    /// Maximum requests in flight
    #[arg(long, default_value_t = 1, value_name = "N")]
    pub inflight: usize,
    /// Attempts per image before dead-lettering
    #[arg(long, default_value_t = 3, value_name = "N")]
    pub attempts: u32,
    /// Delay before the first retry, doubled on each further retry
    #[arg(long, default_value_t = 100, value_name = "MS")]
    pub base_delay_ms: u64,
    /// Per-request timeout
    #[arg(long, default_value_t = 60, value_name = "SECS")]
    pub timeout_secs: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct CaptionStatsArgs {
    /// One caption per line, or a caption cache
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentsCommand {
    /// Encode records not yet cached and write them as new shards
    #[command(arg_required_else_help = true)]
    Precompute(PrecomputeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PrecomputeArgs {
    #[command(flatten)]
    pub records: RecordsIn,
    /// Shard directory; existing shards are kept and their ids skipped
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Entries per shard
    #[arg(long, default_value_t = 4096, value_name = "N")]
    pub shard_size: usize,
    /// Latent dimensions as c,h,w
    #[arg(long, value_delimiter = ',', default_values_t = [4u32, 32, 32], value_name = "C,H,W")]
    pub dims: Vec<u32>,
    /// Seed of the random-projection encoder
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    Ema,
    Theta,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Shard directory written by `latents precompute`
    #[arg(long, value_name = "DIR")]
    pub latents_dir: PathBuf,
    /// Caption cache used to condition on captions
    #[arg(long, value_name = "PATH")]
    pub captions: Option<PathBuf>,
    /// Caption embedding width (with --captions)
    #[arg(long, default_value_t = 8)]
    pub cond_dim: usize,
    /// Checkpoint base path; writes <base>.bin and <base>.json
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Which weights to save
    #[arg(long, value_enum, default_value_t = Weights::Ema)]
    pub weights: Weights,
    /// Write the per-step loss curve as a JSON array
    #[arg(long, value_name = "PATH")]
    pub loss_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Must divide the batch size (default: the batch size)
    #[arg(long)]
    pub microbatch_size: Option<usize>,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of the latents to train on, in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    pub dataset_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub time_dim: usize,
    #[arg(long, default_value_t = 0.9999)]
    pub ema_decay: f64,
    /// Final share of the run during which the EMA averages
    #[arg(long, default_value_t = 0.035)]
    pub ema_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// Checkpoint base path written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Caption to condition on (conditional checkpoints only)
    #[arg(long)]
    pub caption: Option<String>,
    /// Also write the samples as a feature file for the metrics commands
    #[arg(long, value_name = "PATH")]
    pub features_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsCommand {
    /// Fréchet distance between two feature sets
    #[command(arg_required_else_help = true)]
    Fid(PairArgs),
    /// Unbiased squared MMD with the cubic polynomial kernel
    #[command(arg_required_else_help = true)]
    Kid(KidArgs),
    /// Mean clamped cosine similarity of paired image and text features
    #[command(arg_required_else_help = true)]
    Clipscore(ClipScoreArgs),
    /// Fréchet distance on CLIP image features
    #[command(arg_required_else_help = true)]
    Clipfid(PairArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PairArgs {
    /// Feature file (CCFEAT)
    #[arg(long, value_name = "PATH")]
    pub a: PathBuf,
    /// Feature file (CCFEAT)
    #[arg(long, value_name = "PATH")]
    pub b: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct KidArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Average over this many random subsets (0: use all rows once)
    #[arg(long, default_value_t = 0)]
    pub blocks: usize,
    #[arg(long, default_value_t = 1000)]
    pub block_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ClipScoreArgs {
    /// Image features (CCFEAT)
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    /// Text features, row-aligned with --image (CCFEAT)
    #[arg(long, value_name = "PATH")]
    pub text: PathBuf,
    #[arg(long, default_value_t = canvas_forge::metrics::CLIP_SCORE_WEIGHT)]
    pub weight: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefsCommand {
    /// Preference rate with a 95% Wilson interval
    #[command(arg_required_else_help = true)]
    Rate(TallyArgs),
    /// Two-sided test of the hypothesis that raters have no preference
    #[command(arg_required_else_help = true)]
    Test(PrefTestArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("tally").required(true).args(["wins", "ratings"])))]
pub struct TallyArgs {
    #[arg(long, requires = "total")]
    pub wins: Option<u64>,
    #[arg(long, requires = "wins")]
    pub total: Option<u64>,
    /// Rating log CSV: prompt_id,left_model,right_model,choice
    #[arg(long, value_name = "PATH", requires = "reference")]
    pub ratings: Option<PathBuf>,
    /// Model every other model is compared against
    #[arg(long)]
    pub reference: Option<String>,
    /// How ties and skips count
    #[arg(long, default_value = "drop", value_parser = ["drop", "half-win"])]
    pub ties: String,
}

#[derive(Debug, Args, Serialize)]
pub struct PrefTestArgs {
    #[command(flatten)]
    pub tally: TallyArgs,
    /// Use the continuity-corrected normal approximation instead of the exact test
    #[arg(long)]
    pub normal: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanCommand {
    /// Days and dollars for a staged run, or a fit against a measured cost table
    #[command(arg_required_else_help = true)]
    Cost(CostArgs),
    /// Largest dataset the model could memorise outright
    #[command(arg_required_else_help = true)]
    Capacity(CapacityArgs),
    /// Cumulative product of per-optimisation speedups
    #[command(arg_required_else_help = true)]
    Speedup(SpeedupArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["stage", "table"])))]
pub struct CostArgs {
    /// Stage as name:images:images_per_second (repeatable)
    #[arg(long, value_name = "NAME:IMAGES:RATE")]
    pub stage: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub gpus: u32,
    #[arg(long, default_value_t = canvas_forge::planner::DEFAULT_PRICE_PER_GPU_HOUR)]
    pub price: f64,
    /// JSON array of measured rows (gpus, throughput_256, throughput_512, throughput_512_ema, days, cost)
    #[arg(long, value_name = "PATH")]
    pub table: Option<PathBuf>,
    /// GPU counts of the two rows the stage budgets are fitted to
    #[arg(long, value_delimiter = ',', default_values_t = [8u32, 128], value_name = "A,B")]
    pub fit_rows: Vec<u32>,
    /// Share of the 512px images processed with the EMA active
    #[arg(long, default_value_t = canvas_forge::planner::DEFAULT_EMA_FRACTION)]
    pub ema_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct CapacityArgs {
    /// Trainable parameters
    #[arg(long)]
    pub n_params: u64,
    #[arg(long, default_value_t = 4)]
    pub c: u64,
    #[arg(long, default_value_t = 32)]
    pub h: u64,
    #[arg(long, default_value_t = 32)]
    pub w: u64,
    /// Dataset size to compare against the critical size
    #[arg(long, default_value_t = 0)]
    pub dataset_size: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SpeedupArgs {
    /// Optimisation as name=multiplier, applied in order (repeatable)
    #[arg(long, value_name = "NAME=MULT")]
    pub step: Vec<String>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepCommand {
    /// Train on shrinking subsets of a synthetic corpus and score held-out MMD
    Scarcity(ScarcityArgs),
}

/// Unset values keep the calibrated defaults.
#[derive(Debug, Args, Serialize)]
pub struct ScarcityArgs {
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_heldout: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Mixture components of the synthetic corpus
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Sample from the final weights instead of the EMA
    #[arg(long)]
    pub no_ema: bool,
}
