use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

/// Basic-question generation and evaluation pipeline.
#[derive(Debug, Parser)]
#[command(name = "vqabq", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus and query set (GRU-encoded templates).
    SynthCorpus(SynthArgs),
    /// Encode `id<TAB>text` lines with GRU parameters and a token table.
    Encode(EncodeArgs),
    /// Build the basic-question dictionary cache from an embedding file.
    BuildDict(BuildDictArgs),
    /// Generate top-3 basic questions for every query (BQD JSON-lines).
    GenBq(GenBqArgs),
    /// Append basic questions to each main question per the threshold policy.
    Concat(ConcatArgs),
    /// avg/std of score1, score2/score1 and score3/score2.
    Stats(StatsArgs),
    /// Count how many records receive 0, 1, 2 or 3 basic questions.
    Partition(PartitionArgs),
    /// Consensus accuracy of predictions against annotator answers.
    Eval(EvalArgs),
    /// Run alternating co-attention over question and image feature files.
    Coattend(CoattendArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DedupArg {
    Normalized,
    Exact,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_corpus: PathBuf,
    #[arg(long)]
    pub out_queries: PathBuf,
    /// Number of corpus questions (at most 1280).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also write the GRU parameters used.
    #[arg(long)]
    pub out_gru: Option<PathBuf>,
    /// Also write the token embedding table used.
    #[arg(long)]
    pub out_tokens: Option<PathBuf>,
    /// Write the little-endian f32 binary variant instead of text.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Lines of `id<TAB>text`.
    #[arg(long)]
    pub input: PathBuf,
    /// GRU parameter file (sections u_r, u_z, u, w_r, w_z, w).
    #[arg(long)]
    pub gru: PathBuf,
    /// Token embedding file (id column is the token).
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct BuildDictArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "normalized")]
    pub dedup: DedupArg,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Absolute LASSO penalty.
    #[arg(long, conflicts_with = "lambda_rel")]
    pub lambda: Option<f64>,
    /// Penalty as a fraction of λ_max = ‖Aᵀb‖_∞ for each query.
    #[arg(long, default_value_t = vqabq_core::lasso::DEFAULT_LAMBDA_REL)]
    pub lambda_rel: f64,
    /// Duality-gap tolerance.
    #[arg(long, default_value_t = vqabq_core::lasso::DEFAULT_TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = vqabq_core::lasso::DEFAULT_MAX_SWEEPS)]
    pub max_sweeps: usize,
    /// Constrain coefficients to be nonnegative.
    #[arg(long)]
    pub nonneg: bool,
}

#[derive(Debug, Args)]
pub struct GenBqArgs {
    #[arg(long)]
    pub dict: PathBuf,
    /// Query embedding file; ids of the form `<image_id>#<n>` name the image.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Exclude dictionary entries whose text equals the main question.
    #[arg(long)]
    pub exclude_exact: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write successful records even if some queries fail (exit code 3).
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long, default_value_t = 0.43)]
    pub s1: f64,
    #[arg(long, default_value_t = 0.82)]
    pub s2: f64,
    #[arg(long, default_value_t = 0.53)]
    pub s3: f64,
}

#[derive(Debug, Args)]
pub struct ConcatArgs {
    #[arg(long)]
    pub bqd: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value = " ")]
    pub separator: String,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub bqd: PathBuf,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the aligned text table here (it is always printed).
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub bqd: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON-lines `{"question_id": ..., "answer": ...}`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// JSON-lines `{"question_id": ..., "answers": [...]}`.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines `{"question_id": ..., "type": ...}` for per-type means.
    #[arg(long = "per-type")]
    pub per_type: Option<PathBuf>,
    /// Compare answers byte-for-byte instead of normalizing.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct CoattendArgs {
    /// Question word features, one embedding record per word.
    #[arg(long)]
    pub question: PathBuf,
    /// Image region features, one embedding record per region.
    #[arg(long)]
    pub image: PathBuf,
    /// Parameter file with sections step{1,2,3}.{w_x,w_g,w_hx}.
    #[arg(long, conflicts_with = "seed")]
    pub params: Option<PathBuf>,
    /// Generate parameters from this seed instead of loading them.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden attention size for generated parameters.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::EXIT_ERROR)
        }
    }
}
