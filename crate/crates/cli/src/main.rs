//! `explet`: stage-by-stage tools and the cross-validated runner.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use explet_core::explet::VecMode;
use explet_core::harness::CvProtocol;
use explet_core::stfeat::DescriptorKind;
use explet_core::umm::{Alignment, CovKind};
use explet_core::ErrorClass;

#[derive(Parser)]
#[command(name = "explet", version, about = "Expressionlet video classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dense descriptors, PCA-reduced and location-augmented, one STMF file per clip.
    Extract(ExtractArgs),
    /// Train the universal mixture on a feature directory.
    TrainUmm(TrainUmmArgs),
    /// Fit every clip to the mixture (or to rigid blocks).
    Fit(FitArgs),
    /// Expressionlets of aligned clips, reduced by PCA.
    Encode(EncodeArgs),
    /// Improved Fisher Vectors under the mixture.
    EncodeFv(EncodeFvArgs),
    /// Learn the discriminant projection from labelled expressionlets.
    TrainEmbed(TrainEmbedArgs),
    /// Project expressionlets with a learned embedding.
    Embed(EmbedArgs),
    /// One-vs-rest linear SVM on clip vectors.
    TrainSvm(TrainSvmArgs),
    /// Predict labels of clip vectors.
    Predict(PredictArgs),
    /// Score predictions against a labelled manifest.
    Evaluate(EvaluateArgs),
    /// Write per-fold train and test manifests.
    Split(SplitArgs),
    /// Cross-validated end-to-end run.
    Run(RunArgs),
    /// Generate a synthetic expression dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "sift")]
    pub desc: DescriptorKind,
    #[arg(long, default_value_t = 24)]
    pub patch: usize,
    #[arg(long = "stride-frac", default_value_t = 0.5)]
    pub stride_frac: f64,
    #[arg(long = "pca-dim", default_value_t = 64)]
    pub pca_dim: usize,
    /// Manifest of the clips the PCA is fit on (default: every clip).
    #[arg(long, conflicts_with = "pca")]
    pub train: Option<PathBuf>,
    /// Reuse a fitted descriptor PCA instead of fitting one.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainUmmArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long = "K", default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value = "iso")]
    pub cov: CovKind,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long = "em-max-iters", default_value_t = 200)]
    pub em_max_iters: usize,
    #[arg(long = "em-max-rows")]
    pub em_max_rows: Option<usize>,
    #[arg(long = "em-init-sample", default_value_t = 100_000)]
    pub em_init_sample: usize,
    /// Manifest of the training clips (default: every clip).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Required unless the mode is rigid.
    #[arg(long)]
    pub umm: Option<PathBuf>,
    #[arg(long, default_value = "soft")]
    pub mode: Alignment,
    #[arg(long = "T", default_value_t = 64)]
    pub t: usize,
    /// Number of rigid blocks.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub aligned: PathBuf,
    /// Feature directory the alignment refers to (default: the one recorded by `fit`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Mixture the alignment must come from.
    #[arg(long)]
    pub umm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    pub energy: f64,
    #[arg(long = "cov-with-loc")]
    pub cov_with_loc: bool,
    #[arg(long = "vec", default_value = "full")]
    pub vec_mode: VecMode,
    /// Manifest of the clips the PCA is fit on (default: every clip).
    #[arg(long, conflicts_with = "pca")]
    pub train: Option<PathBuf>,
    /// Reuse a fitted expressionlet PCA.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EncodeFvArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub umm: PathBuf,
    #[arg(long = "fv-with-loc")]
    pub fv_with_loc: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainEmbedArgs {
    #[arg(long)]
    pub xlt: PathBuf,
    /// Manifest of the labelled training clips.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub xlt: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainSvmArgs {
    #[arg(long)]
    pub vecs: PathBuf,
    /// Manifest of the labelled training clips.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long = "no-norm")]
    pub no_norm: bool,
    #[arg(long = "shuffle-seed")]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub vecs: PathBuf,
    #[arg(long)]
    pub svm: PathBuf,
    /// Only predict the clips of this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// CSV with `video_id,predicted`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "loso")]
    pub protocol: CvProtocol,
    #[arg(long)]
    pub out: PathBuf,
}

/// Every flag overrides the matching key of the config file.
#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub desc: Option<String>,
    #[arg(long)]
    pub patch: Option<String>,
    #[arg(long = "stride-frac")]
    pub stride_frac: Option<String>,
    #[arg(long = "pca-dim")]
    pub pca_dim: Option<String>,
    #[arg(long = "K")]
    pub k: Option<String>,
    #[arg(long = "T")]
    pub t: Option<String>,
    #[arg(long)]
    pub cov: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long = "em-max-iters")]
    pub em_max_iters: Option<String>,
    #[arg(long = "em-max-rows")]
    pub em_max_rows: Option<String>,
    #[arg(long = "em-init-sample")]
    pub em_init_sample: Option<String>,
    #[arg(long = "umm-scope")]
    pub umm_scope: Option<String>,
    #[arg(long)]
    pub align: Option<String>,
    #[arg(long = "cov-with-loc")]
    pub cov_with_loc: bool,
    #[arg(long = "vec")]
    pub vec_mode: Option<String>,
    #[arg(long)]
    pub energy: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long = "fv-with-loc")]
    pub fv_with_loc: bool,
    #[arg(long = "C")]
    pub c: Option<String>,
    #[arg(long = "no-norm")]
    pub no_norm: bool,
    #[arg(long = "shuffle-seed")]
    pub shuffle_seed: Option<String>,
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long = "parallel-folds")]
    pub parallel_folds: Option<String>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 12)]
    pub subjects: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long = "clips-per", default_value_t = 5)]
    pub clips_per: usize,
    #[arg(long, default_value_t = 12)]
    pub frames: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long)]
    pub warp: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::TrainUmm(a) => commands::train_umm(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Encode(a) => commands::encode(&a),
        Command::EncodeFv(a) => commands::encode_fv(&a),
        Command::TrainEmbed(a) => commands::train_embed(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::TrainSvm(a) => commands::train_svm(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Split(a) => commands::split(&a),
        Command::Run(a) => commands::run(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
