//! The `mixgop` command line: train, score, evaluate, ablate and analyze
//! feature manifests.
//!
//! Every command reads a [`RunConfig`] (a JSON file, overridden by flags)
//! and writes its outputs under the configured output directory. Failures
//! print a JSON error record on stderr and exit with 1 (usage), 2 (data
//! or model) or 3 (numerical failure).

pub mod commands;
pub mod config;
pub mod error;
pub mod models;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixgop_core::allophony::AnmiScope;
use mixgop_core::eval::EvalLevel;
use mixgop_core::gmm::CovarianceMode;
use mixgop_core::synth::PlantedOodConfig;

pub use config::{Cap, Method, RunConfig};
pub use error::CliError;

/// Environment variable setting the worker-thread count.
pub const WORKERS_ENV: &str = "MIXGOP_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "mixgop", version, about = "Goodness of pronunciation from per-phoneme Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the selected method's models on the train split.
    Train(RunArgs),
    /// Score every test segment with trained models.
    Score(RunArgs),
    /// Score, pool and correlate with the ground truth.
    Evaluate(RunArgs),
    /// Grid over subsampling caps and component counts.
    Ablate(AblateArgs),
    /// Allophony per layer and attention pooling.
    Analyze(AnalyzeArgs),
    /// Check a feature manifest and print a summary.
    ValidateManifest {
        manifest: PathBuf,
    },
    /// Write a synthetic planted-OOD feature set.
    GenerateSynthetic(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Utterance,
    Segment,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CovarianceArg {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Train,
    All,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    layer_index: Option<u32>,
    #[arg(long, value_enum)]
    level: Option<LevelArg>,
    /// Mixture components per phoneme.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long, value_enum)]
    covariance: Option<CovarianceArg>,
    /// Training rows kept per phoneme, or "full".
    #[arg(long)]
    cap: Option<Cap>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Caps to try, e.g. 64,128,full.
    #[arg(long, value_delimiter = ',')]
    caps: Option<Vec<Cap>>,
    /// Component counts to try.
    #[arg(long, value_delimiter = ',')]
    grid_components: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Extra manifests, typically other layers of the same encoder.
    #[arg(long = "layer-manifest")]
    layer_manifests: Vec<PathBuf>,
    /// Soft-rank regularization strengths; replaces the configured list.
    #[arg(long, value_delimiter = ',')]
    soft_rank_eps: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_enum)]
    anmi_scope: Option<ScopeArg>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Manifest path to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    phonemes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Components in each phoneme's generating mixture.
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long, default_value_t = 300)]
    train_per_phoneme: usize,
    #[arg(long, default_value_t = 60)]
    test_utterances: usize,
    #[arg(long, default_value_t = 30)]
    segments: usize,
    /// Mean shift of atypical segments, in standard deviations.
    #[arg(long, default_value_t = 3.0)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) if !path.exists() => return Err(CliError::MissingFile(path.clone())),
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.manifest {
            cfg.manifest = m.clone();
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(l) = self.layer_index {
            cfg.layer_index = Some(l);
        }
        if let Some(l) = self.level {
            cfg.level = match l {
                LevelArg::Utterance => EvalLevel::Utterance,
                LevelArg::Segment => EvalLevel::Segment,
            };
        }
        if let Some(c) = self.components {
            cfg.gmm.n_components = c;
        }
        if let Some(c) = self.covariance {
            cfg.gmm.covariance_mode = match c {
                CovarianceArg::Full => CovarianceMode::Full,
                CovarianceArg::Diagonal => CovarianceMode::Diagonal,
            };
        }
        if let Some(c) = self.cap {
            cfg.subsample_cap = c;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.propagate_seed();
        Ok(cfg)
    }
}

fn start(cfg: RunConfig) -> Result<commands::Run, CliError> {
    let run = commands::Run::new(cfg)?;
    log::info!("config hash {}", run.hash);
    Ok(run)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&start(a.resolve()?)?),
        Command::Score(a) => commands::score(&start(a.resolve()?)?),
        Command::Evaluate(a) => commands::evaluate(&start(a.resolve()?)?),
        Command::Ablate(a) => {
            let mut cfg = a.run.resolve()?;
            if let Some(caps) = a.caps {
                cfg.ablation.caps = caps;
            }
            if let Some(c) = a.grid_components {
                cfg.ablation.components = c;
            }
            commands::ablate(&start(cfg)?).map(|_| ())
        }
        Command::Analyze(a) => {
            let mut cfg = a.run.resolve()?;
            if !a.layer_manifests.is_empty() {
                cfg.layer_manifests = a.layer_manifests;
            }
            if let Some(eps) = a.soft_rank_eps {
                let (first, rest) = eps
                    .split_first()
                    .ok_or_else(|| CliError::Usage("--soft-rank-eps needs at least one value".into()))?;
                cfg.attention.soft_rank.regularization_strength = *first;
                cfg.soft_rank_sweep = rest.to_vec();
            }
            if let Some(f) = a.folds {
                cfg.attention.folds = f;
            }
            if let Some(s) = a.anmi_scope {
                cfg.anmi.scope = match s {
                    ScopeArg::Train => AnmiScope::Train,
                    ScopeArg::All => AnmiScope::All,
                };
            }
            commands::analyze(&start(cfg)?)
        }
        Command::ValidateManifest { manifest } => {
            let summary = commands::validate_manifest(&manifest)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::GenerateSynthetic(a) => {
            let cfg = PlantedOodConfig {
                n_phonemes: a.phonemes,
                feature_dim: a.dim,
                components: a.components,
                train_per_phoneme: a.train_per_phoneme,
                test_utterances: a.test_utterances,
                segments_per_utterance: a.segments,
                shift_sigmas: a.shift,
                seed: a.seed,
            };
            commands::generate_synthetic(&cfg, &a.out)
        }
    }
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {value:?}")))?;
    // a pool built earlier in this process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn fail(e: &CliError) -> i32 {
    eprintln!("{}", serde_json::to_string(&e.report()).expect("error serializes"));
    e.exit_code()
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            return fail(&CliError::Usage(e.to_string().trim_end().to_string()));
        }
    };
    if let Err(e) = configure_workers() {
        return fail(&e);
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => fail(&e),
    }
}
