use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vfalign_cli::config::ExperimentConfig;
use vfalign_cli::experiments::{run_experiment, ExpContext};
use vfalign_cli::report::BUILD_ID;

/// Aligns the vector fields of two dynamical systems with learned
/// invertible networks and reports their orbital similarity.
#[derive(Parser)]
#[command(name = "vfalign", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicate/pair scheduling.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Run at the paper's dimensions and replicate counts.
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    /// Zero wall-clock fields so reruns are byte-identical.
    #[arg(long, default_value_t = false)]
    stable_output: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train and score one configured pair of systems.
    Align(CommonArgs),
    /// Replicated suites: conjugate pairs or linear equivalence classes.
    Suite(CommonArgs),
    /// Pairwise similarity across eigenvalue-sign groups.
    SignGrid(CommonArgs),
    /// Alignment and trajectory-CCA matrices over a model set.
    Matrix(CommonArgs),
    /// Trajectory-CCA similarity between two systems.
    Svcca(CommonArgs),
    /// Vector-field grid dump for plotting.
    DumpGrid(CommonArgs),
    /// Inverse round-trip residuals of a checkpoint.
    InvertCheck(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Align(a)
            | Command::Suite(a)
            | Command::SignGrid(a)
            | Command::Matrix(a)
            | Command::Svcca(a)
            | Command::DumpGrid(a)
            | Command::InvertCheck(a) => a,
        }
    }

    fn accepted_kinds(&self) -> &'static [&'static str] {
        match self {
            Command::Align(_) => &["align"],
            Command::Suite(_) => &["conjugate-pair", "linear-equivalence-class"],
            Command::SignGrid(_) => &["sign-grid"],
            Command::Matrix(_) => &["pairwise-matrix"],
            Command::Svcca(_) => &["svcca-compare"],
            Command::DumpGrid(_) => &["field-grid-dump"],
            Command::InvertCheck(_) => &["invert-check"],
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn classify(err: &vfalign::Error) -> u8 {
    match err {
        vfalign::Error::ShapeMismatch { .. }
        | vfalign::Error::InvalidArgument(_)
        | vfalign::Error::Parse { .. }
        | vfalign::Error::UnsupportedVersion { .. }
        | vfalign::Error::Io(_) => EXIT_CONFIG,
        vfalign::Error::NonScalarRoot(_)
        | vfalign::Error::Singular(_)
        | vfalign::Error::NoConvergence { .. }
        | vfalign::Error::DegenerateBatch(_)
        | vfalign::Error::NonFinite(_) => EXIT_NUMERICAL,
    }
}

/// Swaps desk-scale fields for the paper's dimensions and replicate
/// counts; everything else in the config stays as written.
fn apply_paper_scale(config: &mut ExperimentConfig) {
    match config {
        ExperimentConfig::ConjugatePair { family, replicates, dim, train, .. } => {
            *replicates = 30;
            if matches!(family, vfalign_cli::config::Family::LowRankRnn) {
                *dim = Some(64);
                train.batches = train.batches.max(6000);
            } else {
                train.batches = train.batches.max(2000);
            }
        }
        ExperimentConfig::LinearEquivalenceClass { dim, pairs, train, .. } => {
            *dim = 32;
            *pairs = 30;
            train.batches = train.batches.max(3000);
        }
        ExperimentConfig::SignGrid { dim, groups, pairs_per_cell, train, .. } => {
            if *dim != 0 && 32 % *dim == 0 {
                let scale = 32 / *dim;
                *dim = 32;
                for g in groups.iter_mut() {
                    *g *= scale;
                }
            }
            *pairs_per_cell = 15;
            train.batches = train.batches.max(3000);
        }
        ExperimentConfig::PairwiseMatrix { models, train, .. } => {
            if let vfalign_cli::config::ModelSet::Generated { dim, .. } = models {
                *dim = 64;
            }
            train.batches = train.batches.max(6000);
        }
        _ => {}
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = cli.command.args();

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut config = match ExperimentConfig::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if !cli.command.accepted_kinds().contains(&config.kind_name()) {
        eprintln!(
            "error: this subcommand expects a config of kind {:?}, got \"{}\"",
            cli.command.accepted_kinds(),
            config.kind_name()
        );
        return ExitCode::from(EXIT_CONFIG);
    }
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    if args.paper_scale {
        apply_paper_scale(&mut config);
        if let Err(e) = config.validate() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }

    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create output directory {}: {e}", args.out.display());
        return ExitCode::from(EXIT_CONFIG);
    }

    let ctx = ExpContext { workers: args.workers, stable_output: args.stable_output };
    eprintln!(
        "vfalign {BUILD_ID}: running {} (seed {})",
        config.kind_name(),
        config.seed()
    );
    let artifacts = match run_experiment(&config, &ctx) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(classify(&e));
        }
    };
    for a in &artifacts {
        let path = args.out.join(&a.name);
        if let Err(e) = std::fs::write(&path, &a.bytes) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
        eprintln!("wrote {}", path.display());
    }
    ExitCode::SUCCESS
}
