//! Command-line pipeline: ingest, train, score, cluster, project, bench, serve.
//!
//! Every command reads and writes one store directory. Commands that write
//! take the store's advisory lock for their whole run.

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use shiftscope_core::bench::{run_benchmark, BenchConfig};
use shiftscope_core::clustering::{cluster_test_split, DEFAULT_N_CLUSTERS, DEFAULT_TOP_K};
use shiftscope_core::dre::{train_dre, TrainConfig};
use shiftscope_core::projection::{load_external_projection, Projection};
use shiftscope_core::scoring::{score_dataset, ForestParams, ScoreMethod, Scorer};
use shiftscope_core::store::StoreDir;
use shiftscope_core::Error;
use shiftscope_service::{AppState, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "shiftscope", version, about = "Covariate-shift analysis over pre-computed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a store (or add a space to one) from a manifest and an embedding file.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        space: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the density-ratio model and derive the `dre` space.
    Train(TrainArgs),
    /// Score every instance and replace the store's score table.
    Score {
        #[arg(long)]
        store: PathBuf,
        /// density-ratio, iforest or center.
        #[arg(long)]
        method: ScoreMethod,
        #[arg(long)]
        space: String,
    },
    /// Ward-cluster the test split.
    Cluster {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        space: String,
        #[arg(long, default_value_t = DEFAULT_N_CLUSTERS)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top: usize,
    },
    /// Compute or import the 2D overview coordinates of the test split.
    Project {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, required_unless_present = "import")]
        space: Option<String>,
        #[arg(long, value_parser = ["pca"], conflicts_with = "import")]
        method: Option<String>,
        /// CSV with `id,x,y` rows covering the test split.
        #[arg(long = "import", value_name = "CSV")]
        import: Option<PathBuf>,
    },
    /// Attribute-shift benchmark; writes a CSV report.
    Bench {
        #[arg(long)]
        store: PathBuf,
        /// Comma-separated scoring methods.
        #[arg(long, value_delimiter = ',', default_value = "density-ratio,iforest,center")]
        methods: Vec<ScoreMethod>,
        /// Comma-separated space names.
        #[arg(long, value_delimiter = ',', required = true)]
        spaces: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the read-only API on 127.0.0.1.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub space: String,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("cannot start the async runtime: {0}")]
    Runtime(#[source] std::io::Error),
}

impl CliError {
    /// Process exit status. Every engine error kind has its own code; 2 is
    /// left to argument parsing.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => core_exit_code(e),
            CliError::Service(ServiceError::Store(e)) => core_exit_code(e),
            CliError::Service(ServiceError::PortUnavailable { .. }) => 40,
            CliError::Service(ServiceError::Server(_)) => 41,
            CliError::Runtime(_) => 42,
        }
    }
}

pub fn core_exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 10,
        Error::Parse(_) => 11,
        Error::DuplicateId(_) => 12,
        Error::AttributeSchemaMismatch { .. } => 13,
        Error::BadMagic => 14,
        Error::UnsupportedVersion(_) => 15,
        Error::CountMismatch { .. } => 16,
        Error::RowCountMismatch { .. } => 17,
        Error::NonFiniteValue { .. } => 18,
        Error::DimensionMismatch { .. } => 19,
        Error::SplitEmpty(_) => 20,
        Error::NonPositiveRatio(_) => 21,
        Error::DivergedLoss { .. } => 22,
        Error::InvalidConfig(_) => 23,
        Error::UnknownSpace(_) => 24,
        Error::UnknownInstance(_) => 25,
        Error::UnknownCluster(_) => 26,
        Error::MissingModel => 27,
        Error::MissingArtifact(_) => 28,
        Error::TooFewPoints { .. } => 29,
        Error::DegenerateVariance => 30,
        Error::ScoreCoverageGap(_) => 31,
        Error::CoverageGap(_) => 32,
        Error::OutOfRange(_) => 33,
        Error::SingleClass => 34,
        Error::NoAttributes => 35,
        Error::StoreLocked(_) => 36,
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            manifest,
            embeddings,
            space,
            out,
        } => ingest(&manifest, &embeddings, &space, &out),
        Command::Train(args) => train(&args),
        Command::Score { store, method, space } => score(&store, method, &space),
        Command::Cluster { store, space, k, top } => cluster(&store, &space, k, top),
        Command::Project {
            store,
            space,
            method: _,
            import,
        } => project(&store, space.as_deref(), import.as_deref()),
        Command::Bench {
            store,
            methods,
            spaces,
            seed,
            out,
        } => bench(&store, &methods, &spaces, seed, &out),
        Command::Serve { store, port } => serve(&store, port),
    }
}

fn ingest(manifest: &Path, embeddings: &Path, space: &str, out: &Path) -> Result<(), CliError> {
    let dir = StoreDir::new(out);
    let _lock = dir.lock()?;
    let store = dir.ingest(manifest, embeddings, space)?;
    tracing::info!(
        "ingested {} train / {} test instances into space {space:?} at {}",
        store.train_indices().len(),
        store.test_indices().len(),
        out.display()
    );
    Ok(())
}

fn train(args: &TrainArgs) -> Result<(), CliError> {
    let dir = StoreDir::new(&args.store);
    let _lock = dir.lock()?;
    let store = dir.open()?.store;
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch,
        hidden_dim: args.hidden,
        seed: args.seed,
    };
    let outcome = train_dre(&store, &args.space, &config)?;
    for (epoch, loss) in outcome.trained.history.iter().enumerate() {
        tracing::info!("epoch {:>3}  loss {loss:.6}", epoch + 1);
    }
    dir.save_model(&outcome.trained)?;
    dir.save_space(&outcome.latent)?;
    Ok(())
}

fn score(root: &Path, method: ScoreMethod, space: &str) -> Result<(), CliError> {
    let dir = StoreDir::new(root);
    let _lock = dir.lock()?;
    let loaded = dir.open()?;
    let store = &loaded.store;
    let table = match method {
        ScoreMethod::DensityRatio => {
            let trained = loaded.model.as_ref().ok_or(Error::MissingModel)?;
            if trained.space != space {
                return Err(Error::InvalidConfig(format!(
                    "the ratio model was trained on space {:?}, not {space:?}",
                    trained.space
                ))
                .into());
            }
            score_dataset(store, space, Scorer::DensityRatio(Some(&trained.model)))?
        }
        ScoreMethod::IsolationForest => score_dataset(store, space, Scorer::IsolationForest(ForestParams::default()))?,
        ScoreMethod::CenterDistance => score_dataset(store, space, Scorer::CenterDistance)?,
    };
    dir.save_scores(store, &table)?;
    tracing::info!("scored {} instances with {method} in {space:?}", table.len());
    Ok(())
}

fn cluster(root: &Path, space: &str, k: usize, top: usize) -> Result<(), CliError> {
    let dir = StoreDir::new(root);
    let _lock = dir.lock()?;
    let store = dir.open()?.store;
    let assignment = cluster_test_split(&store, space, k)?;
    dir.save_clusters(&store, &assignment, top)?;
    tracing::info!("{} test instances in {k} clusters", assignment.members.len());
    Ok(())
}

fn project(root: &Path, space: Option<&str>, import: Option<&Path>) -> Result<(), CliError> {
    let dir = StoreDir::new(root);
    let _lock = dir.lock()?;
    let store = dir.open()?.store;
    let (projection, space) = match (import, space) {
        (Some(csv), space) => (load_external_projection(&store, csv)?, space),
        (None, Some(space)) => (Projection::pca_of_test_split(&store, space)?, Some(space)),
        (None, None) => return Err(Error::InvalidConfig("project needs --space or --import".into()).into()),
    };
    dir.save_projection(&store, &projection, space)?;
    tracing::info!("{} projected points", projection.points.len());
    Ok(())
}

fn bench(root: &Path, methods: &[ScoreMethod], spaces: &[String], seed: u64, out: &Path) -> Result<(), CliError> {
    let store = StoreDir::new(root).open()?.store;
    let config = BenchConfig {
        seed,
        ..BenchConfig::default()
    };
    let report = run_benchmark(&store, methods, spaces, &config)?;
    let file = std::fs::File::create(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    report.write_csv(std::io::BufWriter::new(file))?;
    for (method, mean) in report.means() {
        tracing::info!("{method:<18} mean AUROC {mean:.4}");
    }
    Ok(())
}

fn serve(root: &Path, port: u16) -> Result<(), CliError> {
    let state = AppState::open(root)?;
    if state.store().scores.is_none() {
        return Err(Error::MissingArtifact("scores.csv (run score before serve)").into());
    }
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::Runtime)?;
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    runtime.block_on(shiftscope_service::serve(state, addr))?;
    Ok(())
}
