use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use fairco::envs::movies::{prepare_environment, read_groups};
use fairco::envs::{ingest_ratings, synthetic_ratings, EnvSpec, FactorizeOptions, MovieEnvironment};
use fairco::policies::{PersonalizedConfig, PolicyConfig, PolicyKind, RelevanceSource, DEFAULT_LAMBDA};
use fairco::runner::{run_experiment, run_sweep, write_csv, write_sweep_csv, ExperimentConfig, SweepParam};
use fairco::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fairco",
    version,
    about = "Fair and unbiased dynamic learning-to-rank simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy for several trials and write per-checkpoint metrics.
    Simulate(RunArgs),
    /// Repeat `simulate` over a list of values of one parameter.
    Sweep {
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Build a movie environment artifact from a ratings file.
    PrepareMovies(PrepareArgs),
}

/// Options shared by `simulate` and `sweep`. A `--config` JSON file with the
/// same keys supplies defaults; flags on the command line take precedence.
#[derive(Args, Deserialize, Default, Clone, Debug)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct RunArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// news | movies
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    users: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_interval: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Movie environment JSON, or a polarity list for the news environment.
    #[arg(long)]
    env_file: Option<PathBuf>,
    #[arg(long)]
    block_users: Option<u64>,
    #[arg(long)]
    p_neg: Option<f64>,
    #[arg(long)]
    group_split: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Number of news articles.
    #[arg(long)]
    items: Option<usize>,
    /// global | personalized; defaults to personalized for movies.
    #[arg(long)]
    relevance: Option<String>,
    #[arg(long)]
    experiment_id: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunArgs {
    fn resolved(&self) -> Result<RunArgs> {
        let mut base = match &self.config {
            Some(path) => serde_json::from_str::<RunArgs>(&std::fs::read_to_string(path)?)?,
            None => RunArgs::default(),
        };
        let top = self;
        overlay!(base, top; env, policy, users, trials, lambda, seed, log_interval, out, env_file,
            block_users, p_neg, group_split, workers, items, relevance, experiment_id);
        Ok(base)
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        let args = self.resolved()?;
        let kind: PolicyKind = args
            .policy
            .as_deref()
            .ok_or_else(|| Error::Config("--policy is required".into()))?
            .parse()?;
        let env_name = args.env.as_deref().unwrap_or("news");
        let env = match env_name {
            "news" => {
                let n_items = args.items.unwrap_or(30);
                EnvSpec::News {
                    n_items,
                    group_split: args.group_split.unwrap_or(n_items / 2),
                    p_neg: args.p_neg.unwrap_or(0.5),
                    block_users: args.block_users.unwrap_or(0),
                    polarity_file: args.env_file.clone(),
                }
            }
            "movies" => {
                let path = args
                    .env_file
                    .as_deref()
                    .ok_or_else(|| Error::Config("--env-file is required for the movies environment".into()))?;
                EnvSpec::Movies(Arc::new(MovieEnvironment::read_json(path)?))
            }
            other => return Err(Error::Config(format!("unknown environment '{other}'"))),
        };
        let mut policy = PolicyConfig::new(kind);
        policy.lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
        policy.relevance = match args.relevance.as_deref() {
            Some(s) => s.parse()?,
            None if env_name == "movies" => RelevanceSource::Personalized,
            None => RelevanceSource::Global,
        };
        policy.personalized = Some(PersonalizedConfig::new(env.feature_dim()));
        let mut config = ExperimentConfig::new(env, policy);
        if let Some(id) = args.experiment_id {
            config.experiment_id = id;
        }
        config.n_users = args.users.unwrap_or(3000);
        config.n_trials = args.trials.unwrap_or(1);
        config.seed = args.seed.unwrap_or(0);
        config.log_interval = args.log_interval.unwrap_or(fairco::runner::DEFAULT_LOG_INTERVAL);
        config.workers = args.workers.unwrap_or(1);
        config.validate()?;
        Ok(config)
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match self.resolved()?.out {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout())),
        })
    }
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Ratings CSV with user,item,rating rows.
    #[arg(long, required_unless_present = "synthetic")]
    ratings: Option<PathBuf>,
    /// Generate this many synthetic users instead of reading a ratings file.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 100)]
    movies: usize,
    #[arg(long, default_value_t = 10_000)]
    users: usize,
    /// Most-rated movies considered before the variance filter.
    #[arg(long, default_value_t = 300)]
    pool: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.02)]
    regularization: f64,
    /// item,group CSV; movies are otherwise grouped by index modulo 5.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn prepare(args: &PrepareArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let triples = match (&args.ratings, args.synthetic) {
        (_, Some(n_users)) => synthetic_ratings(n_users, args.pool.max(args.movies), 0.5, &mut rng),
        (Some(path), None) => ingest_ratings(path)?,
        (None, None) => return Err(Error::Config("--ratings or --synthetic is required".into())),
    };
    info!("{} ratings loaded", triples.len());
    let mut options = FactorizeOptions::new(args.dim);
    options.epochs = args.epochs;
    options.learning_rate = args.learning_rate;
    options.regularization = args.regularization;
    let map = args.groups.as_deref().map(read_groups).transpose()?;
    if map.is_none() {
        warn!("no --groups file; assigning movies to groups by index");
    }
    let env = prepare_environment(
        &triples,
        args.movies,
        args.users,
        args.pool,
        &options,
        map.as_ref(),
        &mut rng,
    )?;
    env.write_json(&args.out)?;
    info!(
        "wrote {} users x {} movies to {}",
        env.n_users(),
        env.n_movies(),
        args.out.display()
    );
    Ok(())
}

fn partial(err: Error, out: Option<&Path>) -> Error {
    let place = out.map_or("stdout".to_string(), |p| p.display().to_string());
    Error::Contract(format!("partial output written to {place}: {err}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let config = args.experiment()?;
            let result = run_experiment(&config)?;
            write_csv(&result, args.output()?)?;
            if let Some(e) = result.failure {
                return Err(partial(e, args.resolved()?.out.as_deref()));
            }
            Ok(())
        }
        Command::Sweep { param, values, run } => {
            let param: SweepParam = param.parse()?;
            let config = run.experiment()?;
            let mut sweep = run_sweep(&config, param, &values)?;
            write_sweep_csv(&sweep, run.output()?)?;
            let failed = sweep.blocks.iter_mut().find_map(|(_, r)| r.failure.take());
            if let Some(e) = failed {
                return Err(partial(e, run.resolved()?.out.as_deref()));
            }
            Ok(())
        }
        Command::PrepareMovies(args) => prepare(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
