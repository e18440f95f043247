//! `ragtune`: run searches, benchmark matrices, ablations and stability
//! studies, and turn finished runs into tables and plot files.

mod commands;
mod setup;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use setup::{EnvArgs, EvalArgs};

#[derive(Parser)]
#[command(name = "ragtune", version, about = "Budgeted search over RAG pipeline configurations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One controller, one seed, one environment.
    Run {
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value = "random")]
        algo: String,
        /// Controller hyperparameter, `name=value`; repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        budget: usize,
        /// On-disk evaluation cache directory.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Run directory for run.meta, trials.log and best.config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-question traces under <out>/traces.
        #[arg(long, requires = "out")]
        dump_traces: bool,
    },
    /// Env × algorithm × seed matrix from a manifest file.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Module-removal and fixed-dimension variants from a plan file.
    Ablate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Cross-seed dispersion of best scores across proxy sizes.
    Stability {
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long = "algos", value_delimiter = ',', default_value = "random")]
        algorithms: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "11,22,33")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 30)]
        budget: usize,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tables and plot files from finished runs.
    Report {
        /// Directory searched recursively for run directories.
        #[arg(long)]
        runs: PathBuf,
        /// Where to write the files (default: <runs>/report).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Interaction table with wins and average rank.
        #[arg(long)]
        table2: bool,
        /// Module-option preference matrix.
        #[arg(long)]
        fig2: bool,
        /// Best-so-far trajectories.
        #[arg(long)]
        fig3: bool,
        /// Gains over the random-trial mean.
        #[arg(long)]
        table13: bool,
        /// Space listing the options of the preference matrix.
        #[arg(long, default_value = "default-text")]
        space: String,
        /// Controller id whose runs form the random baseline.
        #[arg(long, default_value = "random")]
        random: String,
        /// Column order of the interaction table.
        #[arg(long, value_delimiter = ',')]
        env_order: Vec<String>,
    },
    /// Score predictions against references.
    Score {
        /// Line-delimited `{"id", "answer"}` records.
        #[arg(long)]
        pred: PathBuf,
        /// QA file with `{"id", "answers"}` records.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "default")]
        weights: String,
        #[arg(long)]
        raw_tokens: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a random synthetic environment definition.
    SynthGen {
        #[arg(long, default_value = "default-text")]
        space: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of pairwise interaction terms (0 = separable).
        #[arg(long, default_value_t = 0)]
        pairwise: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { env, eval, algo, params, seed, budget, cache, out, dump_traces } => {
            commands::run(&env, &eval, &algo, &params, seed, budget, cache.as_deref(), out.as_deref(), dump_traces)
        }
        Command::Bench { manifest, out, cache, workers } => commands::bench(&manifest, &out, cache.as_deref(), workers),
        Command::Ablate { spec, out, cache, workers } => commands::ablate(&spec, &out, cache.as_deref(), workers),
        Command::Stability { env, eval, sizes, algorithms, seeds, budget, out } => {
            commands::stability(&env, &eval, &sizes, &algorithms, &seeds, budget, out.as_deref())
        }
        Command::Report { runs, out, table2, fig2, fig3, table13, space, random, env_order } => {
            let all = !(table2 || fig2 || fig3 || table13);
            let which = commands::Sections { table2: table2 || all, fig2: fig2 || all, fig3: fig3 || all, table13: table13 || all, strict_table13: table13 };
            commands::report(&runs, out.as_deref(), which, &space, &random, &env_order)
        }
        Command::Score { pred, reference, weights, raw_tokens, out } => commands::score(&pred, &reference, &weights, raw_tokens, out.as_deref()),
        Command::SynthGen { space, seed, pairwise, noise_sigma, out } => commands::synth_gen(&space, seed, pairwise, noise_sigma, out.as_deref()),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
