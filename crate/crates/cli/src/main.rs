//! `isomix` command-line front end.
//!
//! Subcommands read a sample CSV (`time,status,q1[,q2,...]`), run one of the
//! estimators and write long-form tables or JSON. Every artifact carries the
//! resolved configuration, including the seed, so a run can be repeated.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod families;
mod output;

#[derive(Parser, Debug)]
#[command(name = "isomix", version, about = "Component CDFs from censored mixture data")]
struct Cli {
    /// Worker threads; 0 uses every available core. Defaults to 1 for
    /// `estimate` and `gof`, all cores otherwise.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the component CDFs on a grid.
    Estimate(EstimateArgs),
    /// Permutation test of F1 = F2.
    Test(TestArgs),
    /// Pointwise bootstrap standard errors and percentile bands.
    Bootstrap(BootstrapArgs),
    /// Monte-Carlo study of a built-in design described by a TOML file.
    Simulate(SimulateArgs),
    /// Distance between the estimates and two hypothesised CDFs.
    Gof(GofArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Options shared by every subcommand that fits a sample.
#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Sample CSV with header `time,status,q1[,q2,...]`.
    #[arg(long)]
    input: PathBuf,

    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,

    /// em_pava, binomial_pointwise, npmle_type1, npmle_type1_weighted,
    /// npmle_type2 or kaplan_meier (labeled rows only).
    #[arg(long, default_value = "em_pava")]
    method: String,

    /// `events` or `even:N:LO:HI`.
    #[arg(long, default_value = "events")]
    grid: String,

    #[arg(long = "max-iter", default_value_t = 500)]
    max_iter: usize,

    #[arg(long, default_value_t = 1e-8)]
    tol: f64,

    /// `pooled-km` or `uniform`.
    #[arg(long, default_value = "pooled-km")]
    init: String,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    fit: FitArgs,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Where to write the run manifest; defaults to `<output>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    fit: FitArgs,

    /// Number of permutations K.
    #[arg(long = "perms", default_value_t = 1000)]
    perms: usize,

    #[arg(long, env = "ISOMIX_SEED")]
    seed: Option<u64>,

    /// Compare the curves only at these times.
    #[arg(long, value_delimiter = ',')]
    restrict: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[command(flatten)]
    fit: FitArgs,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Number of bootstrap replicates B.
    #[arg(long = "boot", default_value_t = 200)]
    boot: usize,

    #[arg(long, default_value_t = 0.95)]
    level: f64,

    #[arg(long, env = "ISOMIX_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML design file.
    #[arg(long)]
    config: PathBuf,

    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Overrides `replicates` in the design file.
    #[arg(long)]
    replicates: Option<usize>,

    /// Overrides `permutations` in the design file.
    #[arg(long = "perms")]
    perms: Option<usize>,

    /// Overrides `bootstrap` in the design file.
    #[arg(long = "boot")]
    boot: Option<usize>,

    /// Overrides `seed` in the design file.
    #[arg(long, env = "ISOMIX_SEED")]
    seed: Option<u64>,

    /// Also write the first simulated data set in the input CSV layout.
    #[arg(long = "dump-sample")]
    dump_sample: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GofArgs {
    #[command(flatten)]
    fit: FitArgs,

    /// Hypothesised F1, e.g. `exponential:0.5` or `weibull:1.5:2`.
    #[arg(long)]
    f1: String,

    /// Hypothesised F2.
    #[arg(long)]
    f2: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let default_jobs = match cli.command {
        Command::Estimate(_) | Command::Gof(_) => 1,
        _ => 0,
    };
    let jobs = cli.jobs.unwrap_or(default_jobs);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(commands::EXIT_CONFIG);
    }

    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(&a.fit, a.format, a.manifest.as_deref()),
        Command::Test(a) => commands::test(&a.fit, a.perms, a.seed, a.restrict.as_deref()),
        Command::Bootstrap(a) => commands::bootstrap(&a.fit, a.format, a.boot, a.level, a.seed),
        Command::Simulate(a) => commands::simulate(&commands::SimulateRequest {
            config: &a.config,
            output: a.output.as_deref(),
            format: a.format,
            replicates: a.replicates,
            permutations: a.perms,
            bootstrap: a.boot,
            seed: a.seed,
            dump_sample: a.dump_sample.as_deref(),
        }),
        Command::Gof(a) => commands::gof(&a.fit, &a.f1, &a.f2),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
