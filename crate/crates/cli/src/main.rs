use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use descent_planner::dataset::{ColumnSpec, DatasetFormat, DEFAULT_PARTITION_BYTES};
use descent_planner::estimator::SpeculationConfig;
use descent_planner_cli::{
    cmd_explain, cmd_generate, cmd_predict, cmd_run, exit, load_query, parse_task, CliError, ExplainOverrides,
    GenerateSpec, OutputFormat, Settings,
};

#[derive(Parser)]
#[command(
    name = "descent-planner",
    version,
    about = "Cost-based planner and engine for gradient-descent training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for sampling, speculation and execution.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Cost parameter file (key=value lines).
    #[arg(long)]
    cost_params: Option<PathBuf>,
    /// Measure CPU and IO costs on the speculation sample instead of using the static ones.
    #[arg(long)]
    calibrate: bool,
    /// Wall-clock budget per speculation run, in seconds.
    #[arg(long, default_value_t = 60.0)]
    speculation_budget: f64,
    /// Tolerance the speculation runs train to.
    #[arg(long, default_value_t = 0.05)]
    speculation_tolerance: f64,
    /// Number of records in the speculation sample.
    #[arg(long, default_value_t = 1000)]
    speculation_sample: usize,
    /// Write a JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the trained model here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Compute; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Target partition size in bytes.
    #[arg(long, default_value_t = DEFAULT_PARTITION_BYTES)]
    partition_bytes: usize,
}

impl Common {
    fn settings(&self) -> Result<Settings, CliError> {
        if !(self.speculation_budget >= 0.0 && self.speculation_budget.is_finite()) {
            return Err(CliError::new(
                exit::USAGE,
                "--speculation-budget must be a non-negative number",
            ));
        }
        if !(self.speculation_tolerance > 0.0) {
            return Err(CliError::new(exit::USAGE, "--speculation-tolerance must be positive"));
        }
        Ok(Settings {
            seed: self.seed,
            cost_params: self.cost_params.clone(),
            calibrate: self.calibrate,
            speculation: SpeculationConfig {
                tolerance: self.speculation_tolerance,
                budget: Duration::from_secs_f64(self.speculation_budget),
                sample_size: self.speculation_sample,
            },
            report: self.report.clone(),
            out: self.out.clone(),
            threads: self.threads,
            partition_bytes: self.partition_bytes,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Optimize and execute a query (text or file).
    Run {
        query: String,
        #[command(flatten)]
        common: Common,
    },
    /// Print the plan table for a query without training.
    Explain {
        query: String,
        #[command(flatten)]
        common: Common,
        /// Override the iteration limit.
        #[arg(long)]
        max_iter: Option<u64>,
        /// Drop the tolerance: every plan runs the iteration limit and no speculation happens.
        #[arg(long)]
        no_epsilon: bool,
    },
    /// Score a test file with a saved model.
    Predict {
        test: PathBuf,
        model: PathBuf,
        /// Test file format (dense or libsvm); defaults to the training format.
        #[arg(long)]
        format: Option<OutputFormat>,
        /// Label column of a dense test file.
        #[arg(long)]
        label_column: Option<usize>,
        /// Write one prediction per line here.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write a synthetic dataset with an 80/20 train/test split.
    Generate {
        #[arg(long, default_value = "classification")]
        task: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Label flip rate (classification) or noise std-dev (regression).
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Fraction of nonzero features.
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        #[arg(long, default_value = "dense")]
        format: OutputFormat,
        /// Output prefix: writes PREFIX.train, PREFIX.test and PREFIX.truth.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cmd {
        Command::Run { query, common } => {
            let q = load_query(&query)?;
            cmd_run(&q, &common.settings()?, &mut stdout).map(|_| ())
        }
        Command::Explain {
            query,
            common,
            max_iter,
            no_epsilon,
        } => {
            let q = load_query(&query)?;
            cmd_explain(
                &q,
                &common.settings()?,
                ExplainOverrides { max_iter, no_epsilon },
                &mut stdout,
            )
            .map(|_| ())
        }
        Command::Predict {
            test,
            model,
            format,
            label_column,
            predictions,
        } => {
            let format = match (format, label_column) {
                (Some(OutputFormat::Libsvm), _) => Some(DatasetFormat::LibsvmSparse),
                (Some(OutputFormat::Dense), l) | (None, l @ Some(_)) => Some(DatasetFormat::DenseCsv {
                    columns: ColumnSpec {
                        label: l.unwrap_or(1),
                        features: None,
                    },
                }),
                (None, None) => None,
            };
            cmd_predict(&test, &model, format, predictions.as_deref(), &mut stdout).map(|_| ())
        }
        Command::Generate {
            task,
            n,
            d,
            noise,
            seed,
            density,
            format,
            out,
        } => {
            let spec = GenerateSpec {
                task: parse_task(&task)?,
                n,
                d,
                noise,
                seed,
                density,
                format,
                prefix: out,
            };
            cmd_generate(&spec, &mut stdout).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
