use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rankabs::report::csv_string;
use rankabs::risk::RiskReport;
use rankabs::bounds::NegativeRow;
use rankabs_cli::commands::{self, Output};
use rankabs_cli::config::ExperimentConfig;
use rankabs_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "rankabs", version, about = "Ranking with abstention: training, sweeps and bound verification")]
struct Cli {
    /// Experiment config (dotted `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Omit the timestamp comment so reruns produce byte-identical files.
    #[arg(long, global = true)]
    reproducible: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a sample of the configured distribution.
    Train,
    /// Report risks of a saved model.
    Eval {
        /// Model file; defaults to `model.txt` in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Distribution to evaluate on; defaults to the configured one.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Abstention loss over the γ × cost grid, mean and std over seeds.
    Sweep,
    /// Check the consistency bounds on random distributions and hypotheses.
    VerifyBounds {
        /// Multiplies every Γ by this factor. Test hook for the failure path.
        #[arg(long, hide = true)]
        inject_gamma_fault: Option<f64>,
    },
    /// Instances where surrogate excess vanishes while target excess does not.
    NegativeDemo,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = Output::new(cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone()), cli.reproducible);

    match cli.command {
        Command::Train => {
            let run = commands::cmd_train(&cfg, &out)?;
            let last = run.trace.last().expect("trace always holds the initial row");
            println!(
                "trained {} model: mean surrogate loss {}, target loss {} ({} epochs)",
                run.hypothesis.kind(),
                last.mean_surrogate_loss,
                last.mean_target_abstention_loss,
                cfg.train.epochs
            );
        }
        Command::Eval { model, data } => {
            let model = model.unwrap_or_else(|| out.dir.join(commands::MODEL_FILE));
            let reports = commands::cmd_eval(&cfg, &model, data.as_deref(), &out)?;
            let rows: Vec<Vec<String>> = reports.iter().map(RiskReport::csv_record).collect();
            print!("{}", csv_string(&RiskReport::CSV_HEADER, &rows));
        }
        Command::Sweep => {
            let table = commands::cmd_sweep(&cfg, &out)?;
            let header = table.header();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            print!("{}", csv_string(&header, &table.csv_records()));
        }
        Command::VerifyBounds { inject_gamma_fault } => {
            let run = commands::cmd_verify_bounds(&cfg, inject_gamma_fault.unwrap_or(1.0), &out)?;
            println!("{} checks, {} violations", run.rows.len(), run.violations);
            if run.violations > 0 {
                return Err(CliError::BoundViolation { violations: run.violations, checks: run.rows.len() });
            }
        }
        Command::NegativeDemo => {
            let rows = commands::cmd_negative_demo(&cfg, &out)?;
            let records: Vec<Vec<String>> = rows.iter().map(NegativeRow::csv_record).collect();
            print!("{}", csv_string(&NegativeRow::CSV_HEADER, &records));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
