use clap::{Parser, Subcommand};
use gmcp_cli::commands;
use gmcp_cli::config::{read_toml, AdaptationConfig, DesignConfig, SimulationFile};
use gmcp_cli::error::{CliError, Result};
use gmcp_cli::report::{Format, Report};
use gmcp_cli::state::TrialState;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Two-stage adaptive testing with graphical weighting.
#[derive(Parser)]
#[command(name = "gmcp", version)]
struct Cli {
    /// Output format of the reports.
    #[arg(long, value_enum, global = true, default_value_t)]
    format: Format,
    /// Write reports to this file instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a design config.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the closure weights of the design graph.
    Weights {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute the planned boundaries and create a state file.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
    /// Record the stage-one p-values.
    Interim {
        #[arg(long)]
        state: PathBuf,
        /// One p-value per hypothesis, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<String>,
    },
    /// Record the interim design changes.
    Adapt {
        #[arg(long)]
        state: PathBuf,
        /// Adaptation config.
        #[arg(long)]
        config: PathBuf,
    },
    /// Record the incremental stage-two p-values and decide.
    Final {
        #[arg(long)]
        state: PathBuf,
        /// One entry per hypothesis, `na` for those not continued.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<String>,
    },
    /// Print every report recorded in a state file.
    Show {
        #[arg(long)]
        state: PathBuf,
    },
    /// Run a batch of simulations.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn parse_p(values: &[String]) -> Result<Vec<Option<f64>>> {
    values
        .iter()
        .map(|v| {
            let v = v.trim();
            if v.eq_ignore_ascii_case("na") || v == "-" {
                return Ok(None);
            }
            v.parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::Invalid(format!("`{v}` is not a p-value")))
        })
        .collect()
}

fn emit(reports: &[Report], format: Format, out: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    for (n, r) in reports.iter().enumerate() {
        if n > 0 {
            text.push('\n');
        }
        text.push_str(&r.render(format)?);
    }
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.into(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    let reports = match cli.command {
        Command::Validate { config } => vec![commands::validate(&read_toml::<DesignConfig>(&config)?)?],
        Command::Weights { config } => vec![commands::weights(&read_toml::<DesignConfig>(&config)?)?],
        Command::Plan { config, state } => {
            let (s, r) = commands::plan(&read_toml::<DesignConfig>(&config)?)?;
            s.save(&state)?;
            vec![r]
        }
        Command::Interim { state, p } => {
            let p1: Option<Vec<f64>> = parse_p(&p)?.into_iter().collect();
            let p1 = p1.ok_or_else(|| CliError::Invalid("every stage-one p-value is required".into()))?;
            let (s, r) = commands::interim(&TrialState::load(&state)?, &p1)?;
            s.save(&state)?;
            vec![r]
        }
        Command::Adapt { state, config } => {
            let (s, r) = commands::adapt(&TrialState::load(&state)?, &read_toml::<AdaptationConfig>(&config)?)?;
            s.save(&state)?;
            vec![r]
        }
        Command::Final { state, p } => {
            let (s, r) = commands::finalize(&TrialState::load(&state)?, &parse_p(&p)?)?;
            s.save(&state)?;
            r
        }
        Command::Show { state } => commands::show(&TrialState::load(&state)?)?,
        Command::Simulate { config, seed, threads } => {
            let mut file = read_toml::<SimulationFile>(&config)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            if threads.is_some() {
                file.threads = threads;
            }
            vec![commands::simulate(&file)?]
        }
    };
    emit(&reports, cli.format, out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
