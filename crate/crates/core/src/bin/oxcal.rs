use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use oxcal::caldac::CalCode;
use oxcal::cli::{self, CliError, RunOptions};
use oxcal::config::ExperimentConfig;
use oxcal::devices::CellState;

#[derive(Parser)]
#[command(
    name = "oxcal",
    version,
    about = "OxRAM crossbar offset-calibration simulator"
)]
struct Args {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Loop over every noise sample instead of drawing the averaged noise directly.
    #[arg(long, global = true)]
    exact_sampling: bool,
    /// Leave the generation timestamp out of JSON reports.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one ladder stage of a row and write CSV.
    Sweep {
        #[arg(long, default_value_t = 1)]
        row: usize,
        #[arg(long, default_value_t = 1)]
        stage: u8,
        /// Coarse field used by stage 2 and 3 sweeps.
        #[arg(long, default_value_t = 8)]
        coarse: u32,
        /// Fine field used by stage 3 sweeps.
        #[arg(long, default_value_t = 8)]
        fine: u32,
        /// Value of the fields below the swept stage.
        #[arg(long, default_value_t = 8)]
        pin: u8,
    },
    /// Run the three-stage calibration on a row.
    Autocal {
        #[arg(long, default_value_t = 1)]
        row: usize,
    },
    /// Calibrate many independently seeded arrays.
    Montecarlo {
        #[arg(long, default_value_t = 500)]
        trials: usize,
    },
    /// Read power of selected cells.
    Power {
        #[arg(long, default_value_t = 50.0)]
        v_read_mv: f64,
        /// `all`, `none` or `row,col;row,col` (1-based).
        #[arg(long, default_value = "all")]
        selection: String,
        #[arg(long, value_enum, default_value_t = StateArg::Lrs)]
        state: StateArg,
    },
    /// Control-frame codec.
    Frame {
        #[command(subcommand)]
        action: FrameAction,
    },
    /// Apply FORM/SET/RESET/READ (or ABC codes like 100) to one cell.
    Pulse {
        #[arg(long, default_value_t = 1)]
        row: usize,
        #[arg(long, default_value_t = 1)]
        col: usize,
        /// Comma-separated steps, e.g. `form,read,reset,000`.
        #[arg(long, value_delimiter = ',', required = true)]
        ops: Vec<String>,
    },
}

#[derive(Subcommand)]
enum FrameAction {
    /// Frame JSON to bitstring.
    Encode {
        /// Input file; stdin when omitted.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Bitstring to frame JSON.
    Decode {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Number of rows; the config's row count when omitted.
        #[arg(long)]
        rows: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Lrs,
    Hrs,
}

fn read_input(path: &Option<PathBuf>) -> Result<String, CliError> {
    match path {
        Some(p) => Ok(std::fs::read_to_string(p)?),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let opts = RunOptions {
        exact_sampling: args.exact_sampling,
        no_timestamp: args.no_timestamp,
    };
    let text = match args.command {
        Command::Sweep {
            row,
            stage,
            coarse,
            fine,
            pin,
        } => {
            let prefix =
                CalCode::new(coarse, fine, 0).map_err(|e| CliError::Usage(e.to_string()))?;
            cli::cmd_sweep(&cfg, row, stage, prefix, pin, &opts)?
        }
        Command::Autocal { row } => cli::cmd_autocal(&cfg, row, &opts)?,
        Command::Montecarlo { trials } => cli::cmd_montecarlo(&cfg, trials, &opts)?,
        Command::Power {
            v_read_mv,
            selection,
            state,
        } => {
            let state = match state {
                StateArg::Lrs => CellState::Lrs,
                StateArg::Hrs => CellState::Hrs,
            };
            cli::cmd_power(&cfg, v_read_mv, &selection, state, &opts)?
        }
        Command::Frame { action } => match action {
            FrameAction::Encode { input } => cli::cmd_frame_encode(&read_input(&input)?)?,
            FrameAction::Decode { input, rows } => {
                cli::cmd_frame_decode(&read_input(&input)?, rows.unwrap_or(cfg.rows))?
            }
        },
        Command::Pulse { row, col, ops } => {
            let ops = ops
                .iter()
                .map(|t| cli::parse_op(t))
                .collect::<Result<Vec<_>, _>>()?;
            cli::cmd_pulse(&cfg, row, col, &ops, &opts)?
        }
    };
    match &args.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
