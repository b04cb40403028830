use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use staflow::commands::{self, parse_overrides, RunConfig};

/// Train and analyse state/flow networks on motor-imagery EEG.
///
/// Every subcommand reads an optional JSON config; any `--key value` after it
/// overrides a field (dotted keys reach nested fields, e.g. `--train.lr 3e-4`).
/// `STAFLOW_THREADS` caps how many seeds train at once (default 1).
#[derive(Parser)]
#[command(name = "staflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Field overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test pair of EEGB files.
    Synth(Common),
    /// Train over several seeds; write checkpoint, histories and metrics.
    Train(Common),
    /// Compare model variants under identical data and seeds.
    Ablate(Common),
    /// Write spatial weights and per-stage features of a checkpoint.
    Export(Common),
    /// Score a checkpoint on a test set.
    Eval(Common),
}

fn run(cli: Cli) -> staflow::Result<String> {
    let (common, which) = match &cli.command {
        Command::Synth(c) => (c, "synth"),
        Command::Train(c) => (c, "train"),
        Command::Ablate(c) => (c, "ablate"),
        Command::Export(c) => (c, "export"),
        Command::Eval(c) => (c, "eval"),
    };
    let cfg = RunConfig::load(common.config.as_deref(), &parse_overrides(&common.overrides)?)?;
    let out = cfg.out_dir.display();
    Ok(match which {
        "synth" => {
            let p = commands::cmd_synth(&cfg)?;
            format!("wrote {} and {}", p.train_file.display(), p.test_file.display())
        }
        "train" => commands::render_table(&[commands::cmd_train(&cfg)?]) + &format!("outputs in {out}"),
        "ablate" => commands::render_table(&commands::cmd_ablate(&cfg)?.variants) + &format!("outputs in {out}"),
        "export" => {
            let s = commands::cmd_export(&cfg)?;
            let mut msg: String = s.fisher.iter().map(|(k, v)| format!("fisher {k:<6} {v:.4}\n")).collect();
            msg += &format!("wrote {} files in {out}", s.files.len());
            msg
        }
        _ => commands::render_table(&[commands::cmd_eval(&cfg)?]) + &format!("outputs in {out}"),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("staflow: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
