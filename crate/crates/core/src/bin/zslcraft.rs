use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zslcraft::config::{parse_override, RunConfig};
use zslcraft::pipeline::{cmd_craft, cmd_eval, cmd_rebalance, cmd_synth, cmd_train};
use zslcraft::{par, Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "zslcraft",
    version,
    about = "Zero-shot learning by crafting frozen softmax rules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Primary output path, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long)]
    force: bool,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Override a config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark (--out sets the feature file).
    Synth(Common),
    /// Build a rule pool from class embeddings or visual prototypes.
    Craft(Common),
    /// Train the feature extractor against the frozen seen rules.
    Train(Common),
    /// Fit the seen/unseen discriminator of a trained model.
    Rebalance(Common),
    /// Score the test split and write a report.
    Eval(Common),
}

fn run(cli: Cli) -> Result<(), Error> {
    let (common, key) = match &cli.command {
        Command::Synth(c) => (c, "paths.features"),
        Command::Craft(c) => (c, "paths.rules"),
        Command::Train(c) => (c, "paths.model"),
        Command::Rebalance(c) => (c, "paths.disc"),
        Command::Eval(c) => (c, "paths.report"),
    };
    let mut overrides = common
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(out) = &common.out {
        overrides.push((key.to_string(), out.display().to_string()));
    }
    let cfg = RunConfig::load(&common.config, &overrides)?;
    let force = common.force;
    let written = par::with_threads(common.threads, || match cli.command {
        Command::Synth(_) => cmd_synth(&cfg, force).map(|o| o.written),
        Command::Craft(_) => cmd_craft(&cfg, force).map(|o| o.written),
        Command::Train(_) => cmd_train(&cfg, force).map(|o| o.written),
        Command::Rebalance(_) => cmd_rebalance(&cfg, force).map(|o| o.written),
        Command::Eval(_) => cmd_eval(&cfg, force).map(|o| {
            print!("{}", o.report.metrics_block());
            o.written
        }),
    })?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
