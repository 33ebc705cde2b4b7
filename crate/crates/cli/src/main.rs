use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use odp_cli::{cmd_ceiling, cmd_compare, cmd_evaluate, cmd_gen_data, cmd_train, CeilingKind, CliResult, Config, Overrides};
use odp_core::policies::PolicyKind;

#[derive(Parser)]
#[command(name = "odp", version, about = "Courier order-dispatching experiments")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured run directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Policies to act on (repeatable or comma separated), e.g. neuradp,
    /// myopic-dc, drl-cf. Defaults to `evaluate.policies`.
    #[arg(long, global = true, value_delimiter = ',')]
    policy: Vec<PolicyKind>,
    /// Ceiling to compute or compare against.
    #[arg(long, global = true)]
    ceiling: Option<CeilingKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the city, travel times, arrival profile, shifts and day streams.
    GenData,
    /// Train the learning policies and write their checkpoints.
    Train,
    /// Evaluate policies greedily on the test days.
    Evaluate,
    /// Compute the Direct (and optionally Fixed) ceiling per test day.
    Ceiling,
    /// Build the comparison table from stored evaluations and ceilings.
    Compare,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> CliResult<()> {
    let ov = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
        ceiling: cli.ceiling,
    };
    let cfg = Config::resolve(cli.config.as_deref(), &ov)?;
    let policies = if cli.policy.is_empty() { cfg.policy_kinds()? } else { cli.policy };
    match cli.command {
        Command::GenData => {
            let m = cmd_gen_data(&cfg)?;
            eprintln!(
                "wrote {} training days ({} orders) and {} test days ({} orders) to {}",
                m.train_days,
                m.train_orders,
                m.test_days,
                m.test_orders,
                cfg.out_dir.display()
            );
        }
        Command::Train => {
            for kind in policies.into_iter().filter(|k| !matches!(k, PolicyKind::Myopic(_))) {
                let s = cmd_train(&cfg, kind)?;
                eprintln!("{}: {} updates, checkpoint {}", s.policy, s.updates, s.checkpoint.display());
            }
        }
        Command::Evaluate => {
            for kind in policies {
                let r = cmd_evaluate(&cfg, kind)?;
                let f = r.aggregate.fulfilled;
                eprintln!("{}: fulfilled {:.2} ± {:.2} per day", r.policy, f.mean, f.std);
            }
        }
        Command::Ceiling => {
            let r = cmd_ceiling(&cfg, cfg.evaluate.ceiling)?;
            eprintln!("ceiling computed for {} test days", r.days.len());
        }
        Command::Compare => {
            let t = cmd_compare(&cfg, &policies)?;
            println!("{}", odp_cli::report::compare_csv(&t).trim_end());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
