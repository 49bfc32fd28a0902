use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedshift_cli::config::RunConfig;
use fedshift_cli::output::{emit_plotdata, write_bundle};
use fedshift_cli::runner::{describe_partitions, run_sweep};
use fedshift_core::partition::ClientKind;

/// Federated continual-learning simulator under label, demographic, and
/// temporal shift.
#[derive(Parser)]
#[command(name = "fedshift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep a config describes and write its result bundle.
    Run {
        config: PathBuf,
        /// Directory the bundle lands under; falls back to
        /// FEDSHIFT_OUTPUT_ROOT, then ./runs.
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Check a config and list every problem, not just the first.
    Validate { config: PathBuf },
    Partition {
        #[command(subcommand)]
        command: PartitionCommand,
    },
    /// Rebuild the plots/ directory from an existing bundle.
    EmitPlotdata { bundle: PathBuf },
}

#[derive(Subcommand)]
enum PartitionCommand {
    /// Partition each seed's data and print the audit, training nothing.
    Describe { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            output_root,
        } => {
            let (cfg, dir) = load(&config)?;
            let outcome = run_sweep(&cfg, &dir)?;
            let root = resolve_output_root(output_root);
            let bundle = cfg.bundle_dir(&root);
            write_bundle(&cfg, &outcome, &bundle)?;
            println!(
                "wrote {} ({} strategies x {} seeds)",
                bundle.display(),
                outcome.strategies.len(),
                outcome.seeds.len()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let (cfg, _) = load(&config)?;
            match cfg.validate() {
                Ok(()) => {
                    println!("{}: ok", config.display());
                    Ok(())
                }
                Err(errors) => {
                    for e in &errors {
                        eprintln!("  {e}");
                    }
                    anyhow::bail!("{}: {} problem(s)", config.display(), errors.len());
                }
            }
        }
        Command::Partition {
            command: PartitionCommand::Describe { config },
        } => {
            let (cfg, dir) = load(&config)?;
            for (seed, report) in describe_partitions(&cfg, &dir)? {
                print_partition(seed, &report);
            }
            Ok(())
        }
        Command::EmitPlotdata { bundle } => {
            emit_plotdata(&bundle)?;
            println!("wrote {}", bundle.join("plots").display());
            Ok(())
        }
    }
}

fn load(path: &Path) -> anyhow::Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::from_path(path).map_err(|e| anyhow::anyhow!(e))?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    Ok((cfg, dir))
}

fn resolve_output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("FEDSHIFT_OUTPUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn print_partition(seed: u64, report: &fedshift_core::partition::PartitionReport) {
    println!(
        "seed {seed}: {} records, holdout {}, unallocated {}",
        report.total_records, report.holdout_size, report.unallocated
    );
    for client in &report.clients {
        let kind = match client.kind {
            ClientKind::Balanced => "balanced",
            ClientKind::Skewed => "skewed",
        };
        let dominant = client
            .dominant_attribute
            .map(|a| format!(", dominant attr {a}"))
            .unwrap_or_default();
        println!(
            "  client {} ({kind}{dominant}): shard {}, train leftover {}",
            client.client_id, client.shard_size, client.train_leftover
        );
        for task in &client.tasks {
            println!(
                "    task {}: train {} / test {}  classes {:?}",
                task.task, task.train_size, task.test_size, task.train_class_counts
            );
        }
    }
    if !report.relaxations.is_empty() {
        println!("  relaxed draws: {}", report.relaxations.len());
        for r in &report.relaxations {
            println!(
                "    client {} task {} attr {}: wanted {}, got {}",
                r.client_id, r.task, r.attribute, r.wanted, r.got
            );
        }
    }
    for w in &report.warnings {
        println!("  warning: {w}");
    }
}
