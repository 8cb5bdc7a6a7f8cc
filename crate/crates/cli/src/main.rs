use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtsemnet::equiv::BOX;
use dtsemnet_cli::bench::{run_bench, BenchSpec};
use dtsemnet_cli::commands::{self, GradcheckTask, SplitName};
use dtsemnet_cli::config::{parse_seeds, RunConfig};
use dtsemnet_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "dtsemnet",
    version,
    about = "Train hard oblique decision trees by gradient descent"
)]
struct Cli {
    /// Single seed; for `train` and `bench` it replaces the configured seeds.
    #[arg(long, global = true, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list such as `1,2,3` or `0..10`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run config and write artifacts to --out-dir.
    Train { config: PathBuf },
    /// Score a checkpoint on a split rebuilt from its config and seed.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Write the checkpoint's decision tree as JSON.
    Export {
        checkpoint: PathBuf,
        /// Rewrite the tree to take raw feature values.
        #[arg(long)]
        destandardize: bool,
        /// Standardizer dump; defaults to standardizer.json beside the checkpoint.
        #[arg(long)]
        standardizer: Option<PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare network and tree decisions on random and boundary inputs.
    EquivCheck {
        checkpoint: PathBuf,
        /// Tree file to compare against instead of the checkpoint's own decoding.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Boundary points per decision node.
        #[arg(long, default_value_t = 100)]
        per_node: usize,
    },
    /// Compare analytic and finite-difference gradients on random networks.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, value_enum, default_value = "both")]
        task: GradcheckTask,
    },
    /// Run a benchmark spec and write bench.md and bench.json to --out-dir.
    Bench {
        spec: PathBuf,
        /// Report existing aggregates with a matching config hash instead of retraining.
        #[arg(long)]
        reuse: bool,
    },
}

impl Cli {
    fn seed_override(&self) -> CliResult<Option<Vec<u64>>> {
        match (&self.seed, &self.seeds) {
            (Some(s), _) => Ok(Some(vec![*s])),
            (None, Some(list)) => parse_seeds(list).map(Some),
            (None, None) => Ok(None),
        }
    }

    fn single_seed(&self) -> CliResult<u64> {
        match self.seed_override()?.as_deref() {
            None => Ok(0),
            Some([s]) => Ok(*s),
            Some(_) => Err(CliError::usage("this command takes a single --seed")),
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Train { config } => {
            let mut cfg = RunConfig::load(config)?;
            if let Some(seeds) = cli.seed_override()? {
                cfg.seeds = seeds;
                cfg.validate()?;
            }
            let agg = commands::train(&cfg, &cli.out_dir)?;
            println!(
                "{} h{}: {} {} over {} seeds (config {})",
                cfg.dataset,
                cfg.height,
                agg.metric,
                agg.summary,
                agg.per_seed.len(),
                &agg.config_hash[..12]
            );
            if let Some(msg) = commands::failed_seeds(&agg) {
                return Err(CliError::failure(msg));
            }
        }
        Command::Eval {
            checkpoint,
            config,
            split,
        } => {
            let cfg = RunConfig::load(config)?;
            commands::emit_json(&commands::eval(checkpoint, &cfg, *split)?, None)?;
        }
        Command::Export {
            checkpoint,
            destandardize,
            standardizer,
            output,
        } => {
            let doc = commands::export(checkpoint, *destandardize, standardizer.as_deref())?;
            commands::emit_json(&doc, output.as_deref())?;
        }
        Command::EquivCheck {
            checkpoint,
            tree,
            samples,
            per_node,
        } => {
            let seed = cli.single_seed()?;
            let report =
                commands::equiv_check(checkpoint, tree.as_deref(), *samples, *per_node, seed)?;
            println!(
                "{} box samples in [-{BOX}, {BOX}]^n, {} boundary points: {} mismatches",
                report.samples, report.boundary, report.mismatches
            );
            if report.mismatches > 0 {
                return Err(CliError::failure(format!(
                    "{} mismatches",
                    report.mismatches
                )));
            }
        }
        Command::Gradcheck { trials, task } => {
            let reports = commands::gradcheck(*task, *trials, cli.single_seed()?)?;
            commands::emit_json(&reports, None)?;
            if !commands::gradcheck_passed(&reports) {
                return Err(CliError::failure("gradient check exceeded tolerance"));
            }
        }
        Command::Bench { spec, reuse } => {
            let spec = BenchSpec::load(spec)?;
            let seeds = cli.seed_override()?;
            let report = run_bench(&spec, &cli.out_dir, seeds.as_deref(), *reuse);
            std::fs::create_dir_all(&cli.out_dir)?;
            let md = report.to_markdown();
            std::fs::write(cli.out_dir.join("bench.md"), &md)?;
            commands::emit_json(&report, Some(&cli.out_dir.join("bench.json")))?;
            print!("{md}");
            if report.failed() {
                return Err(CliError::failure("one or more bench rows failed"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
