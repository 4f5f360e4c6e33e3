use std::path::PathBuf;
use std::process::ExitCode;

use backstep_harness::output::output_root;
use backstep_harness::plant::PlantDescriptor;
use backstep_harness::presets::{run_experiment, run_gains, run_invert, run_kernels, DEFAULT_SEED};
use backstep_harness::{ExperimentConfig, HarnessError, Outcome, Preset};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "backstep",
    version,
    about = "Backstepping kernel construction, inversion and closed-loop simulation"
)]
struct Cli {
    /// Output root; overrides BACKSTEP_OUTPUT_ROOT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset: fig1a, fig1b, fig1c, kernels, gains, invert-demo, verify-all.
    Run { preset: String },
    /// Simulate from a TOML experiment file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build and export kernels for a plant (`pdae` or a plant file).
    Kernels {
        #[arg(long, default_value = "pdae")]
        plant: String,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
    /// Gain tables and chosen radius constants.
    Gains {
        #[arg(long, default_value = "pdae")]
        plant: String,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
    /// Invert a target state given as CSV (`w` or `x,w` columns).
    Invert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "pdae")]
        plant: String,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
}

fn dispatch(cli: &Cli) -> Result<Outcome, HarnessError> {
    let root = output_root(cli.out.as_deref());
    match &cli.command {
        Command::Run { preset } => {
            backstep_harness::run_preset(Preset::parse(preset)?, &root, cli.seed)
        }
        Command::Simulate { config } => run_experiment(&ExperimentConfig::load(config)?, &root),
        Command::Kernels { plant, order } => run_kernels(
            &PlantDescriptor::parse(plant).load()?,
            *order,
            &root,
            cli.seed,
        ),
        Command::Gains { plant, order } => {
            run_gains(&PlantDescriptor::parse(plant).load()?, *order, &root)
        }
        Command::Invert {
            input,
            plant,
            order,
        } => run_invert(input, &PlantDescriptor::parse(plant).load()?, *order, &root),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(out) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&out.summary).unwrap_or_default()
            );
            println!("artifacts: {}", out.dir.display());
            if out.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("verification failed; report in {}", out.dir.display());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
