use std::path::PathBuf;
use std::process::ExitCode;

use beam_core::asgraph::NoiseKind;
use beam_core::synth::{ScenarioSpec, SynthTopologySpec};
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::{Config, Overrides};
use error::Result;

#[derive(Parser)]
#[command(name = "beam", version, about = "AS-embedding routing anomaly detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// key = value config file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an embedding on the relationship file and write the model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Replay announcements and write alarms as JSONL.
    Detect {
        #[command(flatten)]
        common: Common,
    },
    /// Match alarms against the anomaly patterns and print EP tables.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Annotated alarms; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Path-difference matrices, alignments and projection for one alarm.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alarm: u64,
        /// Also export matrices, alignments and projection as files here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Inject relationship noise; the config seed picks the records.
    Perturb {
        #[command(flatten)]
        common: Common,
        /// R1, R2, W1 or W2
        #[arg(long)]
        kind: NoiseKind,
        /// Percentage of records to alter.
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Planar projection of model ASes as CSV.
    Project {
        #[command(flatten)]
        common: Common,
        /// Restrict to these ASNs.
        #[arg(long = "asn", value_delimiter = ',')]
        asns: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labelled scenario with its config file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        scenario_seed: u64,
        #[arg(long, default_value_t = 1)]
        topology_seed: u64,
        /// Legitimate announcements to generate.
        #[arg(long, default_value_t = 100_000)]
        churn: usize,
        #[arg(long, default_value_t = 4)]
        tier1: usize,
        #[arg(long, default_value_t = 20)]
        mid: usize,
        #[arg(long, default_value_t = 100)]
        stub: usize,
        #[arg(short, long, action = clap::ArgAction::Count)]
        verbose: u8,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    // configured from flags only, never from the environment
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

fn load(common: &Common) -> Result<Config> {
    init_logging(common.verbose);
    Config::load(common.config.as_deref(), &common.overrides)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { common } => commands::cmd_train(&load(&common)?),
        Cmd::Detect { common } => commands::cmd_detect(&load(&common)?),
        Cmd::Validate { common, out } => commands::cmd_validate(&load(&common)?, out.as_deref()),
        Cmd::Report { common, alarm, out_dir } => commands::cmd_report(&load(&common)?, alarm, out_dir.as_deref()),
        Cmd::Perturb { common, kind, ratio, out } => commands::cmd_perturb(&load(&common)?, kind, ratio, &out),
        Cmd::Project { common, asns, out } => commands::cmd_project(&load(&common)?, &asns, out.as_deref()),
        Cmd::Synth { out, scenario_seed, topology_seed, churn, tier1, mid, stub, verbose } => {
            init_logging(verbose);
            let spec = ScenarioSpec {
                topology: SynthTopologySpec { tier1, mid, stub, seed: topology_seed, ..SynthTopologySpec::default() },
                churn_announcements: churn,
                seed: scenario_seed,
                ..ScenarioSpec::default()
            };
            commands::cmd_synth(&spec, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
