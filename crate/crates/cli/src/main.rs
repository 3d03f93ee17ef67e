use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use consensus_lab::{load_config, run_batch, run_scenario, CliError, Command, Format, Overrides};
use log::info;

#[derive(Parser)]
#[command(name = "consensus-lab", version, about = "Analyze and simulate non-symmetric consensus dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Connectivity, weight and spectrum only.
    Analyze(RunArgs),
    /// Full pipeline: analysis, RK4 integration, decay fit.
    Simulate(RunArgs),
    /// Discrete-time iteration y <- dt Gamma y.
    Discrete(RunArgs),
    /// Kernel discretization, constant-S check and grid refinement.
    Kernel(RunArgs),
    /// Simulate several scenarios concurrently, each into DIR/<name>.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated subset of csv,json,svg.
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<Format>>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Feedback gain for u = -alpha pi y.
    #[arg(long)]
    alpha: Option<f64>,
    /// Store the wall-clock runtime in summary.json (breaks byte-identical reruns).
    #[arg(long)]
    record_runtime: bool,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            formats: self.format.clone(),
            dt: self.dt,
            t_end: self.t_end,
            alpha: self.alpha,
            record_runtime: self.record_runtime,
        }
    }
}

fn report(err: &CliError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONSENSUS_LAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Analyze(a) => (Command::Analyze, a),
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Discrete(a) => (Command::Discrete, a),
        Sub::Kernel(a) => (Command::Kernel, a),
        Sub::Batch { configs, common } => {
            let mut overrides = common.overrides();
            let root = overrides.out.take();
            let mut loaded = Vec::new();
            for path in &configs {
                match load_config(path) {
                    Ok(c) => loaded.push(c),
                    Err(e) => return report(&e),
                }
            }
            let mut status = ExitCode::SUCCESS;
            let mut failed = false;
            for (name, result) in run_batch(loaded, root.as_deref(), &overrides) {
                match result {
                    Ok(files) => println!("{name}: {} files", files.len()),
                    Err(e) => {
                        eprintln!("{name}: error: {e}");
                        if !failed {
                            status = ExitCode::from(e.exit_code() as u8);
                            failed = true;
                        }
                    }
                }
            }
            return status;
        }
    };
    let result = load_config(&args.config).and_then(|config| run_scenario(command, config, &args.common.overrides()));
    match result {
        Ok((_, files)) => {
            for f in &files {
                info!("wrote {}", f.display());
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}
