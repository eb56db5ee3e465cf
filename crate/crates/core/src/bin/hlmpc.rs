use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hlmpc::config::load_config;
use hlmpc::oracle::brute_force_route;
use hlmpc::orchestrator::{Runner, FEASIBILITY_SLACK};
use hlmpc::output::emit_outputs;
use hlmpc::Error;

#[derive(Parser)]
#[command(name = "hlmpc", version, about = "Two-level learning MPC for repeated capacity-constrained task tours")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run the initial iteration plus R learning iterations and write results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Overrides controller.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides run.out_dir (default: ./out).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Turns both improvers on or off.
        #[arg(long, value_enum)]
        improver: Option<Switch>,
        /// Also write both safe sets as JSON.
        #[arg(long)]
        dump_learning: bool,
        #[arg(long)]
        horizon_high: Option<usize>,
        #[arg(long)]
        horizon_low: Option<usize>,
        #[arg(long)]
        shoot_budget: Option<usize>,
    },
    /// Exhaustive best route under the initial depletion estimate.
    #[command(hide = true)]
    OracleRoute {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run {
            config,
            iterations,
            seed,
            out_dir,
            improver,
            dump_learning,
            horizon_high,
            horizon_low,
            shoot_budget,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(r) = iterations {
                cfg.run.iterations = r;
            }
            if let Some(s) = seed {
                cfg.controller.seed = s;
            }
            if let Some(sw) = improver {
                cfg.controller.set_improvers(matches!(sw, Switch::On));
            }
            if let Some(n) = horizon_high {
                cfg.controller.horizon_high = n;
            }
            if let Some(n) = horizon_low {
                cfg.controller.horizon_low = n;
            }
            if let Some(n) = shoot_budget {
                cfg.controller.shoot_budget = n;
            }
            let out_dir = out_dir.or_else(|| cfg.run.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let mut runner = Runner::from_config(&cfg)?;
            println!("iteration  tasks  total_soc  total_time  route");
            let show = |runner: &Runner| {
                let m = runner.metrics.last().expect("at least one iteration");
                println!(
                    "{:>9}  {:>5}  {:>9.3}  {:>10.1}  {:?}",
                    m.iteration, m.tasks, m.total_soc, m.total_time, m.nodes
                );
            };
            show(&runner);
            for _ in 0..cfg.run.iterations {
                runner.run_iteration()?;
                show(&runner);
            }
            let files = emit_outputs(&runner, &out_dir, dump_learning)?;
            println!("wrote {} files to {}", files.len(), out_dir.display());
            Ok(())
        }
        Command::OracleRoute { config } => {
            let cfg = load_config(&config)?;
            let runner = Runner::from_config(&cfg)?;
            let route = brute_force_route(
                &runner.graph,
                runner.learning.theta(),
                &runner.dynamics.capacity_limits,
                FEASIBILITY_SLACK,
            )?;
            println!("{}", serde_json::to_string_pretty(&route).expect("route serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
