use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blowup::cli::{self, RunConfig, RunDir};
use blowup::Error;

/// Multi-point blow-up solutions of the singular Liouville equation.
#[derive(Parser, Debug)]
#[command(author, version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the resolved plan, grid size and memory estimate, then exit.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the hypotheses on N and the weights; print the splitting plan.
    Validate,
    /// Locate a critical point of the renormalized energy.
    FindCritical,
    /// Full pipeline: critical point, ansatz, Newton continuation in epsilon.
    Solve {
        /// Also write solution and ansatz fields as CSV.
        #[arg(long)]
        dump_fields: bool,
        /// Also evaluate the ansatz energy against its predicted expansion.
        #[arg(long)]
        energy: bool,
    },
    /// Energy along a polygon collapsing onto a source.
    CollisionScan,
    /// Evaluate G and H at the configured point pairs.
    GreenEval,
}

fn run(args: &Args) -> Result<(), Error> {
    let path = args.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if args.dry_run {
        cli::print(&serde_json::to_string_pretty(&cli::dry_run(&cfg)?)?);
        return Ok(());
    }
    let mut dir = RunDir::create(&cfg.output_dir)?;
    let name = match &args.command {
        Command::Validate => {
            let plan = cli::cmd_validate(&cfg, &mut dir)?;
            cli::print(&serde_json::to_string_pretty(&plan)?);
            "validate"
        }
        Command::FindCritical => {
            let c = cli::cmd_find_critical(&cfg, &mut dir)?;
            log::info!("critical point {:?}, |grad Psi| = {:e}", c.xi_star, c.grad_norm);
            "find-critical"
        }
        Command::Solve { dump_fields, energy } => {
            let extras = cli::SolveExtras { dump_fields: *dump_fields, energy: *energy };
            let sol = cli::cmd_solve(&cfg, &mut dir, extras)?;
            for r in &sol.reports {
                log::info!("eps = {}: total mass {:.6}, {} Newton steps", r.epsilon, r.total_mass, r.newton_iters);
            }
            "solve"
        }
        Command::CollisionScan => {
            cli::cmd_collision_scan(&cfg, &mut dir)?;
            "collision-scan"
        }
        Command::GreenEval => {
            cli::cmd_green_eval(&cfg, &mut dir)?;
            "green-eval"
        }
    };
    dir.finish(name, &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    // clap's own usage errors exit with 2, which is reserved here
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(cli::EXIT_USAGE as u8) } else { ExitCode::SUCCESS };
        }
    };
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
