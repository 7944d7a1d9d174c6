use clap::{Args, Parser, Subcommand};
use rsde_cli::config::{parse_config, Format, Invocation, Overrides, ParseError};
use rsde_cli::run::{run, RunError, EXIT_OK};
use std::path::PathBuf;
use std::process::ExitCode;

/// Reflected diffusions under compatible constraints.
#[derive(Parser)]
#[command(name = "rsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Seed for every random stream (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; changes wall time only
    #[arg(long)]
    workers: Option<usize>,
    /// Table format (overrides the config)
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct PlanetCommon {
    #[command(flatten)]
    common: Common,
    /// Proceed even when integrability of the Gibbs measure is not established
    #[arg(long)]
    override_integrability: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample boundary points and estimate the compatibility constant
    CheckCompat(Common),
    /// Simulate reflected paths
    Simulate(Common),
    /// Draw samples from the Gibbs measure
    SampleGibbs(Common),
    /// Time-reversal symmetry test from the Gibbs initial law
    Reversibility(Common),
    /// The particles-on-a-planet model
    #[command(subcommand)]
    Planet(PlanetCommand),
}

#[derive(Subcommand)]
enum PlanetCommand {
    /// Simulate the particle system and its physical local times
    Simulate(PlanetCommon),
    /// Equilibrium probability of A_eps across temperatures
    ClusteringCurve(PlanetCommon),
    /// Hypotheses, integrability, compatibility and cone inequalities
    CheckModel(PlanetCommon),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (invocation, common, override_integrability) = match cli.command {
        Command::CheckCompat(c) => (Invocation::CheckCompat, c, false),
        Command::Simulate(c) => (Invocation::Simulate, c, false),
        Command::SampleGibbs(c) => (Invocation::SampleGibbs, c, false),
        Command::Reversibility(c) => (Invocation::Reversibility, c, false),
        Command::Planet(p) => match p {
            PlanetCommand::Simulate(c) => (Invocation::PlanetSimulate, c.common, c.override_integrability),
            PlanetCommand::ClusteringCurve(c) => (Invocation::PlanetClusteringCurve, c.common, c.override_integrability),
            PlanetCommand::CheckModel(c) => (Invocation::PlanetCheckModel, c.common, c.override_integrability),
        },
    };
    let code = match execute(invocation, &common, override_integrability) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("rsde: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn execute(invocation: Invocation, common: &Common, override_integrability: bool) -> Result<Vec<PathBuf>, RunError> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        RunError::Parse(ParseError {
            line: None,
            message: format!("cannot read {}: {e}", common.config.display()),
        })
    })?;
    let overrides = Overrides {
        invocation: Some(invocation),
        seed: common.seed,
        out: common.out.clone(),
        format: common.format,
        override_integrability,
    };
    let config = parse_config(&text, &overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = common.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool.build().map_err(|e| RunError::Io(std::io::Error::other(e)))?;
    pool.install(|| run(&config))
}
