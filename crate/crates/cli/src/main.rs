use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use powerdensity::lm::AdjointKind;
use powerdensity_cli::commands::{cmd_mesh_info, cmd_reconstruct, cmd_simulate, cmd_verify};
use powerdensity_cli::config::parse_measurements;
use powerdensity_cli::{ExperimentConfig, Overrides, RunError, RunResult};

/// Levenberg-Marquardt conductivity reconstruction from power-density data.
#[derive(Debug, Parser)]
#[command(name = "pdlm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate exact and noisy power densities for a phantom.
    Simulate(Common),
    /// Reconstruct the conductivity from a `simulate` output directory.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the numerical verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Perturb the adjoint by this relative amount (negative control).
        #[arg(long, hide = true)]
        perturb_adjoint: Option<f64>,
    },
    /// Print mesh statistics; with --out also write the mesh.
    MeshInfo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_rings: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML with dotted keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for noise and verification (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Adjoint space: l2, h1 or h2.
    #[arg(long)]
    adjoint: Option<AdjointKind>,
    /// 1-based measurement subset, e.g. `1,2`.
    #[arg(long)]
    measurements: Option<String>,
}

impl Common {
    fn resolve(&self) -> RunResult<(ExperimentConfig, Option<String>)> {
        let (mut cfg, text) = match &self.config {
            Some(p) => {
                let (c, t) = ExperimentConfig::load(p)?;
                (c, Some(t))
            }
            None => (ExperimentConfig::default(), None),
        };
        let measurements = self.measurements.as_deref().map(parse_measurements).transpose()?;
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            adjoint: self.adjoint,
            measurements,
        }
        .apply(&mut cfg)?;
        Ok((cfg, text))
    }
}

fn run(cli: Cli) -> RunResult<()> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, text) = common.resolve()?;
            let m = cmd_simulate(&cfg, text.as_deref())?;
            println!(
                "simulated {} measurement(s) on {} nodes (noise std {}, seed {}) -> {}",
                m.bcs.len(),
                m.mesh.nodes,
                cfg.noise.std,
                cfg.noise.seed,
                cfg.output.dir.display()
            );
        }
        Command::Reconstruct { common, data } => {
            let (cfg, text) = common.resolve()?;
            let metrics = cmd_reconstruct(&cfg, text.as_deref(), &data)?;
            println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics are serializable"));
        }
        Command::Verify { common, perturb_adjoint } => {
            let (mut cfg, text) = common.resolve()?;
            if let Some(eps) = perturb_adjoint {
                cfg.verify.adjoint_perturbation = eps;
            }
            match cmd_verify(&cfg, text.as_deref()) {
                Ok(report) => print!("{}", report.to_text()),
                Err(e @ RunError::VerificationFailed { .. }) => {
                    if let Ok(t) = std::fs::read_to_string(cfg.output.dir.join("report.txt")) {
                        print!("{t}");
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        Command::MeshInfo { common, n_rings } => {
            let (mut cfg, _) = common.resolve()?;
            if let Some(n) = n_rings {
                cfg.mesh.n_rings = n;
            }
            let info = cmd_mesh_info(&cfg, common.out.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&info).expect("info is serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
