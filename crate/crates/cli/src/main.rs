use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eqrom::harness::{
    self, build_basis_stage, build_rom_stage, metrics_stage, run_rom_stage, simulate_fom_stage,
    ExperimentConfig, ExperimentKind,
};

#[derive(Parser)]
#[command(name = "eqrom", version, about = "Energy-quadratized reduced-order models for nonlinear wave equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full-order model and store snapshots.
    SimulateFom(Common),
    /// Build the cotangent-lift and auxiliary bases from stored snapshots.
    BuildBasis(Common),
    /// Project the reduced operators for every dimension and method.
    BuildRom(Common),
    /// Integrate every stored reduced model.
    RunRom(Common),
    /// Run a whole experiment and write all CSV outputs.
    Experiment(Common),
    /// Compute metrics from stored trajectories and write the CSV outputs.
    Metrics(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file; keys override the preset of `[experiment] kind`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset to use when no configuration file is given.
    #[arg(long, value_name = "KIND")]
    experiment: Option<String>,
    /// Use the full-size grids instead of the desk-scale defaults.
    #[arg(long)]
    native_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.experiment) {
            (Some(path), None) => ExperimentConfig::load(path, self.native_scale)
                .with_context(|| format!("loading {}", path.display()))?,
            (None, Some(kind)) => {
                let kind: ExperimentKind = kind.parse()?;
                ExperimentConfig::preset(kind, self.native_scale)
            }
            (Some(_), Some(_)) => bail!("pass either --config or --experiment, not both"),
            (None, None) => bail!(
                "pass --config <path> or --experiment <{}>",
                ExperimentKind::ALL.map(|k| k.as_str()).join("|")
            ),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SimulateFom(c) => report_written(&simulate_fom_stage(&c.load()?)?),
        Command::BuildBasis(c) => report_written(&build_basis_stage(&c.load()?)?),
        Command::BuildRom(c) => report_written(&build_rom_stage(&c.load()?)?),
        Command::RunRom(c) => report_written(&run_rom_stage(&c.load()?)?),
        Command::Experiment(c) => {
            let cfg = c.load()?;
            eprintln!("{}", cfg.describe());
            harness::run_experiment(&cfg)?;
            println!("results in {}", cfg.out_dir.display());
        }
        Command::Metrics(c) => {
            let cfg = c.load()?;
            let out = metrics_stage(&cfg)?;
            harness::write_outputs(&out, &cfg.out_dir)?;
            println!("results in {}", cfg.out_dir.display());
        }
    }
    Ok(())
}
