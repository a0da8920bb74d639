//! Configuration-driven experiment runner and artifact persistence.

pub mod config;
pub mod experiment;
pub mod io;
pub mod report;
pub mod stages;

use std::fs::{self, File};
use std::path::Path;

pub use config::{ConfigDoc, ExperimentConfig, ExperimentKind, Method, RomIntegrator};
pub use experiment::{compute_experiment, simulate_fom, simulate_kgz, EnergySeries, ExperimentOutput, FomRun, KgzRun};
pub use io::{load_matrix, save_matrix};
pub use report::{emit_metrics_csv, OfflineCost};
pub use stages::{build_basis_stage, build_rom_stage, metrics_stage, run_rom_stage, simulate_fom_stage};

use crate::error::{Error, Result};

/// Runs the experiment and writes `config.txt`, `metrics.csv`,
/// `timings.csv`, `offline.csv` and one `energy_*.csv` per run into the
/// configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::in_stage("persist")(e.into()))?;
    let output = compute_experiment(cfg)?;
    write_outputs(&output, &cfg.out_dir).map_err(Error::in_stage("persist"))?;
    Ok(output)
}

pub fn series_file_name(s: &EnergySeries) -> String {
    let mu = s.mu.map(|m| format!("_mu{m}")).unwrap_or_default();
    format!("energy_{}_{}_{}{mu}.csv", s.quantity, s.method, s.reduced_dim)
}

pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), output.config.describe())?;
    report::write_metrics_csv(File::create(dir.join("metrics.csv"))?, &output.reports)?;
    report::write_timings_csv(File::create(dir.join("timings.csv"))?, &output.reports)?;
    report::write_offline_csv(File::create(dir.join("offline.csv"))?, &output.offline)?;
    fs::write(
        dir.join("fom_seconds.txt"),
        format!("{:e}\n", output.fom_seconds),
    )?;
    for s in &output.series {
        report::write_series_csv(File::create(dir.join(series_file_name(s)))?, &s.times, &s.values)?;
    }
    Ok(())
}
