//! Staged pipeline behind the CLI subcommands. Each stage reads the files
//! written by the previous one from the output directory.
//!
//! Stages cover the single-parameter canonical experiments; parametric
//! Klein-Gordon and KGZ run through [`super::run_experiment`] only.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use super::config::{ExperimentConfig, ExperimentKind, Method};
use super::experiment::{
    aggregate, count_train, diverged, fom_integrator, integrate_rom, is_divergence, lifted_model,
    max_over, rows_of, simulate_fom, stack, timed, CellResult, EnergySeries, ExperimentOutput, Rom,
};
use super::io::{load_matrix, save_matrix};
use crate::basis::{cotangent_lift, truncated_svd, BlockDiagonalBasis};
use crate::error::{Error, Result};
use crate::hyperreduction::{build_deim, deim_basis_from_samples, force_samples, SpDeimRom};
use crate::lifting::CANONICAL_LABELS;
use crate::metrics::{self, Regime};
use crate::models::{build_laplacian, initial_condition, FomModel, FomState};
use crate::rom::{reduce_laplacian, HamiltonianRom, QuadraticRom};

pub const FOM_Q: &str = "fom_q.splm";
pub const FOM_P: &str = "fom_p.splm";
pub const FOM_T: &str = "fom_t.splm";
pub const FOM_SECONDS: &str = "fom_seconds.txt";
pub const PHI: &str = "phi.splm";

fn check_staged(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::KgParam | ExperimentKind::Kgz => Err(Error::InvalidConfig(format!(
            "staged commands do not support {}; use `experiment`",
            cfg.kind
        ))),
        _ => Ok(()),
    }
}

fn fom_model(cfg: &ExperimentConfig) -> Result<FomModel> {
    FomModel::new(cfg.grid()?, cfg.kind.model().nonlinearity(1.0)?)
}

fn save(dir: &Path, name: &str, m: &DMatrix<f64>, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    save_matrix(&path, m)?;
    written.push(path);
    Ok(())
}

fn load(dir: &Path, name: &str) -> Result<DMatrix<f64>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "missing {}; run the earlier stages first",
            path.display()
        )));
    }
    load_matrix(&path)
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn rom_file(method: &Method, dim: usize, part: &str) -> String {
    format!("rom_{}_{dim}_{part}.splm", method.label())
}

fn aux_file(method: &Method, k: usize) -> String {
    format!("aux_{}_{k}.splm", method.label())
}

fn traj_file(method: &Method, dim: usize) -> String {
    format!("traj_{}_{dim}.splm", method.label())
}

fn online_file(method: &Method, dim: usize) -> String {
    format!("online_{}_{dim}.txt", method.label())
}

struct StoredFom {
    times: Vec<f64>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
}

fn load_fom(dir: &Path) -> Result<StoredFom> {
    let q = load(dir, FOM_Q)?;
    let p = load(dir, FOM_P)?;
    let t = load(dir, FOM_T)?;
    if q.shape() != p.shape() || t.len() != q.ncols() {
        return Err(Error::Format("inconsistent FOM snapshot files".into()));
    }
    Ok(StoredFom {
        times: t.iter().copied().collect(),
        q,
        p,
    })
}

/// Integrates the FOM over the test horizon and stores `q`, `p` and times.
pub fn simulate_fom_stage(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    check_staged(cfg)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let model = fom_model(cfg)?;
    let state0 = initial_condition(cfg.kind.model(), &model.grid)?;
    let icfg = fom_integrator(cfg, cfg.test_end);
    let (run, secs) = timed(|| simulate_fom(&model, &state0, &icfg))?;
    let mut written = Vec::new();
    save(dir, FOM_Q, &run.q, &mut written)?;
    save(dir, FOM_P, &run.p, &mut written)?;
    save(dir, FOM_T, &DMatrix::from_row_slice(1, run.times.len(), &run.times), &mut written)?;
    let path = dir.join(FOM_SECONDS);
    fs::write(&path, format!("{secs:e}\n"))?;
    written.push(path);
    Ok(written)
}

/// Cotangent-lift basis at the largest rank plus the auxiliary bases of
/// every lifting method.
pub fn build_basis_stage(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    check_staged(cfg)?;
    let dir = &cfg.out_dir;
    let fom = load_fom(dir)?;
    let k = count_train(&fom.times, cfg.train_end);
    let q_train = fom.q.columns(0, k).into_owned();
    let p_train = fom.p.columns(0, k).into_owned();
    let r_max = cfg.dims.iter().max().copied().unwrap_or(0) / 2;
    let mut written = Vec::new();
    save(dir, PHI, &cotangent_lift(&q_train, &p_train, r_max)?.matrix, &mut written)?;
    let laplacian = build_laplacian(&cfg.grid()?)?;
    for method in cfg.methods.iter().filter(|m| m.is_quadratic()) {
        let lifted = lifted_model(cfg, *method, 1.0, &laplacian)?;
        for (i, w) in lifted.lift_snapshots(&q_train)?.iter().enumerate() {
            save(dir, &aux_file(method, i), &truncated_svd(w, r_max)?.matrix, &mut written)?;
        }
    }
    Ok(written)
}

/// Reduced operators and reduced initial states for every (dim, method).
pub fn build_rom_stage(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    check_staged(cfg)?;
    let dir = &cfg.out_dir;
    let fom = load_fom(dir)?;
    let phi_max = load(dir, PHI)?;
    let model = fom_model(cfg)?;
    let state0 = FomState {
        q: fom.q.column(0).into_owned(),
        p: fom.p.column(0).into_owned(),
        t: 0.0,
    };
    let k = count_train(&fom.times, cfg.train_end);
    let q_train = fom.q.columns(0, k).into_owned();
    let mut written = Vec::new();
    for &dim in &cfg.dims {
        let r = dim / 2;
        if r > phi_max.ncols() {
            return Err(Error::InvalidConfig(format!("stored basis has fewer than {r} columns")));
        }
        let phi = phi_max.columns(0, r).into_owned();
        for method in &cfg.methods {
            let file = |part: &str| rom_file(method, dim, part);
            let y0 = match method {
                Method::Psd => {
                    save(dir, &file("dhat"), &reduce_laplacian(&model.laplacian, &phi)?, &mut written)?;
                    stack(&phi.tr_mul(&state0.q), &phi.tr_mul(&state0.p))
                }
                Method::SpDeim { factor } => {
                    let samples = force_samples(model.nonlinearity, &phi, &q_train)?;
                    let deim = build_deim(deim_basis_from_samples(&phi, &samples, factor * r)?.matrix, &phi)?;
                    save(dir, &file("dhat"), &reduce_laplacian(&model.laplacian, &phi)?, &mut written)?;
                    save(dir, &file("phis"), &deim.phi_sampled, &mut written)?;
                    save(dir, &file("w"), &column(&deim.weights), &mut written)?;
                    stack(&phi.tr_mul(&state0.q), &phi.tr_mul(&state0.p))
                }
                _ => {
                    let lifted = lifted_model(cfg, *method, 1.0, &model.laplacian)?;
                    let mut blocks = vec![("q", phi.clone()), ("p", phi.clone())];
                    for i in 0..lifted.blocks() - 2 {
                        let aux = load(dir, &aux_file(method, i))?;
                        blocks.push((CANONICAL_LABELS[2 + i], aux.columns(0, r).into_owned()));
                    }
                    let basis = BlockDiagonalBasis::new(blocks)?;
                    let rom = crate::rom::build_quadratic_rom(&lifted, &basis)?;
                    save(dir, &file("a"), &rom.a, &mut written)?;
                    save(dir, &file("b"), &rom.b, &mut written)?;
                    save(dir, &file("h"), &rom.energy_hessian, &mut written)?;
                    if let Some(l) = &rom.energy_linear {
                        save(dir, &file("l"), &column(l), &mut written)?;
                    }
                    save(dir, &file("c"), &DMatrix::from_element(1, 1, rom.energy_constant), &mut written)?;
                    basis.project(&lifted.lift_state(&state0)?)?
                }
            };
            save(dir, &file("y0"), &column(&y0), &mut written)?;
        }
    }
    Ok(written)
}

fn load_quadratic_rom(dir: &Path, method: &Method, dim: usize) -> Result<QuadraticRom> {
    let file = |part: &str| rom_file(method, dim, part);
    let a = load(dir, &file("a"))?;
    let r = dim / 2;
    let blocks = a.nrows() / r.max(1);
    let linear_path = dir.join(file("l"));
    Ok(QuadraticRom {
        b: load(dir, &file("b"))?,
        energy_hessian: load(dir, &file("h"))?,
        energy_linear: if linear_path.exists() {
            Some(load_matrix(&linear_path)?.column(0).into_owned())
        } else {
            None
        },
        energy_constant: load(dir, &file("c"))?[(0, 0)],
        layout: (0..blocks).map(|k| (CANONICAL_LABELS[k], k * r, r)).collect(),
        a,
    })
}

fn load_rom(cfg: &ExperimentConfig, method: &Method, dim: usize, phi_max: &DMatrix<f64>) -> Result<(Rom, DVector<f64>)> {
    let dir = &cfg.out_dir;
    let file = |part: &str| rom_file(method, dim, part);
    let y0 = load(dir, &file("y0"))?.column(0).into_owned();
    let nl = cfg.kind.model().nonlinearity(1.0)?;
    let rom = match method {
        Method::Psd => Rom::Hamiltonian(Box::new(HamiltonianRom {
            d_hat: load(dir, &file("dhat"))?,
            phi: phi_max.columns(0, dim / 2).into_owned(),
            nonlinearity: nl,
        })),
        Method::SpDeim { .. } => Rom::Hamiltonian(Box::new(SpDeimRom {
            d_hat: load(dir, &file("dhat"))?,
            phi_sampled: load(dir, &file("phis"))?,
            weights: load(dir, &file("w"))?.column(0).into_owned(),
            nonlinearity: nl,
        })),
        _ => {
            let rom = load_quadratic_rom(dir, method, dim)?;
            let field = rom.to_field();
            Rom::Quadratic(rom, field)
        }
    };
    Ok((rom, y0))
}

/// Integrates every stored ROM over the test horizon. A diverged run is
/// recorded in its `online_*.txt` file instead of a trajectory.
pub fn run_rom_stage(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    check_staged(cfg)?;
    let dir = &cfg.out_dir;
    let phi_max = load(dir, PHI)?;
    let mut written = Vec::new();
    for &dim in &cfg.dims {
        for method in &cfg.methods {
            let (rom, y0) = load_rom(cfg, method, dim, &phi_max)?;
            let online_path = dir.join(online_file(method, dim));
            match integrate_rom(&rom, &y0, cfg, cfg.test_end, cfg.timing_runs) {
                Ok(run) => {
                    let k = run.states.len();
                    save(dir, &traj_file(method, dim), &rows_of(&run.states, 0, y0.len(), 0..k), &mut written)?;
                    fs::write(&online_path, format!("{:e} {:e}\n", run.train_seconds, run.total_seconds))?;
                }
                Err(e) if is_divergence(&e) => fs::write(&online_path, format!("diverged: {e}\n"))?,
                Err(e) => return Err(e),
            }
            written.push(online_path);
        }
    }
    Ok(written)
}

fn parse_online(text: &str) -> Result<Option<(f64, f64)>> {
    if text.starts_with("diverged") {
        return Ok(None);
    }
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::Format(format!("bad online timing {s:?}"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [train, total] => Ok(Some((train, total))),
        _ => Err(Error::Format("online timing file needs two values".into())),
    }
}

/// Computes metrics from the stored FOM snapshots and ROM trajectories.
pub fn metrics_stage(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    check_staged(cfg)?;
    let dir = &cfg.out_dir;
    let fom = load_fom(dir)?;
    let phi_max = load(dir, PHI)?;
    let model = fom_model(cfg)?;
    let model_name = cfg.kind.model().as_str().to_string();
    let train_cols = count_train(&fom.times, cfg.train_end);
    let fom_seconds = fs::read_to_string(dir.join(FOM_SECONDS))
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0.0);
    let mut reports = Vec::new();
    let mut series = Vec::new();
    for &dim in &cfg.dims {
        let r = dim / 2;
        let phi = phi_max.columns(0, r).into_owned();
        for method in &cfg.methods {
            let label = method.label();
            let online = parse_online(&fs::read_to_string(dir.join(online_file(method, dim)))?)?;
            let mut cells = Vec::new();
            match online {
                None => {
                    cells.push((Regime::Train, diverged()));
                    if fom.times.len() > train_cols {
                        cells.push((Regime::Test, diverged()));
                    }
                }
                Some((train_seconds, total_seconds)) => {
                    let traj = load(dir, &traj_file(method, dim))?;
                    let k = traj.ncols().min(fom.times.len());
                    let states: Vec<DVector<f64>> = (0..k).map(|j| traj.column(j).into_owned()).collect();
                    let fom_err = metrics::fom_energy_error(&model, &phi, &rows_of(&states, 0, 2 * r, 0..k))?;
                    let lifted_err = if method.is_quadratic() {
                        let rom = load_quadratic_rom(dir, method, dim)?;
                        Some(metrics::drift(
                            &states
                                .iter()
                                .map(|y| rom.reduced_lifted_energy(y))
                                .collect::<Result<Vec<_>>>()?,
                        ))
                    } else {
                        None
                    };
                    if cfg.energy_series {
                        let times = fom.times[..k].to_vec();
                        series.push(EnergySeries {
                            method: label.clone(),
                            reduced_dim: dim,
                            quantity: "fom-energy-error",
                            mu: None,
                            times: times.clone(),
                            values: fom_err.clone(),
                        });
                        if let Some(l) = &lifted_err {
                            series.push(EnergySeries {
                                method: label.clone(),
                                reduced_dim: dim,
                                quantity: "lifted-energy-error",
                                mu: None,
                                times,
                                values: l.clone(),
                            });
                        }
                    }
                    let mut windows = vec![(Regime::Train, 0..train_cols.min(k), train_seconds)];
                    if k > train_cols {
                        windows.push((Regime::Test, train_cols..k, total_seconds));
                    }
                    for (regime, cols, seconds) in windows {
                        let q = fom.q.columns(cols.start, cols.len()).into_owned();
                        let p = fom.p.columns(cols.start, cols.len()).into_owned();
                        cells.push((
                            regime,
                            CellResult {
                                error_q: metrics::relative_state_error(&q, &phi, &rows_of(&states, 0, r, cols.clone()))?,
                                error_p: metrics::relative_state_error(&p, &phi, &rows_of(&states, r, r, cols.clone()))?,
                                fom_energy: max_over(&fom_err, cols.clone()),
                                lifted_drift: lifted_err.as_ref().and_then(|l| max_over(l, cols.clone())),
                                seconds,
                            },
                        ));
                    }
                }
            }
            for (regime, cell) in &cells {
                reports.extend(aggregate(&model_name, &label, dim, *regime, &[cell])?);
            }
        }
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        reports,
        offline: Vec::new(),
        series,
        fom_seconds,
    })
}
