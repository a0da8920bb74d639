//! Experiment pipeline: FOM data, lifted snapshots, bases, ROMs per method,
//! online integration, metrics.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::config::{ExperimentConfig, ExperimentKind, Method, RomIntegrator};
use super::report::OfflineCost;
use crate::basis::{cotangent_lift, hcat, truncated_svd, BlockDiagonalBasis};
use crate::error::{Error, Result};
use crate::hyperreduction::{build_deim, deim_basis_from_samples, force_samples, SpDeimRom};
use crate::integrators::{
    implicit_midpoint_with, kahan_with, IntegratorConfig, QuadraticField, SolverKind, VectorField,
};
use crate::lifting::{
    build_kgz_lifting, build_lifted_operators, build_standard_lifting_sg, kgz_density, LiftedModel,
    LiftingMap, CANONICAL_LABELS,
};
use crate::metrics::{self, MetricReport, Regime};
use crate::models::{
    build_laplacian, initial_condition, kgz_energy, kgz_initial_condition, FomModel, FomState,
    KgzModel, KgzState, Laplacian, SpatialGrid,
};
use crate::rom::{build_kgz_psd_rom, build_psd_rom, build_quadratic_rom, QuadraticRom};

/// Sampled energy-error series of one ROM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySeries {
    pub method: String,
    pub reduced_dim: usize,
    /// `fom-energy-error` or `lifted-energy-error`.
    pub quantity: &'static str,
    /// Parameter value for parametric sweeps.
    pub mu: Option<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub reports: Vec<MetricReport>,
    pub offline: Vec<OfflineCost>,
    pub series: Vec<EnergySeries>,
    /// FOM wall time over the full horizon, summed over parameters.
    pub fom_seconds: f64,
}

/// Snapshots of one canonical FOM run at the emitted times.
#[derive(Debug, Clone)]
pub struct FomRun {
    pub times: Vec<f64>,
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl FomRun {
    pub fn train_cols(&self, train_end: f64) -> usize {
        count_train(&self.times, train_end)
    }
}

pub(super) fn count_train(times: &[f64], train_end: f64) -> usize {
    times.iter().take_while(|&&t| t <= train_end + 1e-9).count()
}

pub(super) fn fom_integrator(cfg: &ExperimentConfig, horizon: f64) -> IntegratorConfig {
    IntegratorConfig::new(cfg.dt, horizon, SolverKind::Picard).with_stride(cfg.snapshot_stride())
}

/// Integrates a canonical FOM with the implicit midpoint rule and Picard
/// iterations.
pub fn simulate_fom(model: &FomModel, state: &FomState, icfg: &IntegratorConfig) -> Result<FomRun> {
    let n = model.n();
    let mut times = Vec::new();
    let mut cols = Vec::new();
    implicit_midpoint_with(model, &state.stacked(), icfg, |_, t, y| {
        times.push(t);
        cols.push(y.clone());
    })?;
    let k = cols.len();
    let q = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let p = DMatrix::from_fn(n, k, |i, j| cols[j][n + i]);
    Ok(FomRun { times, q, p })
}

/// KGZ snapshots, one matrix per block.
#[derive(Debug, Clone)]
pub struct KgzRun {
    pub times: Vec<f64>,
    pub blocks: [DMatrix<f64>; 6],
}

pub fn simulate_kgz(model: &KgzModel, state: &KgzState, icfg: &IntegratorConfig) -> Result<KgzRun> {
    let n = model.n();
    let mut times = Vec::new();
    let mut cols = Vec::new();
    implicit_midpoint_with(model, &state.stacked(), icfg, |_, t, y| {
        times.push(t);
        cols.push(y.clone());
    })?;
    let k = cols.len();
    let blocks = [0, 1, 2, 3, 4, 5].map(|b| DMatrix::from_fn(n, k, |i, j| cols[j][b * n + i]));
    Ok(KgzRun { times, blocks })
}

/// Reduced model under test.
pub(super) enum Rom {
    Hamiltonian(Box<dyn VectorField>),
    Quadratic(QuadraticRom, QuadraticField),
    /// KGZ Galerkin ROM without a Jacobian.
    Picard(Box<dyn VectorField>),
}

/// Reduced trajectory plus online wall times (median over runs).
pub(super) struct OnlineRun {
    pub(super) times: Vec<f64>,
    pub(super) states: Vec<DVector<f64>>,
    pub(super) train_seconds: f64,
    pub(super) total_seconds: f64,
}

pub(super) fn integrate_rom(
    rom: &Rom,
    y0: &DVector<f64>,
    cfg: &ExperimentConfig,
    horizon: f64,
    runs: usize,
) -> Result<OnlineRun> {
    let stride = cfg.snapshot_stride();
    let mut train_times = Vec::with_capacity(runs);
    let mut total_times = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs.max(1) {
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut train_at = None;
        let start = Instant::now();
        let mut observe = |_: usize, t: f64, y: &DVector<f64>| {
            if train_at.is_none() && t >= cfg.train_end - 1e-9 {
                train_at = Some(start.elapsed().as_secs_f64());
            }
            times.push(t);
            states.push(y.clone());
        };
        match rom {
            Rom::Hamiltonian(f) => {
                let ic = IntegratorConfig::new(cfg.dt, horizon, SolverKind::Newton).with_stride(stride);
                implicit_midpoint_with(f.as_ref(), y0, &ic, &mut observe)?;
            }
            Rom::Picard(f) => {
                let ic = IntegratorConfig::new(cfg.dt, horizon, SolverKind::Picard).with_stride(stride);
                implicit_midpoint_with(f.as_ref(), y0, &ic, &mut observe)?;
            }
            Rom::Quadratic(rom, field) => match cfg.integrator {
                RomIntegrator::Midpoint => {
                    let ic = IntegratorConfig::new(cfg.dt, horizon, SolverKind::Newton).with_stride(stride);
                    implicit_midpoint_with(rom, y0, &ic, &mut observe)?;
                }
                RomIntegrator::Kahan => {
                    let ic = IntegratorConfig::new(cfg.dt, horizon, SolverKind::Newton).with_stride(stride);
                    kahan_with(field, y0, &ic, &mut observe)?;
                }
            },
        }
        let total = start.elapsed().as_secs_f64();
        train_times.push(train_at.unwrap_or(total));
        total_times.push(total);
        last = Some((times, states));
    }
    let (times, states) = last.expect("at least one run");
    Ok(OnlineRun {
        times,
        states,
        train_seconds: metrics::median(&train_times).unwrap_or(0.0),
        total_seconds: metrics::median(&total_times).unwrap_or(0.0),
    })
}

pub(super) fn rows_of(states: &[DVector<f64>], start: usize, len: usize, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    let cols: Vec<usize> = cols.collect();
    DMatrix::from_fn(len, cols.len(), |i, j| states[cols[j]][start + i])
}

pub(super) fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

pub(super) fn max_over(values: &[f64], cols: std::ops::Range<usize>) -> Option<f64> {
    if cols.is_empty() {
        None
    } else {
        Some(metrics::max_abs(&values[cols]))
    }
}

/// Per-cell metrics for one parameter value before regime aggregation.
pub(super) struct CellResult {
    pub(super) error_q: f64,
    pub(super) error_p: f64,
    pub(super) fom_energy: Option<f64>,
    pub(super) lifted_drift: Option<f64>,
    pub(super) seconds: f64,
}

/// Runs an experiment without writing CSV files. Snapshots are persisted to
/// `out_dir` only when `persist_snapshots` is set.
pub fn compute_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Kgz => run_kgz(cfg),
        _ => run_canonical(cfg),
    }
}

fn persist(cfg: &ExperimentConfig, name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !cfg.persist_snapshots {
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    super::io::save_matrix(&cfg.out_dir.join(format!("{name}.splm")), m)
}

struct CanonicalData {
    grid: SpatialGrid,
    laplacian: Laplacian,
    /// `(μ, run)` for the training parameters (a single entry otherwise).
    train: Vec<(f64, FomRun)>,
    /// Test parameters of a parametric sweep.
    test: Vec<(f64, FomRun)>,
    fom_seconds: f64,
}

fn canonical_data(cfg: &ExperimentConfig) -> Result<CanonicalData> {
    let model_id = cfg.kind.model();
    let grid = cfg.grid()?;
    let laplacian = build_laplacian(&grid)?;
    let state0 = initial_condition(model_id, &grid)?;
    let parametric = cfg.kind == ExperimentKind::KgParam;
    let horizon = if parametric { cfg.train_end } else { cfg.test_end };
    let icfg = fom_integrator(cfg, horizon);
    let mut fom_seconds = 0.0;
    let mut sim = |mu: f64| -> Result<FomRun> {
        let model = FomModel::new(grid.clone(), model_id.nonlinearity(mu)?)?;
        let (run, secs) = timed(|| simulate_fom(&model, &state0, &icfg))?;
        fom_seconds += secs;
        Ok(run)
    };
    let (train_mu, test_mu) = if parametric {
        (cfg.mu_train.clone(), cfg.mu_test.clone())
    } else {
        (vec![1.0], Vec::new())
    };
    let train = train_mu
        .iter()
        .map(|&mu| Ok((mu, sim(mu)?)))
        .collect::<Result<Vec<_>>>()?;
    let test = test_mu
        .iter()
        .map(|&mu| Ok((mu, sim(mu)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CanonicalData {
        grid,
        laplacian,
        train,
        test,
        fom_seconds,
    })
}

fn run_canonical(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let model_id = cfg.kind.model();
    let model_name = model_id.as_str().to_string();
    let parametric = cfg.kind == ExperimentKind::KgParam;
    let data = canonical_data(cfg).map_err(Error::in_stage("fom"))?;

    let train_cols = data.train[0].1.train_cols(cfg.train_end);
    let q_train = hcat(&data.train.iter().map(|(_, r)| &r.q).collect::<Vec<_>>())
        .map(|m| if parametric { m } else { m.columns(0, train_cols).into_owned() })?;
    let p_train = hcat(&data.train.iter().map(|(_, r)| &r.p).collect::<Vec<_>>())
        .map(|m| if parametric { m } else { m.columns(0, train_cols).into_owned() })?;
    persist(cfg, "q_train", &q_train).map_err(Error::in_stage("persist"))?;
    persist(cfg, "p_train", &p_train).map_err(Error::in_stage("persist"))?;

    let r_max = cfg.dims.iter().max().copied().unwrap_or(0) / 2;
    let phi_max = cotangent_lift(&q_train, &p_train, r_max)
        .map_err(Error::in_stage("basis"))?
        .matrix;
    persist(cfg, "phi", &phi_max).map_err(Error::in_stage("persist"))?;

    let mut offline = Vec::new();
    let mut cost = |stage: &'static str, method: &Method, dim: usize, seconds: f64| {
        offline.push(OfflineCost {
            model: model_name.clone(),
            stage,
            method: method.label(),
            reduced_dim: dim,
            seconds,
        })
    };

    // Auxiliary bases at the largest rank; smaller ROMs use leading columns.
    let mut aux_bases: Vec<(Method, Vec<DMatrix<f64>>)> = Vec::new();
    for method in cfg.methods.iter().filter(|m| m.is_quadratic()) {
        let lifted = lifted_model(cfg, *method, data.train[0].0, &data.laplacian)?;
        let (bases, secs) = timed(|| {
            lifted
                .lift_snapshots(&q_train)?
                .iter()
                .map(|w| Ok(truncated_svd(w, r_max)?.matrix))
                .collect::<Result<Vec<_>>>()
        })
        .map_err(Error::in_stage("lifted-basis"))?;
        cost("lifted-snapshots-svd", method, 2 * r_max, secs);
        aux_bases.push((*method, bases));
    }

    let mut reports = Vec::new();
    let mut series = Vec::new();
    for &dim in &cfg.dims {
        let r = dim / 2;
        let phi = phi_max.columns(0, r).into_owned();
        for method in &cfg.methods {
            let label = method.label();
            // Per-parameter ROM factories.
            let deim = match method {
                Method::SpDeim { factor } => {
                    let m = factor * r;
                    let (deim, secs) = timed(|| {
                        let samples = data
                            .train
                            .iter()
                            .map(|(mu, run)| {
                                let cols = if parametric { run.q.ncols() } else { train_cols };
                                force_samples(model_id.nonlinearity(*mu)?, &phi, &run.q.columns(0, cols).into_owned())
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let s = hcat(&samples.iter().collect::<Vec<_>>())?;
                        build_deim(deim_basis_from_samples(&phi, &s, m)?.matrix, &phi)
                    })
                    .map_err(Error::in_stage("spdeim"))?;
                    cost("spdeim-jacobian-svd", method, dim, secs);
                    Some(deim)
                }
                _ => None,
            };
            let basis = match aux_bases.iter().find(|(m, _)| m == method) {
                Some((_, aux)) => {
                    let mut blocks = vec![("q", phi.clone()), ("p", phi.clone())];
                    for (k, v) in aux.iter().enumerate() {
                        blocks.push((CANONICAL_LABELS[2 + k], v.columns(0, r).into_owned()));
                    }
                    Some(BlockDiagonalBasis::new(blocks)?)
                }
                None => None,
            };

            let mut cells: Vec<(Regime, f64, CellResult)> = Vec::new();
            let mut projection_seconds = 0.0;
            let evals: Vec<(Regime, &(f64, FomRun))> = if parametric {
                data.train
                    .iter()
                    .map(|x| (Regime::Train, x))
                    .chain(data.test.iter().map(|x| (Regime::Test, x)))
                    .collect()
            } else {
                vec![(Regime::Train, &data.train[0])]
            };
            let series_mu = data.test.last().or(data.train.last()).map(|(mu, _)| *mu);
            for (regime, (mu, run)) in evals {
                let nl = model_id.nonlinearity(*mu)?;
                let fom = FomModel::new(data.grid.clone(), nl)?;
                let state0 = FomState::from_stacked(
                    &DVector::from_iterator(2 * fom.n(), run.q.column(0).iter().chain(run.p.column(0).iter()).copied()),
                    0.0,
                );
                let (rom, y0, lifted) = match method {
                    Method::Psd => {
                        let rom = build_psd_rom(&fom, &phi)?;
                        let y0 = stack(&phi.tr_mul(&state0.q), &phi.tr_mul(&state0.p));
                        (Rom::Hamiltonian(Box::new(rom)), y0, None)
                    }
                    Method::SpDeim { .. } => {
                        let deim = deim.as_ref().expect("deim built above");
                        let d_hat = crate::rom::reduce_laplacian(&data.laplacian, &phi)?;
                        let rom = SpDeimRom::new(d_hat, deim, nl)?;
                        let y0 = stack(&phi.tr_mul(&state0.q), &phi.tr_mul(&state0.p));
                        (Rom::Hamiltonian(Box::new(rom)), y0, None)
                    }
                    _ => {
                        let basis = basis.as_ref().expect("lifted basis built above");
                        let lifted = lifted_model(cfg, *method, *mu, &data.laplacian)?;
                        let (rom, secs) = timed(|| build_quadratic_rom(&lifted, basis))
                            .map_err(Error::in_stage("quadratic-projection"))?;
                        projection_seconds += secs;
                        let y0 = basis.project(&lifted.lift_state(&state0)?)?;
                        let field = rom.to_field();
                        (Rom::Quadratic(rom, field), y0, Some(()))
                    }
                };
                let horizon = run.times.last().copied().unwrap_or(0.0);
                let online = match integrate_rom(&rom, &y0, cfg, horizon, cfg.timing_runs) {
                    Ok(o) => o,
                    Err(e) if is_divergence(&e) => {
                        cells.push((regime, *mu, diverged()));
                        if !parametric && run.times.len() > train_cols {
                            cells.push((Regime::Test, *mu, diverged()));
                        }
                        continue;
                    }
                    Err(e) => return Err(Error::in_stage("online")(e)),
                };
                let k = online.states.len();
                let traj = rows_of(&online.states, 0, 2 * r, 0..k);
                let fom_err = metrics::fom_energy_error(&fom, &phi, &traj)?;
                let lifted_err = match (&rom, lifted) {
                    (Rom::Quadratic(q, _), Some(())) => Some(metrics::drift(
                        &online
                            .states
                            .iter()
                            .map(|y| q.reduced_lifted_energy(y))
                            .collect::<Result<Vec<_>>>()?,
                    )),
                    _ => None,
                };
                if cfg.energy_series && (!parametric || Some(*mu) == series_mu) {
                    let mu_tag = parametric.then_some(*mu);
                    series.push(EnergySeries {
                        method: label.clone(),
                        reduced_dim: dim,
                        quantity: "fom-energy-error",
                        mu: mu_tag,
                        times: online.times.clone(),
                        values: fom_err.clone(),
                    });
                    if let Some(l) = &lifted_err {
                        series.push(EnergySeries {
                            method: label.clone(),
                            reduced_dim: dim,
                            quantity: "lifted-energy-error",
                            mu: mu_tag,
                            times: online.times.clone(),
                            values: l.clone(),
                        });
                    }
                }
                let windows: Vec<(Regime, std::ops::Range<usize>, f64)> = if parametric {
                    vec![(regime, 0..k, online.total_seconds)]
                } else {
                    let mut w = vec![(Regime::Train, 0..train_cols, online.train_seconds)];
                    if k > train_cols {
                        w.push((Regime::Test, train_cols..k, online.total_seconds));
                    }
                    w
                };
                for (reg, cols, seconds) in windows {
                    let q_hat = rows_of(&online.states, 0, r, cols.clone());
                    let p_hat = rows_of(&online.states, r, r, cols.clone());
                    let q = run.q.columns(cols.start, cols.len()).into_owned();
                    let p = run.p.columns(cols.start, cols.len()).into_owned();
                    cells.push((
                        reg,
                        *mu,
                        CellResult {
                            error_q: metrics::relative_state_error(&q, &phi, &q_hat)?,
                            error_p: metrics::relative_state_error(&p, &phi, &p_hat)?,
                            fom_energy: max_over(&fom_err, cols.clone()),
                            lifted_drift: lifted_err.as_ref().and_then(|l| max_over(l, cols.clone())),
                            seconds,
                        },
                    ));
                }
            }
            if method.is_quadratic() {
                cost("quadratic-projection", method, dim, projection_seconds);
            }
            for regime in [Regime::Train, Regime::Test] {
                let group: Vec<&CellResult> = cells
                    .iter()
                    .filter(|(g, _, _)| *g == regime)
                    .map(|(_, _, c)| c)
                    .collect();
                if let Some(report) = aggregate(&model_name, &label, dim, regime, &group)? {
                    reports.push(report);
                }
            }
        }
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        reports,
        offline,
        series,
        fom_seconds: data.fom_seconds,
    })
}

pub(super) fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

pub(super) fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::NonConvergence { .. } | Error::SingularStep { .. } | Error::NonFinite
    )
}

pub(super) fn diverged() -> CellResult {
    CellResult {
        error_q: f64::NAN,
        error_p: f64::NAN,
        fom_energy: None,
        lifted_drift: None,
        seconds: f64::NAN,
    }
}

/// Averages per-parameter cells into one report.
pub(super) fn aggregate(
    model: &str,
    method: &str,
    dim: usize,
    regime: Regime,
    cells: &[&CellResult],
) -> Result<Option<MetricReport>> {
    if cells.is_empty() {
        return Ok(None);
    }
    let mean = |f: &dyn Fn(&CellResult) -> f64| {
        metrics::average_relative_state_error(&cells.iter().map(|c| f(c)).collect::<Vec<_>>())
    };
    let max_opt = |f: &dyn Fn(&CellResult) -> Option<f64>| {
        cells
            .iter()
            .map(|c| f(c))
            .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
    };
    let error_q = mean(&|c| c.error_q)?;
    let seconds = mean(&|c| c.seconds)?;
    Ok(Some(MetricReport {
        model: model.to_string(),
        method: method.to_string(),
        reduced_dim: dim,
        regime,
        error_q,
        error_p: Some(mean(&|c| c.error_p)?),
        fom_energy_error: max_opt(&|c| c.fom_energy),
        lifted_energy_drift: max_opt(&|c| c.lifted_drift),
        wall_seconds: seconds,
        efficacy: match regime {
            Regime::Train => metrics::efficacy(error_q, seconds),
            Regime::Test => None,
        },
    }))
}

pub(super) fn lifted_model(cfg: &ExperimentConfig, method: Method, mu: f64, d: &Laplacian) -> Result<LiftedModel> {
    match method {
        Method::StandardLifting => build_standard_lifting_sg(d),
        Method::Lifting => {
            let nl = cfg.kind.model().nonlinearity(mu)?;
            build_lifted_operators(&LiftingMap::for_nonlinearity(nl), d)
        }
        other => Err(Error::InvalidConfig(format!("{other} is not a lifting"))),
    }
}

fn run_kgz(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let model_name = cfg.kind.model().as_str().to_string();
    let grid = cfg.grid().map_err(Error::in_stage("fom"))?;
    let model = KgzModel::new(grid).map_err(Error::in_stage("fom"))?;
    let state0 = kgz_initial_condition(&model.grid).map_err(Error::in_stage("fom"))?;
    let icfg = fom_integrator(cfg, cfg.test_end);
    let (run, fom_seconds) = timed(|| simulate_kgz(&model, &state0, &icfg)).map_err(Error::in_stage("fom"))?;
    let k_train = count_train(&run.times, cfg.train_end);
    let k_all = run.times.len();
    let train = |b: usize| run.blocks[b].columns(0, k_train).into_owned();
    let [q1, q2, p1, p2, varphi, phi] = [0, 1, 2, 3, 4, 5].map(train);
    for (name, m) in [("q1", &q1), ("q2", &q2), ("p1", &p1), ("p2", &p2), ("varphi", &varphi), ("phi", &phi)] {
        persist(cfg, &format!("{name}_train"), m).map_err(Error::in_stage("persist"))?;
    }

    let r_max = cfg.dims.iter().max().copied().unwrap_or(0) / 6;
    let basis_max = (|| -> Result<_> {
        let phi_b = truncated_svd(&hcat(&[&q1, &q2, &p1, &p2])?, r_max)?.matrix;
        let v = truncated_svd(&hcat(&[&varphi, &phi])?, r_max)?.matrix;
        Ok((phi_b, v))
    })()
    .map_err(Error::in_stage("basis"))?;
    let (phi_b, v_field) = basis_max;
    persist(cfg, "phi", &phi_b).map_err(Error::in_stage("persist"))?;

    let mut offline = Vec::new();
    let mut aux: Vec<(Method, DMatrix<f64>, DMatrix<f64>)> = Vec::new();
    for method in cfg.methods.iter().filter(|m| m.is_quadratic()) {
        let ((v_fields, v_w), secs) = timed(|| {
            let w = kgz_density(&q1, &q2);
            match method {
                Method::Lifting => {
                    let joint = truncated_svd(&hcat(&[&phi, &varphi, &w])?, r_max)?.matrix;
                    Ok((joint.clone(), joint))
                }
                _ => Ok((v_field.clone(), truncated_svd(&w, r_max)?.matrix)),
            }
        })
        .map_err(Error::in_stage("lifted-basis"))?;
        offline.push(OfflineCost {
            model: model_name.clone(),
            stage: "lifted-snapshots-svd",
            method: method.label(),
            reduced_dim: 6 * r_max,
            seconds: secs,
        });
        aux.push((*method, v_fields, v_w));
    }
    let lifted = if aux.is_empty() {
        None
    } else {
        Some(build_kgz_lifting(&model.laplacian).map_err(Error::in_stage("lifting"))?)
    };

    let psi_full = |cols: std::ops::Range<usize>| {
        let a = run.blocks[0].columns(cols.start, cols.len());
        let b = run.blocks[1].columns(cols.start, cols.len());
        let mut m = DMatrix::zeros(2 * a.nrows(), a.ncols());
        m.rows_mut(0, a.nrows()).copy_from(&a);
        m.rows_mut(a.nrows(), a.nrows()).copy_from(&b);
        m
    };

    let mut reports = Vec::new();
    let mut series = Vec::new();
    for &dim in &cfg.dims {
        let r = dim / 6;
        let phi_r = phi_b.columns(0, r).into_owned();
        for method in &cfg.methods {
            let label = method.label();
            // Returns (ROM, y0, expander to full state, optional lifted energy).
            let (rom, y0, v_phi): (Rom, DVector<f64>, DMatrix<f64>) = match method {
                Method::Psd => {
                    let v = v_field.columns(0, r).into_owned();
                    let rom = build_kgz_psd_rom(&model.laplacian, &phi_r, &v)?;
                    let y0 = rom.reduce(&state0);
                    (Rom::Picard(Box::new(rom)), y0, v)
                }
                _ => {
                    let (_, vf, vw) = aux.iter().find(|(m, _, _)| m == method).expect("aux basis");
                    let vf = vf.columns(0, r).into_owned();
                    let basis = crate::basis::kgz_basis_from_blocks(&phi_r, vf.clone(), vf.clone(), vw.columns(0, r).into_owned())?;
                    let lifted = lifted.as_ref().expect("kgz lifting");
                    let (rom, secs) = timed(|| build_quadratic_rom(lifted, &basis))
                        .map_err(Error::in_stage("quadratic-projection"))?;
                    offline.push(OfflineCost {
                        model: model_name.clone(),
                        stage: "quadratic-projection",
                        method: label.clone(),
                        reduced_dim: dim,
                        seconds: secs,
                    });
                    let y0 = basis.project(&lifted.lift_kgz_state(&state0)?)?;
                    let field = rom.to_field();
                    (Rom::Quadratic(rom, field), y0, vf)
                }
            };
            let online = match integrate_rom(&rom, &y0, cfg, cfg.test_end, cfg.timing_runs) {
                Ok(o) => o,
                Err(e) if is_divergence(&e) => {
                    for regime in [Regime::Train, Regime::Test] {
                        if regime == Regime::Test && k_all <= k_train {
                            continue;
                        }
                        let c = diverged();
                        reports.push(aggregate(&model_name, &label, dim, regime, &[&c])?.expect("one cell"));
                    }
                    continue;
                }
                Err(e) => return Err(Error::in_stage("online")(e)),
            };
            let k = online.states.len();
            // Reduced ψ = [q̂1; q̂2] is stored first; φ̂ sits after p̂ and varphi.
            let phi_offset = 4 * r + r;
            let expand = |y: &DVector<f64>| -> KgzState {
                let mut s = KgzState::zeros(phi_r.nrows());
                s.q1 = &phi_r * y.rows(0, r);
                s.q2 = &phi_r * y.rows(r, r);
                s.p1 = &phi_r * y.rows(2 * r, r);
                s.p2 = &phi_r * y.rows(3 * r, r);
                s.varphi = &v_phi * y.rows(4 * r, r);
                s.phi = &v_phi * y.rows(phi_offset, r);
                s
            };
            let energies = online
                .states
                .iter()
                .map(|y| kgz_energy(&expand(y), &model.laplacian))
                .collect::<Result<Vec<_>>>()?;
            let fom_err = metrics::drift(&energies);
            let lifted_err = match &rom {
                Rom::Quadratic(q, _) => Some(metrics::drift(
                    &online
                        .states
                        .iter()
                        .map(|y| q.reduced_lifted_energy(y))
                        .collect::<Result<Vec<_>>>()?,
                )),
                _ => None,
            };
            if cfg.energy_series {
                series.push(EnergySeries {
                    method: label.clone(),
                    reduced_dim: dim,
                    quantity: "fom-energy-error",
                    mu: None,
                    times: online.times.clone(),
                    values: fom_err.clone(),
                });
                if let Some(l) = &lifted_err {
                    series.push(EnergySeries {
                        method: label.clone(),
                        reduced_dim: dim,
                        quantity: "lifted-energy-error",
                        mu: None,
                        times: online.times.clone(),
                        values: l.clone(),
                    });
                }
            }
            let mut windows = vec![(Regime::Train, 0..k_train.min(k), online.train_seconds)];
            if k > k_train {
                windows.push((Regime::Test, k_train..k, online.total_seconds));
            }
            for (regime, cols, seconds) in windows {
                let psi = psi_full(cols.clone());
                let mut psi_hat = DMatrix::zeros(psi.nrows(), cols.len());
                let mut phi_hat = DMatrix::zeros(phi_r.nrows(), cols.len());
                for (j, c) in cols.clone().enumerate() {
                    let s = expand(&online.states[c]);
                    psi_hat.column_mut(j).rows_mut(0, s.q1.len()).copy_from(&s.q1);
                    psi_hat.column_mut(j).rows_mut(s.q1.len(), s.q2.len()).copy_from(&s.q2);
                    phi_hat.column_mut(j).copy_from(&s.phi);
                }
                let phi_true = run.blocks[5].columns(cols.start, cols.len()).into_owned();
                let cell = CellResult {
                    error_q: metrics::relative_error_of(&psi, &psi_hat)?,
                    error_p: metrics::relative_error_of(&phi_true, &phi_hat)?,
                    fom_energy: max_over(&fom_err, cols.clone()),
                    lifted_drift: lifted_err.as_ref().and_then(|l| max_over(l, cols.clone())),
                    seconds,
                };
                reports.push(aggregate(&model_name, &label, dim, regime, &[&cell])?.expect("one cell"));
            }
        }
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        reports,
        offline,
        series,
        fom_seconds,
    })
}
