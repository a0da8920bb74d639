//! Second-order geometric time steppers.
//!
//! [`implicit_midpoint`] handles any [`VectorField`] and conserves every
//! quadratic invariant of the flow up to the nonlinear-solve tolerance.
//! [`kahan`] is linearly implicit and specialised to quadratic fields
//! `y' = A y + B (y ⊗ y)` with a dense mode-1 matricized `B`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// An autonomous ODE right-hand side `y' = f(y)`.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>);

    /// Analytic Jacobian, if cheaply available. Newton falls back to
    /// forward differences otherwise.
    fn jacobian(&self, _y: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        (**self).eval(y, out)
    }

    fn jacobian(&self, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        (**self).jacobian(y)
    }
}

/// Dense linear field `y' = A y`, mostly useful in tests.
#[derive(Debug, Clone)]
pub struct LinearField(pub DMatrix<f64>);

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        self.0.mul_to(y, out);
    }

    fn jacobian(&self, _y: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.0.clone())
    }
}

/// Dense quadratic field `y' = A y + B (y ⊗ y)` with `B` of shape `r × r²`
/// and column `i * r + j` multiplying `y_i y_j`.
#[derive(Debug, Clone)]
pub struct QuadraticField {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl QuadraticField {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let r = a.nrows();
        check_len("QuadraticField A columns", r, a.ncols())?;
        check_len("QuadraticField B rows", r, b.nrows())?;
        check_len("QuadraticField B columns", r * r, b.ncols())?;
        Ok(Self { a, b })
    }
}

impl VectorField for QuadraticField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        quadratic_eval(&self.a, &self.b, y, out);
    }

    fn jacobian(&self, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (l1, l2) = slot_contractions(&self.b, y);
        Some(&self.a + l1 + l2)
    }
}

/// `out = A y + B (y ⊗ y)`; the Kronecker vector is formed at size `r²`.
pub fn quadratic_eval(a: &DMatrix<f64>, b: &DMatrix<f64>, y: &DVector<f64>, out: &mut DVector<f64>) {
    let r = y.len();
    let mut kron = DVector::zeros(r * r);
    for i in 0..r {
        let yi = y[i];
        for j in 0..r {
            kron[i * r + j] = yi * y[j];
        }
    }
    a.mul_to(y, out);
    out.gemv(1.0, b, &kron, 1.0);
}

/// Contractions of `B` with `y` in the first and second Kronecker slot:
/// `B (x ⊗ y) = L1 x` and `B (y ⊗ x) = L2 x`.
pub fn slot_contractions(b: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = y.len();
    let rows = b.nrows();
    let mut l1 = DMatrix::zeros(rows, r);
    let mut l2 = DMatrix::zeros(rows, r);
    for i in 0..r {
        for j in 0..r {
            let col = b.column(i * r + j);
            if y[j] != 0.0 {
                l1.column_mut(i).axpy(y[j], &col, 1.0);
            }
            if y[i] != 0.0 {
                l2.column_mut(j).axpy(y[i], &col, 1.0);
            }
        }
    }
    (l1, l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Newton,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub solver: SolverKind,
    /// Emit every `stride`-th step (the initial state is always emitted).
    pub stride: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: f64, solver: SolverKind) -> Self {
        Self {
            dt,
            horizon,
            tol_abs: 1e-12,
            tol_rel: 1e-12,
            max_iter: match solver {
                SolverKind::Newton => 50,
                SolverKind::Picard => 200,
            },
            solver,
            stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt != 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be nonzero, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        if !(self.tol_abs > 0.0) || self.tol_rel < 0.0 {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if self.stride == 0 || self.max_iter == 0 {
            return Err(Error::InvalidConfig("stride and max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps covering the horizon; the final step lands on it up
    /// to rounding.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt.abs()).round() as usize
    }
}

/// Sampled trajectory, one column per emitted time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    /// States as columns of a matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let dim = self.states.first().map_or(0, |s| s.len());
        DMatrix::from_fn(dim, self.states.len(), |i, k| self.states[k][i])
    }

    /// Rows `start..start + len` of every state, as columns.
    pub fn block(&self, start: usize, len: usize) -> DMatrix<f64> {
        DMatrix::from_fn(len, self.states.len(), |i, k| self.states[k][start + i])
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// One implicit-midpoint step. Solves for the midpoint `z` in
/// `z - y0 - dt/2 f(z) = 0` and returns `2z - y0`.
pub fn implicit_midpoint_step<F: VectorField + ?Sized>(
    f: &F,
    y0: &DVector<f64>,
    cfg: &IntegratorConfig,
    step: usize,
) -> Result<DVector<f64>> {
    let n = y0.len();
    let h = 0.5 * cfg.dt;
    let mut fz = DVector::zeros(n);
    f.eval(y0, &mut fz);
    // explicit Euler half step as the initial guess
    let mut z = y0 + h * &fz;
    let tol = cfg.tol_abs + cfg.tol_rel * inf_norm(y0);
    let mut residual = f64::INFINITY;

    for _ in 0..cfg.max_iter {
        f.eval(&z, &mut fz);
        let mut res = &z - y0;
        res.axpy(-h, &fz, 1.0);
        residual = inf_norm(&res);
        if !residual.is_finite() {
            break;
        }
        match cfg.solver {
            SolverKind::Picard => {
                if residual <= tol {
                    return Ok(2.0 * z - y0);
                }
                z = y0 + h * &fz;
            }
            SolverKind::Newton => {
                // Stop on the size of the applied update, so the returned
                // midpoint is accurate well beyond the tolerance.
                if residual <= f64::EPSILON * (1.0 + inf_norm(y0)) {
                    return Ok(2.0 * z - y0);
                }
                let jac = f
                    .jacobian(&z)
                    .unwrap_or_else(|| finite_difference_jacobian(f, &z, &fz));
                let m = DMatrix::identity(n, n) - h * jac;
                let delta = m.lu().solve(&res).ok_or(Error::SingularStep {
                    step,
                    suggested_dt: 0.5 * cfg.dt,
                })?;
                z -= &delta;
                if inf_norm(&delta) <= tol {
                    return Ok(2.0 * z - y0);
                }
            }
        }
    }
    // a final check after the last update
    f.eval(&z, &mut fz);
    let mut res = &z - y0;
    res.axpy(-h, &fz, 1.0);
    let last = inf_norm(&res);
    if last <= tol {
        return Ok(2.0 * z - y0);
    }
    Err(Error::NonConvergence {
        step,
        iterations: cfg.max_iter,
        residual: if last.is_finite() { last } else { residual },
    })
}

fn finite_difference_jacobian<F: VectorField + ?Sized>(
    f: &F,
    y: &DVector<f64>,
    fy: &DVector<f64>,
) -> DMatrix<f64> {
    let n = y.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.clone();
    let mut fp = DVector::zeros(n);
    for k in 0..n {
        let eps = 1e-7 * y[k].abs().max(1.0);
        yp[k] = y[k] + eps;
        f.eval(&yp, &mut fp);
        jac.column_mut(k).copy_from(&((&fp - fy) / eps));
        yp[k] = y[k];
    }
    jac
}

/// Integrates with the implicit midpoint rule, calling `observe` with
/// `(step, t, y)` at every emitted step.
pub fn implicit_midpoint_with<F, O>(
    f: &F,
    y0: &DVector<f64>,
    cfg: &IntegratorConfig,
    mut observe: O,
) -> Result<DVector<f64>>
where
    F: VectorField + ?Sized,
    O: FnMut(usize, f64, &DVector<f64>),
{
    cfg.validate()?;
    check_len("implicit_midpoint", f.dim(), y0.len())?;
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut y = y0.clone();
    observe(0, 0.0, &y);
    let steps = cfg.steps();
    for k in 1..=steps {
        y = implicit_midpoint_step(f, &y, cfg, k)?;
        if k % cfg.stride == 0 || k == steps {
            observe(k, k as f64 * cfg.dt, &y);
        }
    }
    Ok(y)
}

pub fn implicit_midpoint<F: VectorField + ?Sized>(
    f: &F,
    y0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    implicit_midpoint_with(f, y0, cfg, |_, t, y| {
        traj.times.push(t);
        traj.states.push(y.clone());
    })?;
    Ok(traj)
}

/// One Kahan step for `y' = A y + B (y ⊗ y)`:
/// `(I/dt - A/2 - (L1 + L2)/2) y1 = y0/dt + A y0 / 2`.
pub fn kahan_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    y0: &DVector<f64>,
    dt: f64,
    step: usize,
) -> Result<DVector<f64>> {
    let r = y0.len();
    check_len("kahan_step A", r, a.nrows())?;
    check_len("kahan_step B", r * r, b.ncols())?;
    let (l1, l2) = slot_contractions(b, y0);
    let mut m = -0.5 * (a + l1 + l2);
    for i in 0..r {
        m[(i, i)] += 1.0 / dt;
    }
    let rhs = y0 / dt + 0.5 * (a * y0);
    let y1 = m.lu().solve(&rhs).ok_or(Error::SingularStep {
        step,
        suggested_dt: 0.5 * dt,
    })?;
    if y1.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularStep {
            step,
            suggested_dt: 0.5 * dt,
        });
    }
    Ok(y1)
}

pub fn kahan_with<O>(
    field: &QuadraticField,
    y0: &DVector<f64>,
    cfg: &IntegratorConfig,
    mut observe: O,
) -> Result<DVector<f64>>
where
    O: FnMut(usize, f64, &DVector<f64>),
{
    cfg.validate()?;
    check_len("kahan", field.dim(), y0.len())?;
    let mut y = y0.clone();
    observe(0, 0.0, &y);
    let steps = cfg.steps();
    for k in 1..=steps {
        y = kahan_step(&field.a, &field.b, &y, cfg.dt, k)?;
        if k % cfg.stride == 0 || k == steps {
            observe(k, k as f64 * cfg.dt, &y);
        }
    }
    Ok(y)
}

pub fn kahan(field: &QuadraticField, y0: &DVector<f64>, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    kahan_with(field, y0, cfg, |_, t, y| {
        traj.times.push(t);
        traj.states.push(y.clone());
    })?;
    Ok(traj)
}
