//! Conservative full-order models of nonlinear wave equations.
//!
//! Every canonical model has the first-order form `q' = p`, `p' = D q - f(q)`
//! with a symmetric second-order finite-difference Laplacian `D` and an
//! entrywise nonlinearity `f = g'`. The discrete energy is
//! `E(q, p) = p'p/2 - q'Dq/2 + sum_i g(q_i)`.
//!
//! The Klein-Gordon-Zakharov system is not canonical and lives in its own
//! type, [`KgzModel`].
//!
//! Two-dimensional grids are stored row-major with `x` running fastest:
//! node `(ix, iy)` has index `iy * nx + ix`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{check_len, Error, Result};
use crate::integrators::VectorField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Homogeneous Dirichlet; only interior nodes are stored.
    DirichletZero,
    /// One period of nodes with wraparound indexing.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub points: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    axes: Vec<Axis>,
    boundary: Boundary,
    spacing: Vec<f64>,
}

impl SpatialGrid {
    pub fn new_1d(points: usize, lower: f64, upper: f64, boundary: Boundary) -> Result<Self> {
        Self::new(vec![Axis { points, lower, upper }], boundary)
    }

    pub fn new_2d(
        nx: usize,
        ny: usize,
        x_range: (f64, f64),
        y_range: (f64, f64),
        boundary: Boundary,
    ) -> Result<Self> {
        Self::new(
            vec![
                Axis {
                    points: nx,
                    lower: x_range.0,
                    upper: x_range.1,
                },
                Axis {
                    points: ny,
                    lower: y_range.0,
                    upper: y_range.1,
                },
            ],
            boundary,
        )
    }

    fn new(axes: Vec<Axis>, boundary: Boundary) -> Result<Self> {
        let mut spacing = Vec::with_capacity(axes.len());
        for (k, axis) in axes.iter().enumerate() {
            if axis.points < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {k} has {} points, at least 3 are required",
                    axis.points
                )));
            }
            let length = axis.upper - axis.lower;
            if !(length > 0.0) || !length.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis {k} has non-positive length {length}"
                )));
            }
            let h = match boundary {
                Boundary::DirichletZero => length / (axis.points + 1) as f64,
                Boundary::Periodic => length / axis.points as f64,
            };
            spacing.push(h);
        }
        Ok(Self {
            axes,
            boundary,
            spacing,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total number of stored nodes.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of node `i` along axis `k`.
    pub fn coordinate(&self, k: usize, i: usize) -> f64 {
        let axis = &self.axes[k];
        match self.boundary {
            Boundary::DirichletZero => axis.lower + (i + 1) as f64 * self.spacing[k],
            Boundary::Periodic => axis.lower + i as f64 * self.spacing[k],
        }
    }

    /// Physical coordinates of a flat node index.
    pub fn node(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        self.axes
            .iter()
            .enumerate()
            .map(|(k, axis)| {
                let i = rest % axis.points;
                rest /= axis.points;
                self.coordinate(k, i)
            })
            .collect()
    }

    /// Cell volume used by quadrature-style diagnostics.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// Symmetric second-order finite-difference Laplacian.
#[derive(Debug, Clone)]
pub struct Laplacian {
    matrix: CsrMatrix<f64>,
}

impl Laplacian {
    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        spmv(&self.matrix, x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from(&self.matrix)
    }

    /// `x' D x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.apply(x))
    }
}

/// `y = A x` for a CSR matrix.
pub fn spmv(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        let mut acc = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            acc += v * x[j];
        }
        y[i] = acc;
    }
    y
}

/// Assembles the 1D three-point or 2D five-point Laplacian.
///
/// Each neighbour coupling is pushed once per ordered pair with the same
/// value, so the assembled matrix is exactly symmetric.
pub fn build_laplacian(grid: &SpatialGrid) -> Result<Laplacian> {
    let n = grid.len();
    let mut coo = CooMatrix::new(n, n);
    let strides: Vec<usize> = grid
        .axes
        .iter()
        .scan(1usize, |acc, axis| {
            let s = *acc;
            *acc *= axis.points;
            Some(s)
        })
        .collect();

    for index in 0..n {
        let mut diagonal = 0.0;
        let mut rest = index;
        for (k, axis) in grid.axes.iter().enumerate() {
            let i = rest % axis.points;
            rest /= axis.points;
            let w = 1.0 / (grid.spacing[k] * grid.spacing[k]);
            diagonal -= 2.0 * w;
            let base = index - i * strides[k];
            let m = axis.points;
            match grid.boundary {
                Boundary::DirichletZero => {
                    if i > 0 {
                        coo.push(index, base + (i - 1) * strides[k], w);
                    }
                    if i + 1 < m {
                        coo.push(index, base + (i + 1) * strides[k], w);
                    }
                }
                Boundary::Periodic => {
                    coo.push(index, base + ((i + m - 1) % m) * strides[k], w);
                    coo.push(index, base + ((i + 1) % m) * strides[k], w);
                }
            }
        }
        coo.push(index, index, diagonal);
    }
    Ok(Laplacian {
        matrix: CsrMatrix::from(&coo),
    })
}

/// Entrywise nonlinearity of a canonical wave model: potential density `g`
/// and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    /// `g(q) = 1 - cos q`
    SineGordon,
    /// `g(q) = exp(-q)`
    Exponential,
    /// `g(q) = mu q^4 / 4`
    KleinGordon { mu: f64 },
}

impl Nonlinearity {
    pub fn potential(&self, q: f64) -> f64 {
        match *self {
            Nonlinearity::SineGordon => 1.0 - q.cos(),
            Nonlinearity::Exponential => (-q).exp(),
            Nonlinearity::KleinGordon { mu } => 0.25 * mu * q.powi(4),
        }
    }

    /// `f_non(q) = g'(q)`.
    pub fn force(&self, q: f64) -> f64 {
        match *self {
            Nonlinearity::SineGordon => q.sin(),
            Nonlinearity::Exponential => -(-q).exp(),
            Nonlinearity::KleinGordon { mu } => mu * q.powi(3),
        }
    }

    /// `g''(q)`.
    pub fn stiffness(&self, q: f64) -> f64 {
        match *self {
            Nonlinearity::SineGordon => q.cos(),
            Nonlinearity::Exponential => (-q).exp(),
            Nonlinearity::KleinGordon { mu } => 3.0 * mu * q * q,
        }
    }

    pub fn force_vec(&self, q: &DVector<f64>) -> DVector<f64> {
        q.map(|x| self.force(x))
    }

    pub fn potential_sum(&self, q: &DVector<f64>) -> f64 {
        q.iter().map(|&x| self.potential(x)).sum()
    }
}

/// Supported experiment models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    SineGordon1d,
    SineGordon2d,
    ExponentialWave,
    KleinGordon2d,
    Kgz,
}

impl ModelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::SineGordon1d => "sine-gordon-1d",
            ModelId::SineGordon2d => "sine-gordon-2d",
            ModelId::ExponentialWave => "exp-wave",
            ModelId::KleinGordon2d => "klein-gordon-2d",
            ModelId::Kgz => "kgz",
        }
    }

    pub fn is_canonical(&self) -> bool {
        !matches!(self, ModelId::Kgz)
    }

    /// Reference domain and boundary condition of each model.
    pub fn default_grid(&self, nx: usize, ny: usize) -> Result<SpatialGrid> {
        match self {
            ModelId::SineGordon1d => SpatialGrid::new_1d(nx, -20.0, 20.0, Boundary::Periodic),
            ModelId::ExponentialWave => SpatialGrid::new_1d(nx, 0.0, PI, Boundary::DirichletZero),
            ModelId::SineGordon2d => {
                SpatialGrid::new_2d(nx, ny, (-7.0, 7.0), (-7.0, 7.0), Boundary::Periodic)
            }
            ModelId::KleinGordon2d => {
                SpatialGrid::new_2d(nx, ny, (-10.0, 10.0), (-10.0, 10.0), Boundary::Periodic)
            }
            ModelId::Kgz => {
                SpatialGrid::new_2d(nx, ny, (-20.0, 20.0), (-20.0, 20.0), Boundary::Periodic)
            }
        }
    }

    pub fn nonlinearity(&self, mu: f64) -> Result<Nonlinearity> {
        match self {
            ModelId::SineGordon1d | ModelId::SineGordon2d => Ok(Nonlinearity::SineGordon),
            ModelId::ExponentialWave => Ok(Nonlinearity::Exponential),
            ModelId::KleinGordon2d => Ok(Nonlinearity::KleinGordon { mu }),
            ModelId::Kgz => Err(Error::UnsupportedModel(
                "kgz has no scalar nonlinearity".into(),
            )),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine-gordon-1d" | "sg1d" => Ok(ModelId::SineGordon1d),
            "sine-gordon-2d" | "sg2d" => Ok(ModelId::SineGordon2d),
            "exp-wave" | "exponential" => Ok(ModelId::ExponentialWave),
            "klein-gordon-2d" | "kg2d" => Ok(ModelId::KleinGordon2d),
            "kgz" => Ok(ModelId::Kgz),
            other => Err(Error::UnsupportedModel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FomState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub t: f64,
}

impl FomState {
    pub fn new(q: DVector<f64>, p: DVector<f64>, t: f64) -> Result<Self> {
        check_len("FomState", q.len(), p.len())?;
        Ok(Self { q, p, t })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: DVector::zeros(n),
            p: DVector::zeros(n),
            t: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Stacked `[q; p]`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut y = DVector::zeros(2 * n);
        y.rows_mut(0, n).copy_from(&self.q);
        y.rows_mut(n, n).copy_from(&self.p);
        y
    }

    pub fn from_stacked(y: &DVector<f64>, t: f64) -> Self {
        let n = y.len() / 2;
        Self {
            q: y.rows(0, n).into_owned(),
            p: y.rows(n, n).into_owned(),
            t,
        }
    }
}

/// Canonical full-order model `q' = p`, `p' = D q - f(q)`.
#[derive(Debug, Clone)]
pub struct FomModel {
    pub grid: SpatialGrid,
    pub laplacian: Laplacian,
    pub nonlinearity: Nonlinearity,
}

impl FomModel {
    pub fn new(grid: SpatialGrid, nonlinearity: Nonlinearity) -> Result<Self> {
        let laplacian = build_laplacian(&grid)?;
        Ok(Self {
            grid,
            laplacian,
            nonlinearity,
        })
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    /// Time derivative `(q', p')`, returned as a state at the same time.
    pub fn rhs(&self, state: &FomState) -> Result<FomState> {
        check_len("fom_rhs", self.n(), state.q.len())?;
        check_len("fom_rhs", self.n(), state.p.len())?;
        let mut p_dot = self.laplacian.apply(&state.q);
        for (pd, &q) in p_dot.iter_mut().zip(state.q.iter()) {
            *pd -= self.nonlinearity.force(q);
        }
        Ok(FomState {
            q: state.p.clone(),
            p: p_dot,
            t: state.t,
        })
    }

    pub fn energy(&self, state: &FomState) -> Result<f64> {
        check_len("fom_energy", self.n(), state.q.len())?;
        check_len("fom_energy", self.n(), state.p.len())?;
        Ok(0.5 * state.p.dot(&state.p) - 0.5 * self.laplacian.quadratic_form(&state.q)
            + self.nonlinearity.potential_sum(&state.q))
    }

    /// Gradient `(dE/dq, dE/dp) = (-Dq + f(q), p)`.
    pub fn energy_gradient(&self, state: &FomState) -> Result<FomState> {
        check_len("fom_energy_gradient", self.n(), state.q.len())?;
        let mut gq = -self.laplacian.apply(&state.q);
        for (g, &q) in gq.iter_mut().zip(state.q.iter()) {
            *g += self.nonlinearity.force(q);
        }
        Ok(FomState {
            q: gq,
            p: state.p.clone(),
            t: state.t,
        })
    }
}

impl VectorField for FomModel {
    fn dim(&self) -> usize {
        2 * self.n()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.n();
        let q = y.rows(0, n).into_owned();
        let dq = self.laplacian.apply(&q);
        out.rows_mut(0, n).copy_from(&y.rows(n, n));
        for i in 0..n {
            out[n + i] = dq[i] - self.nonlinearity.force(q[i]);
        }
    }
}

/// State of the Klein-Gordon-Zakharov system. `psi = q1 + i q2`.
#[derive(Debug, Clone, PartialEq)]
pub struct KgzState {
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
    pub p1: DVector<f64>,
    pub p2: DVector<f64>,
    pub varphi: DVector<f64>,
    pub phi: DVector<f64>,
    pub t: f64,
}

impl KgzState {
    pub fn zeros(n: usize) -> Self {
        let z = DVector::zeros(n);
        Self {
            q1: z.clone(),
            q2: z.clone(),
            p1: z.clone(),
            p2: z.clone(),
            varphi: z.clone(),
            phi: z,
            t: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.q1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q1.is_empty()
    }

    pub fn blocks(&self) -> [&DVector<f64>; 6] {
        [
            &self.q1,
            &self.q2,
            &self.p1,
            &self.p2,
            &self.varphi,
            &self.phi,
        ]
    }

    fn check(&self, context: &'static str, n: usize) -> Result<()> {
        for b in self.blocks() {
            check_len(context, n, b.len())?;
        }
        Ok(())
    }

    /// Stacked `[q1; q2; p1; p2; varphi; phi]`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.len();
        let mut y = DVector::zeros(6 * n);
        for (k, b) in self.blocks().into_iter().enumerate() {
            y.rows_mut(k * n, n).copy_from(b);
        }
        y
    }

    pub fn from_stacked(y: &DVector<f64>, t: f64) -> Self {
        let n = y.len() / 6;
        let block = |k: usize| y.rows(k * n, n).into_owned();
        Self {
            q1: block(0),
            q2: block(1),
            p1: block(2),
            p2: block(3),
            varphi: block(4),
            phi: block(5),
            t,
        }
    }
}

/// Klein-Gordon-Zakharov full-order model on a periodic grid.
#[derive(Debug, Clone)]
pub struct KgzModel {
    pub grid: SpatialGrid,
    pub laplacian: Laplacian,
}

impl KgzModel {
    pub fn new(grid: SpatialGrid) -> Result<Self> {
        if grid.boundary() != Boundary::Periodic {
            return Err(Error::InvalidGrid("kgz requires a periodic grid".into()));
        }
        let laplacian = build_laplacian(&grid)?;
        Ok(Self { grid, laplacian })
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn rhs(&self, s: &KgzState) -> Result<KgzState> {
        kgz_rhs(s, &self.laplacian)
    }

    pub fn energy(&self, s: &KgzState) -> Result<f64> {
        kgz_energy(s, &self.laplacian)
    }
}

pub fn kgz_rhs(s: &KgzState, d: &Laplacian) -> Result<KgzState> {
    let n = d.dim();
    s.check("kgz_rhs", n)?;
    let density = s.q1.component_mul(&s.q1) + s.q2.component_mul(&s.q2);
    let dq1 = d.apply(&s.q1);
    let dq2 = d.apply(&s.q2);
    let mut p1_dot = DVector::zeros(n);
    let mut p2_dot = DVector::zeros(n);
    for i in 0..n {
        let coupling = 1.0 + s.phi[i] + density[i];
        p1_dot[i] = dq1[i] - coupling * s.q1[i];
        p2_dot[i] = dq2[i] - coupling * s.q2[i];
    }
    Ok(KgzState {
        q1: s.p1.clone(),
        q2: s.p2.clone(),
        p1: p1_dot,
        p2: p2_dot,
        varphi: &s.phi + &density,
        phi: d.apply(&s.varphi),
        t: s.t,
    })
}

pub fn kgz_energy(s: &KgzState, d: &Laplacian) -> Result<f64> {
    let n = d.dim();
    s.check("kgz_energy", n)?;
    let density = s.q1.component_mul(&s.q1) + s.q2.component_mul(&s.q2);
    let kinetic = s.p1.dot(&s.p1) + s.p2.dot(&s.p2);
    let mass = s.q1.dot(&s.q1) + s.q2.dot(&s.q2);
    let gradient = -d.quadratic_form(&s.q1) - d.quadratic_form(&s.q2);
    let coupling = s.phi.dot(&density);
    let ion = -0.5 * d.quadratic_form(&s.varphi) + 0.5 * s.phi.dot(&s.phi);
    let quartic = 0.5 * density.dot(&density);
    Ok(kinetic + mass + gradient + coupling + ion + quartic)
}

impl VectorField for KgzModel {
    fn dim(&self) -> usize {
        6 * self.n()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let s = KgzState::from_stacked(y, 0.0);
        let ds = kgz_rhs(&s, &self.laplacian).expect("state sized by dim()");
        out.copy_from(&ds.stacked());
    }
}

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// Kink and antikink speed of the 1D sine-Gordon initial data.
pub const SG1D_KINK_SPEED: f64 = 0.05;

/// Closed-form initial data of a canonical model on `grid`. Momentum is zero
/// except for 1D sine-Gordon, which starts as a colliding kink–antikink pair
/// `q = 4 atan(sinh(c t / γ) / (c cosh(x / γ)))` at `t = 0`.
pub fn initial_condition(model: ModelId, grid: &SpatialGrid) -> Result<FomState> {
    let n = grid.len();
    let profile = |f: &dyn Fn(&[f64]) -> f64| -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|i| f(&grid.node(i))))
    };
    let q = match model {
        ModelId::ExponentialWave => profile(&|x| 0.5 * x[0] * (PI - x[0])),
        ModelId::SineGordon1d => DVector::zeros(n),
        ModelId::SineGordon2d => profile(&|x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            4.0 * (3.0 - r).exp().atan()
        }),
        ModelId::KleinGordon2d => profile(&|x| 2.0 * sech((x[0] * x[0] + x[1] * x[1]).cosh())),
        ModelId::Kgz => {
            return Err(Error::UnsupportedModel(
                "use kgz_initial_condition for kgz".into(),
            ))
        }
    };
    if grid.dim() != expected_dim(model) {
        return Err(Error::InvalidGrid(format!(
            "{model} needs a {}D grid",
            expected_dim(model)
        )));
    }
    let p = match model {
        ModelId::SineGordon1d => {
            let g = (1.0 - SG1D_KINK_SPEED * SG1D_KINK_SPEED).sqrt();
            profile(&|x| 4.0 / g * sech(x[0] / g))
        }
        _ => DVector::zeros(n),
    };
    Ok(FomState { q, p, t: 0.0 })
}

fn expected_dim(model: ModelId) -> usize {
    match model {
        ModelId::SineGordon1d | ModelId::ExponentialWave => 1,
        _ => 2,
    }
}

/// KGZ initial data: both `psi` (real part) and `phi` are the double-sech
/// profile, all rates vanish and `varphi(0) = 0`.
pub fn kgz_initial_condition(grid: &SpatialGrid) -> Result<KgzState> {
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid("kgz needs a 2D grid".into()));
    }
    let n = grid.len();
    let bump = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let x = grid.node(i);
            sech(-(x[0] - 2.0).powi(2) - x[1].powi(2)) + sech(-x[0].powi(2) - (x[1] - 2.0).powi(2))
        }),
    );
    let mut s = KgzState::zeros(n);
    s.q1 = bump.clone();
    s.phi = bump;
    Ok(s)
}
