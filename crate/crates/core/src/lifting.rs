//! Quadratic liftings of the full-order models.
//!
//! A lifted model is `y' = A y + B (y ⊗ y)` on the stacked state
//! `[q; p; w_1; ...; w_k]` (KGZ: `[q1; q2; p1; p2; varphi; phi; w]`). `B` is
//! kept as coordinate quadruples `(row, i, j, value)` meaning
//! `dy_row += value * y_i * y_j`; in Kronecker terms the entry sits in column
//! `i * n̄ + j`. Entries are stored as emitted and never symmetrized.
//!
//! The lifted energy is the affine-quadratic form `y'Hy/2 + l'y + c`.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{check_len, Error, Result};
use crate::integrators::VectorField;
use crate::models::{spmv, FomState, KgzState, Laplacian, Nonlinearity};

/// One entry of a sparse quadratic operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEntry {
    pub row: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Sparse quadratic operator `B : R^{n̄} x R^{n̄} -> R^{n̄}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseQuadratic {
    pub dim: usize,
    pub entries: Vec<QuadEntry>,
}

impl SparseQuadratic {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, i: usize, j: usize, value: f64) {
        self.entries.push(QuadEntry { row, i, j, value });
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            for idx in [e.row, e.i, e.j] {
                if idx >= self.dim {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        dim: self.dim,
                    });
                }
            }
        }
        Ok(())
    }

    /// `out += B (y ⊗ y)`.
    pub fn apply_add(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        for e in &self.entries {
            out[e.row] += e.value * y[e.i] * y[e.j];
        }
    }

    /// `B (x ⊗ z)`.
    pub fn bilinear(&self, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for e in &self.entries {
            out[e.row] += e.value * x[e.i] * z[e.j];
        }
        out
    }

    /// Dense mode-1 matricization, `n̄ × n̄²`. Only for small operators.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim;
        let mut m = DMatrix::zeros(n, n * n);
        for e in &self.entries {
            m[(e.row, e.i * n + e.j)] += e.value;
        }
        m
    }
}

/// `E(y) = y'Hy/2 + l'y + c`.
#[derive(Debug, Clone)]
pub struct EnergyForm {
    pub hessian: CsrMatrix<f64>,
    pub linear: Option<DVector<f64>>,
    pub constant: f64,
}

impl EnergyForm {
    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        check_len("lifted_energy", self.dim(), y.len())?;
        let mut e = 0.5 * y.dot(&spmv(&self.hessian, y)) + self.constant;
        if let Some(l) = &self.linear {
            e += l.dot(y);
        }
        Ok(e)
    }

    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut g = spmv(&self.hessian, y);
        if let Some(l) = &self.linear {
            g += l;
        }
        g
    }
}

/// Position of a factor in a Hadamard product of the canonical lifted state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Q,
    P,
    /// Auxiliary variable `w_{k+1}` (zero-based).
    W(usize),
}

/// `coef * (left ⊙ right)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HadamardTerm {
    pub coef: f64,
    pub left: Slot,
    pub right: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LiftKind {
    /// `w1 = sqrt(2) κ sin(q/2)`, `w2 = sqrt(2) cos(q/2) / (κ̄ κ)`.
    SineGordon,
    /// `w1 = κ exp(-q/2)`.
    Exponential,
    /// `w1 = κ q² / 2`.
    KleinGordon { mu: f64 },
}

/// Energy-quadratizing lifting of a canonical model with free scalars κ, κ̄.
///
/// Auxiliary dynamics follow `w_j' = (α_j q + Σ_i α_{j,i} w_i) ⊙ p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftingMap {
    pub kind: LiftKind,
    pub kappa: f64,
    pub kappa_bar: f64,
}

/// Coefficient table of the auxiliary dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxTable {
    pub alpha_q: Vec<f64>,
    pub alpha_w: Vec<Vec<f64>>,
}

impl LiftingMap {
    pub fn sine_gordon() -> Self {
        Self {
            kind: LiftKind::SineGordon,
            kappa: std::f64::consts::FRAC_1_SQRT_2,
            kappa_bar: 2.0,
        }
    }

    pub fn exponential() -> Self {
        Self {
            kind: LiftKind::Exponential,
            kappa: 1.0,
            kappa_bar: 1.0,
        }
    }

    pub fn klein_gordon(mu: f64) -> Self {
        Self {
            kind: LiftKind::KleinGordon { mu },
            kappa: 2.0,
            kappa_bar: 1.0,
        }
    }

    /// Default lifting for a nonlinearity.
    pub fn for_nonlinearity(nl: Nonlinearity) -> Self {
        match nl {
            Nonlinearity::SineGordon => Self::sine_gordon(),
            Nonlinearity::Exponential => Self::exponential(),
            Nonlinearity::KleinGordon { mu } => Self::klein_gordon(mu),
        }
    }

    pub fn with_kappa(mut self, kappa: f64, kappa_bar: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa != 0.0 && kappa_bar.is_finite() && kappa_bar != 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lifting parameters must be finite and nonzero, got κ={kappa}, κ̄={kappa_bar}"
            )));
        }
        self.kappa = kappa;
        self.kappa_bar = kappa_bar;
        Ok(self)
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        match self.kind {
            LiftKind::SineGordon => Nonlinearity::SineGordon,
            LiftKind::Exponential => Nonlinearity::Exponential,
            LiftKind::KleinGordon { mu } => Nonlinearity::KleinGordon { mu },
        }
    }

    /// Number of auxiliary variables.
    pub fn k(&self) -> usize {
        match self.kind {
            LiftKind::SineGordon => 2,
            LiftKind::Exponential | LiftKind::KleinGordon { .. } => 1,
        }
    }

    /// `τ_aux(q)`, entrywise.
    pub fn tau(&self, aux: usize, q: f64) -> f64 {
        let (k, kb) = (self.kappa, self.kappa_bar);
        match (self.kind, aux) {
            (LiftKind::SineGordon, 0) => std::f64::consts::SQRT_2 * k * (0.5 * q).sin(),
            (LiftKind::SineGordon, 1) => std::f64::consts::SQRT_2 * (0.5 * q).cos() / (kb * k),
            (LiftKind::Exponential, 0) => k * (-0.5 * q).exp(),
            (LiftKind::KleinGordon { .. }, 0) => 0.5 * k * q * q,
            _ => panic!("auxiliary index {aux} out of range for {:?}", self.kind),
        }
    }

    /// Quartic potential density quadratized by `w1`. For Klein-Gordon the
    /// parameter μ is kept out of the lifting so one basis serves all μ.
    pub fn quadratized_potential(&self, q: f64) -> f64 {
        match self.kind {
            LiftKind::KleinGordon { .. } => 0.25 * q.powi(4),
            _ => self.nonlinearity().potential(q),
        }
    }

    /// Coefficient of `w1'w1` in the lifted energy.
    pub fn energy_weight(&self) -> f64 {
        let k2 = self.kappa * self.kappa;
        match self.kind {
            LiftKind::KleinGordon { mu } => mu / k2,
            _ => 1.0 / k2,
        }
    }

    /// Terms of `p' - D q`, each a scaled Hadamard product.
    pub fn force_terms(&self) -> Vec<HadamardTerm> {
        match self.kind {
            LiftKind::SineGordon => vec![HadamardTerm {
                coef: -self.kappa_bar,
                left: Slot::W(0),
                right: Slot::W(1),
            }],
            LiftKind::Exponential => vec![HadamardTerm {
                coef: 1.0 / (self.kappa * self.kappa),
                left: Slot::W(0),
                right: Slot::W(0),
            }],
            LiftKind::KleinGordon { mu } => vec![HadamardTerm {
                coef: -2.0 * mu / self.kappa,
                left: Slot::W(0),
                right: Slot::Q,
            }],
        }
    }

    pub fn aux_table(&self) -> AuxTable {
        let (k, kb) = (self.kappa, self.kappa_bar);
        match self.kind {
            LiftKind::SineGordon => AuxTable {
                alpha_q: vec![0.0, 0.0],
                alpha_w: vec![
                    vec![0.0, 0.5 * k * k * kb],
                    vec![-1.0 / (2.0 * kb * k * k), 0.0],
                ],
            },
            LiftKind::Exponential => AuxTable {
                alpha_q: vec![0.0],
                alpha_w: vec![vec![-0.5]],
            },
            LiftKind::KleinGordon { .. } => AuxTable {
                alpha_q: vec![k],
                alpha_w: vec![vec![0.0]],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LiftingVariant {
    EnergyQuadratized(LiftingMap),
    /// `w1 = sin q`, `w2 = cos q`, whose energy keeps a linear term.
    StandardSineGordon,
    Kgz,
}

/// Block labels of the lifted state, in storage order.
pub const CANONICAL_LABELS: [&str; 4] = ["q", "p", "w1", "w2"];
pub const KGZ_LABELS: [&str; 7] = ["q1", "q2", "p1", "p2", "varphi", "phi", "w"];

#[derive(Debug, Clone)]
pub struct LiftedModel {
    pub variant: LiftingVariant,
    /// Grid size; every block has length `n`.
    pub n: usize,
    pub labels: Vec<&'static str>,
    pub a: CsrMatrix<f64>,
    pub b: SparseQuadratic,
    pub energy: EnergyForm,
}

impl LiftedModel {
    pub fn dim(&self) -> usize {
        self.n * self.labels.len()
    }

    pub fn blocks(&self) -> usize {
        self.labels.len()
    }

    pub fn block_offset(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| *l == label).map(|k| k * self.n)
    }

    pub fn lifted_rhs(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("lifted_rhs", self.dim(), y.len())?;
        let mut out = spmv(&self.a, y);
        self.b.apply_add(y, &mut out);
        Ok(out)
    }

    pub fn lifted_energy(&self, y: &DVector<f64>) -> Result<f64> {
        self.energy.eval(y)
    }

    /// Lifts a canonical state.
    pub fn lift_state(&self, state: &FomState) -> Result<DVector<f64>> {
        check_len("lift_state", self.n, state.q.len())?;
        check_len("lift_state", self.n, state.p.len())?;
        let n = self.n;
        let mut y = DVector::zeros(self.dim());
        y.rows_mut(0, n).copy_from(&state.q);
        y.rows_mut(n, n).copy_from(&state.p);
        for (k, w) in self.aux_of(&state.q)?.into_iter().enumerate() {
            y.rows_mut((2 + k) * n, n).copy_from(&w);
        }
        Ok(y)
    }

    /// Auxiliary fields `w_k = τ_k(q)` of a canonical lifting.
    pub fn aux_of(&self, q: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        match &self.variant {
            LiftingVariant::EnergyQuadratized(map) => Ok((0..map.k())
                .map(|k| q.map(|x| map.tau(k, x)))
                .collect()),
            LiftingVariant::StandardSineGordon => Ok(vec![q.map(f64::sin), q.map(f64::cos)]),
            LiftingVariant::Kgz => Err(Error::UnsupportedModel(
                "kgz states are lifted with lift_kgz_state".into(),
            )),
        }
    }

    /// Lifts each column of a snapshot matrix, one matrix per auxiliary.
    pub fn lift_snapshots(&self, q: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        check_len("lift_snapshots", self.n, q.nrows())?;
        match &self.variant {
            LiftingVariant::EnergyQuadratized(map) => Ok((0..map.k())
                .map(|k| q.map(|x| map.tau(k, x)))
                .collect()),
            LiftingVariant::StandardSineGordon => Ok(vec![q.map(f64::sin), q.map(f64::cos)]),
            LiftingVariant::Kgz => Err(Error::UnsupportedModel(
                "kgz snapshots are lifted with kgz_density".into(),
            )),
        }
    }

    pub fn lift_kgz_state(&self, s: &KgzState) -> Result<DVector<f64>> {
        if self.variant != LiftingVariant::Kgz {
            return Err(Error::UnsupportedModel("not a kgz lifting".into()));
        }
        check_len("lift_kgz_state", self.n, s.len())?;
        let n = self.n;
        let mut y = DVector::zeros(7 * n);
        y.rows_mut(0, 6 * n).copy_from(&s.stacked());
        y.rows_mut(6 * n, n).copy_from(&kgz_density(&s.q1, &s.q2));
        Ok(y)
    }
}

/// `q1² + q2²`, entrywise; works on vectors and snapshot matrices alike.
pub fn kgz_density<R: nalgebra::Dim, C: nalgebra::Dim, S>(
    q1: &nalgebra::Matrix<f64, R, C, S>,
    q2: &nalgebra::Matrix<f64, R, C, S>,
) -> nalgebra::OMatrix<f64, R, C>
where
    S: nalgebra::storage::Storage<f64, R, C>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<R, C>,
{
    q1.component_mul(q1) + q2.component_mul(q2)
}

impl VectorField for LiftedModel {
    fn dim(&self) -> usize {
        LiftedModel::dim(self)
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        for (i, row) in self.a.row_iter().enumerate() {
            let mut acc = 0.0;
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                acc += v * y[j];
            }
            out[i] = acc;
        }
        self.b.apply_add(y, out);
    }
}

fn push_block(coo: &mut CooMatrix<f64>, row0: usize, col0: usize, m: &CsrMatrix<f64>, scale: f64) {
    for (i, row) in m.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            coo.push(row0 + i, col0 + j, scale * v);
        }
    }
}

fn push_identity(coo: &mut CooMatrix<f64>, row0: usize, col0: usize, n: usize, scale: f64) {
    for i in 0..n {
        coo.push(row0 + i, col0 + i, scale);
    }
}

fn check_square(d: &Laplacian) -> usize {
    d.dim()
}

/// Lifted operators of an energy-quadratizing lifting.
pub fn build_lifted_operators(map: &LiftingMap, d: &Laplacian) -> Result<LiftedModel> {
    let n = check_square(d);
    let k = map.k();
    let nbar = (k + 2) * n;
    let off = |s: Slot| match s {
        Slot::Q => 0,
        Slot::P => n,
        Slot::W(i) => (2 + i) * n,
    };

    let mut a = CooMatrix::new(nbar, nbar);
    push_identity(&mut a, 0, n, n, 1.0);
    push_block(&mut a, n, 0, d.matrix(), 1.0);

    let mut b = SparseQuadratic::new(nbar);
    for term in map.force_terms() {
        for i in 0..n {
            b.push(n + i, off(term.left) + i, off(term.right) + i, term.coef);
        }
    }
    let table = map.aux_table();
    for j in 0..k {
        let row0 = off(Slot::W(j));
        if table.alpha_q[j] != 0.0 {
            for i in 0..n {
                b.push(row0 + i, i, n + i, table.alpha_q[j]);
            }
        }
        for (m, &alpha) in table.alpha_w[j].iter().enumerate() {
            if alpha != 0.0 {
                for i in 0..n {
                    b.push(row0 + i, off(Slot::W(m)) + i, n + i, alpha);
                }
            }
        }
    }

    let mut h = CooMatrix::new(nbar, nbar);
    push_block(&mut h, 0, 0, d.matrix(), -1.0);
    push_identity(&mut h, n, n, n, 1.0);
    push_identity(&mut h, 2 * n, 2 * n, n, 2.0 * map.energy_weight());

    Ok(LiftedModel {
        variant: LiftingVariant::EnergyQuadratized(*map),
        n,
        labels: CANONICAL_LABELS[..k + 2].to_vec(),
        a: CsrMatrix::from(&a),
        b,
        energy: EnergyForm {
            hessian: CsrMatrix::from(&h),
            linear: None,
            constant: 0.0,
        },
    })
}

/// Standard lifting of sine-Gordon with `w1 = sin q`, `w2 = cos q`:
/// `p' = D q - w1`, `w1' = w2 ⊙ p`, `w2' = -w1 ⊙ p`, and energy
/// `p'p/2 - q'Dq/2 + Σ (1 - w2_i)`.
pub fn build_standard_lifting_sg(d: &Laplacian) -> Result<LiftedModel> {
    let n = check_square(d);
    let nbar = 4 * n;
    let mut a = CooMatrix::new(nbar, nbar);
    push_identity(&mut a, 0, n, n, 1.0);
    push_block(&mut a, n, 0, d.matrix(), 1.0);
    push_identity(&mut a, n, 2 * n, n, -1.0);

    let mut b = SparseQuadratic::new(nbar);
    for i in 0..n {
        b.push(2 * n + i, 3 * n + i, n + i, 1.0);
    }
    for i in 0..n {
        b.push(3 * n + i, 2 * n + i, n + i, -1.0);
    }

    let mut h = CooMatrix::new(nbar, nbar);
    push_block(&mut h, 0, 0, d.matrix(), -1.0);
    push_identity(&mut h, n, n, n, 1.0);
    let mut linear = DVector::zeros(nbar);
    linear.rows_mut(3 * n, n).fill(-1.0);

    Ok(LiftedModel {
        variant: LiftingVariant::StandardSineGordon,
        n,
        labels: CANONICAL_LABELS.to_vec(),
        a: CsrMatrix::from(&a),
        b,
        energy: EnergyForm {
            hessian: CsrMatrix::from(&h),
            linear: Some(linear),
            constant: n as f64,
        },
    })
}

/// KGZ lifting with the single auxiliary `w = q1² + q2²`.
pub fn build_kgz_lifting(d: &Laplacian) -> Result<LiftedModel> {
    let n = check_square(d);
    let nbar = 7 * n;
    let [q1, q2, p1, p2, varphi, phi, w] = [0, 1, 2, 3, 4, 5, 6].map(|k| k * n);

    let mut a = CooMatrix::new(nbar, nbar);
    push_identity(&mut a, q1, p1, n, 1.0);
    push_identity(&mut a, q2, p2, n, 1.0);
    for (prow, qcol) in [(p1, q1), (p2, q2)] {
        push_block(&mut a, prow, qcol, d.matrix(), 1.0);
        push_identity(&mut a, prow, qcol, n, -1.0);
    }
    push_identity(&mut a, varphi, phi, n, 1.0);
    push_identity(&mut a, varphi, w, n, 1.0);
    push_block(&mut a, phi, varphi, d.matrix(), 1.0);

    let mut b = SparseQuadratic::new(nbar);
    for (prow, qcol) in [(p1, q1), (p2, q2)] {
        for i in 0..n {
            b.push(prow + i, phi + i, qcol + i, -1.0);
        }
        for i in 0..n {
            b.push(prow + i, w + i, qcol + i, -1.0);
        }
    }
    for (qcol, pcol) in [(q1, p1), (q2, p2)] {
        for i in 0..n {
            b.push(w + i, qcol + i, pcol + i, 2.0);
        }
    }

    let mut h = CooMatrix::new(nbar, nbar);
    for qcol in [q1, q2] {
        push_identity(&mut h, qcol, qcol, n, 2.0);
        push_block(&mut h, qcol, qcol, d.matrix(), -2.0);
    }
    push_identity(&mut h, p1, p1, n, 2.0);
    push_identity(&mut h, p2, p2, n, 2.0);
    push_block(&mut h, varphi, varphi, d.matrix(), -1.0);
    push_identity(&mut h, phi, phi, n, 1.0);
    push_identity(&mut h, phi, w, n, 1.0);
    push_identity(&mut h, w, phi, n, 1.0);
    push_identity(&mut h, w, w, n, 1.0);

    Ok(LiftedModel {
        variant: LiftingVariant::Kgz,
        n,
        labels: KGZ_LABELS.to_vec(),
        a: CsrMatrix::from(&a),
        b,
        energy: EnergyForm {
            hessian: CsrMatrix::from(&h),
            linear: None,
            constant: 0.0,
        },
    })
}
