//! Galerkin reduced-order models.
//!
//! [`QuadraticRom`] is the projection of a lifted model onto a
//! block-diagonal basis; its quadratic operator is assembled straight from
//! the sparse lifted `B` without ever forming `V̄ ⊗ V̄`.
//! [`HamiltonianRom`] is the cotangent-lift PSD baseline whose nonlinear
//! term is still evaluated at full order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::basis::BlockDiagonalBasis;
use crate::error::{check_len, Error, Result};
use crate::integrators::{quadratic_eval, slot_contractions, QuadraticField, VectorField};
use crate::lifting::{LiftedModel, SparseQuadratic};
use crate::models::{FomModel, KgzState, Laplacian, Nonlinearity};

/// Row-to-block lookup for a block-diagonal basis.
struct BlockIndex<'a> {
    basis: &'a BlockDiagonalBasis,
    row_starts: Vec<usize>,
    col_starts: Vec<usize>,
}

impl<'a> BlockIndex<'a> {
    fn new(basis: &'a BlockDiagonalBasis) -> Self {
        let (row_starts, col_starts) = basis.offsets().into_iter().unzip();
        Self {
            basis,
            row_starts,
            col_starts,
        }
    }

    /// `(block, local row)` of a full-order row index.
    fn locate(&self, row: usize) -> (usize, usize) {
        let k = self.row_starts.partition_point(|&s| s <= row) - 1;
        (k, row - self.row_starts[k])
    }

    fn matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.basis.blocks[k].1
    }

    fn cols(&self, k: usize) -> (usize, usize) {
        (self.col_starts[k], self.basis.blocks[k].1.ncols())
    }
}

/// `V̄ᵀ A V̄` for a sparse `A`, touching only the nonzeros of `A`.
pub fn project_linear(a: &CsrMatrix<f64>, basis: &BlockDiagonalBasis) -> Result<DMatrix<f64>> {
    let nbar = basis.nrows();
    check_len("project_linear rows", nbar, a.nrows())?;
    check_len("project_linear cols", nbar, a.ncols())?;
    let idx = BlockIndex::new(basis);
    let rbar = basis.ncols();

    // A V̄, one row at a time
    let mut av = DMatrix::zeros(nbar, rbar);
    for (i, row) in a.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            let (k, local) = idx.locate(j);
            let (c0, width) = idx.cols(k);
            let vrow = idx.matrix(k).row(local);
            for c in 0..width {
                av[(i, c0 + c)] += v * vrow[c];
            }
        }
    }
    let mut out = DMatrix::zeros(rbar, rbar);
    for (k, (r0, c0)) in basis.offsets().into_iter().enumerate() {
        let vk = idx.matrix(k);
        let rows = av.rows(r0, vk.nrows());
        out.rows_mut(c0, vk.ncols()).gemm_tr(1.0, vk, &rows, 0.0);
    }
    Ok(out)
}

/// Sorted, deduplicated list of blocks.
fn insert_block(set: &mut Vec<usize>, k: usize) {
    if let Err(pos) = set.binary_search(&k) {
        set.insert(pos, k);
    }
}

/// Reduced quadratic operator `V̄ᵀ B (V̄ ⊗ V̄)` as an `r̄ × r̄²` matrix.
///
/// Mode 1 contracts the output index with `V̄ᵀ` on the nonzero column pairs
/// only, mode 2 contracts the first Kronecker slot and mode 3 the second.
/// Work is streamed over the second-slot index so the intermediate tensor
/// never exceeds `r̄ × r̄`.
pub fn project_quadratic_sparse(
    b: &SparseQuadratic,
    basis: &BlockDiagonalBasis,
) -> Result<DMatrix<f64>> {
    let nbar = basis.nrows();
    check_len("project_quadratic_sparse", nbar, b.dim)?;
    b.validate()?;
    let idx = BlockIndex::new(basis);
    let rbar = basis.ncols();

    // mode 1: group entries by their column pair, j-major
    let mut pairs: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for e in &b.entries {
        pairs.entry((e.j, e.i)).or_default().push((e.row, e.value));
    }

    let mut out = DMatrix::zeros(rbar, rbar * rbar);
    let mut t1 = DVector::zeros(rbar);
    let mut t2 = DMatrix::zeros(rbar, rbar);
    let mut iter = pairs.into_iter().peekable();
    while let Some(&((j, _), _)) = iter.peek() {
        let mut a_blocks: Vec<usize> = Vec::new();
        let mut b_blocks: Vec<usize> = Vec::new();
        while let Some(((_, i), rows)) = iter.next_if(|((jj, _), _)| *jj == j) {
            let mut t1_blocks: Vec<usize> = Vec::new();
            for (row, value) in rows {
                let (k, local) = idx.locate(row);
                let (c0, width) = idx.cols(k);
                let vrow = idx.matrix(k).row(local);
                for c in 0..width {
                    t1[c0 + c] += value * vrow[c];
                }
                insert_block(&mut t1_blocks, k);
            }
            // mode 2: outer product with V̄[i, :]
            let (ki, li) = idx.locate(i);
            let (bc0, bw) = idx.cols(ki);
            let vi = idx.matrix(ki).row(li);
            for &ka in &t1_blocks {
                let (ac0, aw) = idx.cols(ka);
                for bb in 0..bw {
                    let s = vi[bb];
                    if s == 0.0 {
                        continue;
                    }
                    for aa in 0..aw {
                        t2[(ac0 + aa, bc0 + bb)] += t1[ac0 + aa] * s;
                    }
                }
                for aa in 0..aw {
                    t1[ac0 + aa] = 0.0;
                }
                insert_block(&mut a_blocks, ka);
            }
            insert_block(&mut b_blocks, ki);
        }

        // mode 3: contract with V̄[j, :]
        let (kj, lj) = idx.locate(j);
        let (cc0, cw) = idx.cols(kj);
        let vj = idx.matrix(kj).row(lj);
        for &kb in &b_blocks {
            let (bc0, bw) = idx.cols(kb);
            for bb in 0..bw {
                for cc in 0..cw {
                    let s = vj[cc];
                    if s == 0.0 {
                        continue;
                    }
                    let col = (bc0 + bb) * rbar + cc0 + cc;
                    let mut dst = out.column_mut(col);
                    for &ka in &a_blocks {
                        let (ac0, aw) = idx.cols(ka);
                        for aa in 0..aw {
                            dst[ac0 + aa] += t2[(ac0 + aa, bc0 + bb)] * s;
                        }
                    }
                }
            }
        }
        for &ka in &a_blocks {
            let (ac0, aw) = idx.cols(ka);
            for &kb in &b_blocks {
                let (bc0, bw) = idx.cols(kb);
                t2.view_mut((ac0, bc0), (aw, bw)).fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Projected lifted model `ŷ' = Ā_r ŷ + B̄_r (ŷ ⊗ ŷ)` with reduced
/// lifted energy `ŷ'Ĥŷ/2 + l̂'ŷ + c`.
#[derive(Debug, Clone)]
pub struct QuadraticRom {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub energy_hessian: DMatrix<f64>,
    pub energy_linear: Option<DVector<f64>>,
    pub energy_constant: f64,
    /// `(label, offset, width)` of every reduced block.
    pub layout: Vec<(&'static str, usize, usize)>,
}

pub fn build_quadratic_rom(lifted: &LiftedModel, basis: &BlockDiagonalBasis) -> Result<QuadraticRom> {
    let labels: Vec<&str> = basis.blocks.iter().map(|(l, _)| *l).collect();
    if labels != lifted.labels {
        return Err(Error::InvalidConfig(format!(
            "basis blocks {labels:?} do not match lifted layout {:?}",
            lifted.labels
        )));
    }
    for (_, m) in &basis.blocks {
        check_len("basis block rows", lifted.n, m.nrows())?;
    }
    let a = project_linear(&lifted.a, basis)?;
    let b = project_quadratic_sparse(&lifted.b, basis)?;
    let energy_hessian = project_linear(&lifted.energy.hessian, basis)?;
    let energy_linear = match &lifted.energy.linear {
        Some(l) => Some(basis.project(l)?),
        None => None,
    };
    let layout = basis
        .blocks
        .iter()
        .zip(basis.offsets())
        .map(|((l, m), (_, c))| (*l, c, m.ncols()))
        .collect();
    Ok(QuadraticRom {
        a,
        b,
        energy_hessian,
        energy_linear,
        energy_constant: lifted.energy.constant,
        layout,
    })
}

impl QuadraticRom {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn rom_rhs(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("rom_rhs", self.dim(), y.len())?;
        let mut out = DVector::zeros(self.dim());
        quadratic_eval(&self.a, &self.b, y, &mut out);
        Ok(out)
    }

    pub fn reduced_lifted_energy(&self, y: &DVector<f64>) -> Result<f64> {
        check_len("reduced_lifted_energy", self.dim(), y.len())?;
        let mut e = 0.5 * y.dot(&(&self.energy_hessian * y)) + self.energy_constant;
        if let Some(l) = &self.energy_linear {
            e += l.dot(y);
        }
        Ok(e)
    }

    pub fn energy_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.energy_hessian * y;
        if let Some(l) = &self.energy_linear {
            g += l;
        }
        g
    }

    /// `∇Ê(ŷ)ᵀ f̂(ŷ)`, the continuous-time energy rate.
    pub fn energy_rate(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.energy_gradient(y).dot(&self.rom_rhs(y)?))
    }

    pub fn range(&self, label: &str) -> Option<(usize, usize)> {
        self.layout
            .iter()
            .find(|(l, _, _)| *l == label)
            .map(|&(_, o, w)| (o, w))
    }

    pub fn to_field(&self) -> QuadraticField {
        QuadraticField {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }
}

impl VectorField for QuadraticRom {
    fn dim(&self) -> usize {
        QuadraticRom::dim(self)
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        quadratic_eval(&self.a, &self.b, y, out);
    }

    fn jacobian(&self, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (l1, l2) = slot_contractions(&self.b, y);
        Some(&self.a + l1 + l2)
    }
}

/// `Φᵀ D Φ`.
pub fn reduce_laplacian(d: &Laplacian, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_len("reduce_laplacian", d.dim(), phi.nrows())?;
    let mut dphi = DMatrix::zeros(phi.nrows(), phi.ncols());
    for (i, row) in d.matrix().row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            for c in 0..phi.ncols() {
                dphi[(i, c)] += v * phi[(j, c)];
            }
        }
    }
    let out = phi.tr_mul(&dphi);
    // symmetric up to rounding; enforce it exactly
    Ok(0.5 * (&out + out.transpose()))
}

/// Cotangent-lift PSD ROM on `ŷ = [q̂; p̂]`:
/// `q̂' = p̂`, `p̂' = D̂ q̂ - Φᵀ f(Φ q̂)`.
#[derive(Debug, Clone)]
pub struct HamiltonianRom {
    pub d_hat: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub nonlinearity: Nonlinearity,
}

pub fn build_psd_rom(model: &FomModel, phi: &DMatrix<f64>) -> Result<HamiltonianRom> {
    check_len("build_psd_rom", model.n(), phi.nrows())?;
    Ok(HamiltonianRom {
        d_hat: reduce_laplacian(&model.laplacian, phi)?,
        phi: phi.clone(),
        nonlinearity: model.nonlinearity,
    })
}

impl HamiltonianRom {
    pub fn r(&self) -> usize {
        self.phi.ncols()
    }

    pub fn hamiltonian(&self, y: &DVector<f64>) -> Result<f64> {
        let r = self.r();
        check_len("psd_hamiltonian", 2 * r, y.len())?;
        let q = y.rows(0, r);
        let p = y.rows(r, r);
        let x = &self.phi * q;
        Ok(0.5 * p.dot(&p) - 0.5 * q.dot(&(&self.d_hat * q)) + self.nonlinearity.potential_sum(&x))
    }

    pub fn rhs(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("psd_rhs", 2 * self.r(), y.len())?;
        let mut out = DVector::zeros(y.len());
        self.eval(y, &mut out);
        Ok(out)
    }
}

impl VectorField for HamiltonianRom {
    fn dim(&self) -> usize {
        2 * self.r()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let r = self.r();
        let q = y.rows(0, r);
        let x = &self.phi * q;
        let f = self.nonlinearity.force_vec(&x);
        out.rows_mut(0, r).copy_from(&y.rows(r, r));
        let mut pdot = &self.d_hat * q;
        pdot.gemv_tr(-1.0, &self.phi, &f, 1.0);
        out.rows_mut(r, r).copy_from(&pdot);
    }

    fn jacobian(&self, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        let r = self.r();
        let x = &self.phi * y.rows(0, r);
        let mut scaled = self.phi.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.nonlinearity.stiffness(x[i]);
        }
        let mut jac = DMatrix::zeros(2 * r, 2 * r);
        for i in 0..r {
            jac[(i, r + i)] = 1.0;
        }
        let lower = &self.d_hat - self.phi.tr_mul(&scaled);
        jac.view_mut((r, 0), (r, r)).copy_from(&lower);
        Some(jac)
    }
}

/// Galerkin ROM of the (non-lifted) KGZ model on
/// `blkdiag(Φ, Φ, Φ, Φ, V, V)`; cubic terms are evaluated at full order.
#[derive(Debug, Clone)]
pub struct KgzPsdRom {
    pub phi: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

pub fn build_kgz_psd_rom(d: &Laplacian, phi: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<KgzPsdRom> {
    Ok(KgzPsdRom {
        phi: phi.clone(),
        v: v.clone(),
        d1: reduce_laplacian(d, phi)?,
        d2: reduce_laplacian(d, v)?,
    })
}

impl KgzPsdRom {
    fn widths(&self) -> [usize; 6] {
        let (r, s) = (self.phi.ncols(), self.v.ncols());
        [r, r, r, r, s, s]
    }

    /// Reduced state of a full KGZ state.
    pub fn reduce(&self, s: &KgzState) -> DVector<f64> {
        let parts = [
            self.phi.tr_mul(&s.q1),
            self.phi.tr_mul(&s.q2),
            self.phi.tr_mul(&s.p1),
            self.phi.tr_mul(&s.p2),
            self.v.tr_mul(&s.varphi),
            self.v.tr_mul(&s.phi),
        ];
        let mut y = DVector::zeros(self.widths().iter().sum());
        let mut o = 0;
        for p in parts {
            y.rows_mut(o, p.len()).copy_from(&p);
            o += p.len();
        }
        y
    }

    /// Full state reconstructed from a reduced one.
    pub fn expand(&self, y: &DVector<f64>) -> KgzState {
        let w = self.widths();
        let mut o = 0;
        let mut take = |k: usize, m: &DMatrix<f64>| {
            let v = m * y.rows(o, w[k]);
            o += w[k];
            v
        };
        let q1 = take(0, &self.phi);
        let q2 = take(1, &self.phi);
        let p1 = take(2, &self.phi);
        let p2 = take(3, &self.phi);
        let varphi = take(4, &self.v);
        let phi = take(5, &self.v);
        KgzState {
            q1,
            q2,
            p1,
            p2,
            varphi,
            phi,
            t: 0.0,
        }
    }
}

impl VectorField for KgzPsdRom {
    fn dim(&self) -> usize {
        self.widths().iter().sum()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let r = self.phi.ncols();
        let s = self.v.ncols();
        let q1h = y.rows(0, r);
        let q2h = y.rows(r, r);
        let q1 = &self.phi * q1h;
        let q2 = &self.phi * q2h;
        let phi = &self.v * y.rows(4 * r + s, s);
        let density = q1.component_mul(&q1) + q2.component_mul(&q2);
        let coupling = &phi + &density;
        out.rows_mut(0, r).copy_from(&y.rows(2 * r, r));
        out.rows_mut(r, r).copy_from(&y.rows(3 * r, r));
        for (k, (qh, q)) in [(q1h, &q1), (q2h, &q2)].into_iter().enumerate() {
            let mut pd = &self.d1 * qh - qh;
            pd.gemv_tr(-1.0, &self.phi, &coupling.component_mul(q), 1.0);
            out.rows_mut((2 + k) * r, r).copy_from(&pd);
        }
        let mut vd = y.rows(4 * r + s, s).into_owned();
        vd.gemv_tr(1.0, &self.v, &density, 1.0);
        out.rows_mut(4 * r, s).copy_from(&vd);
        out.rows_mut(4 * r + s, s)
            .copy_from(&(&self.d2 * y.rows(4 * r, s)));
    }
}
