//! Structure-preserving DEIM for canonical models.
//!
//! The nonlinear energy `Ĥ_non(q̂) = 1ᵀ g(Φ q̂)` is replaced by
//! `cᵀ g(Φ_P q̂)` with weights `c = (PᵀV)⁻ᵀ Vᵀ 1`, so the hyper-reduced
//! right-hand side is still the canonical gradient of a reduced
//! Hamiltonian. Online work only touches the `m` sampled grid nodes.

use nalgebra::{DMatrix, DVector, LU};

use crate::basis::{fix_sign, symmetric_eigen, truncated_svd, OrthonormalBasis};
use crate::error::{check_len, Error, Result};
use crate::integrators::VectorField;
use crate::models::Nonlinearity;

/// Stacks `diag(f(Φ Φᵀ q_j)) Φ` for every snapshot column `q_j`.
pub fn collect_jacobian_snapshots(
    nonlinearity: Nonlinearity,
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_len("collect_jacobian_snapshots", phi.nrows(), q.nrows())?;
    let (n, r, k) = (phi.nrows(), phi.ncols(), q.ncols());
    let recon = phi * phi.tr_mul(q);
    let mut out = DMatrix::zeros(n, r * k);
    for j in 0..k {
        let mut block = out.columns_mut(j * r, r);
        block.copy_from(phi);
        for i in 0..n {
            let s = nonlinearity.force(recon[(i, j)]);
            block.row_mut(i).scale_mut(s);
        }
    }
    Ok(out)
}

/// Above this many entries the DEIM basis is taken from the eigenvectors of
/// the Gram matrix `J Jᵀ` instead of a dense SVD of `J`.
pub const GRAM_THRESHOLD: usize = 20_000_000;

/// Leading `m` left singular vectors of a (typically very wide) Jacobian
/// snapshot matrix.
pub fn deim_basis(jac: &DMatrix<f64>, m: usize) -> Result<OrthonormalBasis> {
    deim_basis_with_threshold(jac, m, GRAM_THRESHOLD)
}

fn deim_basis_with_threshold(
    jac: &DMatrix<f64>,
    m: usize,
    threshold: usize,
) -> Result<OrthonormalBasis> {
    if jac.nrows() * jac.ncols() <= threshold || jac.ncols() <= jac.nrows() {
        return truncated_svd(jac, m);
    }
    let bound = jac.nrows().min(jac.ncols());
    if m > bound {
        return Err(Error::RankTooLarge { requested: m, bound });
    }
    if jac.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    gram_basis(&(jac * jac.transpose()), m)
}

/// Leading `m` eigenvectors of a Gram matrix `J Jᵀ`, with `σ = √λ`.
fn gram_basis(gram: &DMatrix<f64>, m: usize) -> Result<OrthonormalBasis> {
    let (vectors, values) = symmetric_eigen(gram)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut matrix = DMatrix::zeros(gram.nrows(), m);
    let mut sv = DVector::zeros(order.len());
    for (k, &src) in order.iter().enumerate() {
        sv[k] = values[src].max(0.0).sqrt();
        if k < m {
            matrix.column_mut(k).copy_from(&vectors.column(src));
            fix_sign(&mut matrix.column_mut(k));
        }
    }
    Ok(OrthonormalBasis {
        matrix,
        singular_values: sv,
    })
}

/// `f(Φ Φᵀ q_j)` for every snapshot column, `n × K`.
pub fn force_samples(nonlinearity: Nonlinearity, phi: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_len("force_samples", phi.nrows(), q.nrows())?;
    Ok((phi * phi.tr_mul(q)).map(|x| nonlinearity.force(x)))
}

/// DEIM basis of the Jacobian snapshots `diag(s_j) Φ` for the columns `s_j`
/// of `samples`. Large problems use `J Jᵀ = (Φ Φᵀ) ∘ (S Sᵀ)` and never
/// form `J`.
pub fn deim_basis_from_samples(
    phi: &DMatrix<f64>,
    samples: &DMatrix<f64>,
    m: usize,
) -> Result<OrthonormalBasis> {
    check_len("deim_basis_from_samples", phi.nrows(), samples.nrows())?;
    let (n, r, k) = (phi.nrows(), phi.ncols(), samples.ncols());
    if n * r * k <= GRAM_THRESHOLD {
        let mut jac = DMatrix::zeros(n, r * k);
        for j in 0..k {
            let mut block = jac.columns_mut(j * r, r);
            block.copy_from(phi);
            for i in 0..n {
                block.row_mut(i).scale_mut(samples[(i, j)]);
            }
        }
        return deim_basis(&jac, m);
    }
    let bound = n.min(r * k);
    if m > bound {
        return Err(Error::RankTooLarge { requested: m, bound });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let gram = (phi * phi.transpose()).component_mul(&(samples * samples.transpose()));
    gram_basis(&gram, m)
}

/// Greedy DEIM point selection; ties go to the lowest index.
pub fn deim_points(v: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, m) = (v.nrows(), v.ncols());
    if m == 0 || m > n {
        return Err(Error::RankTooLarge {
            requested: m,
            bound: n,
        });
    }
    let argmax = |col: &DVector<f64>| {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        best
    };
    let mut points = vec![argmax(&v.column(0).into_owned())];
    for l in 1..m {
        let pv = DMatrix::from_fn(l, l, |a, b| v[(points[a], b)]);
        let rhs = DVector::from_fn(l, |a, _| v[(points[a], l)]);
        let c = pv
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularInterpolation { step: l })?;
        let residual = v.column(l) - v.columns(0, l) * c;
        let next = argmax(&residual);
        if residual[next].abs() <= 1e-14 || points.contains(&next) {
            return Err(Error::SingularInterpolation { step: l });
        }
        points.push(next);
    }
    Ok(points)
}

/// Precomputed spDEIM interpolation data.
#[derive(Debug, Clone)]
pub struct DeimModel {
    pub v_deim: DMatrix<f64>,
    pub points: Vec<usize>,
    /// `Pᵀ Φ`, `m × r`.
    pub phi_sampled: DMatrix<f64>,
    pub pv_lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub v_t_one: DVector<f64>,
    /// `(PᵀV)⁻ᵀ Vᵀ 1`.
    pub weights: DVector<f64>,
    /// 2-norm condition number of `PᵀV`.
    pub condition: f64,
}

pub fn build_deim(v_deim: DMatrix<f64>, phi: &DMatrix<f64>) -> Result<DeimModel> {
    check_len("build_deim", phi.nrows(), v_deim.nrows())?;
    let points = deim_points(&v_deim)?;
    let m = points.len();
    let pv = DMatrix::from_fn(m, m, |a, b| v_deim[(points[a], b)]);
    let sv = pv.singular_values();
    let condition = sv.max() / sv.min();
    let pv_lu = pv.clone().lu();
    let v_t_one = v_deim.row_sum().transpose();
    let weights = pv
        .transpose()
        .lu()
        .solve(&v_t_one)
        .ok_or(Error::SingularInterpolation { step: m })?;
    let phi_sampled = DMatrix::from_fn(m, phi.ncols(), |a, b| phi[(points[a], b)]);
    Ok(DeimModel {
        v_deim,
        points,
        phi_sampled,
        pv_lu,
        v_t_one,
        weights,
        condition,
    })
}

/// Hyper-reduced Hamiltonian ROM on `ŷ = [q̂; p̂]`.
#[derive(Debug, Clone)]
pub struct SpDeimRom {
    pub d_hat: DMatrix<f64>,
    pub phi_sampled: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub nonlinearity: Nonlinearity,
}

impl SpDeimRom {
    pub fn new(d_hat: DMatrix<f64>, deim: &DeimModel, nonlinearity: Nonlinearity) -> Result<Self> {
        check_len("spdeim d_hat", deim.phi_sampled.ncols(), d_hat.nrows())?;
        Ok(Self {
            d_hat,
            phi_sampled: deim.phi_sampled.clone(),
            weights: deim.weights.clone(),
            nonlinearity,
        })
    }

    pub fn r(&self) -> usize {
        self.d_hat.nrows()
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    /// `p̂'p̂/2 - q̂'D̂q̂/2 + cᵀ g(Φ_P q̂)`.
    pub fn hamiltonian(&self, y: &DVector<f64>) -> Result<f64> {
        let r = self.r();
        check_len("spdeim_hamiltonian", 2 * r, y.len())?;
        let q = y.rows(0, r);
        let p = y.rows(r, r);
        let x = &self.phi_sampled * q;
        let nl: f64 = x
            .iter()
            .zip(self.weights.iter())
            .map(|(&xi, &c)| c * self.nonlinearity.potential(xi))
            .sum();
        Ok(0.5 * p.dot(&p) - 0.5 * q.dot(&(&self.d_hat * q)) + nl)
    }

    pub fn spdeim_rhs(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("spdeim_rhs", 2 * self.r(), y.len())?;
        let mut out = DVector::zeros(y.len());
        self.eval(y, &mut out);
        Ok(out)
    }
}

impl VectorField for SpDeimRom {
    fn dim(&self) -> usize {
        2 * self.r()
    }

    fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let r = self.r();
        let q = y.rows(0, r);
        let x = &self.phi_sampled * q;
        let sampled = DVector::from_fn(x.len(), |i, _| self.weights[i] * self.nonlinearity.force(x[i]));
        out.rows_mut(0, r).copy_from(&y.rows(r, r));
        let mut pdot = &self.d_hat * q;
        pdot.gemv_tr(-1.0, &self.phi_sampled, &sampled, 1.0);
        out.rows_mut(r, r).copy_from(&pdot);
    }

    fn jacobian(&self, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        let r = self.r();
        let x = &self.phi_sampled * y.rows(0, r);
        let mut scaled = self.phi_sampled.clone();
        for i in 0..x.len() {
            let s = self.weights[i] * self.nonlinearity.stiffness(x[i]);
            scaled.row_mut(i).scale_mut(s);
        }
        let mut jac = DMatrix::zeros(2 * r, 2 * r);
        for i in 0..r {
            jac[(i, r + i)] = 1.0;
        }
        let lower = &self.d_hat - self.phi_sampled.tr_mul(&scaled);
        jac.view_mut((r, 0), (r, r)).copy_from(&lower);
        Some(jac)
    }
}
