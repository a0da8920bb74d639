//! POD and cotangent-lift bases.
//!
//! Singular vectors follow a fixed sign convention (the largest-magnitude
//! entry of every column is positive, first index on ties) so identical
//! inputs give bit-identical bases.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    pub matrix: DMatrix<f64>,
    /// Full retained spectrum, nonincreasing, at least `rank()` long.
    pub singular_values: DVector<f64>,
}

impl OrthonormalBasis {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// `Σ_{i<r} σ_i² / Σ σ_i²`.
    pub fn retained_energy(&self) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let kept: f64 = self
            .singular_values
            .iter()
            .take(self.rank())
            .map(|s| s * s)
            .sum();
        if total == 0.0 {
            1.0
        } else {
            kept / total
        }
    }

    /// Copy with only the leading `r` columns.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r > self.rank() {
            return Err(Error::RankTooLarge {
                requested: r,
                bound: self.rank(),
            });
        }
        Ok(Self {
            matrix: self.matrix.columns(0, r).into_owned(),
            singular_values: self.singular_values.clone(),
        })
    }
}

pub(crate) fn fix_sign(col: &mut nalgebra::DVectorViewMut<'_, f64>) {
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.neg_mut();
    }
}

/// Leading `r` left singular vectors of `m`.
pub fn truncated_svd(m: &DMatrix<f64>, r: usize) -> Result<OrthonormalBasis> {
    let bound = m.nrows().min(m.ncols());
    if r > bound {
        return Err(Error::RankTooLarge { requested: r, bound });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let full = left_singular_vectors(m)?;
    full.truncate(r)
}

/// All `min(n, K)` left singular vectors, sorted and sign-normalized.
pub fn left_singular_vectors(m: &DMatrix<f64>) -> Result<OrthonormalBasis> {
    if m.is_empty() {
        return Err(Error::Empty("snapshot matrix"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (u, sv) = thin_svd(m)?;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut matrix = DMatrix::zeros(m.nrows(), order.len());
    let mut values = DVector::zeros(order.len());
    for (k, &src) in order.iter().enumerate() {
        matrix.column_mut(k).copy_from(&u.column(src));
        values[k] = sv[src];
        fix_sign(&mut matrix.column_mut(k));
    }
    Ok(OrthonormalBasis {
        matrix,
        singular_values: values,
    })
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Unsorted thin SVD `(U, σ)`.
fn thin_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let svd = to_faer(m).thin_svd().map_err(|_| Error::NonFinite)?;
    let (u, s) = (svd.U(), svd.S().column_vector());
    Ok((
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        DVector::from_fn(s.nrows(), |i, _| s[i]),
    ))
}

/// Eigenpairs of a symmetric matrix, unsorted.
pub(crate) fn symmetric_eigen(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let evd = to_faer(g)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::NonFinite)?;
    let (u, s) = (evd.U(), evd.S().column_vector());
    Ok((
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        DVector::from_fn(s.nrows(), |i, _| s[i]),
    ))
}

/// Smallest rank retaining at least `1 - eps` of the squared spectrum.
pub fn energy_rank(singular_values: &DVector<f64>, eps: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= (1.0 - eps) * total {
            return k + 1;
        }
    }
    singular_values.len()
}

/// Horizontal concatenation of conformal blocks.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = blocks.first().ok_or(Error::Empty("block list"))?;
    let rows = first.nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        check_len("hcat rows", rows, b.nrows())?;
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    Ok(out)
}

/// Cotangent-lift PSD basis: truncated SVD of `[Q, P]`.
pub fn cotangent_lift(q: &DMatrix<f64>, p: &DMatrix<f64>, r: usize) -> Result<OrthonormalBasis> {
    check_len("cotangent_lift", q.nrows(), p.nrows())?;
    check_len("cotangent_lift", q.ncols(), p.ncols())?;
    truncated_svd(&hcat(&[q, p])?, r)
}

/// `blkdiag(V_1, ..., V_b)` with labelled blocks in lifted-state order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonalBasis {
    pub blocks: Vec<(&'static str, DMatrix<f64>)>,
}

impl BlockDiagonalBasis {
    pub fn new(blocks: Vec<(&'static str, DMatrix<f64>)>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Empty("basis blocks"));
        }
        Ok(Self { blocks })
    }

    pub fn nrows(&self) -> usize {
        self.blocks.iter().map(|(_, b)| b.nrows()).sum()
    }

    pub fn ncols(&self) -> usize {
        self.blocks.iter().map(|(_, b)| b.ncols()).sum()
    }

    /// `(row offset, column offset)` of every block.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let (mut r, mut c) = (0, 0);
        for (_, b) in &self.blocks {
            out.push((r, c));
            r += b.nrows();
            c += b.ncols();
        }
        out
    }

    pub fn block(&self, label: &str) -> Option<&DMatrix<f64>> {
        self.blocks.iter().find(|(l, _)| *l == label).map(|(_, b)| b)
    }

    /// Column offset and width of the labelled block in the reduced state.
    pub fn reduced_range(&self, label: &str) -> Option<(usize, usize)> {
        let offsets = self.offsets();
        self.blocks
            .iter()
            .position(|(l, _)| *l == label)
            .map(|k| (offsets[k].1, self.blocks[k].1.ncols()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.nrows(), self.ncols());
        for ((r, c), (_, b)) in self.offsets().into_iter().zip(&self.blocks) {
            v.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        }
        v
    }

    /// `V̄ ŷ`.
    pub fn expand(&self, y_hat: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("expand", self.ncols(), y_hat.len())?;
        let mut y = DVector::zeros(self.nrows());
        for ((r, c), (_, b)) in self.offsets().into_iter().zip(&self.blocks) {
            y.rows_mut(r, b.nrows())
                .gemv(1.0, b, &y_hat.rows(c, b.ncols()), 0.0);
        }
        Ok(y)
    }

    /// `V̄ᵀ y`.
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("project", self.nrows(), y.len())?;
        let mut y_hat = DVector::zeros(self.ncols());
        for ((r, c), (_, b)) in self.offsets().into_iter().zip(&self.blocks) {
            y_hat
                .rows_mut(c, b.ncols())
                .gemv_tr(1.0, b, &y.rows(r, b.nrows()), 0.0);
        }
        Ok(y_hat)
    }
}

/// `blkdiag(Φ, Φ, V_1, ..., V_k)` with `V_i = truncated_svd(W_i, r)`.
pub fn build_lifted_basis(
    phi: &DMatrix<f64>,
    lifted: &[DMatrix<f64>],
    r: usize,
) -> Result<BlockDiagonalBasis> {
    const LABELS: [&str; 4] = ["q", "p", "w1", "w2"];
    if lifted.len() > 2 {
        return Err(Error::InvalidConfig(format!(
            "at most two auxiliary blocks are supported, got {}",
            lifted.len()
        )));
    }
    let mut blocks = vec![("q", phi.clone()), ("p", phi.clone())];
    for (k, w) in lifted.iter().enumerate() {
        check_len("build_lifted_basis", phi.nrows(), w.nrows())?;
        blocks.push((LABELS[2 + k], truncated_svd(w, r)?.matrix));
    }
    BlockDiagonalBasis::new(blocks)
}

/// KGZ basis `blkdiag(Φ, Φ, Φ, Φ, V, V, V)` with the joint
/// `V = truncated_svd([phi, varphi, w], r)`.
pub fn build_kgz_basis(
    phi_basis: &DMatrix<f64>,
    varphi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    w: &DMatrix<f64>,
    r: usize,
) -> Result<BlockDiagonalBasis> {
    let joint = truncated_svd(&hcat(&[phi, varphi, w])?, r)?.matrix;
    kgz_basis_from_blocks(phi_basis, joint.clone(), joint.clone(), joint)
}

/// KGZ basis with `V` from `[varphi, phi]` and a separate `V_1` from `w`.
pub fn build_kgz_basis_separate(
    phi_basis: &DMatrix<f64>,
    varphi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    w: &DMatrix<f64>,
    r: usize,
) -> Result<BlockDiagonalBasis> {
    let v = truncated_svd(&hcat(&[varphi, phi])?, r)?.matrix;
    let v1 = truncated_svd(w, r)?.matrix;
    kgz_basis_from_blocks(phi_basis, v.clone(), v, v1)
}

/// `blkdiag(Φ, Φ, Φ, Φ, V_varphi, V_phi, V_w)` in lifted KGZ order.
pub fn kgz_basis_from_blocks(
    phi_basis: &DMatrix<f64>,
    v_varphi: DMatrix<f64>,
    v_phi: DMatrix<f64>,
    v_w: DMatrix<f64>,
) -> Result<BlockDiagonalBasis> {
    BlockDiagonalBasis::new(vec![
        ("q1", phi_basis.clone()),
        ("q2", phi_basis.clone()),
        ("p1", phi_basis.clone()),
        ("p2", phi_basis.clone()),
        ("varphi", v_varphi),
        ("phi", v_phi),
        ("w", v_w),
    ])
}

/// `‖s - ΦΦᵀs‖ / ‖s‖` for every column `s`. A zero column with a zero
/// projection reports 0.
pub fn projection_error(basis: &DMatrix<f64>, snapshots: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_len("projection_error", basis.nrows(), snapshots.nrows())?;
    let coeffs = basis.tr_mul(snapshots);
    let recon = basis * &coeffs;
    let mut out = Vec::with_capacity(snapshots.ncols());
    for k in 0..snapshots.ncols() {
        let s = snapshots.column(k);
        let norm = s.norm();
        let err = (s - recon.column(k)).norm();
        if norm == 0.0 {
            if err == 0.0 {
                out.push(0.0);
            } else {
                return Err(Error::DegenerateColumn { column: k });
            }
        } else {
            out.push(err / norm);
        }
    }
    Ok(out)
}

/// `‖VᵀV - I‖_max`.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.tr_mul(v);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn rank_one_matrix() {
        let mut m = DMatrix::zeros(3, 3);
        m.row_mut(0).fill(1.0);
        let b = truncated_svd(&m, 1).unwrap();
        assert!((b.matrix.column(0) - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax() < 1e-15);
        assert!((b.singular_values[0] - 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn identity_matrix() {
        let m = DMatrix::<f64>::identity(3, 3);
        let b = truncated_svd(&m, 2).unwrap();
        assert_eq!(b.rank(), 2);
        for k in 0..2 {
            assert!((b.singular_values[k] - 1.0).abs() < 1e-15);
            let col = b.matrix.column(k);
            assert_eq!(col.iter().filter(|x| x.abs() > 1e-14).count(), 1);
            assert!(col.max() > 0.0);
        }
        let recon = &b.matrix * b.matrix.tr_mul(&m);
        assert!(((m - recon).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn errors() {
        let m = DMatrix::<f64>::identity(3, 2);
        assert!(matches!(truncated_svd(&m, 3), Err(Error::RankTooLarge { .. })));
        let mut bad = m.clone();
        bad[(0, 0)] = f64::INFINITY;
        assert!(matches!(truncated_svd(&bad, 1), Err(Error::NonFinite)));
    }

    #[test]
    fn cotangent_lift_of_rank_one_data() {
        let mut q = DMatrix::zeros(4, 3);
        q.row_mut(0).fill(2.0);
        let b = cotangent_lift(&q, &q, 1).unwrap();
        assert!((b.matrix.column(0) - DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn empty_auxiliary_list_gives_cotangent_pair() {
        let phi = truncated_svd(&lcg_matrix(6, 4, 1), 2).unwrap().matrix;
        let v = build_lifted_basis(&phi, &[], 2).unwrap();
        assert_eq!((v.nrows(), v.ncols()), (12, 4));
        let dense = v.to_dense();
        assert!(orthonormality_defect(&dense) < 1e-12);
        // symplecticity with canonical J
        let j = |m: usize| {
            let mut j = DMatrix::zeros(2 * m, 2 * m);
            for i in 0..m {
                j[(i, m + i)] = 1.0;
                j[(m + i, i)] = -1.0;
            }
            j
        };
        let lhs = dense.transpose() * j(6) * &dense;
        assert!((lhs - j(2)).amax() < 1e-12);
    }

    #[test]
    fn joint_basis_of_identical_blocks() {
        let mut s = DMatrix::zeros(5, 3);
        s.row_mut(2).copy_from_slice(&[1.0, -2.0, 0.5]);
        let phi = truncated_svd(&lcg_matrix(5, 4, 3), 2).unwrap().matrix;
        let v = build_kgz_basis(&phi, &s, &s, &s, 1).unwrap();
        let joint = v.block("w").unwrap();
        assert!((joint.column(0) - DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0])).amax() < 1e-15);
        assert_eq!(v.block("varphi"), v.block("phi"));
        assert!(orthonormality_defect(&v.to_dense()) < 1e-12);
    }

    #[test]
    fn expand_and_project_match_dense() {
        let phi = truncated_svd(&lcg_matrix(7, 5, 4), 3).unwrap().matrix;
        let w = lcg_matrix(7, 5, 5);
        let v = build_lifted_basis(&phi, &[w.clone(), w.map(|x| x * x)], 2).unwrap();
        let dense = v.to_dense();
        let yh = DVector::from_fn(v.ncols(), |i, _| i as f64 - 2.0);
        assert!((v.expand(&yh).unwrap() - &dense * &yh).amax() < 1e-14);
        let y = DVector::from_fn(v.nrows(), |i, _| (i as f64).sin());
        assert!((v.project(&y).unwrap() - dense.tr_mul(&y)).amax() < 1e-14);
        assert_eq!(v.reduced_range("w1"), Some((6, 2)));
    }

    #[test]
    fn projection_error_limits() {
        let basis = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let s = DMatrix::from_column_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(projection_error(&basis, &s).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn energy_rank_selects_smallest_sufficient_rank() {
        let s = DVector::from_vec(vec![10.0, 1.0, 0.1, 0.0]);
        assert_eq!(energy_rank(&s, 1e-8), 3);
        assert_eq!(energy_rank(&s, 0.02), 1);
    }

    #[test]
    fn deterministic() {
        let m = lcg_matrix(30, 12, 7);
        assert_eq!(truncated_svd(&m, 5).unwrap(), truncated_svd(&m, 5).unwrap());
    }
}
