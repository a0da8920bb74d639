//! Library results checked against independent, deliberately naive oracles.

use eqrom::basis::{cotangent_lift, truncated_svd, BlockDiagonalBasis};
use eqrom::hyperreduction::{build_deim, deim_basis, deim_points, SpDeimRom};
use eqrom::integrators::{implicit_midpoint, IntegratorConfig, SolverKind, VectorField};
use eqrom::lifting::{build_lifted_operators, LiftingMap, SparseQuadratic};
use eqrom::models::{build_laplacian, Boundary, FomModel, FomState, Nonlinearity, SpatialGrid};
use eqrom::rom::{build_psd_rom, project_quadratic_sparse, reduce_laplacian};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn orthonormal(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DMatrix<f64> {
    random_matrix(rng, n, r).qr().q().columns(0, r).into_owned()
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

#[test]
fn sparse_projection_matches_explicit_kronecker() {
    let mut g = rng(7);
    for trial in 0..20 {
        let blocks = 2 + trial % 3;
        let n = 3 + trial % 4;
        let r = 1 + trial % 3;
        let nbar = blocks * n;
        let mut b = SparseQuadratic::new(nbar);
        for _ in 0..4 * nbar {
            b.push(
                g.random_range(0..nbar),
                g.random_range(0..nbar),
                g.random_range(0..nbar),
                g.random_range(-1.0..1.0),
            );
        }
        const LABELS: [&str; 4] = ["q", "p", "w1", "w2"];
        let basis = BlockDiagonalBasis::new(
            (0..blocks).map(|k| (LABELS[k], orthonormal(&mut g, n, r))).collect(),
        )
        .unwrap();
        let v = basis.to_dense();
        let oracle = v.transpose() * b.to_dense() * kron(&v, &v);
        let got = project_quadratic_sparse(&b, &basis).unwrap();
        assert!((&got - &oracle).amax() <= 1e-12 * oracle.amax().max(1.0), "trial {trial}");
    }
}

#[test]
fn truncation_error_equals_tail_spectrum() {
    let mut g = rng(3);
    let m = random_matrix(&mut g, 30, 12) * DMatrix::from_diagonal(&DVector::from_fn(12, |i, _| 0.5f64.powi(i as i32)));
    let sv = m.clone().svd(false, false).singular_values;
    for r in 1..12 {
        let phi = truncated_svd(&m, r).unwrap().matrix;
        let err = (&m - &phi * phi.tr_mul(&m)).norm_squared();
        let tail: f64 = sv.iter().skip(r).map(|s| s * s).sum();
        assert!((err - tail).abs() <= 1e-8 * tail.max(1e-300), "r = {r}");
    }
}

#[test]
fn cotangent_lift_spans_the_leading_joint_modes() {
    let mut g = rng(11);
    let q = random_matrix(&mut g, 20, 6);
    let p = random_matrix(&mut g, 20, 6);
    let mut joint = DMatrix::zeros(20, 12);
    joint.columns_mut(0, 6).copy_from(&q);
    joint.columns_mut(6, 6).copy_from(&p);
    let phi = cotangent_lift(&q, &p, 4).unwrap().matrix;
    let sv = joint.clone().svd(false, false).singular_values;
    let err = (&joint - &phi * phi.tr_mul(&joint)).norm_squared();
    let tail: f64 = sv.iter().skip(4).map(|s| s * s).sum();
    assert!((err - tail).abs() <= 1e-8 * tail);
}

/// Textbook DEIM: solve with an explicit inverse and scan for the maximum.
fn reference_deim(v: &DMatrix<f64>) -> Vec<usize> {
    let first = v.column(0).iamax();
    let mut pts = vec![first];
    for l in 1..v.ncols() {
        let pu = DMatrix::from_fn(l, l, |a, b| v[(pts[a], b)]);
        let rhs = DVector::from_fn(l, |a, _| v[(pts[a], l)]);
        let c = pu.try_inverse().unwrap() * rhs;
        let res = v.column(l) - v.columns(0, l) * c;
        pts.push(res.iamax());
    }
    pts
}

#[test]
fn deim_points_match_reference_recursion() {
    let mut g = rng(5);
    for trial in 0..25 {
        let n = 10 + trial;
        let m = 1 + trial % 8;
        let v = orthonormal(&mut g, n, m);
        assert_eq!(deim_points(&v).unwrap(), reference_deim(&v), "trial {trial}");
    }
}

fn periodic_model(n: usize, nl: Nonlinearity) -> FomModel {
    FomModel::new(SpatialGrid::new_1d(n, -4.0, 4.0, Boundary::Periodic).unwrap(), nl).unwrap()
}

fn eval(f: &dyn VectorField, y: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(y.len());
    f.eval(y, &mut out);
    out
}

#[test]
fn full_sampling_spdeim_equals_psd() {
    let mut g = rng(9);
    for nl in [Nonlinearity::SineGordon, Nonlinearity::Exponential, Nonlinearity::KleinGordon { mu: 0.7 }] {
        let model = periodic_model(16, nl);
        let phi = orthonormal(&mut g, 16, 4);
        let psd = build_psd_rom(&model, &phi).unwrap();
        let deim = build_deim(DMatrix::identity(16, 16), &phi).unwrap();
        let sp = SpDeimRom::new(reduce_laplacian(&model.laplacian, &phi).unwrap(), &deim, nl).unwrap();
        for _ in 0..10 {
            let y = DVector::from_fn(8, |_, _| g.random_range(-1.0..1.0));
            let a = eval(&psd, &y);
            let b = eval(&sp, &y);
            assert!((&a - &b).amax() <= 1e-12 * a.amax().max(1.0));
            assert!((psd.hamiltonian(&y).unwrap() - sp.hamiltonian(&y).unwrap()).abs() <= 1e-12);
        }
    }
}

#[test]
fn spdeim_rhs_is_symplectic_gradient_of_its_hamiltonian() {
    let mut g = rng(13);
    let model = periodic_model(40, Nonlinearity::SineGordon);
    let r = 5;
    let phi = orthonormal(&mut g, 40, r);
    let jac = random_matrix(&mut g, 40, 30);
    let deim = build_deim(deim_basis(&jac, 8).unwrap().matrix, &phi).unwrap();
    let rom = SpDeimRom::new(reduce_laplacian(&model.laplacian, &phi).unwrap(), &deim, model.nonlinearity).unwrap();
    for _ in 0..100 {
        let y = DVector::from_fn(2 * r, |_, _| g.random_range(-1.0..1.0));
        let h = 1e-6;
        let grad = DVector::from_fn(2 * r, |i, _| {
            let mut a = y.clone();
            let mut b = y.clone();
            a[i] += h;
            b[i] -= h;
            (rom.hamiltonian(&a).unwrap() - rom.hamiltonian(&b).unwrap()) / (2.0 * h)
        });
        let mut jg = DVector::zeros(2 * r);
        jg.rows_mut(0, r).copy_from(&grad.rows(r, r));
        jg.rows_mut(r, r).copy_from(&(-grad.rows(0, r)));
        let f = rom.spdeim_rhs(&y).unwrap();
        assert!((&f - &jg).amax() <= 1e-5 * f.amax().max(1.0));
    }
}

#[test]
fn midpoint_conserves_oscillator_energy() {
    struct Oscillator;
    impl VectorField for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = y[1];
            out[1] = -y[0];
        }
        fn jacobian(&self, _: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))
        }
    }
    let cfg = IntegratorConfig::new(0.01, 100.0, SolverKind::Newton);
    let traj = implicit_midpoint(&Oscillator, &DVector::from_vec(vec![1.0, 0.0]), &cfg).unwrap();
    assert_eq!(traj.len(), 10_001);
    for y in &traj.states {
        assert!((0.5 * y.norm_squared() - 0.5).abs() <= 1e-12);
    }
}

#[test]
fn lifted_trajectory_is_the_lifted_original_trajectory() {
    for nl in [Nonlinearity::SineGordon, Nonlinearity::Exponential, Nonlinearity::KleinGordon { mu: 1.0 }] {
        let grid = SpatialGrid::new_1d(32, -4.0, 4.0, Boundary::Periodic).unwrap();
        let model = FomModel::new(grid.clone(), nl).unwrap();
        let lifted = build_lifted_operators(&LiftingMap::for_nonlinearity(nl), &build_laplacian(&grid).unwrap()).unwrap();
        let q0 = DVector::from_fn(32, |i, _| 0.8 * (-(grid.node(i)[0]).powi(2)).exp());
        let s0 = FomState::new(q0, DVector::zeros(32), 0.0).unwrap();
        let cfg = IntegratorConfig::new(0.001, 1.0, SolverKind::Newton).with_stride(100);
        let fom = implicit_midpoint(&model, &s0.stacked(), &cfg).unwrap();
        let lift = implicit_midpoint(&lifted, &lifted.lift_state(&s0).unwrap(), &cfg).unwrap();
        for (a, b) in fom.states.iter().zip(&lift.states) {
            let want = lifted.lift_state(&FomState::from_stacked(a, 0.0)).unwrap();
            assert!((&want - b).norm() <= 1e-6 * want.norm(), "{nl:?}");
        }
    }
}
