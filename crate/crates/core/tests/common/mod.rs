//! Dense reference implementations written from closed-form element matrices.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pnph::assembly::MaterialModel;
use pnph::broken_mesh::{BrokenMesh, Region};

const G: f64 = 0.211_324_865_405_187_1;

/// Element matrices and loads of the micro problem, assembled densely.
pub struct DenseMicro {
    pub stiffness: DMatrix<f64>,
    /// Unit-weight jump penalty `∫[[u]][[v]]`.
    pub penalty: DMatrix<f64>,
    /// `∫_{∂ω⁻} ψ`.
    pub minus_source: DVector<f64>,
    pub pore_mass: DMatrix<f64>,
    pub free: Vec<usize>,
}

fn local_stiffness(dim: usize, h: f64, sigma: f64) -> Vec<Vec<f64>> {
    if dim == 1 {
        let k = sigma / h;
        vec![vec![k, -k], vec![-k, k]]
    } else {
        let row = [4.0, -1.0, -2.0, -1.0];
        (0..4).map(|i| (0..4).map(|j| sigma / 6.0 * row[(j + 4 - i) % 4]).collect()).collect()
    }
}

fn local_mass(dim: usize, h: f64) -> Vec<Vec<f64>> {
    if dim == 1 {
        vec![vec![h / 3.0, h / 6.0], vec![h / 6.0, h / 3.0]]
    } else {
        let row = [4.0, 2.0, 1.0, 2.0];
        (0..4).map(|i| (0..4).map(|j| h * h / 36.0 * row[(j + 4 - i) % 4]).collect()).collect()
    }
}

pub fn dense_micro(mesh: &BrokenMesh, material: &MaterialModel) -> DenseMicro {
    let n = mesh.dof_count();
    let dim = mesh.dim();
    let h = mesh.h();
    let npe = if dim == 1 { 2 } else { 4 };
    let mut stiffness = DMatrix::zeros(n, n);
    let mut pore_mass = DMatrix::zeros(n, n);
    for e in mesh.elements() {
        let sigma = match e.region {
            Region::Solid => material.sigma_solid,
            Region::Pore => material.sigma_pore,
        };
        let k = local_stiffness(dim, h, sigma);
        let m = local_mass(dim, h);
        for i in 0..npe {
            for j in 0..npe {
                stiffness[(e.dofs[i], e.dofs[j])] += k[i][j];
                if e.region == Region::Pore {
                    pore_mass[(e.dofs[i], e.dofs[j])] += m[i][j];
                }
            }
        }
    }
    let mut penalty = DMatrix::zeros(n, n);
    let mut minus_source = DVector::zeros(n);
    for f in mesh.facets() {
        let k = if dim == 1 { 1 } else { 2 };
        let w: Vec<Vec<f64>> = if dim == 1 {
            vec![vec![1.0]]
        } else {
            vec![
                vec![f.measure / 3.0, f.measure / 6.0],
                vec![f.measure / 6.0, f.measure / 3.0],
            ]
        };
        for a in 0..k {
            minus_source[f.minus[a]] += if dim == 1 { 1.0 } else { f.measure / 2.0 };
            for b in 0..k {
                for (ra, sa) in [(f.plus[a], 1.0), (f.minus[a], -1.0)] {
                    for (rb, sb) in [(f.plus[b], 1.0), (f.minus[b], -1.0)] {
                        penalty[(ra, rb)] += sa * sb * w[a][b];
                    }
                }
            }
        }
    }
    let dirichlet: std::collections::HashSet<usize> = mesh.dirichlet_dofs().iter().copied().collect();
    DenseMicro {
        stiffness,
        penalty,
        minus_source,
        pore_mass,
        free: (0..n).filter(|d| !dirichlet.contains(d)).collect(),
    }
}

/// Bilinear (or linear) shape functions on the reference element.
fn shapes(dim: usize, s: f64, t: f64) -> Vec<f64> {
    if dim == 1 {
        vec![1.0 - s, s]
    } else {
        vec![(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t]
    }
}

fn gauss_points(dim: usize) -> Vec<(f64, f64, f64)> {
    let p = [G, 1.0 - G];
    if dim == 1 {
        p.iter().map(|&s| (s, 0.0, 0.5)).collect()
    } else {
        p.iter().flat_map(|&t| p.iter().map(move |&s| (s, t, 0.25))).collect()
    }
}

/// `(∫_pore f(u)ψ_i, ∫_pore f'(u)ψ_iψ_j)` by 2-point Gauss per axis.
pub fn pore_nonlinear(
    mesh: &BrokenMesh,
    u: &DVector<f64>,
    f: impl Fn(f64) -> (f64, f64),
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mesh.dof_count();
    let dim = mesh.dim();
    let npe = if dim == 1 { 2 } else { 4 };
    let vol = mesh.h().powi(dim as i32);
    let mut load = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, n);
    for e in mesh.elements().iter().filter(|e| e.region == Region::Pore) {
        for (s, t, w) in gauss_points(dim) {
            let sh = shapes(dim, s, t);
            let uq: f64 = (0..npe).map(|k| sh[k] * u[e.dofs[k]]).sum();
            let (v, dv) = f(uq);
            for i in 0..npe {
                load[e.dofs[i]] += w * vol * v * sh[i];
                for j in 0..npe {
                    jac[(e.dofs[i], e.dofs[j])] += w * vol * dv * sh[i] * sh[j];
                }
            }
        }
    }
    (load, jac)
}

pub fn restrict(m: &DMatrix<f64>, free: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(free.len(), free.len(), |i, j| m[(free[i], free[j])])
}

pub fn restrict_vec(v: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    DVector::from_fn(free.len(), |i, _| v[free[i]])
}

pub fn prolong(v: &DVector<f64>, free: &[usize], n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    for (i, &d) in free.iter().enumerate() {
        out[d] = v[i];
    }
    out
}

/// `−Σ z e^{−zφ/κT}` and its derivative.
pub fn boltzmann(charges: &[f64], kt: f64) -> impl Fn(f64) -> (f64, f64) + '_ {
    move |phi| {
        let mut v = 0.0;
        let mut d = 0.0;
        for &z in charges {
            let e = (-z * phi / kt).exp();
            v -= z * e;
            d += z * z / kt * e;
        }
        (v, d)
    }
}

/// Full Newton with dense LU on the micro problem, iterated to roundoff.
pub fn dense_micro_newton(
    mesh: &BrokenMesh,
    material: &MaterialModel,
    charges: &[f64],
    kt: f64,
    epsilon: f64,
) -> DVector<f64> {
    let d = dense_micro(mesh, material);
    let n = mesh.dof_count();
    let linear = &d.stiffness + &d.penalty * (material.alpha / epsilon);
    let b = &d.minus_source * (epsilon * material.g);
    let mut u = DVector::zeros(n);
    for _ in 0..100 {
        let (nl, jnl) = pore_nonlinear(mesh, &u, boltzmann(charges, kt));
        let r = restrict_vec(&(&linear * &u + nl - &b), &d.free);
        if r.norm() < 1e-15 * (1.0 + b.norm()) {
            break;
        }
        let j = restrict(&(&linear + jnl), &d.free);
        let step = j.lu().solve(&r).expect("nonsingular Jacobian");
        u -= prolong(&step, &d.free, n);
        if step.norm() < 1e-16 * (1.0 + u.norm()) {
            break;
        }
    }
    u
}

/// Linearized problem `(L + Σz²/κT M_pore) u = b` with neutral charges.
pub fn dense_linearized(
    mesh: &BrokenMesh,
    material: &MaterialModel,
    charges: &[f64],
    kt: f64,
    epsilon: f64,
) -> DVector<f64> {
    let d = dense_micro(mesh, material);
    let z_sq: f64 = charges.iter().map(|z| z * z).sum();
    let a = &d.stiffness + &d.penalty * (material.alpha / epsilon) + &d.pore_mass * (z_sq / kt);
    let b = &d.minus_source * (epsilon * material.g);
    let u = restrict(&a, &d.free)
        .cholesky()
        .expect("SPD")
        .solve(&restrict_vec(&b, &d.free));
    prolong(&u, &d.free, mesh.dof_count())
}

pub fn sparse_to_dense(m: &sprs::CsMat<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.rows(), m.cols());
    for (v, (i, j)) in m.iter() {
        d[(i, j)] += *v;
    }
    d
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `log2(coarse/fine)`.
pub fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Property-test settings; `PNPH_SEED` pins the random source for reproduction.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    let mut cfg = proptest::test_runner::Config::with_cases(cases);
    if let Some(seed) = std::env::var("PNPH_SEED").ok().and_then(|s| s.parse().ok()) {
        cfg.rng_seed = proptest::test_runner::RngSeed::Fixed(seed);
    }
    cfg
}
