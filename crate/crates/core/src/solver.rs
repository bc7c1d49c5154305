//! Constraint elimination and symmetric positive definite solves.

use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};
use thiserror::Error;

use crate::assembly::mat_vec;

/// Systems larger than this are solved by Jacobi-preconditioned CG.
pub const DIRECT_LIMIT: usize = 200_000;
pub const DEFAULT_LINEAR_TOL: f64 = 1e-10;
/// Pivots below this fraction of the largest diagonal entry signal a kernel.
const PIVOT_TOL: f64 = 1e-11;
const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("singular system: {0}")]
    SingularSystem(String),
}

/// Reduction from full mesh DOFs to unknowns: homogeneous Dirichlet DOFs
/// are dropped and periodic slaves share their master's unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    full_to_reduced: Vec<Option<usize>>,
    n_reduced: usize,
}

impl DofMap {
    pub fn identity(n: usize) -> Self {
        Self {
            full_to_reduced: (0..n).map(Some).collect(),
            n_reduced: n,
        }
    }

    pub fn new(n_full: usize, dirichlet: &[usize], periodic: &[(usize, usize)]) -> Self {
        let mut fixed = vec![false; n_full];
        for &d in dirichlet {
            fixed[d] = true;
        }
        let mut master_of: Vec<Option<usize>> = vec![None; n_full];
        for &(m, s) in periodic {
            master_of[s] = Some(m);
        }
        let mut full_to_reduced = vec![None; n_full];
        let mut n_reduced = 0;
        for d in 0..n_full {
            if !fixed[d] && master_of[d].is_none() {
                full_to_reduced[d] = Some(n_reduced);
                n_reduced += 1;
            }
        }
        for d in 0..n_full {
            if let Some(m) = master_of[d] {
                full_to_reduced[d] = if fixed[d] { None } else { full_to_reduced[m] };
            }
        }
        Self {
            full_to_reduced,
            n_reduced,
        }
    }

    pub fn n_full(&self) -> usize {
        self.full_to_reduced.len()
    }

    pub fn n_reduced(&self) -> usize {
        self.n_reduced
    }

    pub fn reduced(&self, full: usize) -> Option<usize> {
        self.full_to_reduced[full]
    }

    /// `Pᵀ A P`.
    pub fn restrict_matrix(&self, a: &CsMat<f64>) -> CsMat<f64> {
        let n = self.n_reduced;
        let mut tri = TriMat::with_capacity((n, n), a.nnz());
        for (row, vec) in a.outer_iterator().enumerate() {
            let Some(r) = self.full_to_reduced[row] else { continue };
            for (col, &v) in vec.iter() {
                if let Some(c) = self.full_to_reduced[col] {
                    tri.add_triplet(r, c, v);
                }
            }
        }
        tri.to_csr()
    }

    /// `Pᵀ v`.
    pub fn restrict_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_reduced];
        for (d, &x) in v.iter().enumerate() {
            if let Some(r) = self.full_to_reduced[d] {
                out[r] += x;
            }
        }
        out
    }

    /// `P u`; eliminated Dirichlet DOFs get zero.
    pub fn prolong(&self, u: &[f64]) -> Vec<f64> {
        self.full_to_reduced
            .iter()
            .map(|r| r.map_or(0.0, |r| u[r]))
            .collect()
    }
}

/// `Σ_k a_k`.
pub fn sum_matrices(parts: &[&CsMat<f64>]) -> CsMat<f64> {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = &acc + *p;
    }
    acc
}

/// Symmetric operator with right-hand side and an optional zero-mean
/// constraint `cᵀu = 0`, enforced through a Lagrange multiplier.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsMat<f64>,
    pub rhs: Vec<f64>,
    pub mean_constraint: Option<Vec<f64>>,
}

enum Backend {
    Direct(LdlNumeric<f64, usize>),
    Iterative { inv_diag: Vec<f64> },
}

struct MeanConstraint {
    c: Vec<f64>,
    c_sum: f64,
    pin: usize,
}

/// Factorization that can be reused for several right-hand sides.
///
/// With a mean constraint the bordered system
/// `[K c; cᵀ 0][u; λ] = [f; 0]` is solved through its exact reduction:
/// `λ = 1ᵀf / 1ᵀc` makes `f − λc` consistent with the constant kernel of `K`,
/// one DOF is pinned to pick a particular solution, and the constant shift
/// enforcing `cᵀu = 0` is added afterwards.
pub struct SpdSolver {
    matrix: CsMat<f64>,
    /// The factored operator: `matrix` with the pinned row and column removed.
    work: CsMat<f64>,
    backend: Backend,
    constraint: Option<MeanConstraint>,
    tol: f64,
}

impl SpdSolver {
    pub fn new(matrix: CsMat<f64>, mean_constraint: Option<Vec<f64>>, tol: f64) -> Result<Self, SolverError> {
        let n = matrix.rows();
        if n == 0 {
            return Err(SolverError::SingularSystem("empty system".into()));
        }
        let constraint = match mean_constraint {
            Some(c) => {
                let c_sum: f64 = c.iter().sum();
                if c.len() != n || c_sum.abs() <= f64::EPSILON * c.iter().map(|x| x.abs()).sum::<f64>() {
                    return Err(SolverError::SingularSystem("degenerate mean constraint".into()));
                }
                Some(MeanConstraint { c, c_sum, pin: 0 })
            }
            None => None,
        };
        let work = match &constraint {
            Some(mc) => drop_row_col(&matrix, mc.pin),
            None => matrix.clone(),
        };
        let backend = factor(&work)?;
        Ok(Self {
            matrix,
            work,
            backend,
            constraint,
            tol,
        })
    }

    fn inner_solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        match &self.backend {
            Backend::Direct(ldl) => Ok(ldl.solve(b)),
            Backend::Iterative { inv_diag } => pcg(&self.work, inv_diag, b, self.tol),
        }
    }

    /// Solves the reduced (possibly pinned) system with iterative refinement.
    fn refined_solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let a = &self.work;
        let b_norm = norm(b);
        let mut x = self.inner_solve(b)?;
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut rel = f64::INFINITY;
        for _ in 0..=REFINEMENT_STEPS {
            let r: Vec<f64> = mat_vec(a, &x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
            rel = norm(&r) / b_norm;
            if !rel.is_finite() {
                return Err(SolverError::SingularSystem("non-finite residual".into()));
            }
            if rel <= self.tol * 1e-2 {
                return Ok(x);
            }
            let dx = self.inner_solve(&r)?;
            x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
        }
        if rel <= self.tol {
            Ok(x)
        } else {
            Err(SolverError::NotConverged {
                iterations: REFINEMENT_STEPS,
                residual: rel,
            })
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let Some(mc) = &self.constraint else {
            return self.refined_solve(rhs);
        };
        let lambda = rhs.iter().sum::<f64>() / mc.c_sum;
        let f: Vec<f64> = rhs.iter().zip(&mc.c).map(|(f, c)| f - lambda * c).collect();
        let mut reduced_f = f.clone();
        reduced_f.remove(mc.pin);
        let mut v = self.refined_solve(&reduced_f)?;
        v.insert(mc.pin, 0.0);
        let shift = v.iter().zip(&mc.c).map(|(v, c)| v * c).sum::<f64>() / mc.c_sum;
        v.iter_mut().for_each(|x| *x -= shift);

        // the dropped equation must hold too, otherwise K has a larger kernel
        let r: Vec<f64> = mat_vec(&self.matrix, &v).iter().zip(&f).map(|(a, b)| b - a).collect();
        let scale = norm(rhs).max(f64::MIN_POSITIVE);
        let rel = norm(&r) / scale;
        if rel > self.tol.max(1e-12) * 10.0 {
            return Err(SolverError::SingularSystem(format!(
                "constrained residual {rel:e} after pinning; kernel exceeds constants"
            )));
        }
        Ok(v)
    }
}

fn drop_row_col(a: &CsMat<f64>, k: usize) -> CsMat<f64> {
    let n = a.rows();
    let shift = |i: usize| if i > k { i - 1 } else { i };
    let mut tri = TriMat::with_capacity((n - 1, n - 1), a.nnz());
    for (row, vec) in a.outer_iterator().enumerate() {
        if row == k {
            continue;
        }
        for (col, &v) in vec.iter() {
            if col != k {
                tri.add_triplet(shift(row), shift(col), v);
            }
        }
    }
    tri.to_csr()
}

fn diagonal(a: &CsMat<f64>) -> Vec<f64> {
    a.outer_iterator()
        .enumerate()
        .map(|(i, row)| row.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn factor(a: &CsMat<f64>) -> Result<Backend, SolverError> {
    let diag = diagonal(a);
    let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if max_diag == 0.0 {
        return Err(SolverError::SingularSystem("zero operator".into()));
    }
    if a.rows() > DIRECT_LIMIT {
        if diag.iter().any(|&d| d <= 0.0) {
            return Err(SolverError::SingularSystem("non-positive diagonal".into()));
        }
        let inv_diag = diag.iter().map(|d| 1.0 / d).collect();
        return Ok(Backend::Iterative { inv_diag });
    }
    let ldl = Ldl::new()
        .check_symmetry(SymmetryCheck::DontCheckSymmetry)
        .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
        .numeric(a.view())
        .map_err(|e| SolverError::SingularSystem(e.to_string()))?;
    if let Some((k, d)) = ldl
        .d()
        .iter()
        .enumerate()
        .find(|(_, &d)| !(d > PIVOT_TOL * max_diag))
    {
        return Err(SolverError::SingularSystem(format!(
            "pivot {k} is {d:e}, not positive relative to diagonal scale {max_diag:e}"
        )));
    }
    Ok(Backend::Direct(ldl))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(a: &CsMat<f64>, inv_diag: &[f64], b: &[f64], tol: f64) -> Result<Vec<f64>, SolverError> {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = 10 * n;
    for it in 0..max_iter {
        let ap = mat_vec(a, &p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::SingularSystem("operator is not positive definite".into()));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rel = norm(&r) / b_norm;
        if rel <= tol * 1e-2 {
            return Ok(x);
        }
        if it + 1 == max_iter {
            return Err(SolverError::NotConverged {
                iterations: max_iter,
                residual: rel,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// One-shot solve of `system` to relative residual `tol`.
pub fn solve_spd(system: &SparseSystem, tol: f64) -> Result<Vec<f64>, SolverError> {
    SpdSolver::new(system.matrix.clone(), system.mean_constraint.clone(), tol)?.solve(&system.rhs)
}
