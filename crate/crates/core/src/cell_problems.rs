//! Cell problems on the unit cell: the boundary-traction corrector `L`,
//! the volume-force corrector `M`, the periodic corrector `N`, the
//! effective tensor `A⁰` and the matrix field `B = D(N+y)A − A⁰`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::assembly::{
    assemble_interface_penalty, assemble_load, assemble_mass, assemble_minus_boundary_source, assemble_stiffness,
    integral, mat_vec, MassRegion, MaterialModel, Tensor,
};
use crate::broken_mesh::{build_cell_mesh, build_domain_mesh, jump_trace, BrokenField, BrokenMesh, Element, MeshError};
use crate::element::{facet_rule, shape, volume_rule};
use crate::geometry::{measures, Aabb, CellGeometry, PavedDomain, Point};
use crate::solver::{sum_matrices, DofMap, SolverError, SpdSolver};

/// Absolute agreement required between the two `A⁰` formulas.
pub const A0_AGREEMENT_TOL: f64 = 1e-8;

/// Radius (cell units) around inclusion corners left out of
/// [`BDiagnostics::interface_residual_off_corners`].
pub const CORNER_EXCLUSION_RADIUS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("point {x:?} lies outside the domain")]
    OutOfDomain { x: Point },
    #[error("effective tensor certification failed: {0}")]
    CertificationFailed(String),
    #[error("invalid cell mesh: {0}")]
    InvalidMesh(&'static str),
}

/// Physical point `εp + εy` of cell `p` at local coordinate `y`.
pub fn cell_point(epsilon: f64, p: [i64; 2], y: &Point) -> Point {
    [epsilon * (p[0] as f64 + y[0]), epsilon * (p[1] as f64 + y[1])]
}

/// `(T_ε f)(p, y) = f(ε⌊x/ε⌋ + εy)` for `x` in cell `p`.
pub fn unfold(
    f: &dyn Fn(&Point) -> f64,
    epsilon: f64,
    domain: &Aabb,
    dim: usize,
    p: [i64; 2],
    y: &Point,
) -> Result<f64, CellError> {
    let x = cell_point(epsilon, p, y);
    let tol = 1e-12 * epsilon.max(1.0);
    if !domain.contains(dim, &x, tol) {
        return Err(CellError::OutOfDomain { x });
    }
    Ok(f(&x))
}

/// A function on `Ω` seen through the unfolding operator.
#[derive(Clone)]
pub struct UnfoldedForce {
    pub epsilon: f64,
    pub domain: Aabb,
    pub dim: usize,
    pub f: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
}

impl UnfoldedForce {
    pub fn eval(&self, p: [i64; 2], y: &Point) -> Result<f64, CellError> {
        unfold(&*self.f, self.epsilon, &self.domain, self.dim, p, y)
    }

    fn check_cell(&self, p: [i64; 2]) -> Result<(), CellError> {
        for corner in [[0.0, 0.0], [1.0, 1.0]] {
            self.eval(p, &corner)?;
        }
        Ok(())
    }
}

fn require_broken(mesh: &BrokenMesh) -> Result<(), CellError> {
    if !mesh.is_broken() {
        return Err(CellError::InvalidMesh("cell problems need a broken mesh"));
    }
    Ok(())
}

fn natural_operator(mesh: &BrokenMesh, material: &MaterialModel) -> sprs::CsMat<f64> {
    sum_matrices(&[&assemble_stiffness(mesh, material), &assemble_mass(mesh, MassRegion::All)])
}

/// `∫ (∇Lᵀ A ∇u + L u) dy = ∫_{∂ω⁻} u⁻ dS` with natural conditions on `∂Υ`.
pub fn solve_l(mesh: &Arc<BrokenMesh>, material: &MaterialModel, tol: f64) -> Result<BrokenField, CellError> {
    require_broken(mesh)?;
    if !mesh.periodic_pairs().is_empty() {
        return Err(CellError::InvalidMesh("L is posed on a non-periodic cell mesh"));
    }
    let solver = SpdSolver::new(natural_operator(mesh, material), None, tol)?;
    let values = solver.solve(&assemble_minus_boundary_source(mesh, 1.0))?;
    Ok(BrokenField::new(mesh.clone(), values))
}

/// Factorization of the `M` operator shared by all cells.
pub struct MSolver {
    mesh: Arc<BrokenMesh>,
    solver: SpdSolver,
}

impl MSolver {
    pub fn new(mesh: &Arc<BrokenMesh>, material: &MaterialModel, tol: f64) -> Result<Self, CellError> {
        require_broken(mesh)?;
        if !mesh.periodic_pairs().is_empty() {
            return Err(CellError::InvalidMesh("M is posed on a non-periodic cell mesh"));
        }
        Ok(Self {
            mesh: mesh.clone(),
            solver: SpdSolver::new(natural_operator(mesh, material), None, tol)?,
        })
    }

    /// `∫ (∇Mᵀ A ∇u + M u) dy = ∫_{Υ∖ω} (T_ε f)(p, y) u dy`.
    pub fn solve(&self, force: &UnfoldedForce, p: [i64; 2]) -> Result<BrokenField, CellError> {
        force.check_cell(p)?;
        let rhs = assemble_load(&self.mesh, MassRegion::Pore, |y| (force.f)(&cell_point(force.epsilon, p, y)));
        Ok(BrokenField::new(self.mesh.clone(), self.solver.solve(&rhs)?))
    }
}

pub fn solve_m(
    mesh: &Arc<BrokenMesh>,
    material: &MaterialModel,
    force: &UnfoldedForce,
    p: [i64; 2],
    tol: f64,
) -> Result<BrokenField, CellError> {
    MSolver::new(mesh, material, tol)?.solve(force, p)
}

/// Reduced periodic systems of the `N` problem, one right-hand side per axis.
pub struct NSystem {
    pub map: DofMap,
    pub matrix: sprs::CsMat<f64>,
    pub rhs: Vec<Vec<f64>>,
    /// `∫ ψ_k dy` per reduced unknown, the zero-mean constraint row.
    pub mean_row: Vec<f64>,
}

/// Assembles `∫ ∇Nᵀ A ∇u + α∫[[N]][[u]] = −∫ e_iᵀ A ∇u` on the periodic space.
pub fn n_system(mesh: &BrokenMesh, material: &MaterialModel) -> Result<NSystem, CellError> {
    require_broken(mesh)?;
    if mesh.periodic_pairs().is_empty() {
        return Err(CellError::InvalidMesh("N is posed on a periodic cell mesh"));
    }
    let map = DofMap::new(mesh.dof_count(), &[], mesh.periodic_pairs());
    let k = sum_matrices(&[
        &assemble_stiffness(mesh, material),
        &assemble_interface_penalty(mesh, material.alpha),
    ]);
    let matrix = map.restrict_matrix(&k);
    let rhs = (0..mesh.dim())
        .map(|i| map.restrict_vec(&unit_flux_load(mesh, material, i)))
        .collect();
    let ones = vec![1.0; mesh.dof_count()];
    let mean_row = map.restrict_vec(&mat_vec(&assemble_mass(mesh, MassRegion::All), &ones));
    Ok(NSystem {
        map,
        matrix,
        rhs,
        mean_row,
    })
}

/// `−∫ e_iᵀ A ∇ψ_k dy`.
fn unit_flux_load(mesh: &BrokenMesh, material: &MaterialModel, axis: usize) -> Vec<f64> {
    let rule = volume_rule(mesh.dim());
    let vol = mesh.element_measure();
    let h = mesh.h();
    let mut b = vec![0.0; mesh.dof_count()];
    for e in mesh.elements() {
        let a = material.tensor(e.region);
        for q in &rule {
            let s = shape(mesh.dim(), q.xi);
            for (k, &d) in mesh.element_dofs(e).iter().enumerate() {
                let g = s.grads[k];
                let flux = a[axis][0] * g[0] + a[axis][1] * g[1];
                b[d] -= q.weight * vol * flux / h;
            }
        }
    }
    b
}

pub fn solve_n(mesh: &Arc<BrokenMesh>, material: &MaterialModel, tol: f64) -> Result<Vec<BrokenField>, CellError> {
    let sys = n_system(mesh, material)?;
    let solver = SpdSolver::new(sys.matrix, Some(sys.mean_row), tol)?;
    let solutions: Result<Vec<Vec<f64>>, SolverError> = sys.rhs.par_iter().map(|b| solver.solve(b)).collect();
    Ok(solutions?
        .into_iter()
        .map(|u| BrokenField::new(mesh.clone(), sys.map.prolong(&u)))
        .collect())
}

/// `A⁰` by the volume average and by the symmetric energy form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveTensor {
    pub dim: usize,
    /// Certified value `(A + Aᵀ)/2` of the volume average.
    pub a0: Tensor,
    pub volume_average: Tensor,
    pub energy_form: Tensor,
    pub agreement: f64,
    pub min_eigenvalue: f64,
}

impl EffectiveTensor {
    pub fn row_major(&self) -> Vec<f64> {
        let d = self.dim;
        (0..d * d).map(|k| self.a0[k / d][k % d]).collect()
    }
}

/// Smallest eigenvalue of the leading `dim × dim` block of a symmetric matrix.
pub fn min_eigenvalue(a: &Tensor, dim: usize) -> f64 {
    if dim == 1 {
        return a[0][0];
    }
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    0.5 * tr - disc
}

/// `(e_i + ∇N_i)` at a reference point of element `e`.
fn corrected_gradient(n: &[BrokenField], mesh: &BrokenMesh, e: &Element, xi: [f64; 2], i: usize) -> [f64; 2] {
    let mut g = mesh.grad_in_element(&n[i].values, e, xi);
    g[i] += 1.0;
    g
}

fn apply(a: &Tensor, v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

pub fn compute_a0(n: &[BrokenField], material: &MaterialModel) -> Result<EffectiveTensor, CellError> {
    let mesh = &n[0].mesh;
    let dim = mesh.dim();
    let rule = volume_rule(dim);
    let vol = mesh.element_measure();
    let mut avg = [[0.0; 2]; 2];
    let mut energy = [[0.0; 2]; 2];
    for e in mesh.elements() {
        let a = material.tensor(e.region);
        for q in &rule {
            let w = q.weight * vol;
            let grads: Vec<[f64; 2]> = (0..dim).map(|i| corrected_gradient(n, mesh, e, q.xi, i)).collect();
            for i in 0..dim {
                let ag = apply(&a, grads[i]);
                for j in 0..dim {
                    // (D(N+y)A)_ij = Σ_k (e_i + ∇N_i)_k A_kj and A is symmetric
                    avg[i][j] += w * ag[j];
                    energy[i][j] += w * (ag[0] * grads[j][0] + ag[1] * grads[j][1]);
                }
            }
        }
    }
    let frule = facet_rule(dim);
    for (fi, f) in mesh.facets().iter().enumerate() {
        for &(t, w) in &frule {
            let jumps: Vec<f64> = (0..dim).map(|i| jump_trace(&n[i], fi, t).jump).collect();
            for i in 0..dim {
                for j in 0..dim {
                    energy[i][j] += material.alpha * w * f.measure * jumps[i] * jumps[j];
                }
            }
        }
    }
    let mut agreement = 0.0f64;
    let mut a0 = [[0.0; 2]; 2];
    for i in 0..dim {
        for j in 0..dim {
            agreement = agreement.max((avg[i][j] - energy[i][j]).abs());
            a0[i][j] = 0.5 * (avg[i][j] + avg[j][i]);
        }
    }
    let min_eig = min_eigenvalue(&a0, dim);
    if !(agreement <= A0_AGREEMENT_TOL) {
        return Err(CellError::CertificationFailed(format!(
            "volume average and energy form differ by {agreement:e}"
        )));
    }
    if !(min_eig > 0.0) {
        return Err(CellError::CertificationFailed(format!(
            "smallest eigenvalue {min_eig:e} is not positive"
        )));
    }
    Ok(EffectiveTensor {
        dim,
        a0,
        volume_average: avg,
        energy_form: energy,
        agreement,
        min_eigenvalue: min_eig,
    })
}

/// `B = D(N+y)A − A⁰` at every volume quadrature point, element-major.
#[derive(Debug, Clone)]
pub struct BField {
    pub points_per_element: usize,
    pub values: Vec<Tensor>,
}

impl BField {
    pub fn at(&self, element: usize, q: usize) -> &Tensor {
        &self.values[element * self.points_per_element + q]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BDiagnostics {
    /// `max_ij |⟨B⟩_ij|`.
    pub mean_b: f64,
    /// RMS over `∂ω` of `(A⁰+B)ν − α[[N]]`, with `B` averaged across the two sides.
    pub interface_residual: f64,
    /// The same RMS restricted to interface points farther than
    /// [`CORNER_EXCLUSION_RADIUS`] from every inclusion corner.
    pub interface_residual_off_corners: f64,
    /// RMS over `∂ω` of the normal-flux jump `[[B]]ν`.
    pub flux_mismatch: f64,
    /// `max_{i,k} |∫ B_i·∇ψ_k + ∫ (α[[N_i]] − (A⁰ν)_i)[[ψ_k]]|` over periodic basis functions.
    pub weak_divergence: f64,
    /// `max |B_ij|` over quadrature points.
    pub max_abs_b: f64,
}

/// Reference coordinates of a physical point in element `e`, clamped to the element.
fn reference_coords(mesh: &BrokenMesh, e: &Element, x: &Point) -> [f64; 2] {
    let o = mesh.element_origin(e);
    let h = mesh.h();
    let c = |k: usize| ((x[k] - o[k]) / h).clamp(0.0, 1.0);
    if mesh.dim() == 1 {
        [c(0), 0.0]
    } else {
        [c(0), c(1)]
    }
}

pub fn compute_b(n: &[BrokenField], material: &MaterialModel, a0: &EffectiveTensor) -> (BField, BDiagnostics) {
    let mesh = n[0].mesh.clone();
    let dim = mesh.dim();
    let rule = volume_rule(dim);
    let vol = mesh.element_measure();
    let mut values = Vec::with_capacity(mesh.elements().len() * rule.len());
    let mut mean = [[0.0; 2]; 2];
    let mut max_abs_b = 0.0f64;
    for e in mesh.elements() {
        let a = material.tensor(e.region);
        for q in &rule {
            let mut b = [[0.0; 2]; 2];
            for i in 0..dim {
                let ag = apply(&a, corrected_gradient(n, &mesh, e, q.xi, i));
                for j in 0..dim {
                    b[i][j] = ag[j] - a0.a0[i][j];
                    mean[i][j] += q.weight * vol * b[i][j];
                    max_abs_b = max_abs_b.max(b[i][j].abs());
                }
            }
            values.push(b);
        }
    }
    let mean_b = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(mean[i][j].abs()));

    // interface relation at facet quadrature points
    let frule = facet_rule(dim);
    let (mut res_sq, mut mis_sq, mut area) = (0.0, 0.0, 0.0);
    let (mut off_sq, mut off_area) = (0.0, 0.0);
    let inc = solid_bounding_box(&mesh);
    let normal_flux = |e: &Element, x: &Point, nu: &Point, i: usize| {
        let a = material.tensor(e.region);
        let g = corrected_gradient(n, &mesh, e, reference_coords(&mesh, e, x), i);
        let ag = apply(&a, g);
        ag[0] * nu[0] + ag[1] * nu[1]
    };
    for (fi, f) in mesh.facets().iter().enumerate() {
        let plus = &mesh.elements()[f.plus_element];
        let minus = &mesh.elements()[f.minus_element];
        for &(t, w) in &frule {
            let x = f.point(t);
            for i in 0..dim {
                let fp = normal_flux(plus, &x, &f.normal, i);
                let fm = normal_flux(minus, &x, &f.normal, i);
                let jump = jump_trace(&n[i], fi, t).jump;
                let r = 0.5 * (fp + fm) - material.alpha * jump;
                res_sq += w * f.measure * r * r;
                mis_sq += w * f.measure * (fp - fm) * (fp - fm);
                if corner_distance(&inc, dim, &x) > CORNER_EXCLUSION_RADIUS {
                    off_sq += w * f.measure * r * r;
                }
            }
            area += w * f.measure;
            if corner_distance(&inc, dim, &x) > CORNER_EXCLUSION_RADIUS {
                off_area += w * f.measure;
            }
        }
    }
    let rms = |s: f64| if area > 0.0 { (s / area).sqrt() } else { 0.0 };
    let off_rms = if off_area > 0.0 { (off_sq / off_area).sqrt() } else { 0.0 };

    let weak_divergence = weak_divergence_residual(n, material, a0, &values);
    (
        BField {
            points_per_element: rule.len(),
            values,
        },
        BDiagnostics {
            mean_b,
            interface_residual: rms(res_sq),
            interface_residual_off_corners: off_rms,
            flux_mismatch: rms(mis_sq),
            weak_divergence,
            max_abs_b,
        },
    )
}

/// Bounding box of the solid elements of a cell mesh.
fn solid_bounding_box(mesh: &BrokenMesh) -> Aabb {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for e in mesh.elements().iter().filter(|e| e.region == crate::broken_mesh::Region::Solid) {
        let o = mesh.element_origin(e);
        for k in 0..mesh.dim() {
            lo[k] = lo[k].min(o[k]);
            hi[k] = hi[k].max(o[k] + mesh.h());
        }
    }
    Aabb::new(lo, hi)
}

/// Distance to the nearest inclusion corner; infinite in 1D where interface points are isolated.
fn corner_distance(inc: &Aabb, dim: usize, x: &Point) -> f64 {
    if dim == 1 {
        return f64::INFINITY;
    }
    let mut d = f64::INFINITY;
    for cx in [inc.lower[0], inc.upper[0]] {
        for cy in [inc.lower[1], inc.upper[1]] {
            d = d.min(((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt());
        }
    }
    d
}

fn weak_divergence_residual(n: &[BrokenField], material: &MaterialModel, a0: &EffectiveTensor, b: &[Tensor]) -> f64 {
    let mesh = &n[0].mesh;
    let dim = mesh.dim();
    let map = DofMap::new(mesh.dof_count(), &[], mesh.periodic_pairs());
    let rule = volume_rule(dim);
    let vol = mesh.element_measure();
    let h = mesh.h();
    let mut worst = 0.0f64;
    for i in 0..dim {
        let mut r = vec![0.0; mesh.dof_count()];
        for (ei, e) in mesh.elements().iter().enumerate() {
            for (qi, q) in rule.iter().enumerate() {
                let s = shape(dim, q.xi);
                let bi = b[ei * rule.len() + qi][i];
                for (k, &d) in mesh.element_dofs(e).iter().enumerate() {
                    let g = s.grads[k];
                    r[d] += q.weight * vol * (bi[0] * g[0] + bi[1] * g[1]) / h;
                }
            }
        }
        let nf = if dim == 1 { 1 } else { 2 };
        for (fi, f) in mesh.facets().iter().enumerate() {
            let a0nu = a0.a0[i][0] * f.normal[0] + a0.a0[i][1] * f.normal[1];
            for &(t, w) in &facet_rule(dim) {
                let coef = material.alpha * jump_trace(&n[i], fi, t).jump - a0nu;
                let sh = crate::element::facet_shape(dim, t);
                for k in 0..nf {
                    r[f.plus[k]] += w * f.measure * coef * sh[k];
                    r[f.minus[k]] -= w * f.measure * coef * sh[k];
                }
            }
        }
        let reduced = map.restrict_vec(&r);
        worst = reduced.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct CellDiagnostics {
    pub mean_l: f64,
    pub mean_l_expected: f64,
    pub mean_n: Vec<f64>,
    pub a0: EffectiveTensor,
    pub b: BDiagnostics,
}

/// All ε-independent cell data used by the homogenized problem and the corrector.
pub struct CellCorrectors {
    pub cell: CellGeometry,
    pub h: f64,
    pub natural_mesh: Arc<BrokenMesh>,
    pub periodic_mesh: Arc<BrokenMesh>,
    pub l: BrokenField,
    pub n: Vec<BrokenField>,
    pub a0: EffectiveTensor,
    pub b: BField,
    pub diagnostics: CellDiagnostics,
}

pub fn compute_cell_correctors(
    cell: &CellGeometry,
    material: &MaterialModel,
    h: f64,
    tol: f64,
) -> Result<CellCorrectors, CellError> {
    let natural_mesh = Arc::new(build_cell_mesh(cell, h, false, true)?);
    let periodic_mesh = Arc::new(build_cell_mesh(cell, h, true, true)?);
    let l = solve_l(&natural_mesh, material, tol)?;
    let n = solve_n(&periodic_mesh, material, tol)?;
    let a0 = compute_a0(&n, material)?;
    let (b, bdiag) = compute_b(&n, material, &a0);
    let diagnostics = CellDiagnostics {
        mean_l: integral(&natural_mesh, &l.values, MassRegion::All),
        mean_l_expected: measures(cell).surf_omega,
        mean_n: n
            .iter()
            .map(|f| integral(&periodic_mesh, &f.values, MassRegion::All))
            .collect(),
        a0,
        b: bdiag,
    };
    Ok(CellCorrectors {
        cell: *cell,
        h,
        natural_mesh,
        periodic_mesh,
        l,
        n,
        a0,
        b,
        diagnostics,
    })
}

/// One row of an expansion-lemma experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionRecord {
    pub epsilon: f64,
    pub residual: f64,
    pub residual_over_eps: f64,
}

impl ExpansionRecord {
    fn new(epsilon: f64, residual: f64) -> Self {
        Self {
            epsilon,
            residual,
            residual_over_eps: residual.abs() / epsilon,
        }
    }
}

/// Whether `|r|/ε` grows by at most a factor 2 from each ε to the next smaller one.
pub fn bounded_over_halvings(records: &[ExpansionRecord]) -> bool {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    sorted
        .windows(2)
        .all(|w| w[1].residual_over_eps <= 2.0 * w[0].residual_over_eps)
}

fn volume_integral(mesh: &BrokenMesh, region: MassRegion, f: &(dyn Fn(&Point) -> f64 + Sync)) -> f64 {
    let rule = volume_rule(mesh.dim());
    let vol = mesh.element_measure();
    let parts: Vec<f64> = mesh
        .elements()
        .par_iter()
        .map(|e| {
            if !region.includes(e.region) {
                return 0.0;
            }
            rule.iter().map(|q| q.weight * vol * f(&mesh.map_point(e, q.xi))).sum()
        })
        .collect();
    parts.iter().sum()
}

/// `∫_{∂ω_#⁻} εg φ dS − ∫_{Ω∖∂ω_#} (|∂ω|/|Υ|) g φ dx` for a smooth probe `φ`.
pub fn verify_traction_expansion(
    paved: &PavedDomain,
    material: &MaterialModel,
    probe: &(dyn Fn(&Point) -> f64 + Sync),
    h_cell: f64,
) -> Result<ExpansionRecord, CellError> {
    let mesh = build_domain_mesh(paved, h_cell)?;
    let eps = paved.epsilon;
    let g = material.g;
    let mut surface = 0.0;
    for f in mesh.facets() {
        for &(t, w) in &facet_rule(mesh.dim()) {
            surface += w * f.measure * probe(&f.point(t));
        }
    }
    let volume = volume_integral(&mesh, MassRegion::All, probe);
    let density = measures(&paved.cell).surface_density();
    Ok(ExpansionRecord::new(eps, eps * g * surface - density * g * volume))
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeExpansionRecord {
    pub record: ExpansionRecord,
    /// `max_p |⟨M_p⟩ − ∫_{Υ∖ω} T_ε f(p, ·)|` over retained cells.
    pub m_average_defect: f64,
    pub cells: usize,
}

/// `∫_{Ω∖ω_#} f φ dx − (|Υ∖ω|/|Υ|) ∫_{Ω∖∂ω_#} f φ dx`, together with the
/// average identity of the `M` problem in every retained cell.
pub fn verify_volume_expansion(
    paved: &PavedDomain,
    material: &MaterialModel,
    force: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    probe: &(dyn Fn(&Point) -> f64 + Sync),
    h_cell: f64,
    tol: f64,
) -> Result<VolumeExpansionRecord, CellError> {
    let mesh = build_domain_mesh(paved, h_cell)?;
    let fphi = |x: &Point| force(x) * probe(x);
    let pore = volume_integral(&mesh, MassRegion::Pore, &fphi);
    let all = volume_integral(&mesh, MassRegion::All, &fphi);
    let porosity = measures(&paved.cell).porosity();
    let record = ExpansionRecord::new(paved.epsilon, pore - porosity * all);

    let cell_mesh = Arc::new(build_cell_mesh(&paved.cell, h_cell, false, true)?);
    let m_solver = MSolver::new(&cell_mesh, material, tol)?;
    let unfolded = UnfoldedForce {
        epsilon: paved.epsilon,
        domain: paved.domain,
        dim: paved.dim(),
        f: force,
    };
    let defects: Result<Vec<f64>, CellError> = paved
        .retained
        .par_iter()
        .map(|&p| {
            let m = m_solver.solve(&unfolded, p)?;
            let avg = integral(&cell_mesh, &m.values, MassRegion::All);
            let f = &unfolded.f;
            let expected = volume_integral(&cell_mesh, MassRegion::Pore, &|y| f(&cell_point(paved.epsilon, p, y)));
            Ok((avg - expected).abs())
        })
        .collect();
    let m_average_defect = defects?.into_iter().fold(0.0, f64::max);
    Ok(VolumeExpansionRecord {
        record,
        m_average_defect,
        cells: paved.retained.len(),
    })
}
