//! First-order corrector, energy error and ε-sweeps of the homogenization
//! error.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assembly::{grad_norm_sq, jump_norm_sq};
use crate::broken_mesh::{build_box_mesh, build_domain_mesh, BrokenField, BrokenMesh, MeshError, Region};
use crate::cell_problems::{
    bounded_over_halvings, compute_cell_correctors, verify_traction_expansion, verify_volume_expansion,
    CellCorrectors, CellError, ExpansionRecord,
};
use crate::config::ToolkitConfig;
use crate::geometry::{build_paving, measures, Aabb, GeometryError, Point};
use crate::pb_solver::{energy_diagnostic, solve_macro_pb, solve_micro_pb, EnergyTerms, PbError, PbSolution};

/// Errors at or below this size make a rate fit meaningless.
pub const DEGENERATE_ERROR: f64 = 1e-14;

/// Relative share of the smallest energy error the macro discretization
/// estimate may reach before the report flags it.
pub const MACRO_ERROR_SHARE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("fields live on different meshes")]
    MeshMismatch,
    #[error("point {x:?} lies outside the macro mesh")]
    OutOfDomain { x: Point },
    #[error("rate fit needs at least two rows, got {0}")]
    InsufficientData(usize),
    #[error("rate fit is degenerate: an error is at or below {DEGENERATE_ERROR:e}")]
    DegenerateErrors,
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Pb(#[from] PbError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// A macroscopic potential that can be sampled pointwise.
pub trait MacroPotential: Sync {
    /// `None` outside the region where the potential is defined.
    fn value(&self, x: &Point) -> Option<f64>;
    fn gradient(&self, x: &Point) -> Option<[f64; 2]>;
}

/// `c + ξ·x`, defined everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMacroField {
    pub xi: [f64; 2],
    pub offset: f64,
}

impl MacroPotential for LinearMacroField {
    fn value(&self, x: &Point) -> Option<f64> {
        Some(self.offset + self.xi[0] * x[0] + self.xi[1] * x[1])
    }

    fn gradient(&self, _x: &Point) -> Option<[f64; 2]> {
        Some(self.xi)
    }
}

/// Continuous macro solution with vertex-recovered gradients.
///
/// Vertex gradients average the element gradients of all adjacent elements
/// evaluated at the vertex. Values and recovered gradients are then
/// interpolated with the same P1/Q1 shape functions.
#[derive(Debug, Clone)]
pub struct RecoveredMacroField {
    dim: usize,
    origin: Point,
    h: f64,
    cells: [usize; 2],
    values: Vec<f64>,
    gradients: Vec<[f64; 2]>,
}

impl RecoveredMacroField {
    pub fn new(field: &BrokenField) -> Result<Self, StudyError> {
        let mesh = &field.mesh;
        if mesh.is_broken() {
            return Err(StudyError::MeshMismatch);
        }
        let lat = mesh.lattice();
        let dim = lat.dim;
        let vd = lat.vertex_dims();
        let (nx, ny) = (vd[0], if dim == 1 { 1 } else { vd[1] });
        let index = |i: usize, j: usize| j * nx + i;
        let mut values = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let d = mesh.dof_at([i, j], Region::Pore).ok_or(StudyError::MeshMismatch)?;
                values[index(i, j)] = field.values[d];
            }
        }
        let h = lat.h;
        let mut sums = vec![[0.0f64; 2]; nx * ny];
        let mut counts = vec![0u32; nx * ny];
        if dim == 1 {
            for i in 0..nx - 1 {
                let g = (values[i + 1] - values[i]) / h;
                for v in [i, i + 1] {
                    sums[v][0] += g;
                    counts[v] += 1;
                }
            }
        } else {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let v00 = values[index(i, j)];
                    let v10 = values[index(i + 1, j)];
                    let v01 = values[index(i, j + 1)];
                    let v11 = values[index(i + 1, j + 1)];
                    for (a, b) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                        let gx = ((1.0 - b) * (v10 - v00) + b * (v11 - v01)) / h;
                        let gy = ((1.0 - a) * (v01 - v00) + a * (v11 - v10)) / h;
                        let v = index(i + a as usize, j + b as usize);
                        sums[v][0] += gx;
                        sums[v][1] += gy;
                        counts[v] += 1;
                    }
                }
            }
        }
        let gradients = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
            .collect();
        Ok(Self {
            dim,
            origin: lat.origin,
            h,
            cells: lat.cells,
            values,
            gradients,
        })
    }

    /// Element index and local coordinates of `x`, or `None` outside the mesh.
    fn locate(&self, x: &Point) -> Option<([usize; 2], [f64; 2])> {
        let mut e = [0usize; 2];
        let mut s = [0.0; 2];
        for axis in 0..self.dim {
            let n = self.cells[axis];
            let t = (x[axis] - self.origin[axis]) / self.h;
            let tol = 1e-9 * (n as f64).max(1.0);
            if t < -tol || t > n as f64 + tol {
                return None;
            }
            let k = (t.floor().max(0.0) as usize).min(n - 1);
            e[axis] = k;
            s[axis] = (t - k as f64).clamp(0.0, 1.0);
        }
        Some((e, s))
    }

    fn blend<T: Copy>(&self, data: &[T], x: &Point, mut acc: impl FnMut(Option<T>, f64, T) -> T) -> Option<T> {
        let (e, s) = self.locate(x)?;
        let nx = self.cells[0] + 1;
        let mut out: Option<T> = None;
        if self.dim == 1 {
            for (di, w) in [(0, 1.0 - s[0]), (1, s[0])] {
                out = Some(acc(out, w, data[e[0] + di]));
            }
        } else {
            for (di, dj, w) in [
                (0, 0, (1.0 - s[0]) * (1.0 - s[1])),
                (1, 0, s[0] * (1.0 - s[1])),
                (0, 1, (1.0 - s[0]) * s[1]),
                (1, 1, s[0] * s[1]),
            ] {
                out = Some(acc(out, w, data[(e[1] + dj) * nx + e[0] + di]));
            }
        }
        out
    }
}

impl MacroPotential for RecoveredMacroField {
    fn value(&self, x: &Point) -> Option<f64> {
        self.blend(&self.values, x, |a, w, v| a.unwrap_or(0.0) + w * v)
    }

    fn gradient(&self, x: &Point) -> Option<[f64; 2]> {
        self.blend(&self.gradients, x, |a, w, g| {
            let a = a.unwrap_or([0.0; 2]);
            [a[0] + w * g[0], a[1] + w * g[1]]
        })
    }
}

/// `φ¹ = φ⁰ + ε ∇φ⁰·N(x/ε)` at every DOF of the domain mesh, with `N`
/// sampled on the DOF's interface side.
pub fn build_corrector(
    phi0: &dyn MacroPotential,
    n: &[BrokenField],
    epsilon: f64,
    domain_mesh: &Arc<BrokenMesh>,
) -> Result<BrokenField, StudyError> {
    let dim = domain_mesh.dim();
    let cell_mesh = &n.first().ok_or(StudyError::MeshMismatch)?.mesh;
    if n.len() != dim
        || cell_mesh.dim() != dim
        || n.iter().any(|f| !Arc::ptr_eq(&f.mesh, cell_mesh))
        || cell_mesh.lattice().cells[0] != domain_mesh.cell_resolution()
    {
        return Err(StudyError::MeshMismatch);
    }
    let values: Result<Vec<f64>, StudyError> = (0..domain_mesh.dof_count())
        .into_par_iter()
        .map(|d| {
            let x = domain_mesh.coords()[d];
            let v = phi0.value(&x).ok_or(StudyError::OutOfDomain { x })?;
            let g = phi0.gradient(&x).ok_or(StudyError::OutOfDomain { x })?;
            let c = domain_mesh.cell_dof(d, cell_mesh);
            let corr: f64 = (0..dim).map(|i| g[i] * n[i].values[c]).sum();
            Ok(v + epsilon * corr)
        })
        .collect();
    Ok(BrokenField::new(domain_mesh.clone(), values?))
}

/// Nodal interpolant of `φ⁰` on a domain mesh, continuous across interfaces.
pub fn interpolate_macro(phi0: &dyn MacroPotential, mesh: &Arc<BrokenMesh>) -> Result<BrokenField, StudyError> {
    let values: Result<Vec<f64>, StudyError> = mesh
        .coords()
        .par_iter()
        .map(|x| phi0.value(x).ok_or(StudyError::OutOfDomain { x: *x }))
        .collect();
    Ok(BrokenField::new(mesh.clone(), values?))
}

/// `(‖∇(φᵉ−φ¹)‖², (1/ε)‖[[φᵉ−φ¹]]‖²)` over the broken domain.
pub fn energy_error(phi_eps: &BrokenField, phi1: &BrokenField, epsilon: f64) -> Result<(f64, f64), StudyError> {
    if !phi_eps.same_mesh(phi1) {
        return Err(StudyError::MeshMismatch);
    }
    let diff: Vec<f64> = phi_eps.values.iter().zip(&phi1.values).map(|(a, b)| a - b).collect();
    let mesh = &phi_eps.mesh;
    Ok((grad_norm_sq(mesh, &diff), jump_norm_sq(mesh, &diff) / epsilon))
}

/// Least-squares slope of `log error` against `log ε` for `(ε, error)` pairs.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<f64, StudyError> {
    if points.len() < 2 {
        return Err(StudyError::InsufficientData(points.len()));
    }
    if points.iter().any(|&(_, e)| !(e > DEGENERATE_ERROR)) {
        return Err(StudyError::DegenerateErrors);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StudyError::InsufficientData(1));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub grad_err_sq: f64,
    pub jump_err_sq_over_eps: f64,
    pub energy_err: f64,
    pub micro_dofs: usize,
    pub macro_dofs: usize,
    pub newton_micro: usize,
    pub newton_macro: usize,
    pub wall_s: Option<f64>,
    /// Energy norm of `φᵉ − φ⁰`, the error without the corrector.
    pub uncorrected_energy_err: f64,
    /// A-priori energy terms of `φᵉ` itself.
    pub a_priori: EnergyTerms,
    pub clamp_active: bool,
}

/// Discretization check of the macro problem against the mesh twice as coarse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroCheck {
    pub coarse_h: f64,
    /// `‖∇(φ⁰_h − φ⁰_{2h})‖`.
    pub estimate: f64,
    /// Whether the estimate exceeds the allowed share of the smallest energy error.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowFailure {
    pub epsilon: f64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// `NaN` when the fit is degenerate or has too few rows.
    pub fitted_rate: f64,
    pub config_hash: String,
    pub config: ToolkitConfig,
    pub a0: Vec<f64>,
    pub porosity: f64,
    pub surface_density: f64,
    pub macro_check: Option<MacroCheck>,
    /// Set when a row failed; `rows` then holds the rows before it.
    pub failure: Option<RowFailure>,
}

pub const CSV_HEADER: &str =
    "epsilon,grad_err_sq,jump_err_sq_over_eps,energy_err,micro_dofs,macro_dofs,newton_micro,newton_macro,wall_s";

impl ConvergenceReport {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    /// Report table; floats use the shortest round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let wall = r.wall_s.map(|w| format!("{w:?}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?},{},{},{},{},{}",
                r.epsilon,
                r.grad_err_sq,
                r.jump_err_sq_over_eps,
                r.energy_err,
                r.micro_dofs,
                r.macro_dofs,
                r.newton_micro,
                r.newton_macro,
                wall
            );
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is serializable")
    }
}

pub fn config_hash(config: &ToolkitConfig) -> String {
    hex::encode(Sha256::digest(config.to_ini_string().as_bytes()))
}

/// Macro solution at width `h` on the configured domain.
pub fn solve_macro(
    config: &ToolkitConfig,
    cell: &CellCorrectors,
    h: f64,
) -> Result<PbSolution, StudyError> {
    let domain = config.domain();
    let mesh = Arc::new(build_box_mesh(config.geometry.dim, domain.lower, domain.upper, h)?);
    let meas = measures(&cell.cell);
    let g_eff = meas.surface_density() * config.material.g;
    Ok(solve_macro_pb(
        mesh,
        &cell.a0.a0,
        meas.porosity(),
        g_eff,
        &config.ions(),
        &config.newton(),
    )?)
}

/// `‖∇(u_fine − u_coarse)‖` for nested box meshes, the coarse field being
/// exactly representable on the fine one.
fn nested_grad_difference(fine: &BrokenField, coarse: &BrokenField) -> Result<f64, StudyError> {
    let rec = RecoveredMacroField::new(coarse)?;
    let diff: Result<Vec<f64>, StudyError> = fine
        .mesh
        .coords()
        .iter()
        .zip(&fine.values)
        .map(|(x, v)| Ok(v - rec.value(x).ok_or(StudyError::OutOfDomain { x: *x })?))
        .collect();
    Ok(grad_norm_sq(&fine.mesh, &diff?).sqrt())
}

/// Micro solve, corrector and errors at one `ε`.
pub fn study_row(
    config: &ToolkitConfig,
    cell: &CellCorrectors,
    macro_field: &RecoveredMacroField,
    macro_solution: &PbSolution,
    epsilon: f64,
) -> Result<ConvergenceRow, StudyError> {
    let start = Instant::now();
    let paved = build_paving(config.domain(), epsilon, cell.cell, config.geometry.gap)?;
    let mesh = Arc::new(build_domain_mesh(&paved, config.study.h_cell)?);
    let micro = solve_micro_pb(mesh.clone(), &config.material(), &config.ions(), epsilon, &config.newton())?;
    let phi1 = build_corrector(macro_field, &cell.n, epsilon, &mesh)?;
    let (grad_err_sq, jump_err_sq_over_eps) = energy_error(&micro.field, &phi1, epsilon)?;
    let phi0 = interpolate_macro(macro_field, &mesh)?;
    let (g0, j0) = energy_error(&micro.field, &phi0, epsilon)?;
    log::info!(
        "epsilon {epsilon}: energy error {:.4e} (uncorrected {:.4e}), {} micro DOFs",
        (grad_err_sq + jump_err_sq_over_eps).sqrt(),
        (g0 + j0).sqrt(),
        mesh.dof_count()
    );
    Ok(ConvergenceRow {
        epsilon,
        grad_err_sq,
        jump_err_sq_over_eps,
        energy_err: (grad_err_sq + jump_err_sq_over_eps).sqrt(),
        micro_dofs: mesh.dof_count(),
        macro_dofs: macro_solution.field.mesh.dof_count(),
        newton_micro: micro.iterations,
        newton_macro: macro_solution.iterations,
        wall_s: config.study.record_wall_time.then(|| start.elapsed().as_secs_f64()),
        uncorrected_energy_err: (g0 + j0).sqrt(),
        a_priori: energy_diagnostic(&micro.field, epsilon),
        clamp_active: micro.clamp_active,
    })
}

/// Full ε-sweep. Rows run on a pool of `threads` workers and are reported
/// in ε order. A failed row ends the sweep; the rows before it are kept and
/// the failure is recorded in the report.
pub fn run_convergence_study(config: &ToolkitConfig, threads: usize) -> Result<ConvergenceReport, StudyError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| StudyError::ThreadPool(e.to_string()))?;
    pool.install(|| sweep(config))
}

fn sweep(config: &ToolkitConfig) -> Result<ConvergenceReport, StudyError> {
    let cell = compute_cell_correctors(
        &config.cell(),
        &config.material(),
        config.study.h_cell,
        config.solver.linear_tol,
    )?;
    log::info!("effective tensor {:?}", cell.a0.row_major());
    let macro_h = config.study.macro_h;
    let macro_solution = solve_macro(config, &cell, macro_h)?;
    let macro_field = RecoveredMacroField::new(&macro_solution.field)?;
    let coarse = match solve_macro(config, &cell, 2.0 * macro_h) {
        Ok(c) => Some(c),
        Err(StudyError::Mesh(MeshError::InvalidResolution { .. })) => None,
        Err(e) => return Err(e),
    };
    let estimate = match &coarse {
        Some(c) => Some(nested_grad_difference(&macro_solution.field, &c.field)?),
        None => None,
    };

    let results: Vec<Result<ConvergenceRow, StudyError>> = config
        .study
        .epsilons
        .par_iter()
        .map(|&eps| study_row(config, &cell, &macro_field, &macro_solution, eps))
        .collect();
    let mut rows = Vec::new();
    let mut failure = None;
    for (res, &eps) in results.into_iter().zip(&config.study.epsilons) {
        match res {
            Ok(r) => rows.push(r),
            Err(e) => {
                log::error!("row epsilon = {eps} failed: {e}");
                failure = Some(RowFailure {
                    epsilon: eps,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.epsilon, r.energy_err)).collect();
    let fitted_rate = fit_rate(&points).unwrap_or(f64::NAN);
    let min_err = rows.iter().map(|r| r.energy_err).fold(f64::INFINITY, f64::min);
    let macro_check = estimate.map(|estimate| MacroCheck {
        coarse_h: 2.0 * macro_h,
        estimate,
        significant: estimate > MACRO_ERROR_SHARE * min_err,
    });
    if let Some(c) = &macro_check {
        if c.significant {
            log::warn!("macro discretization estimate {:.3e} is not negligible", c.estimate);
        }
    }
    let meas = measures(&cell.cell);
    Ok(ConvergenceReport {
        rows,
        fitted_rate,
        config_hash: config_hash(config),
        config: config.clone(),
        a0: cell.a0.row_major(),
        porosity: meas.porosity(),
        surface_density: meas.surface_density(),
        macro_check,
        failure,
    })
}

/// One `ε` of the expansion-lemma experiments.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaRow {
    pub epsilon: f64,
    pub traction: ExpansionRecord,
    pub volume: ExpansionRecord,
    pub m_average_defect: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub rows: Vec<LemmaRow>,
    pub traction_bounded: bool,
    pub volume_bounded: bool,
    pub config_hash: String,
}

pub const LEMMA_CSV_HEADER: &str = "epsilon,traction_residual,traction_over_eps,volume_residual,volume_over_eps,m_average_defect";

impl LemmaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LEMMA_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?}",
                r.epsilon,
                r.traction.residual,
                r.traction.residual_over_eps,
                r.volume.residual,
                r.volume.residual_over_eps,
                r.m_average_defect
            );
        }
        out
    }
}

/// `Π sin(π(x_i − a_i)/(b_i − a_i))`, vanishing on the boundary of `domain`.
pub fn sine_probe(domain: Aabb, dim: usize) -> impl Fn(&Point) -> f64 + Send + Sync {
    move |x: &Point| {
        (0..dim)
            .map(|i| (std::f64::consts::PI * (x[i] - domain.lower[i]) / domain.extent(i)).sin())
            .product()
    }
}

/// Traction and volume expansion residuals for every configured `ε`, with
/// the probe [`sine_probe`] and the force `f = 1 + x₁`.
pub fn run_lemma_sweep(config: &ToolkitConfig, threads: usize) -> Result<LemmaReport, StudyError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| StudyError::ThreadPool(e.to_string()))?;
    pool.install(|| {
        let domain = config.domain();
        let dim = config.geometry.dim;
        let probe = sine_probe(domain, dim);
        let material = config.material();
        let mut rows = Vec::new();
        for &eps in &config.study.epsilons {
            let paved = build_paving(domain, eps, config.cell(), config.geometry.gap)?;
            let traction = verify_traction_expansion(&paved, &material, &probe, config.study.h_cell)?;
            let force: Arc<dyn Fn(&Point) -> f64 + Send + Sync> = Arc::new(|x: &Point| 1.0 + x[0]);
            let volume = verify_volume_expansion(
                &paved,
                &material,
                force,
                &probe,
                config.study.h_cell,
                config.solver.linear_tol,
            )?;
            log::info!(
                "epsilon {eps}: traction |r|/eps {:.3e}, volume |r|/eps {:.3e}",
                traction.residual_over_eps,
                volume.record.residual_over_eps
            );
            rows.push(LemmaRow {
                epsilon: eps,
                traction,
                volume: volume.record,
                m_average_defect: volume.m_average_defect,
                cells: volume.cells,
            });
        }
        let t: Vec<ExpansionRecord> = rows.iter().map(|r| r.traction).collect();
        let v: Vec<ExpansionRecord> = rows.iter().map(|r| r.volume).collect();
        Ok(LemmaReport {
            traction_bounded: bounded_over_halvings(&t),
            volume_bounded: bounded_over_halvings(&v),
            rows,
            config_hash: config_hash(config),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_rate_examples() {
        let sqrt: Vec<(f64, f64)> = [0.5, 0.25, 0.125].iter().map(|&e: &f64| (e, 3.0 * e.sqrt())).collect();
        assert!((fit_rate(&sqrt).unwrap() - 0.5).abs() < 1e-12);
        let lin: Vec<(f64, f64)> = [0.5, 0.25, 0.125].iter().map(|&e| (e, 2.0 * e)).collect();
        assert!((fit_rate(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fit_rate(&[(0.5, 1.0), (0.25, 1.0)]).unwrap(), 0.0);
        assert!(matches!(fit_rate(&[(0.5, 1.0)]), Err(StudyError::InsufficientData(1))));
        assert!(matches!(fit_rate(&[(0.5, 1.0), (0.25, 0.0)]), Err(StudyError::DegenerateErrors)));
    }

    #[test]
    fn recovered_gradient_is_exact_for_affine_fields() {
        let mesh = Arc::new(build_box_mesh(2, [0.0, 0.0], [1.0, 1.0], 0.125).unwrap());
        let f = BrokenField::interpolate(mesh, |x, _| 1.0 + 2.0 * x[0] - 3.0 * x[1]);
        let rec = RecoveredMacroField::new(&f).unwrap();
        for x in [[0.0, 0.0], [0.3, 0.71], [1.0, 0.5]] {
            assert!((rec.value(&x).unwrap() - (1.0 + 2.0 * x[0] - 3.0 * x[1])).abs() < 1e-12);
            let g = rec.gradient(&x).unwrap();
            assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 3.0).abs() < 1e-12);
        }
        assert!(rec.value(&[1.2, 0.5]).is_none());
    }
}
