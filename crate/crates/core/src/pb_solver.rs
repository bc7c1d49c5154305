//! Newton solvers for the micro-scale and homogenized Poisson–Boltzmann
//! problems, Boltzmann concentration recovery and energy diagnostics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sprs::CsMat;
use thiserror::Error;

use crate::assembly::{
    assemble_interface_penalty, assemble_load, assemble_minus_boundary_source, assemble_stiffness,
    assemble_stiffness_with, assemble_weighted_mass, grad_norm_sq, jump_norm_sq, l2_norm_sq, mat_vec, MassRegion,
    MaterialModel, Tensor,
};
use crate::broken_mesh::{BrokenField, BrokenMesh, Region};
use crate::element::{shape, volume_rule, MAX_NODES};
use crate::solver::{sum_matrices, DofMap, SolverError, SpdSolver, DEFAULT_LINEAR_TOL};

/// Exponent bound used by concentration recovery to keep values finite.
const RECOVERY_EXP_LIMIT: f64 = 700.0;

#[derive(Debug, Error)]
pub enum PbError {
    #[error("invalid ion system: {0}")]
    InvalidIons(String),
    #[error("invalid Newton configuration: {0}")]
    InvalidConfig(String),
    #[error("Newton iteration diverged after {iterations} iterations (residual history {history:?})")]
    NewtonDiverged { iterations: usize, history: Vec<f64> },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("monotonicity constant {0:e} is not positive")]
    NonPositive(f64),
}

/// Charges `z_s` and thermal scale `κT`; bath values are `φ = 0`, `c = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSystem {
    charges: Vec<f64>,
    kt: f64,
    neutrality_tol: f64,
}

impl IonSystem {
    pub fn new(charges: Vec<f64>, kt: f64, neutrality_tol: f64) -> Result<Self, PbError> {
        if charges.iter().any(|z| !z.is_finite()) {
            return Err(PbError::InvalidIons("charges must be finite".into()));
        }
        if !(kt > 0.0 && kt.is_finite()) {
            return Err(PbError::InvalidIons("kT must be positive".into()));
        }
        if !(neutrality_tol >= 0.0) {
            return Err(PbError::InvalidIons("neutrality_tol must be non-negative".into()));
        }
        let total: f64 = charges.iter().sum();
        if total.abs() > neutrality_tol {
            return Err(PbError::InvalidIons(format!(
                "charge neutrality violated: sum of charges is {total}"
            )));
        }
        let lo = charges.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = charges.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < 0.0 && hi > 0.0) {
            return Err(PbError::InvalidIons(
                "charges need both signs (min z < 0 < max z)".into(),
            ));
        }
        Ok(Self {
            charges,
            kt,
            neutrality_tol,
        })
    }

    /// Symmetric monovalent pair `z = (1, −1)`, `κT = 1`.
    pub fn symmetric_pair() -> Self {
        Self::new(vec![1.0, -1.0], 1.0, 1e-12).expect("neutral pair")
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn kt(&self) -> f64 {
        self.kt
    }

    pub fn neutrality_tol(&self) -> f64 {
        self.neutrality_tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearMode {
    /// `−Σ z_s exp(−z_s φ/κT)`.
    Boltzmann,
    /// First-order Taylor expansion at `φ = 0`.
    Linearized,
    /// No space-charge term; diagnostic only.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub max_iter: usize,
    pub exp_clamp: f64,
    pub max_halvings: usize,
    pub linear_tol: f64,
    pub mode: NonlinearMode,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_iter: 50,
            exp_clamp: 50.0,
            max_halvings: 20,
            linear_tol: DEFAULT_LINEAR_TOL,
            mode: NonlinearMode::Boltzmann,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), PbError> {
        if !(self.abs_tol > 0.0) {
            return Err(PbError::InvalidConfig("abs_tol must be positive".into()));
        }
        if !(self.exp_clamp > 0.0) {
            return Err(PbError::InvalidConfig("exp_clamp must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(PbError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            return Err(PbError::InvalidConfig("linear_tol must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Space-charge term `n(φ)` and its derivative at one point.
/// The flag reports whether any exponent hit the clamp.
fn space_charge(ions: &IonSystem, config: &NewtonConfig, phi: f64) -> (f64, f64, bool) {
    let kt = ions.kt;
    match config.mode {
        NonlinearMode::Disabled => (0.0, 0.0, false),
        NonlinearMode::Linearized => {
            let z_sum: f64 = ions.charges.iter().sum();
            let z_sq: f64 = ions.charges.iter().map(|z| z * z).sum();
            (-z_sum + z_sq / kt * phi, z_sq / kt, false)
        }
        NonlinearMode::Boltzmann => {
            let mut value = 0.0;
            let mut deriv = 0.0;
            let mut clamped = false;
            for &z in &ions.charges {
                let arg = -z * phi / kt;
                if arg.abs() > config.exp_clamp {
                    clamped = true;
                    value -= z * arg.clamp(-config.exp_clamp, config.exp_clamp).exp();
                } else {
                    let e = arg.exp();
                    value -= z * e;
                    deriv += z * z / kt * e;
                }
            }
            (value, deriv, clamped)
        }
    }
}

/// A discretized Poisson–Boltzmann problem
/// `Lφ + c∫_region n(φ) ψ = b` with homogeneous Dirichlet data on `∂Ω`.
pub struct PbProblem {
    pub mesh: Arc<BrokenMesh>,
    /// Linear operator on full DOFs (stiffness plus interface penalty).
    pub linear: CsMat<f64>,
    pub source: Vec<f64>,
    pub region: MassRegion,
    /// Factor in front of the space-charge term (porosity for the macro problem).
    pub factor: f64,
    pub map: DofMap,
}

impl PbProblem {
    /// Micro problem: `∫∇φᵀAᵉ∇ψ + (α/ε)∫[[φ]][[ψ]] + ∫_pore n(φ)ψ = ∫_{∂ω⁻} εg ψ⁻`.
    pub fn micro(mesh: Arc<BrokenMesh>, material: &MaterialModel, epsilon: f64) -> Self {
        let linear = sum_matrices(&[
            &assemble_stiffness(&mesh, material),
            &assemble_interface_penalty(&mesh, material.alpha / epsilon),
        ]);
        let source = assemble_minus_boundary_source(&mesh, epsilon * material.g);
        let map = DofMap::new(mesh.dof_count(), mesh.dirichlet_dofs(), &[]);
        Self {
            mesh,
            linear,
            source,
            region: MassRegion::Pore,
            factor: 1.0,
            map,
        }
    }

    /// Homogenized problem: `∫∇φᵀA⁰∇ψ + θ∫ n(φ)ψ = ∫ g_eff ψ` with porosity `θ`.
    pub fn macroscopic(mesh: Arc<BrokenMesh>, a0: &Tensor, porosity: f64, g_eff: f64) -> Self {
        let linear = assemble_stiffness_with(&mesh, |_| *a0);
        let source = assemble_load(&mesh, MassRegion::All, |_| g_eff);
        let map = DofMap::new(mesh.dof_count(), mesh.dirichlet_dofs(), &[]);
        Self {
            mesh,
            linear,
            source,
            region: MassRegion::All,
            factor: porosity,
            map,
        }
    }

    /// Space-charge load `c∫ n(φ) ψ_k` and whether the clamp was touched.
    fn space_charge_load(&self, phi: &[f64], ions: &IonSystem, config: &NewtonConfig) -> (Vec<f64>, bool) {
        let mesh = &self.mesh;
        let dim = mesh.dim();
        let npe = mesh.nodes_per_element();
        let vol = mesh.element_measure();
        let rule = volume_rule(dim);
        let locals: Vec<Option<([f64; MAX_NODES], bool)>> = mesh
            .elements()
            .par_iter()
            .map(|e| {
                if !self.region.includes(e.region) {
                    return None;
                }
                let mut v = [0.0; MAX_NODES];
                let mut clamped = false;
                for q in &rule {
                    let s = shape(dim, q.xi);
                    let (n, _, c) = space_charge(ions, config, mesh.eval_in_element(phi, e, q.xi));
                    clamped |= c;
                    for i in 0..npe {
                        v[i] += self.factor * q.weight * vol * n * s.values[i];
                    }
                }
                Some((v, clamped))
            })
            .collect();
        let mut out = vec![0.0; mesh.dof_count()];
        let mut clamped = false;
        for (e, local) in mesh.elements().iter().zip(locals) {
            if let Some((v, c)) = local {
                clamped |= c;
                for (i, &d) in mesh.element_dofs(e).iter().enumerate() {
                    out[d] += v[i];
                }
            }
        }
        (out, clamped)
    }

    /// Full-DOF residual `Lφ + c∫n(φ)ψ − b`.
    pub fn residual(&self, phi: &[f64], ions: &IonSystem, config: &NewtonConfig) -> (Vec<f64>, bool) {
        let (nl, clamped) = self.space_charge_load(phi, ions, config);
        let lphi = mat_vec(&self.linear, phi);
        let r = lphi
            .iter()
            .zip(&nl)
            .zip(&self.source)
            .map(|((l, n), b)| l + n - b)
            .collect();
        (r, clamped)
    }

    /// Full-DOF Jacobian `L + c∫ n'(φ) ψ_i ψ_j`.
    pub fn jacobian(&self, phi: &[f64], ions: &IonSystem, config: &NewtonConfig) -> CsMat<f64> {
        let mesh = &self.mesh;
        let rule = volume_rule(mesh.dim());
        let nl = assemble_weighted_mass(mesh, self.region, |e, qi| {
            let v = mesh.eval_in_element(phi, e, rule[qi].xi);
            self.factor * space_charge(ions, config, v).1
        });
        sum_matrices(&[&self.linear, &nl])
    }

    fn reduced_residual(&self, phi: &[f64], ions: &IonSystem, config: &NewtonConfig) -> (Vec<f64>, bool) {
        let (r, c) = self.residual(phi, ions, config);
        (self.map.restrict_vec(&r), c)
    }

    /// Size of residual entries that roundoff alone produces at `phi`.
    fn roundoff_floor(&self, phi: &[f64]) -> f64 {
        let abs_l: f64 = self
            .linear
            .outer_iterator()
            .map(|row| row.iter().map(|(c, a)| (a * phi[c]).abs()).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        let b: f64 = self.source.iter().map(|x| x * x).sum::<f64>().sqrt();
        64.0 * f64::EPSILON * (abs_l + b)
    }
}

#[derive(Debug, Clone)]
pub struct PbSolution {
    pub field: BrokenField,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Set when an exponent sat on the clamp at the converged state; the
    /// solution should then not be trusted.
    pub clamp_active: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton from the zero field. Converges when the Euclidean norm of
/// the reduced residual is below `abs_tol` (or at the roundoff floor).
pub fn solve_pb(problem: &PbProblem, ions: &IonSystem, config: &NewtonConfig) -> Result<PbSolution, PbError> {
    config.validate()?;
    let map = &problem.map;
    let mut phi = vec![0.0; problem.mesh.dof_count()];
    let (mut r, mut clamped) = problem.reduced_residual(&phi, ions, config);
    let mut r_norm = norm(&r);
    let mut history = vec![r_norm];
    let converged = |r_norm: f64, phi: &[f64]| r_norm <= config.abs_tol || r_norm <= problem.roundoff_floor(phi);
    let mut iterations = 0;
    while !converged(r_norm, &phi) {
        if iterations == config.max_iter {
            return Err(PbError::NewtonDiverged { iterations, history });
        }
        iterations += 1;
        let jac = map.restrict_matrix(&problem.jacobian(&phi, ions, config));
        let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = map.prolong(&SpdSolver::new(jac, None, config.linear_tol)?.solve(&neg_r)?);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial: Vec<f64> = phi.iter().zip(&delta).map(|(p, d)| p + step * d).collect();
            let (tr, tc) = problem.reduced_residual(&trial, ions, config);
            let tn = norm(&tr);
            if tn.is_finite() && (tn <= (1.0 - 1e-4 * step) * r_norm || converged(tn, &trial)) {
                accepted = Some((trial, tr, tn, tc));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, tr, tn, tc)) = accepted else {
            return Err(PbError::NewtonDiverged { iterations, history });
        };
        phi = trial;
        r = tr;
        r_norm = tn;
        clamped = tc;
        history.push(r_norm);
        log::debug!("newton iteration {iterations}: residual {r_norm:e}, step {step}");
    }
    Ok(PbSolution {
        field: BrokenField::new(problem.mesh.clone(), phi),
        iterations,
        residual_history: history,
        clamp_active: clamped,
    })
}

pub fn solve_micro_pb(
    mesh: Arc<BrokenMesh>,
    material: &MaterialModel,
    ions: &IonSystem,
    epsilon: f64,
    config: &NewtonConfig,
) -> Result<PbSolution, PbError> {
    solve_pb(&PbProblem::micro(mesh, material, epsilon), ions, config)
}

pub fn solve_macro_pb(
    mesh: Arc<BrokenMesh>,
    a0: &Tensor,
    porosity: f64,
    g_eff: f64,
    ions: &IonSystem,
    config: &NewtonConfig,
) -> Result<PbSolution, PbError> {
    solve_pb(&PbProblem::macroscopic(mesh, a0, porosity, g_eff), ions, config)
}

/// `c_s = exp(−z_s φ/κT)` on pore DOFs and `c_s = 1` on solid DOFs.
pub fn recover_concentrations(phi: &BrokenField, ions: &IonSystem) -> Vec<BrokenField> {
    ions.charges
        .iter()
        .map(|&z| {
            let values = phi
                .values
                .iter()
                .zip(phi.mesh.dof_region())
                .map(|(&p, &r)| match r {
                    Region::Pore => (-z * p / ions.kt).clamp(-RECOVERY_EXP_LIMIT, RECOVERY_EXP_LIMIT).exp(),
                    Region::Solid => 1.0,
                })
                .collect();
            BrokenField::new(phi.mesh.clone(), values)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyTerms {
    pub grad_sq: f64,
    pub jump_sq_over_eps: f64,
    pub l2_pore_sq: f64,
}

/// `‖∇φ‖²`, `(1/ε)‖[[φ]]‖²` and `‖φ‖²` on the pore.
pub fn energy_diagnostic(phi: &BrokenField, epsilon: f64) -> EnergyTerms {
    let mesh = &phi.mesh;
    EnergyTerms {
        grad_sq: grad_norm_sq(mesh, &phi.values),
        jump_sq_over_eps: jump_norm_sq(mesh, &phi.values) / epsilon,
        l2_pore_sq: l2_norm_sq(mesh, &phi.values, MassRegion::Pore),
    }
}

/// `min_ξ (−Σ z_s ξ e^{−z_s ξ})/ξ²` over `samples` evenly spaced `ξ ≠ 0` in `range`.
pub fn monotonicity_constant(ions: &IonSystem, range: (f64, f64), samples: usize) -> Result<f64, PbError> {
    let (a, b) = range;
    let n = samples.max(2);
    let mut k = f64::INFINITY;
    for i in 0..n {
        let xi = a + (b - a) * i as f64 / (n - 1) as f64;
        if xi.abs() < 1e-300 {
            continue;
        }
        let v: f64 = ions.charges.iter().map(|z| -z * xi * (-z * xi).exp()).sum();
        k = k.min(v / (xi * xi));
    }
    if !(k > 0.0) {
        return Err(PbError::NonPositive(k));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broken_mesh::build_domain_mesh;
    use crate::geometry::{build_paving, Aabb, CellGeometry};

    fn mesh() -> Arc<BrokenMesh> {
        let cell = CellGeometry::new(2, Aabb::new([0.25, 0.25], [0.75, 0.75]), 0.1).unwrap();
        let paved = build_paving(Aabb::unit(2), 0.5, cell, 0.2).unwrap();
        Arc::new(build_domain_mesh(&paved, 0.125).unwrap())
    }

    #[test]
    fn ion_validation() {
        assert!(IonSystem::new(vec![1.0, -1.0, 0.5], 1.0, 1e-12).is_err());
        assert!(IonSystem::new(vec![0.0, 0.0], 1.0, 1e-12).is_err());
        assert!(IonSystem::new(vec![1.0, -1.0], 0.0, 1e-12).is_err());
        assert!(IonSystem::new(vec![1.0, 1.0, -2.0], 1.0, 1e-12).is_ok());
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let mat = MaterialModel::new(1.0, 1.0, 2.0, 0.0).unwrap();
        let sol = solve_micro_pb(mesh(), &mat, &IonSystem::symmetric_pair(), 0.5, &NewtonConfig::default()).unwrap();
        assert!(sol.iterations <= 2);
        assert!(sol.field.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn newton_converges_quadratically() {
        let mat = MaterialModel::new(1.0, 1.0, 2.0, 5.0).unwrap();
        let sol = solve_micro_pb(mesh(), &mat, &IonSystem::symmetric_pair(), 0.5, &NewtonConfig::default()).unwrap();
        assert!(sol.residual_history.last().unwrap() <= &1e-10);
        assert!(!sol.clamp_active);
        assert!(sol.residual_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn concentrations() {
        let m = mesh();
        let phi = BrokenField::interpolate(m.clone(), |_, _| 0.5);
        let c = recover_concentrations(&phi, &IonSystem::symmetric_pair());
        for d in 0..m.dof_count() {
            if m.dof_region()[d] == Region::Pore {
                assert!((c[0].values[d] - (-0.5f64).exp()).abs() < 1e-15);
                assert!((c[0].values[d] * c[1].values[d] - 1.0).abs() < 1e-12);
            } else {
                assert_eq!((c[0].values[d], c[1].values[d]), (1.0, 1.0));
            }
        }
    }

    #[test]
    fn monotonicity_examples() {
        let k = monotonicity_constant(&IonSystem::symmetric_pair(), (-3.0, 3.0), 601).unwrap();
        assert!(k >= 2.0 - 1e-9);
        let ions = IonSystem::new(vec![2.0, -1.0, -1.0], 1.0, 1e-12).unwrap();
        let k = monotonicity_constant(&ions, (-1e-3, 1e-3), 11).unwrap();
        assert!((k - 6.0).abs() < 1e-2);
    }
}
