//! Sparse operators, load vectors and quadrature norms on broken meshes.
//!
//! Element contributions are computed in parallel and merged in element
//! order, so assembled matrices are bitwise reproducible for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};
use thiserror::Error;

use crate::broken_mesh::{BrokenMesh, Element, Region};
use crate::element::{facet_rule, facet_shape, shape, volume_rule, MAX_NODES};
use crate::geometry::Point;

pub type Tensor = [[f64; 2]; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameter {field}: {constraint}")]
    Invalid {
        field: &'static str,
        constraint: String,
    },
}

/// Piecewise-constant isotropic permittivity with interface data `α`, `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub sigma_solid: f64,
    pub sigma_pore: f64,
    pub k_lower: f64,
    pub k_upper: f64,
    pub alpha: f64,
    pub g: f64,
}

impl MaterialModel {
    /// Material with the tightest admissible bounds `K_lower = min σ`, `K_upper = max σ`.
    pub fn new(sigma_solid: f64, sigma_pore: f64, alpha: f64, g: f64) -> Result<Self, MaterialError> {
        Self::with_bounds(
            sigma_solid,
            sigma_pore,
            sigma_solid.min(sigma_pore),
            sigma_solid.max(sigma_pore),
            alpha,
            g,
        )
    }

    pub fn with_bounds(
        sigma_solid: f64,
        sigma_pore: f64,
        k_lower: f64,
        k_upper: f64,
        alpha: f64,
        g: f64,
    ) -> Result<Self, MaterialError> {
        let m = Self {
            sigma_solid,
            sigma_pore,
            k_lower,
            k_upper,
            alpha,
            g,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let bad = |field, constraint: &str| {
            Err(MaterialError::Invalid {
                field,
                constraint: constraint.to_string(),
            })
        };
        if !(self.sigma_solid > 0.0 && self.sigma_solid.is_finite()) {
            return bad("sigma_solid", "must be positive and finite");
        }
        if !(self.sigma_pore > 0.0 && self.sigma_pore.is_finite()) {
            return bad("sigma_pore", "must be positive and finite");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be positive and finite");
        }
        if !self.g.is_finite() {
            return bad("g", "must be finite");
        }
        let lo = self.sigma_solid.min(self.sigma_pore);
        let hi = self.sigma_solid.max(self.sigma_pore);
        if !(self.k_lower > 0.0 && self.k_lower <= lo) {
            return bad("k_lower", "must satisfy 0 < k_lower <= min(sigma)");
        }
        if !(self.k_upper >= hi && self.k_upper.is_finite()) {
            return bad("k_upper", "must satisfy k_upper >= max(sigma)");
        }
        Ok(())
    }

    pub fn sigma(&self, region: Region) -> f64 {
        match region {
            Region::Solid => self.sigma_solid,
            Region::Pore => self.sigma_pore,
        }
    }

    pub fn tensor(&self, region: Region) -> Tensor {
        let s = self.sigma(region);
        [[s, 0.0], [0.0, s]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassRegion {
    Solid,
    Pore,
    All,
}

impl MassRegion {
    pub fn includes(self, r: Region) -> bool {
        match self {
            MassRegion::All => true,
            MassRegion::Solid => r == Region::Solid,
            MassRegion::Pore => r == Region::Pore,
        }
    }
}

type LocalMatrix = [[f64; MAX_NODES]; MAX_NODES];

/// Copies the upper triangle into the lower one so local blocks are bitwise symmetric.
fn mirror_upper(mut k: LocalMatrix, n: usize) -> LocalMatrix {
    for i in 0..n {
        for j in 0..i {
            k[i][j] = k[j][i];
        }
    }
    k
}

fn assemble_elements(
    mesh: &BrokenMesh,
    local: impl Fn(&Element) -> Option<LocalMatrix> + Sync,
) -> CsMat<f64> {
    let n = mesh.dof_count();
    let npe = mesh.nodes_per_element();
    let blocks: Vec<Option<LocalMatrix>> = mesh.elements().par_iter().map(&local).collect();
    let mut tri = TriMat::with_capacity((n, n), mesh.elements().len() * npe * npe);
    for (e, block) in mesh.elements().iter().zip(blocks) {
        if let Some(k) = block {
            let dofs = mesh.element_dofs(e);
            for a in 0..npe {
                for b in 0..npe {
                    tri.add_triplet(dofs[a], dofs[b], k[a][b]);
                }
            }
        }
    }
    tri.to_csr()
}

/// `∫ ∇ψ_iᵀ A ∇ψ_j` with `A` taken per element.
pub fn assemble_stiffness_with(mesh: &BrokenMesh, tensor: impl Fn(&Element) -> Tensor + Sync) -> CsMat<f64> {
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element();
    let h = mesh.h();
    let vol = mesh.element_measure();
    let rule = volume_rule(dim);
    assemble_elements(mesh, |e| {
        let a = tensor(e);
        let mut k = [[0.0; MAX_NODES]; MAX_NODES];
        for q in &rule {
            let s = shape(dim, q.xi);
            let w = q.weight * vol / (h * h);
            for i in 0..npe {
                let gi = s.grads[i];
                let agi = [a[0][0] * gi[0] + a[0][1] * gi[1], a[1][0] * gi[0] + a[1][1] * gi[1]];
                for j in i..npe {
                    let gj = s.grads[j];
                    k[i][j] += w * (gj[0] * agi[0] + gj[1] * agi[1]);
                }
            }
        }
        Some(mirror_upper(k, npe))
    })
}

pub fn assemble_stiffness(mesh: &BrokenMesh, material: &MaterialModel) -> CsMat<f64> {
    assemble_stiffness_with(mesh, |e| material.tensor(e.region))
}

/// Standard mass matrix restricted to elements of `region`.
pub fn assemble_mass(mesh: &BrokenMesh, region: MassRegion) -> CsMat<f64> {
    assemble_weighted_mass(mesh, region, |_, _| 1.0)
}

/// `∫ c(e, q) ψ_i ψ_j` over elements of `region`, with `c` evaluated per
/// element and volume quadrature point index.
pub fn assemble_weighted_mass(
    mesh: &BrokenMesh,
    region: MassRegion,
    coef: impl Fn(&Element, usize) -> f64 + Sync,
) -> CsMat<f64> {
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element();
    let vol = mesh.element_measure();
    let rule = volume_rule(dim);
    assemble_elements(mesh, |e| {
        if !region.includes(e.region) {
            return None;
        }
        let mut m = [[0.0; MAX_NODES]; MAX_NODES];
        for (qi, q) in rule.iter().enumerate() {
            let s = shape(dim, q.xi);
            let w = q.weight * vol * coef(e, qi);
            for i in 0..npe {
                for j in i..npe {
                    m[i][j] += w * s.values[i] * s.values[j];
                }
            }
        }
        Some(mirror_upper(m, npe))
    })
}

/// Signed trace coefficients of `[[ψ]]` on a facet at parameter `t`.
fn jump_coefficients(mesh: &BrokenMesh, facet: usize, t: f64) -> Vec<(usize, f64)> {
    let f = &mesh.facets()[facet];
    let s = facet_shape(mesh.dim(), t);
    let nf = if mesh.dim() == 1 { 1 } else { 2 };
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(2 * nf);
    let mut push = |d: usize, c: f64| {
        if let Some(entry) = out.iter_mut().find(|(e, _)| *e == d) {
            entry.1 += c;
        } else {
            out.push((d, c));
        }
    };
    for k in 0..nf {
        push(f.plus[k], s[k]);
        push(f.minus[k], -s[k]);
    }
    out.retain(|&(_, c)| c != 0.0);
    out
}

/// `weight · ∫_{∂ω} [[ψ_i]] [[ψ_j]] dS`.
pub fn assemble_interface_penalty(mesh: &BrokenMesh, weight: f64) -> CsMat<f64> {
    let n = mesh.dof_count();
    let mut tri = TriMat::new((n, n));
    if weight != 0.0 {
        let rule = facet_rule(mesh.dim());
        for (fi, f) in mesh.facets().iter().enumerate() {
            for &(t, w) in &rule {
                let c = jump_coefficients(mesh, fi, t);
                let scale = weight * w * f.measure;
                for (ia, &(a, ca)) in c.iter().enumerate() {
                    for &(b, cb) in &c[ia..] {
                        let v = scale * ca * cb;
                        tri.add_triplet(a, b, v);
                        if a != b {
                            tri.add_triplet(b, a, v);
                        }
                    }
                }
            }
        }
    }
    tri.to_csr()
}

/// `coefficient · ∫_{∂ω⁻} ψ_i⁻ dS`; only solid-side DOFs receive entries.
pub fn assemble_minus_boundary_source(mesh: &BrokenMesh, coefficient: f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.dof_count()];
    if coefficient == 0.0 {
        return b;
    }
    let rule = facet_rule(mesh.dim());
    let nf = if mesh.dim() == 1 { 1 } else { 2 };
    for f in mesh.facets() {
        for &(t, w) in &rule {
            let s = facet_shape(mesh.dim(), t);
            for k in 0..nf {
                b[f.minus[k]] += coefficient * w * f.measure * s[k];
            }
        }
    }
    b
}

/// `∫_region f ψ_i dx` with `f` sampled at physical quadrature points.
pub fn assemble_load(mesh: &BrokenMesh, region: MassRegion, f: impl Fn(&Point) -> f64 + Sync) -> Vec<f64> {
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element();
    let vol = mesh.element_measure();
    let rule = volume_rule(dim);
    let locals: Vec<Option<[f64; MAX_NODES]>> = mesh
        .elements()
        .par_iter()
        .map(|e| {
            if !region.includes(e.region) {
                return None;
            }
            let mut v = [0.0; MAX_NODES];
            for q in &rule {
                let s = shape(dim, q.xi);
                let fx = f(&mesh.map_point(e, q.xi));
                for i in 0..npe {
                    v[i] += q.weight * vol * fx * s.values[i];
                }
            }
            Some(v)
        })
        .collect();
    let mut b = vec![0.0; mesh.dof_count()];
    for (e, v) in mesh.elements().iter().zip(locals) {
        if let Some(v) = v {
            for (i, &d) in mesh.element_dofs(e).iter().enumerate() {
                b[d] += v[i];
            }
        }
    }
    b
}

/// `Σ_ij u_i M_ij v_j`.
pub fn bilinear(m: &CsMat<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for (row, vec) in m.outer_iterator().enumerate() {
        let mut r = 0.0;
        for (col, &a) in vec.iter() {
            r += a * v[col];
        }
        s += u[row] * r;
    }
    s
}

pub fn mat_vec(m: &CsMat<f64>, v: &[f64]) -> Vec<f64> {
    m.outer_iterator()
        .map(|row| row.iter().map(|(c, &a)| a * v[c]).sum())
        .collect()
}

/// Sums the volume integrand `f(element, xi, weight·|K|)` over elements.
fn integrate_elements(mesh: &BrokenMesh, region: MassRegion, f: impl Fn(&Element, [f64; 2]) -> f64 + Sync) -> f64 {
    let rule = volume_rule(mesh.dim());
    let vol = mesh.element_measure();
    let parts: Vec<f64> = mesh
        .elements()
        .par_iter()
        .map(|e| {
            if !region.includes(e.region) {
                return 0.0;
            }
            rule.iter().map(|q| q.weight * vol * f(e, q.xi)).sum()
        })
        .collect();
    parts.iter().sum()
}

/// `‖∇u‖²` over `Ω∖∂ω`.
pub fn grad_norm_sq(mesh: &BrokenMesh, u: &[f64]) -> f64 {
    integrate_elements(mesh, MassRegion::All, |e, xi| {
        let g = mesh.grad_in_element(u, e, xi);
        g[0] * g[0] + g[1] * g[1]
    })
}

/// `‖u‖²` over elements of `region`.
pub fn l2_norm_sq(mesh: &BrokenMesh, u: &[f64], region: MassRegion) -> f64 {
    integrate_elements(mesh, region, |e, xi| {
        let v = mesh.eval_in_element(u, e, xi);
        v * v
    })
}

/// `∫ u` over elements of `region`.
pub fn integral(mesh: &BrokenMesh, u: &[f64], region: MassRegion) -> f64 {
    integrate_elements(mesh, region, |e, xi| mesh.eval_in_element(u, e, xi))
}

/// `‖[[u]]‖²` over the interface.
pub fn jump_norm_sq(mesh: &BrokenMesh, u: &[f64]) -> f64 {
    let rule = facet_rule(mesh.dim());
    let mut s = 0.0;
    for (fi, f) in mesh.facets().iter().enumerate() {
        for &(t, w) in &rule {
            let j: f64 = jump_coefficients(mesh, fi, t).iter().map(|&(d, c)| c * u[d]).sum();
            s += w * f.measure * j * j;
        }
    }
    s
}
