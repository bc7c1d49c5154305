//! Structured meshes with duplicated interface degrees of freedom.
//!
//! Every lattice vertex on `∂ω` carries two DOFs, a pore copy (plus side)
//! and a solid copy (minus side). Elements pick the copy of their own
//! region, so fields are continuous inside each phase and may jump across
//! the interface. Cell meshes can additionally pair opposite faces of `Υ`
//! for periodic problems.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::element::{facet_rule, facet_shape, nodes_per_element, shape, NODES_1D, NODES_2D};
use crate::geometry::{CellGeometry, PavedDomain, Point};

/// Coordinate matching tolerance relative to the domain diameter.
pub const MESH_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh width {h} does not divide the unit cell into an integer number of elements")]
    InvalidResolution { h: f64 },
    #[error("inclusion corner {coord} is not a lattice point at resolution h = {h}")]
    MisalignedInclusion { coord: f64, h: f64 },
    #[error("domain is not a union of whole cells at epsilon = {epsilon}")]
    NonConformingDomain { epsilon: f64 },
    #[error("mesh dump line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Solid,
    Pore,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Solid => "solid",
            Region::Pore => "pore",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "solid" => Some(Region::Solid),
            "pore" => Some(Region::Pore),
            _ => None,
        }
    }
}

/// Uniform lattice of `cells[0] × cells[1]` elements of width `h`.
/// In one dimension `cells[1]` is zero and there is a single element row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub dim: usize,
    pub origin: Point,
    pub h: f64,
    pub cells: [usize; 2],
}

impl Lattice {
    pub fn vertex_dims(&self) -> [usize; 2] {
        [self.cells[0] + 1, if self.dim == 1 { 1 } else { self.cells[1] + 1 }]
    }

    pub fn element_dims(&self) -> [usize; 2] {
        [self.cells[0], if self.dim == 1 { 1 } else { self.cells[1] }]
    }

    pub fn vertex_coord(&self, v: [usize; 2]) -> Point {
        let y = if self.dim == 1 { 0.0 } else { self.origin[1] + v[1] as f64 * self.h };
        [self.origin[0] + v[0] as f64 * self.h, y]
    }

    fn vertex_index(&self, v: [usize; 2]) -> usize {
        v[1] * self.vertex_dims()[0] + v[0]
    }

    /// Lattice vertices of element `e`, in reference-node order.
    pub fn element_vertices(&self, e: [usize; 2]) -> Vec<[usize; 2]> {
        let nodes: &[[f64; 2]] = if self.dim == 1 { &NODES_1D } else { &NODES_2D };
        nodes
            .iter()
            .map(|n| [e[0] + n[0] as usize, e[1] + n[1] as usize])
            .collect()
    }

    fn is_boundary_vertex(&self, v: [usize; 2]) -> bool {
        let on_x = v[0] == 0 || v[0] == self.cells[0];
        let on_y = self.dim == 2 && (v[1] == 0 || v[1] == self.cells[1]);
        on_x || on_y
    }

    fn diameter(&self) -> f64 {
        let lx = self.cells[0] as f64 * self.h;
        let ly = self.cells[1] as f64 * self.h;
        (lx * lx + ly * ly).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub region: Region,
    /// DOFs in reference-node order; only the first `2^dim` entries are used.
    pub dofs: [usize; 4],
    pub lattice: [usize; 2],
}

/// Two coincident copies of an interface facet.
///
/// `plus` lists the pore-side DOFs, `minus` the solid-side DOFs in the same
/// geometric order; `normal` points from the solid into the pore.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetPair {
    pub plus: [usize; 2],
    pub minus: [usize; 2],
    pub normal: Point,
    pub endpoints: [Point; 2],
    /// Facet length in 2D, 1 (counting measure) in 1D.
    pub measure: f64,
    pub plus_element: usize,
    pub minus_element: usize,
}

impl FacetPair {
    /// Physical point at facet parameter `t ∈ [0,1]`.
    pub fn point(&self, t: f64) -> Point {
        let [a, b] = self.endpoints;
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokenMesh {
    lattice: Lattice,
    coords: Vec<Point>,
    dof_region: Vec<Region>,
    dof_vertex: Vec<[usize; 2]>,
    /// Per lattice vertex: (pore copy, solid copy). Equal for single-DOF vertices.
    vertex_dofs: Vec<(Option<usize>, Option<usize>)>,
    elements: Vec<Element>,
    facets: Vec<FacetPair>,
    dirichlet: Vec<usize>,
    periodic_pairs: Vec<(usize, usize)>,
    broken: bool,
    /// Elements per cell edge, used to map domain DOFs to cell DOFs.
    cell_resolution: usize,
}

impl BrokenMesh {
    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn h(&self) -> f64 {
        self.lattice.h
    }

    pub fn dof_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn dof_region(&self) -> &[Region] {
        &self.dof_region
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn facets(&self) -> &[FacetPair] {
        &self.facets
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn periodic_pairs(&self) -> &[(usize, usize)] {
        &self.periodic_pairs
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    pub fn nodes_per_element(&self) -> usize {
        nodes_per_element(self.dim())
    }

    pub fn element_dofs<'a>(&self, e: &'a Element) -> &'a [usize] {
        &e.dofs[..self.nodes_per_element()]
    }

    pub fn element_origin(&self, e: &Element) -> Point {
        self.lattice.vertex_coord(e.lattice)
    }

    /// Physical coordinates of a reference point inside element `e`.
    pub fn map_point(&self, e: &Element, xi: [f64; 2]) -> Point {
        let o = self.element_origin(e);
        let h = self.lattice.h;
        if self.dim() == 1 {
            [o[0] + h * xi[0], 0.0]
        } else {
            [o[0] + h * xi[0], o[1] + h * xi[1]]
        }
    }

    /// Element volume `h^dim`.
    pub fn element_measure(&self) -> f64 {
        self.lattice.h.powi(self.dim() as i32)
    }

    /// DOF of the given region copy at a lattice vertex.
    pub fn dof_at(&self, vertex: [usize; 2], region: Region) -> Option<usize> {
        let (pore, solid) = self.vertex_dofs[self.lattice.vertex_index(vertex)];
        match region {
            Region::Pore => pore.or(solid),
            Region::Solid => solid.or(pore),
        }
    }

    pub fn dof_vertex(&self, dof: usize) -> [usize; 2] {
        self.dof_vertex[dof]
    }

    /// Maps a DOF of this (domain) mesh to the DOF of the periodic cell mesh
    /// at the same cell-local lattice position and on the same interface side.
    pub fn cell_dof(&self, dof: usize, cell_mesh: &BrokenMesh) -> usize {
        let m = self.cell_resolution;
        let v = self.dof_vertex[dof];
        let local = [v[0] % m, if self.dim() == 1 { 0 } else { v[1] % m }];
        cell_mesh
            .dof_at(local, self.dof_region[dof])
            .expect("cell mesh covers every local lattice vertex")
    }

    pub fn cell_resolution(&self) -> usize {
        self.cell_resolution
    }

    /// Value of a nodal field inside element `e` at reference point `xi`.
    pub fn eval_in_element(&self, values: &[f64], e: &Element, xi: [f64; 2]) -> f64 {
        let s = shape(self.dim(), xi);
        self.element_dofs(e)
            .iter()
            .zip(s.values.iter())
            .map(|(&d, &w)| w * values[d])
            .sum()
    }

    /// Physical gradient of a nodal field inside element `e` at `xi`.
    pub fn grad_in_element(&self, values: &[f64], e: &Element, xi: [f64; 2]) -> [f64; 2] {
        let s = shape(self.dim(), xi);
        let inv_h = 1.0 / self.lattice.h;
        let mut g = [0.0; 2];
        for (k, &d) in self.element_dofs(e).iter().enumerate() {
            g[0] += values[d] * s.grads[k][0] * inv_h;
            g[1] += values[d] * s.grads[k][1] * inv_h;
        }
        g
    }

    /// Plain-text dump of vertices, elements and facet pairs.
    pub fn dump(&self) -> MeshDump {
        let npe = self.nodes_per_element();
        let nf = if self.dim() == 1 { 1 } else { 2 };
        MeshDump {
            dim: self.dim(),
            vertices: self.coords.clone(),
            elements: self
                .elements
                .iter()
                .map(|e| (e.region, e.dofs[..npe].to_vec()))
                .collect(),
            facets: self
                .facets
                .iter()
                .map(|f| (f.plus[..nf].to_vec(), f.minus[..nf].to_vec(), f.normal))
                .collect(),
        }
    }
}

/// Nodal field on a broken mesh.
#[derive(Debug, Clone)]
pub struct BrokenField {
    pub mesh: Arc<BrokenMesh>,
    pub values: Vec<f64>,
}

impl BrokenField {
    pub fn new(mesh: Arc<BrokenMesh>, values: Vec<f64>) -> Self {
        assert_eq!(mesh.dof_count(), values.len(), "field length must match DOF count");
        Self { mesh, values }
    }

    pub fn zeros(mesh: Arc<BrokenMesh>) -> Self {
        let n = mesh.dof_count();
        Self::new(mesh, vec![0.0; n])
    }

    /// Nodal interpolant of a function that may differ per region.
    pub fn interpolate(mesh: Arc<BrokenMesh>, f: impl Fn(&Point, Region) -> f64) -> Self {
        let values = mesh
            .coords()
            .iter()
            .zip(mesh.dof_region())
            .map(|(x, &r)| f(x, r))
            .collect();
        Self::new(mesh, values)
    }

    pub fn same_mesh(&self, other: &BrokenField) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }
}

/// One-sided traces and their jump `[[ξ]] = ξ⁺ − ξ⁻`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpTrace {
    pub plus: f64,
    pub minus: f64,
    pub jump: f64,
}

/// Traces of `field` on facet pair `facet` at facet parameter `t ∈ [0,1]`.
pub fn jump_trace(field: &BrokenField, facet: usize, t: f64) -> JumpTrace {
    let mesh = &field.mesh;
    let f = &mesh.facets()[facet];
    let w = facet_shape(mesh.dim(), t);
    let nf = if mesh.dim() == 1 { 1 } else { 2 };
    let mut plus = 0.0;
    let mut minus = 0.0;
    for k in 0..nf {
        plus += w[k] * field.values[f.plus[k]];
        minus += w[k] * field.values[f.minus[k]];
    }
    JumpTrace {
        plus,
        minus,
        jump: plus - minus,
    }
}

/// Facet parameters and weights of the facet quadrature rule.
pub fn facet_quadrature(dim: usize) -> Vec<(f64, f64)> {
    facet_rule(dim)
}

/// Number of elements per cell edge at width `h`, if `h` resolves the inclusion.
pub fn check_cell_resolution(cell: &CellGeometry, h: f64) -> Result<usize, MeshError> {
    let n = 1.0 / h;
    let m = n.round();
    if !(h > 0.0) || m < 1.0 || (n - m).abs() > 1e-9 * m {
        return Err(MeshError::InvalidResolution { h });
    }
    let inc = cell.inclusion();
    for axis in 0..cell.dim() {
        for &c in &[inc.lower[axis], inc.upper[axis]] {
            let t = c * m;
            if (t - t.round()).abs() > 1e-9 * m {
                return Err(MeshError::MisalignedInclusion { coord: c, h });
            }
        }
    }
    Ok(m as usize)
}

/// Mesh of the unit cell at width `h`; element edges align with `∂ω`.
pub fn build_cell_mesh(
    cell: &CellGeometry,
    h: f64,
    periodic: bool,
    broken: bool,
) -> Result<BrokenMesh, MeshError> {
    let m = check_cell_resolution(cell, h)?;
    let dim = cell.dim();
    let lattice = Lattice {
        dim,
        origin: [0.0, 0.0],
        h: 1.0 / m as f64,
        cells: [m, if dim == 1 { 0 } else { m }],
    };
    let region = |e: [usize; 2]| {
        let y = [
            (e[0] as f64 + 0.5) / m as f64,
            if dim == 1 { 0.0 } else { (e[1] as f64 + 0.5) / m as f64 },
        ];
        if cell.in_inclusion(&y) {
            Region::Solid
        } else {
            Region::Pore
        }
    };
    Ok(build_structured(lattice, region, broken, periodic, false, m))
}

/// Mesh of the paved domain: each whole cell carries a copy of the cell
/// mesh at resolution `h_cell`, stitched continuously across cell faces.
/// Only retained cells contain an inclusion. All `∂Ω` DOFs are Dirichlet.
pub fn build_domain_mesh(paved: &PavedDomain, h_cell: f64) -> Result<BrokenMesh, MeshError> {
    let m = check_cell_resolution(&paved.cell, h_cell)?;
    if !paved.is_whole_cell_union() {
        return Err(MeshError::NonConformingDomain {
            epsilon: paved.epsilon,
        });
    }
    let dim = paved.dim();
    let eps = paved.epsilon;
    let n_tiles = |axis: usize| (paved.tile_range[axis][1] - paved.tile_range[axis][0] + 1) as usize;
    let lattice = Lattice {
        dim,
        origin: paved.domain.lower,
        h: eps / m as f64,
        cells: [n_tiles(0) * m, if dim == 1 { 0 } else { n_tiles(1) * m }],
    };
    let region = |e: [usize; 2]| {
        let tile = [
            paved.tile_range[0][0] + (e[0] / m) as i64,
            if dim == 1 { 0 } else { paved.tile_range[1][0] + (e[1] / m) as i64 },
        ];
        let y = [
            ((e[0] % m) as f64 + 0.5) / m as f64,
            if dim == 1 { 0.0 } else { ((e[1] % m) as f64 + 0.5) / m as f64 },
        ];
        if paved.is_retained(tile) && paved.cell.in_inclusion(&y) {
            Region::Solid
        } else {
            Region::Pore
        }
    };
    Ok(build_structured(lattice, region, true, false, true, m))
}

/// Continuous single-phase mesh of a box, used for the homogenized problem.
pub fn build_box_mesh(dim: usize, lower: Point, upper: Point, h: f64) -> Result<BrokenMesh, MeshError> {
    let count = |axis: usize| -> Result<usize, MeshError> {
        let n = (upper[axis] - lower[axis]) / h;
        let m = n.round();
        if m < 1.0 || (n - m).abs() > 1e-9 * m {
            return Err(MeshError::InvalidResolution { h });
        }
        Ok(m as usize)
    };
    let lattice = Lattice {
        dim,
        origin: lower,
        h,
        cells: [count(0)?, if dim == 1 { 0 } else { count(1)? }],
    };
    Ok(build_structured(lattice, |_| Region::Pore, false, false, true, usize::MAX))
}

fn build_structured(
    lattice: Lattice,
    region_of: impl Fn([usize; 2]) -> Region,
    broken: bool,
    periodic: bool,
    dirichlet: bool,
    cell_resolution: usize,
) -> BrokenMesh {
    let dim = lattice.dim;
    let [enx, eny] = lattice.element_dims();
    let [vnx, vny] = lattice.vertex_dims();

    let mut regions = Vec::with_capacity(enx * eny);
    for ej in 0..eny {
        for ei in 0..enx {
            regions.push(region_of([ei, ej]));
        }
    }
    let elem_region = |ei: usize, ej: usize| regions[ej * enx + ei];

    let mut coords = Vec::new();
    let mut dof_region = Vec::new();
    let mut dof_vertex = Vec::new();
    let mut vertex_dofs = Vec::with_capacity(vnx * vny);
    for vj in 0..vny {
        for vi in 0..vnx {
            let (mut has_pore, mut has_solid) = (false, false);
            let ej_range = if dim == 1 { 0..1 } else { vj.saturating_sub(1)..(vj + 1).min(eny) };
            for ej in ej_range {
                for ei in vi.saturating_sub(1)..(vi + 1).min(enx) {
                    match elem_region(ei, ej) {
                        Region::Pore => has_pore = true,
                        Region::Solid => has_solid = true,
                    }
                }
            }
            let x = lattice.vertex_coord([vi, vj]);
            let mut push = |r: Region| {
                coords.push(x);
                dof_region.push(r);
                dof_vertex.push([vi, vj]);
                coords.len() - 1
            };
            let entry = if has_pore && has_solid && broken {
                let p = push(Region::Pore);
                let s = push(Region::Solid);
                (Some(p), Some(s))
            } else {
                let r = if has_pore { Region::Pore } else { Region::Solid };
                let d = push(r);
                (Some(d), Some(d))
            };
            vertex_dofs.push(entry);
        }
    }

    let dof_for = |v: [usize; 2], r: Region| -> usize {
        let (p, s) = vertex_dofs[v[1] * vnx + v[0]];
        match r {
            Region::Pore => p.unwrap(),
            Region::Solid => s.unwrap(),
        }
    };

    let mut elements = Vec::with_capacity(enx * eny);
    for ej in 0..eny {
        for ei in 0..enx {
            let region = elem_region(ei, ej);
            let mut dofs = [0usize; 4];
            for (k, v) in lattice.element_vertices([ei, ej]).into_iter().enumerate() {
                dofs[k] = dof_for(v, region);
            }
            elements.push(Element {
                region,
                dofs,
                lattice: [ei, ej],
            });
        }
    }

    let mut facets = Vec::new();
    let h = lattice.h;
    let mut add_facet = |a: usize, b: usize, axis: usize, verts: [[usize; 2]; 2]| {
        let (ra, rb) = (elements[a].region, elements[b].region);
        if ra == rb {
            return;
        }
        // `a` precedes `b` along `axis`; the normal points from solid to pore
        let (solid, pore, sign) = if ra == Region::Solid { (a, b, 1.0) } else { (b, a, -1.0) };
        let mut normal = [0.0, 0.0];
        normal[axis] = sign;
        let nf = if dim == 1 { 1 } else { 2 };
        let mut plus = [0usize; 2];
        let mut minus = [0usize; 2];
        for k in 0..nf {
            plus[k] = dof_for(verts[k], Region::Pore);
            minus[k] = dof_for(verts[k], Region::Solid);
        }
        if dim == 1 {
            plus[1] = plus[0];
            minus[1] = minus[0];
        }
        facets.push(FacetPair {
            plus,
            minus,
            normal,
            endpoints: [lattice.vertex_coord(verts[0]), lattice.vertex_coord(verts[1])],
            measure: if dim == 1 { 1.0 } else { h },
            plus_element: pore,
            minus_element: solid,
        });
    };
    for ej in 0..eny {
        for ei in 0..enx {
            let a = ej * enx + ei;
            if ei + 1 < enx {
                let v0 = [ei + 1, ej];
                let v1 = if dim == 1 { v0 } else { [ei + 1, ej + 1] };
                add_facet(a, a + 1, 0, [v0, v1]);
            }
            if dim == 2 && ej + 1 < eny {
                add_facet(a, a + enx, 1, [[ei, ej + 1], [ei + 1, ej + 1]]);
            }
        }
    }

    let mut dirichlet_dofs = Vec::new();
    if dirichlet {
        for (d, v) in dof_vertex.iter().enumerate() {
            if lattice.is_boundary_vertex(*v) {
                dirichlet_dofs.push(d);
            }
        }
    }

    let mut periodic_pairs = Vec::new();
    if periodic {
        for (d, v) in dof_vertex.iter().enumerate() {
            let mut master = *v;
            if v[0] == lattice.cells[0] {
                master[0] = 0;
            }
            if dim == 2 && v[1] == lattice.cells[1] {
                master[1] = 0;
            }
            if master != *v {
                let (p, _) = vertex_dofs[master[1] * vnx + master[0]];
                let m = p.unwrap();
                debug_assert!(
                    (coords[m][0] - coords[d][0]).abs() % 1.0 <= MESH_TOL * lattice.diameter().max(1.0)
                        || ((coords[m][0] - coords[d][0]).abs() - 1.0).abs() <= MESH_TOL
                );
                periodic_pairs.push((m, d));
            }
        }
    }

    BrokenMesh {
        lattice,
        coords,
        dof_region,
        dof_vertex,
        vertex_dofs,
        elements,
        facets,
        dirichlet: dirichlet_dofs,
        periodic_pairs,
        broken,
        cell_resolution,
    }
}

/// Serializable view of a mesh: `dim n_vertices n_elements n_facetpairs`,
/// then `id x [y]`, `id region v0 v1 [v2 v3]` and
/// `id plus_dofs... | minus_dofs... | nx [ny]` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshDump {
    pub dim: usize,
    pub vertices: Vec<Point>,
    pub elements: Vec<(Region, Vec<usize>)>,
    pub facets: Vec<(Vec<usize>, Vec<usize>, Point)>,
}

impl MeshDump {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = self.dim;
        let _ = writeln!(
            s,
            "{} {} {} {}",
            d,
            self.vertices.len(),
            self.elements.len(),
            self.facets.len()
        );
        for (i, x) in self.vertices.iter().enumerate() {
            if d == 1 {
                let _ = writeln!(s, "{} {:?}", i, x[0]);
            } else {
                let _ = writeln!(s, "{} {:?} {:?}", i, x[0], x[1]);
            }
        }
        for (i, (r, v)) in self.elements.iter().enumerate() {
            let verts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{} {} {}", i, r.as_str(), verts.join(" "));
        }
        for (i, (p, m, n)) in self.facets.iter().enumerate() {
            let join = |v: &Vec<usize>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            let normal = if d == 1 { format!("{:?}", n[0]) } else { format!("{:?} {:?}", n[0], n[1]) };
            let _ = writeln!(s, "{} {} | {} | {}", i, join(p), join(m), normal);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let err = |line: usize, message: &str| MeshError::Parse {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (ln, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(ln, "bad header field")))
            .collect::<Result<_, _>>()?;
        if head.len() != 4 || !(1..=2).contains(&head[0]) {
            return Err(err(ln, "header must be `dim n_vertices n_elements n_facetpairs`"));
        }
        let (dim, nv, ne, nf) = (head[0], head[1], head[2], head[3]);
        let float = |ln: usize, t: &str| t.parse::<f64>().map_err(|_| err(ln, "bad float"));
        let int = |ln: usize, t: &str| t.parse::<usize>().map_err(|_| err(ln, "bad integer"));

        let mut vertices = Vec::with_capacity(nv);
        for i in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated vertex block"))?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 1 + dim || int(ln, tok[0])? != i {
                return Err(err(ln, "malformed vertex line"));
            }
            let y = if dim == 2 { float(ln, tok[2])? } else { 0.0 };
            vertices.push([float(ln, tok[1])?, y]);
        }
        let mut elements = Vec::with_capacity(ne);
        for i in 0..ne {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated element block"))?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 2 + (1 << dim) || int(ln, tok[0])? != i {
                return Err(err(ln, "malformed element line"));
            }
            let r = Region::parse(tok[1]).ok_or_else(|| err(ln, "unknown region"))?;
            let v = tok[2..].iter().map(|t| int(ln, t)).collect::<Result<_, _>>()?;
            elements.push((r, v));
        }
        let mut facets = Vec::with_capacity(nf);
        for i in 0..nf {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated facet block"))?;
            let parts: Vec<&str> = l.split('|').collect();
            if parts.len() != 3 {
                return Err(err(ln, "facet line needs two `|` separators"));
            }
            let mut first = parts[0].split_whitespace();
            if int(ln, first.next().unwrap_or(""))? != i {
                return Err(err(ln, "facet id out of order"));
            }
            let plus: Vec<usize> = first.map(|t| int(ln, t)).collect::<Result<_, _>>()?;
            let minus: Vec<usize> = parts[1].split_whitespace().map(|t| int(ln, t)).collect::<Result<_, _>>()?;
            let n: Vec<f64> = parts[2].split_whitespace().map(|t| float(ln, t)).collect::<Result<_, _>>()?;
            if n.len() != dim || plus.len() != minus.len() {
                return Err(err(ln, "malformed facet line"));
            }
            facets.push((plus, minus, [n[0], if dim == 2 { n[1] } else { 0.0 }]));
        }
        Ok(Self {
            dim,
            vertices,
            elements,
            facets,
        })
    }
}
