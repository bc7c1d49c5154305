//! Unit cell with a box inclusion, the ε-paving of a box domain and the
//! measure bookkeeping shared by every other module.
//!
//! Points are stored as `[f64; 2]`; in one dimension the second component
//! is ignored and kept at zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

/// Relative tolerance used when deciding whether a box sits on the ε-lattice.
const LATTICE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension must be 1 or 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("inclusion must satisfy lower < upper on axis {axis}")]
    DegenerateInclusion { axis: usize },
    #[error("inclusion is closer than {clearance} to the cell boundary on axis {axis}")]
    InsufficientClearance { axis: usize, clearance: f64 },
    #[error("clearance must be positive, got {0}")]
    NonPositiveClearance(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("domain box is degenerate")]
    DegenerateDomain,
    #[error("no cell at epsilon = {epsilon} satisfies the boundary gap; reduce epsilon")]
    EmptyPaving { epsilon: f64 },
}

/// Axis-aligned box `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lower: Point,
    pub upper: Point,
}

impl Aabb {
    pub fn new(lower: Point, upper: Point) -> Self {
        Self { lower, upper }
    }

    /// The unit box `(0,1)^dim`.
    pub fn unit(dim: usize) -> Self {
        let upper = if dim == 1 { [1.0, 0.0] } else { [1.0, 1.0] };
        Self::new([0.0, 0.0], upper)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, dim: usize, x: &Point, tol: f64) -> bool {
        (0..dim).all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol)
    }
}

/// Unit cell `Υ = (0,1)^dim` holding one box-shaped solid inclusion `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    dim: usize,
    inclusion: Aabb,
    clearance: f64,
}

impl CellGeometry {
    pub fn new(dim: usize, inclusion: Aabb, clearance: f64) -> Result<Self, GeometryError> {
        if !(1..=2).contains(&dim) {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        if !(clearance > 0.0) {
            return Err(GeometryError::NonPositiveClearance(clearance));
        }
        let mut inclusion = inclusion;
        if dim == 1 {
            inclusion.lower[1] = 0.0;
            inclusion.upper[1] = 0.0;
        }
        for axis in 0..dim {
            let (lo, hi) = (inclusion.lower[axis], inclusion.upper[axis]);
            if !(lo < hi) {
                return Err(GeometryError::DegenerateInclusion { axis });
            }
            if lo < clearance || 1.0 - hi < clearance {
                return Err(GeometryError::InsufficientClearance { axis, clearance });
            }
        }
        Ok(Self {
            dim,
            inclusion,
            clearance,
        })
    }

    /// Centered square (or interval) inclusion `(a, 1-a)^dim`.
    pub fn centered(dim: usize, margin: f64) -> Result<Self, GeometryError> {
        let hi = 1.0 - margin;
        let upper = if dim == 1 { [hi, 0.0] } else { [hi, hi] };
        Self::new(dim, Aabb::new([margin, margin], upper), margin.min(0.1))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inclusion(&self) -> &Aabb {
        &self.inclusion
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    /// Whether the cell-local point `y` lies in the open inclusion.
    pub fn in_inclusion(&self, y: &Point) -> bool {
        (0..self.dim).all(|i| y[i] > self.inclusion.lower[i] && y[i] < self.inclusion.upper[i])
    }

    /// Distance from the inclusion to the faces of the unit cell.
    pub fn face_distance(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.inclusion.lower[i].min(1.0 - self.inclusion.upper[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `|ω|`, `|∂ω|` and `|Υ∖ω|` for a cell with `|Υ| = 1`.
///
/// In one dimension `|∂ω|` is the counting measure of the interface points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub vol_omega: f64,
    pub surf_omega: f64,
    pub vol_pore: f64,
}

impl Measures {
    /// Pore volume fraction `|Υ∖ω| / |Υ|`.
    pub fn porosity(&self) -> f64 {
        self.vol_pore
    }

    /// Interface density `|∂ω| / |Υ|`.
    pub fn surface_density(&self) -> f64 {
        self.surf_omega
    }
}

pub fn measures(cell: &CellGeometry) -> Measures {
    let inc = cell.inclusion();
    let (vol_omega, surf_omega) = match cell.dim() {
        1 => (inc.extent(0), 2.0),
        _ => {
            let (a, b) = (inc.extent(0), inc.extent(1));
            (a * b, 2.0 * (a + b))
        }
    };
    Measures {
        vol_omega,
        surf_omega,
        vol_pore: 1.0 - vol_omega,
    }
}

/// Splits `x` into the integer cell index `⌊x/ε⌋` and the fractional
/// coordinate `{x/ε} ∈ [0,1)^dim`. Lattice points map to `y = 0`.
pub fn decompose_coordinates(x: &[f64], epsilon: f64) -> (Vec<i64>, Vec<f64>) {
    x.iter()
        .map(|&xi| {
            let t = xi / epsilon;
            let mut k = t.floor();
            let mut y = t - k;
            // t slightly below an integer can round the fraction up to 1
            if y >= 1.0 {
                k += 1.0;
                y = 0.0;
            }
            (k as i64, y)
        })
        .unzip()
}

/// The ε-paving of a box domain.
///
/// `tiles` are all whole lattice cells contained in the domain; `retained`
/// lists the subset whose inclusion keeps the required gap from `∂Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct PavedDomain {
    pub cell: CellGeometry,
    pub epsilon: f64,
    pub domain: Aabb,
    pub boundary_gap: f64,
    pub tiles: Vec<[i64; 2]>,
    pub retained: Vec<[i64; 2]>,
    /// Tile index range `[first, last]` per axis (inclusive).
    pub tile_range: [[i64; 2]; 2],
}

impl PavedDomain {
    pub fn dim(&self) -> usize {
        self.cell.dim()
    }

    /// `N_ε`, the number of retained inclusions.
    pub fn n_cells(&self) -> usize {
        self.retained.len()
    }

    /// Whether the domain is exactly a union of lattice cells.
    pub fn is_whole_cell_union(&self) -> bool {
        (0..self.dim()).all(|i| {
            on_lattice(self.domain.lower[i], self.epsilon)
                && on_lattice(self.domain.upper[i], self.epsilon)
        })
    }

    pub fn is_retained(&self, tile: [i64; 2]) -> bool {
        self.retained.binary_search(&tile).is_ok()
    }

    /// Lower corner of the cell with index `p`.
    pub fn cell_origin(&self, p: [i64; 2]) -> Point {
        [p[0] as f64 * self.epsilon, p[1] as f64 * self.epsilon]
    }
}

fn on_lattice(x: f64, epsilon: f64) -> bool {
    let t = x / epsilon;
    (t - t.round()).abs() <= LATTICE_TOL * t.abs().max(1.0)
}

pub fn build_paving(
    domain: Aabb,
    epsilon: f64,
    cell: CellGeometry,
    boundary_gap: f64,
) -> Result<PavedDomain, GeometryError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(GeometryError::InvalidEpsilon(epsilon));
    }
    let dim = cell.dim();
    if (0..dim).any(|i| !(domain.extent(i) > 0.0)) {
        return Err(GeometryError::DegenerateDomain);
    }

    let mut tile_range = [[0i64, 0i64]; 2];
    for (axis, range) in tile_range.iter_mut().enumerate().take(dim) {
        let lo = domain.lower[axis] / epsilon;
        let hi = domain.upper[axis] / epsilon;
        let first = (lo - LATTICE_TOL * lo.abs().max(1.0)).ceil() as i64;
        let last = (hi + LATTICE_TOL * hi.abs().max(1.0)).floor() as i64 - 1;
        *range = [first, last];
    }

    let tol = LATTICE_TOL * epsilon;
    let inc = cell.inclusion();
    let mut tiles = Vec::new();
    let mut retained = Vec::new();
    let j_range = if dim == 1 { 0..=0 } else { tile_range[1][0]..=tile_range[1][1] };
    for j in j_range {
        for i in tile_range[0][0]..=tile_range[0][1] {
            let p = [i, j];
            tiles.push(p);
            let gap = (0..dim)
                .map(|axis| {
                    let lo = epsilon * (p[axis] as f64 + inc.lower[axis]);
                    let hi = epsilon * (p[axis] as f64 + inc.upper[axis]);
                    (lo - domain.lower[axis]).min(domain.upper[axis] - hi)
                })
                .fold(f64::INFINITY, f64::min);
            if gap >= boundary_gap * epsilon - tol {
                retained.push(p);
            }
        }
    }
    if retained.is_empty() {
        return Err(GeometryError::EmptyPaving { epsilon });
    }
    tiles.sort_unstable();
    retained.sort_unstable();
    Ok(PavedDomain {
        cell,
        epsilon,
        domain,
        boundary_gap,
        tiles,
        retained,
        tile_range,
    })
}
