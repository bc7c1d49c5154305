//! Multilinear reference elements on `[0,1]^dim` and tensor Gauss rules.

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // 1 / (2√3)

/// Two-point Gauss abscissae on `[0,1]`; each carries weight 1/2.
pub const GAUSS_1D: [f64; 2] = [0.5 - GAUSS_OFFSET, 0.5 + GAUSS_OFFSET];

/// Maximum number of nodes per element (Q1 quadrilateral).
pub const MAX_NODES: usize = 4;

/// Local node positions on the reference element, counter-clockwise.
pub const NODES_2D: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
pub const NODES_1D: [[f64; 2]; 2] = [[0.0, 0.0], [1.0, 0.0]];

pub fn nodes_per_element(dim: usize) -> usize {
    1 << dim
}

/// Shape values and reference gradients at a reference point.
#[derive(Debug, Clone, Copy)]
pub struct ShapeEval {
    pub values: [f64; MAX_NODES],
    pub grads: [[f64; 2]; MAX_NODES],
}

pub fn shape(dim: usize, xi: [f64; 2]) -> ShapeEval {
    let mut values = [0.0; MAX_NODES];
    let mut grads = [[0.0; 2]; MAX_NODES];
    if dim == 1 {
        values[0] = 1.0 - xi[0];
        values[1] = xi[0];
        grads[0] = [-1.0, 0.0];
        grads[1] = [1.0, 0.0];
    } else {
        let (s, t) = (xi[0], xi[1]);
        for (k, node) in NODES_2D.iter().enumerate() {
            let fx = if node[0] == 0.0 { 1.0 - s } else { s };
            let fy = if node[1] == 0.0 { 1.0 - t } else { t };
            let dx = if node[0] == 0.0 { -1.0 } else { 1.0 };
            let dy = if node[1] == 0.0 { -1.0 } else { 1.0 };
            values[k] = fx * fy;
            grads[k] = [dx * fy, fx * dy];
        }
    }
    ShapeEval { values, grads }
}

/// Reference quadrature point with its weight on the unit reference element.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub xi: [f64; 2],
    pub weight: f64,
}

/// Tensor two-point Gauss rule, exact for multilinear × multilinear integrands.
pub fn volume_rule(dim: usize) -> Vec<QuadPoint> {
    if dim == 1 {
        GAUSS_1D
            .iter()
            .map(|&a| QuadPoint {
                xi: [a, 0.0],
                weight: 0.5,
            })
            .collect()
    } else {
        let mut pts = Vec::with_capacity(4);
        for &b in &GAUSS_1D {
            for &a in &GAUSS_1D {
                pts.push(QuadPoint {
                    xi: [a, b],
                    weight: 0.25,
                });
            }
        }
        pts
    }
}

/// Rule on a facet parametrised by `t ∈ [0,1]`: two Gauss points on an edge,
/// a single exact evaluation on a 1D interface point.
pub fn facet_rule(dim: usize) -> Vec<(f64, f64)> {
    if dim == 1 {
        vec![(0.0, 1.0)]
    } else {
        GAUSS_1D.iter().map(|&t| (t, 0.5)).collect()
    }
}

/// Linear trace weights of the facet nodes at parameter `t`.
pub fn facet_shape(dim: usize, t: f64) -> [f64; 2] {
    if dim == 1 {
        [1.0, 0.0]
    } else {
        [1.0 - t, t]
    }
}
