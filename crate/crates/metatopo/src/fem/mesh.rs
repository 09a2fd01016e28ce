//! Regular grid of square bilinear elements.
//!
//! Conventions used throughout the crate:
//!
//! - nodes are numbered column-major: node `(ix, iy)` has index
//!   `ix * (nely + 1) + iy`, with `iy = 0` on the bottom edge and y up;
//! - each node carries two DOFs, `2 * node` (x) and `2 * node + 1` (y);
//! - elements are numbered column-major as well: `e = ex * nely + ey`;
//! - element edge length is 1, so the domain spans `[0, nelx] x [0, nely]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Regular `nelx x nely` grid of unit-square bilinear elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discretization {
    nelx: usize,
    nely: usize,
}

impl Discretization {
    pub fn new(nelx: usize, nely: usize) -> Self {
        assert!(nelx > 0 && nely > 0, "grid dimensions must be positive");
        Self { nelx, nely }
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn num_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn num_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nelx && iy <= self.nely);
        ix * (self.nely + 1) + iy
    }

    pub fn element_index(&self, ex: usize, ey: usize) -> usize {
        debug_assert!(ex < self.nelx && ey < self.nely);
        ex * self.nely + ey
    }

    /// Grid position `(ex, ey)` of element `e`.
    pub fn element_pos(&self, e: usize) -> (usize, usize) {
        (e / self.nely, e % self.nely)
    }

    /// The 8 global DOFs of element `e`, nodes ordered counter-clockwise
    /// from the bottom-left corner: `[u1 v1 u2 v2 u3 v3 u4 v4]`.
    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let (ex, ey) = self.element_pos(e);
        let n1 = self.node_index(ex, ey);
        let n2 = self.node_index(ex + 1, ey);
        let n3 = self.node_index(ex + 1, ey + 1);
        let n4 = self.node_index(ex, ey + 1);
        [
            2 * n1,
            2 * n1 + 1,
            2 * n2,
            2 * n2 + 1,
            2 * n3,
            2 * n3 + 1,
            2 * n4,
            2 * n4 + 1,
        ]
    }

    /// Element centroid in element units, i.e. `(ex + 0.5, ey + 0.5)`.
    pub fn centroid(&self, e: usize) -> (f64, f64) {
        let (ex, ey) = self.element_pos(e);
        (ex as f64 + 0.5, ey as f64 + 0.5)
    }

    /// Centroid coordinates of all elements with the domain bounding box
    /// mapped onto `[-1, 1]^2`. Row `e` holds `(x_e, y_e)`.
    pub fn centroids_normalized(&self) -> Array2<f64> {
        let n = self.num_elements();
        let mut out = Array2::zeros((n, 2));
        for e in 0..n {
            let (cx, cy) = self.centroid(e);
            out[[e, 0]] = 2.0 * cx / self.nelx as f64 - 1.0;
            out[[e, 1]] = 2.0 * cy / self.nely as f64 - 1.0;
        }
        out
    }

    pub fn is_boundary_node(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix == self.nelx || iy == self.nely
    }

    /// Node indices on the domain boundary, ascending.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for ix in 0..=self.nelx {
            for iy in 0..=self.nely {
                if self.is_boundary_node(ix, iy) {
                    out.push(self.node_index(ix, iy));
                }
            }
        }
        out
    }
}
