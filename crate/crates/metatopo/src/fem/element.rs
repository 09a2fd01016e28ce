//! Closed-form stiffness matrix of the unit-square bilinear quadrilateral.

/// Stiffness matrix of a 4-node bilinear plane-stress element with unit
/// Young's modulus, unit thickness and unit edge length, for the
/// counter-clockwise node order `(0,0), (1,0), (1,1), (0,1)` and DOF order
/// `[u1 v1 u2 v2 u3 v3 u4 v4]`.
///
/// Entries are the exact integrals of `B^T D B` over the element, expressed
/// through eight constants; symmetric and positive semidefinite with the
/// three rigid-body modes in the null space.
pub fn element_stiffness(nu: f64) -> [[f64; 8]; 8] {
    assert!(nu > -1.0 && nu < 0.5, "Poisson ratio out of range");
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    // index pattern of the eight constants (1-based in the classic tables)
    const IDX: [[usize; 8]; 8] = [
        [1, 2, 3, 4, 5, 6, 7, 8],
        [2, 1, 8, 7, 6, 5, 4, 3],
        [3, 8, 1, 6, 7, 4, 5, 2],
        [4, 7, 6, 1, 8, 3, 2, 5],
        [5, 6, 7, 8, 1, 2, 3, 4],
        [6, 5, 4, 3, 2, 1, 8, 7],
        [7, 4, 5, 2, 3, 8, 1, 6],
        [8, 3, 2, 5, 4, 7, 6, 1],
    ];
    let scale = 1.0 / (1.0 - nu * nu);
    let mut ke = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            ke[i][j] = scale * k[IDX[i][j] - 1];
        }
    }
    ke
}

/// `u^T K u` for an element DOF vector, with `K` the unit-modulus matrix.
pub fn unit_energy(ke: &[[f64; 8]; 8], ue: &[f64; 8]) -> f64 {
    let mut acc = 0.0;
    for i in 0..8 {
        let mut row = 0.0;
        for j in 0..8 {
            row += ke[i][j] * ue[j];
        }
        acc += ue[i] * row;
    }
    acc
}
