//! 2D plane-stress linear-elasticity kernel on regular grids.
//!
//! Material stiffness follows the modified SIMP interpolation
//! `E(rho) = Emin + rho^p (E0 - Emin)`; equilibrium is solved on the reduced
//! system after eliminating fixed DOFs. Meshes up to 64x64 elements use a
//! banded Cholesky factorization, larger meshes a Jacobi-preconditioned
//! conjugate gradient. All operations are pure; concurrent solves on
//! distinct inputs are safe.

mod element;
mod mesh;
mod solver;

pub use element::element_stiffness;
pub use mesh::Discretization;
pub use solver::PCG_TOLERANCE;

use element::unit_energy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest element count still handled by the direct factorization.
pub const DIRECT_SOLVER_MAX_ELEMENTS: usize = 64 * 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FemError {
    /// Reduced stiffness matrix is not positive definite; the boundary
    /// conditions leave rigid-body motion (or the system is otherwise
    /// ill-defined).
    #[error("singular reduced system: boundary conditions do not constrain the structure")]
    Singular,
    /// Iterative solver exhausted its iteration cap.
    #[error("conjugate gradient failed to converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
}

/// SIMP material model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialModel {
    /// Solid Young's modulus.
    pub e0: f64,
    /// Void stiffness floor.
    pub emin: f64,
    /// Poisson ratio.
    pub nu: f64,
    /// Penalization exponent.
    pub penal: f64,
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            e0: 1.0,
            emin: 1e-9,
            nu: 0.3,
            penal: 3.0,
        }
    }
}

impl MaterialModel {
    /// Interpolated modulus `Emin + rho^p (E0 - Emin)`.
    pub fn modulus(&self, rho: f64) -> f64 {
        self.emin + rho.powf(self.penal) * (self.e0 - self.emin)
    }
}

/// Supports and point loads.
///
/// Valid tasks have at least one fixed DOF and a non-zero load vector;
/// [`assemble_solve`] reports a singular system when supports are missing,
/// and task validation rejects degenerate load configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    /// Fixed DOF indices, sorted and unique.
    pub fixed_dofs: Vec<usize>,
    /// Point loads as `(dof, magnitude)` pairs, sorted by DOF with one entry
    /// per loaded DOF.
    pub loads: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    pub fn new(mut fixed_dofs: Vec<usize>, loads: Vec<(usize, f64)>) -> Self {
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        let mut merged: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for (dof, v) in loads {
            *merged.entry(dof).or_insert(0.0) += v;
        }
        Self {
            fixed_dofs,
            loads: merged.into_iter().collect(),
        }
    }

    /// Dense load vector of length `ndof`.
    pub fn load_vector(&self, ndof: usize) -> Vec<f64> {
        let mut f = vec![0.0; ndof];
        for &(dof, v) in &self.loads {
            f[dof] += v;
        }
        f
    }

    pub fn fixed_mask(&self, ndof: usize) -> Vec<bool> {
        let mut m = vec![false; ndof];
        for &d in &self.fixed_dofs {
            m[d] = true;
        }
        m
    }
}

/// Result of an equilibrium solve.
#[derive(Debug, Clone)]
pub struct FieldState {
    /// Nodal displacements, zeros at fixed DOFs.
    pub u: Vec<f64>,
    /// Compliance `f . u`.
    pub compliance: f64,
    /// Per-element strain energy `u_e^T k_e(rho_e) u_e`; sums to the
    /// compliance up to solver tolerance.
    pub energies: Vec<f64>,
}

/// Assembles the SIMP-interpolated stiffness matrix for `rho`, solves
/// equilibrium under `bc` and returns displacements, compliance and
/// per-element strain energies.
pub fn assemble_solve(
    disc: &Discretization,
    bc: &BoundaryConditions,
    mat: &MaterialModel,
    rho: &[f64],
) -> Result<FieldState, FemError> {
    let nel = disc.num_elements();
    assert_eq!(rho.len(), nel, "density length must match element count");
    let ndof = disc.num_dofs();

    let emod: Vec<f64> = rho.iter().map(|&r| mat.modulus(r)).collect();
    let fixed_mask = bc.fixed_mask(ndof);
    let f = bc.load_vector(ndof);

    let u = if nel <= DIRECT_SOLVER_MAX_ELEMENTS {
        solver::solve_direct(disc, &emod, mat.nu, &fixed_mask, &f)?
    } else {
        solver::solve_pcg(disc, &emod, mat.nu, &fixed_mask, &f)?
    };

    let compliance: f64 = f.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    let ke = element_stiffness(mat.nu);
    let mut energies = vec![0.0; nel];
    for e in 0..nel {
        let dofs = disc.element_dofs(e);
        let mut ue = [0.0f64; 8];
        for a in 0..8 {
            ue[a] = u[dofs[a]];
        }
        energies[e] = emod[e] * unit_energy(&ke, &ue);
    }

    Ok(FieldState {
        u,
        compliance,
        energies,
    })
}

/// Adjoint (self-adjoint) sensitivity of compliance:
/// `dc/drho_e = -p rho_e^(p-1) (E0 - Emin) u_e^T k_unit u_e`.
pub fn compliance_sensitivities(
    disc: &Discretization,
    state: &FieldState,
    rho: &[f64],
    mat: &MaterialModel,
) -> Vec<f64> {
    let nel = disc.num_elements();
    assert_eq!(rho.len(), nel);
    let ke = element_stiffness(mat.nu);
    let mut out = vec![0.0; nel];
    for e in 0..nel {
        let dofs = disc.element_dofs(e);
        let mut ue = [0.0f64; 8];
        for a in 0..8 {
            ue[a] = state.u[dofs[a]];
        }
        out[e] = -mat.penal * rho[e].powf(mat.penal - 1.0) * (mat.e0 - mat.emin)
            * unit_energy(&ke, &ue);
    }
    out
}

/// Direct-solver route regardless of mesh size; used by equivalence tests.
#[doc(hidden)]
pub fn solve_with_direct(
    disc: &Discretization,
    bc: &BoundaryConditions,
    mat: &MaterialModel,
    rho: &[f64],
) -> Result<Vec<f64>, FemError> {
    let emod: Vec<f64> = rho.iter().map(|&r| mat.modulus(r)).collect();
    solver::solve_direct(
        disc,
        &emod,
        mat.nu,
        &bc.fixed_mask(disc.num_dofs()),
        &bc.load_vector(disc.num_dofs()),
    )
}

/// Iterative route regardless of mesh size; used by equivalence tests.
#[doc(hidden)]
pub fn solve_with_pcg(
    disc: &Discretization,
    bc: &BoundaryConditions,
    mat: &MaterialModel,
    rho: &[f64],
) -> Result<Vec<f64>, FemError> {
    let emod: Vec<f64> = rho.iter().map(|&r| mat.modulus(r)).collect();
    solver::solve_pcg(
        disc,
        &emod,
        mat.nu,
        &bc.fixed_mask(disc.num_dofs()),
        &bc.load_vector(disc.num_dofs()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    /// Dense Gaussian-elimination solve, used as the single-element oracle.
    fn dense_solve(a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>) {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            let d = a[col][col];
            for i in (col + 1)..n {
                let fac = a[i][col] / d;
                for j in col..n {
                    a[i][j] -= fac * a[col][j];
                }
                b[i] -= fac * b[col];
            }
        }
        for col in (0..n).rev() {
            b[col] /= a[col][col];
            for i in 0..col {
                b[i] -= a[i][col] * b[col];
            }
        }
    }

    fn cantilever(disc: &Discretization, load_dof_value: f64) -> BoundaryConditions {
        // left edge fully fixed, point load at the middle of the right edge
        let mut fixed = Vec::new();
        for iy in 0..=disc.nely() {
            let n = disc.node_index(0, iy);
            fixed.push(2 * n);
            fixed.push(2 * n + 1);
        }
        let tip = disc.node_index(disc.nelx(), disc.nely() / 2);
        BoundaryConditions::new(fixed, vec![(2 * tip + 1, load_dof_value)])
    }

    #[test]
    fn single_element_matches_dense_oracle() {
        let disc = Discretization::new(1, 1);
        let mat = MaterialModel::default();
        // left edge fixed: nodes (0,0) and (0,1) -> dofs 0,1,2,3
        let bc = BoundaryConditions::new(vec![0, 1, 2, 3], vec![(7, -1.0)]);
        let state = assemble_solve(&disc, &bc, &mat, &[1.0]).unwrap();

        // oracle: reduce the dense 8x8 system by hand; global free DOFs
        // 4,5,6,7 (nodes (1,0) and (1,1)) sit at local element positions
        // 2,3,4,5 in the CCW ordering, with the load at local 5
        let ke = element_stiffness(mat.nu);
        let free_local = [2usize, 3, 4, 5];
        let mut a: Vec<Vec<f64>> = free_local
            .iter()
            .map(|&i| free_local.iter().map(|&j| mat.e0 * ke[i][j]).collect())
            .collect();
        let mut b = vec![0.0, 0.0, 0.0, -1.0];
        dense_solve(&mut a, &mut b);
        let c_oracle = -b[3]; // f.u with the single load
        assert!(
            (state.compliance - c_oracle).abs() <= 1e-12 * c_oracle.abs(),
            "{} vs {}",
            state.compliance,
            c_oracle
        );
    }

    #[test]
    fn doubling_modulus_halves_compliance() {
        let disc = Discretization::new(6, 4);
        let bc = cantilever(&disc, -1.0);
        let rho = vec![1.0; disc.num_elements()];
        let base = assemble_solve(&disc, &bc, &MaterialModel::default(), &rho).unwrap();
        let stiff = MaterialModel {
            e0: 2.0,
            ..MaterialModel::default()
        };
        let doubled = assemble_solve(&disc, &bc, &stiff, &rho).unwrap();
        let ratio = base.compliance / doubled.compliance;
        assert!((ratio - 2.0).abs() < 1e-12, "ratio {ratio}");
    }

    #[test]
    fn no_supports_is_singular() {
        let disc = Discretization::new(2, 2);
        let bc = BoundaryConditions::new(vec![], vec![(0, 1.0)]);
        let err = assemble_solve(&disc, &bc, &MaterialModel::default(), &[1.0; 4]).unwrap_err();
        assert_eq!(err, FemError::Singular);
    }

    #[test]
    fn compliance_positive_and_energy_sum_matches() {
        let disc = Discretization::new(12, 7);
        let bc = cantilever(&disc, -1.0);
        let mut rng = substream(11, "fem-test");
        let rho: Vec<f64> = (0..disc.num_elements())
            .map(|_| rng.gen_range(0.3..1.0))
            .collect();
        let state = assemble_solve(&disc, &bc, &MaterialModel::default(), &rho).unwrap();
        assert!(state.compliance > 0.0 && state.compliance.is_finite());
        let esum: f64 = state.energies.iter().sum();
        assert!((esum - state.compliance).abs() <= 1e-8 * state.compliance);
        assert!(state.energies.iter().all(|&e| e >= -1e-14));
    }

    #[test]
    fn direct_and_iterative_solvers_agree() {
        let disc = Discretization::new(16, 16);
        let bc = cantilever(&disc, -1.0);
        let mut rng = substream(12, "fem-test");
        let rho: Vec<f64> = (0..disc.num_elements())
            .map(|_| rng.gen_range(0.2..1.0))
            .collect();
        let mat = MaterialModel::default();
        let ud = solve_with_direct(&disc, &bc, &mat, &rho).unwrap();
        let up = solve_with_pcg(&disc, &bc, &mat, &rho).unwrap();
        let num: f64 = ud
            .iter()
            .zip(up.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = ud.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num <= 1e-8 * den, "relative gap {}", num / den);
    }

    #[test]
    fn sensitivities_are_nonpositive_and_match_finite_differences() {
        let disc = Discretization::new(8, 8);
        let bc = cantilever(&disc, -1.0);
        let mat = MaterialModel::default();
        let mut rng = substream(13, "fem-test");
        let rho: Vec<f64> = (0..disc.num_elements())
            .map(|_| rng.gen_range(0.2..0.9))
            .collect();
        let state = assemble_solve(&disc, &bc, &mat, &rho).unwrap();
        let sens = compliance_sensitivities(&disc, &state, &rho, &mat);
        assert!(sens.iter().all(|&s| s <= 0.0));

        let h = 1e-6;
        let maxabs = sens.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for e in (0..disc.num_elements()).step_by(7) {
            let mut plus = rho.clone();
            plus[e] += h;
            let mut minus = rho.clone();
            minus[e] -= h;
            let cp = assemble_solve(&disc, &bc, &mat, &plus).unwrap().compliance;
            let cm = assemble_solve(&disc, &bc, &mat, &minus).unwrap().compliance;
            let fd = (cp - cm) / (2.0 * h);
            let rel = (sens[e] - fd).abs() / fd.abs().max(1e-6 * maxabs);
            assert!(rel < 1e-5, "element {e}: adjoint {} fd {}", sens[e], fd);
        }
    }

    #[test]
    fn mirror_symmetric_task_gives_mirror_symmetric_sensitivities() {
        let nelx = 8;
        let nely = 5;
        let disc = Discretization::new(nelx, nely);
        // supports at both bottom corners, downward load at the top-centre node
        let n_bl = disc.node_index(0, 0);
        let n_br = disc.node_index(nelx, 0);
        let n_top = disc.node_index(nelx / 2, nely);
        let bc = BoundaryConditions::new(
            vec![2 * n_bl, 2 * n_bl + 1, 2 * n_br, 2 * n_br + 1],
            vec![(2 * n_top + 1, -1.0)],
        );
        let mat = MaterialModel::default();
        // mirror-symmetric density field
        let mut rho = vec![0.0; disc.num_elements()];
        let mut rng = substream(14, "fem-test");
        for ex in 0..nelx {
            for ey in 0..nely {
                if ex < nelx - 1 - ex {
                    let v = rng.gen_range(0.2..1.0);
                    rho[disc.element_index(ex, ey)] = v;
                    rho[disc.element_index(nelx - 1 - ex, ey)] = v;
                } else if ex == nelx - 1 - ex {
                    rho[disc.element_index(ex, ey)] = rng.gen_range(0.2..1.0);
                }
            }
        }
        let state = assemble_solve(&disc, &bc, &mat, &rho).unwrap();
        let sens = compliance_sensitivities(&disc, &state, &rho, &mat);
        for ex in 0..nelx {
            for ey in 0..nely {
                let a = sens[disc.element_index(ex, ey)];
                let b = sens[disc.element_index(nelx - 1 - ex, ey)];
                assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "({ex},{ey})");
            }
        }
    }

    #[test]
    fn load_restricted_to_fixed_dofs_gives_zero_response() {
        let disc = Discretization::new(3, 3);
        let bc = BoundaryConditions::new(vec![0, 1], vec![(0, 1.0)]);
        let state = assemble_solve(&disc, &bc, &MaterialModel::default(), &[0.5; 9]).unwrap();
        assert_eq!(state.compliance, 0.0);
        assert!(state.u.iter().all(|&x| x == 0.0));
    }
}
