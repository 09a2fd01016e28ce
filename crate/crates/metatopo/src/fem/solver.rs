//! Linear solvers for the reduced equilibrium system.
//!
//! Fixed DOFs are eliminated: the direct path renumbers free DOFs (order
//! preserving, which keeps the grid bandwidth) and factorizes the banded
//! stiffness matrix; the iterative path works matrix-free on full-length
//! vectors with fixed entries pinned to zero.

use super::element::element_stiffness;
use super::mesh::Discretization;
use super::FemError;

/// Relative residual tolerance of the conjugate-gradient solver.
pub const PCG_TOLERANCE: f64 = 1e-8;

/// Banded Cholesky on the reduced system. `emod[e]` is the interpolated
/// Young's modulus of element `e`; `f` and the returned displacement vector
/// are full length with zeros at fixed DOFs.
pub fn solve_direct(
    disc: &Discretization,
    emod: &[f64],
    nu: f64,
    fixed_mask: &[bool],
    f: &[f64],
) -> Result<Vec<f64>, FemError> {
    let ndof = disc.num_dofs();
    let ke = element_stiffness(nu);

    let mut free_index = vec![usize::MAX; ndof];
    let mut n_free = 0usize;
    for d in 0..ndof {
        if !fixed_mask[d] {
            free_index[d] = n_free;
            n_free += 1;
        }
    }
    if n_free == 0 {
        return Ok(vec![0.0; ndof]);
    }

    // half-bandwidth in reduced numbering (elimination can only shrink it)
    let mut hb = 0usize;
    for e in 0..disc.num_elements() {
        let dofs = disc.element_dofs(e);
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        for &d in &dofs {
            let r = free_index[d];
            if r != usize::MAX {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        if lo != usize::MAX {
            hb = hb.max(hi - lo);
        }
    }

    let stride = hb + 1;
    let mut band = vec![0.0f64; n_free * stride];
    // band[i * stride + hb - (i - j)] holds entry (i, j), j in [i - hb, i]
    for e in 0..disc.num_elements() {
        let dofs = disc.element_dofs(e);
        let m = emod[e];
        for (a, &da) in dofs.iter().enumerate() {
            let i = free_index[da];
            if i == usize::MAX {
                continue;
            }
            for (b, &db) in dofs.iter().enumerate() {
                let j = free_index[db];
                if j == usize::MAX || j > i {
                    continue;
                }
                band[i * stride + hb - (i - j)] += m * ke[a][b];
            }
        }
    }

    // in-place LL^T factorization within the band
    for i in 0..n_free {
        let jmin = i.saturating_sub(hb);
        for j in jmin..=i {
            let kmin = jmin.max(j.saturating_sub(hb));
            let mut sum = band[i * stride + hb - (i - j)];
            for k in kmin..j {
                sum -= band[i * stride + hb - (i - k)] * band[j * stride + hb - (j - k)];
            }
            if j < i {
                band[i * stride + hb - (i - j)] = sum / band[j * stride + hb];
            } else {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(FemError::Singular);
                }
                band[i * stride + hb] = sum.sqrt();
            }
        }
    }

    // forward substitution L y = f_reduced
    let mut y = vec![0.0f64; n_free];
    {
        let mut i_full = 0usize;
        for i in 0..n_free {
            while free_index[i_full] != i {
                i_full += 1;
            }
            let jmin = i.saturating_sub(hb);
            let mut sum = f[i_full];
            for k in jmin..i {
                sum -= band[i * stride + hb - (i - k)] * y[k];
            }
            y[i] = sum / band[i * stride + hb];
        }
    }
    // back substitution L^T x = y
    for j in (0..n_free).rev() {
        let imax = (j + hb).min(n_free - 1);
        let mut sum = y[j];
        for i in (j + 1)..=imax {
            sum -= band[i * stride + hb - (i - j)] * y[i];
        }
        y[j] = sum / band[j * stride + hb];
    }

    let mut u = vec![0.0f64; ndof];
    for d in 0..ndof {
        let r = free_index[d];
        if r != usize::MAX {
            u[d] = y[r];
        }
    }
    Ok(u)
}

/// Jacobi-preconditioned conjugate gradient on the reduced system,
/// matrix-free. Converges when the residual drops below
/// [`PCG_TOLERANCE`] relative to the load; capped at `10 * num_dofs`
/// iterations.
pub fn solve_pcg(
    disc: &Discretization,
    emod: &[f64],
    nu: f64,
    fixed_mask: &[bool],
    f: &[f64],
) -> Result<Vec<f64>, FemError> {
    let ndof = disc.num_dofs();
    let nel = disc.num_elements();
    let ke = element_stiffness(nu);

    let edofs: Vec<[usize; 8]> = (0..nel).map(|e| disc.element_dofs(e)).collect();

    let mut diag = vec![0.0f64; ndof];
    for e in 0..nel {
        let m = emod[e];
        for (a, &d) in edofs[e].iter().enumerate() {
            diag[d] += m * ke[a][a];
        }
    }
    for d in 0..ndof {
        if fixed_mask[d] {
            diag[d] = 1.0;
        } else if !(diag[d] > 0.0) {
            return Err(FemError::Singular);
        }
    }

    let matvec = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for e in 0..nel {
            let m = emod[e];
            let dofs = &edofs[e];
            let mut ve = [0.0f64; 8];
            for a in 0..8 {
                ve[a] = v[dofs[a]];
            }
            for a in 0..8 {
                let mut acc = 0.0;
                for b in 0..8 {
                    acc += ke[a][b] * ve[b];
                }
                out[dofs[a]] += m * acc;
            }
        }
        for d in 0..ndof {
            if fixed_mask[d] {
                out[d] = 0.0;
            }
        }
    };

    let mut r: Vec<f64> = (0..ndof)
        .map(|d| if fixed_mask[d] { 0.0 } else { f[d] })
        .collect();
    let fnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut u = vec![0.0f64; ndof];
    if fnorm == 0.0 {
        return Ok(u);
    }

    let mut z: Vec<f64> = r.iter().zip(diag.iter()).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0f64; ndof];

    let cap = 10 * ndof;
    for _ in 0..cap {
        matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(ap.iter()).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(FemError::Singular);
        }
        let alpha = rz / pap;
        for d in 0..ndof {
            u[d] += alpha * p[d];
            r[d] -= alpha * ap[d];
        }
        let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rnorm <= PCG_TOLERANCE * fnorm {
            return Ok(u);
        }
        for d in 0..ndof {
            z[d] = r[d] / diag[d];
        }
        let rz_new: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for d in 0..ndof {
            p[d] = z[d] + beta * p[d];
        }
    }
    Err(FemError::NonConvergence { iterations: cap })
}
