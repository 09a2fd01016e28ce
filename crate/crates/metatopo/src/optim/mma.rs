//! Method of Moving Asymptotes for a single inequality constraint.
//!
//! Svanberg-form convex approximation with box `[0, 1]` design variables.
//! The dual of the separable subproblem is solved by bisection on the
//! constraint multiplier.

use super::OptimError;

const ASY_INIT: f64 = 0.5;
const ASY_INCR: f64 = 1.2;
const ASY_DECR: f64 = 0.7;
const ALBEFA: f64 = 0.1;
const RAA0: f64 = 1e-5;

/// Design iterate, two previous iterates and the moving asymptotes.
#[derive(Debug, Clone)]
pub struct MmaState {
    x: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
    iter: usize,
    move_limit: f64,
}

impl MmaState {
    pub fn new(x0: Vec<f64>, move_limit: f64) -> Self {
        assert!(x0.iter().all(|&v| (0.0..=1.0).contains(&v)), "x0 outside box");
        assert!(move_limit > 0.0);
        let n = x0.len();
        Self {
            xold1: x0.clone(),
            xold2: x0.clone(),
            low: vec![0.0; n],
            upp: vec![0.0; n],
            x: x0,
            iter: 0,
            move_limit,
        }
    }

    pub fn current(&self) -> &[f64] {
        &self.x
    }

    pub fn move_limit(&self) -> f64 {
        self.move_limit
    }
}

/// One MMA update for minimize `f0` subject to `g <= 0` on `[0, 1]^n`.
/// `gval`/`dgdx` are the constraint value and gradient at the current
/// iterate. The new iterate respects the box and the move limit; the
/// subproblem constraint is satisfied to bisection accuracy.
pub fn mma_step(
    state: &mut MmaState,
    df0dx: &[f64],
    gval: f64,
    dgdx: &[f64],
) -> Result<(), OptimError> {
    let n = state.x.len();
    assert_eq!(df0dx.len(), n);
    assert_eq!(dgdx.len(), n);
    if df0dx.iter().chain(dgdx.iter()).any(|v| !v.is_finite()) || !gval.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }

    let x = &state.x;
    // asymptote update
    if state.iter < 2 {
        for j in 0..n {
            state.low[j] = x[j] - ASY_INIT;
            state.upp[j] = x[j] + ASY_INIT;
        }
    } else {
        for j in 0..n {
            let osc = (x[j] - state.xold1[j]) * (state.xold1[j] - state.xold2[j]);
            let gamma = if osc > 0.0 {
                ASY_INCR
            } else if osc < 0.0 {
                ASY_DECR
            } else {
                1.0
            };
            state.low[j] = x[j] - gamma * (state.xold1[j] - state.low[j]);
            state.upp[j] = x[j] + gamma * (state.upp[j] - state.xold1[j]);
            // asymptotes may shrink arbitrarily close (oscillation damping
            // down to machine noise); only a numerical floor is kept
            state.low[j] = state.low[j].clamp(x[j] - 10.0, x[j] - 1e-8);
            state.upp[j] = state.upp[j].clamp(x[j] + 1e-8, x[j] + 10.0);
        }
    }
    let (low, upp) = (&state.low, &state.upp);

    // inner bounds from box, asymptote margin and move limit
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for j in 0..n {
        alpha[j] = (low[j] + ALBEFA * (x[j] - low[j]))
            .max(x[j] - state.move_limit)
            .max(0.0);
        beta[j] = (upp[j] - ALBEFA * (upp[j] - x[j]))
            .min(x[j] + state.move_limit)
            .min(1.0);
    }

    // separable approximation coefficients
    let mut p0 = vec![0.0; n];
    let mut q0 = vec![0.0; n];
    let mut p1 = vec![0.0; n];
    let mut q1 = vec![0.0; n];
    let mut r1 = gval;
    for j in 0..n {
        let du = upp[j] - x[j];
        let dl = x[j] - low[j];
        let gp = df0dx[j].max(0.0);
        let gm = (-df0dx[j]).max(0.0);
        p0[j] = du * du * (1.001 * gp + 0.001 * gm + RAA0);
        q0[j] = dl * dl * (0.001 * gp + 1.001 * gm + RAA0);
        p1[j] = du * du * dgdx[j].max(0.0);
        q1[j] = dl * dl * (-dgdx[j]).max(0.0);
        r1 -= p1[j] / du + q1[j] / dl;
    }

    // primal minimizer for a fixed multiplier, clamped to [alpha, beta]
    let primal = |lambda: f64, out: &mut [f64]| {
        for j in 0..n {
            let pl = (p0[j] + lambda * p1[j]).sqrt();
            let ql = (q0[j] + lambda * q1[j]).sqrt();
            out[j] = ((low[j] * pl + upp[j] * ql) / (pl + ql)).clamp(alpha[j], beta[j]);
        }
    };
    let constraint = |y: &[f64]| -> f64 {
        let mut acc = r1;
        for j in 0..n {
            acc += p1[j] / (upp[j] - y[j]) + q1[j] / (y[j] - low[j]);
        }
        acc
    };

    let mut y = vec![0.0; n];
    primal(0.0, &mut y);
    if constraint(&y) > 0.0 {
        // bracket the multiplier, then bisect
        let mut hi = 1.0;
        let mut found = false;
        for _ in 0..128 {
            primal(hi, &mut y);
            if constraint(&y) <= 0.0 {
                found = true;
                break;
            }
            hi *= 2.0;
        }
        if !found {
            return Err(OptimError::SubproblemInfeasible);
        }
        let mut lo = 0.0;
        for _ in 0..128 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            primal(mid, &mut y);
            if constraint(&y) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        primal(hi, &mut y);
    }

    state.xold2 = std::mem::replace(&mut state.xold1, state.x.clone());
    state.x = y;
    state.iter += 1;
    Ok(())
}
