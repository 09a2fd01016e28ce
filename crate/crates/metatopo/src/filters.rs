//! Density-field transforms: cone density filter, amplified shifted-sigmoid
//! volume projection, strain-energy log-normalization and volume-preserving
//! thresholding, each with exact reverse-mode gradients.

use crate::fem::Discretization;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

/// Gain applied to filtered densities before the sigmoid projection.
pub const PROJECTION_GAIN: f64 = 10.0;

/// Volume tolerance guaranteed by the projection bisection.
pub const VOLUME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterError {
    /// Strain-energy field is constant after the log transform; the task
    /// carries no conditioning signal and is rejected upstream.
    #[error("degenerate strain-energy field: log-range below 1e-12")]
    DegenerateField,
    /// The projection bisection could not bracket the volume constraint.
    #[error("sigmoid projection: bisection failed to bracket the target volume")]
    BracketFailure,
}

/// Processing stage of a density vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityStage {
    /// Raw network output (unbounded).
    Raw,
    /// After the cone density filter.
    Filtered,
    /// After the sigmoid volume projection; values in (0,1), mean at the
    /// target volume fraction.
    Projected,
    /// Thresholded to {0,1} with exactly `round(vstar * N)` solid elements.
    Binary,
}

/// Per-element material occupancy with its processing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub stage: DensityStage,
}

impl DensityField {
    pub fn new(values: Vec<f64>, stage: DensityStage) -> Self {
        Self { values, stage }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Cone-weighted density filter, row-normalized:
/// `rho_bar_i = sum_j w_ij rho_j / sum_j w_ij` with
/// `w_ij = max(0, radius - dist(centroid_i, centroid_j))`.
///
/// The operator is linear; its gradient is the transpose. Weights are
/// precomputed per discretization and shareable across threads.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    /// Normalized weights `w_ij / sum_k w_ik`.
    weights: Vec<f64>,
}

impl DensityFilter {
    /// Filter radius used by the optimization pipelines: 1/32 of the domain
    /// width, in element units.
    pub fn default_radius(disc: &Discretization) -> f64 {
        disc.nelx() as f64 / 32.0
    }

    pub fn new(disc: &Discretization, radius: f64) -> Self {
        assert!(radius > 0.0, "filter radius must be positive");
        let nelx = disc.nelx();
        let nely = disc.nely();
        let n = disc.num_elements();
        // a radius beyond the grid already covers every element
        let reach = radius.ceil().min(nelx.max(nely) as f64) as isize;

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for ex in 0..nelx as isize {
            for ey in 0..nely as isize {
                let mut row_sum = 0.0;
                let start = weights.len();
                for jx in (ex - reach).max(0)..=(ex + reach).min(nelx as isize - 1) {
                    for jy in (ey - reach).max(0)..=(ey + reach).min(nely as isize - 1) {
                        let dx = (ex - jx) as f64;
                        let dy = (ey - jy) as f64;
                        let w = radius - (dx * dx + dy * dy).sqrt();
                        if w > 0.0 {
                            cols.push((jx as usize * nely + jy as usize) as u32);
                            weights.push(w);
                            row_sum += w;
                        }
                    }
                }
                for w in &mut weights[start..] {
                    *w /= row_sum;
                }
                row_ptr.push(weights.len());
            }
        }
        Self {
            n,
            row_ptr,
            cols,
            weights,
        }
    }

    /// Shared, cached filter for `(disc, radius)`.
    pub fn cached(disc: &Discretization, radius: f64) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize, u64), Arc<DensityFilter>>>> =
            OnceLock::new();
        let key = (disc.nelx(), disc.nely(), radius.to_bits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap();
        guard
            .entry(key)
            .or_insert_with(|| Arc::new(DensityFilter::new(disc, radius)))
            .clone()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.weights[k] * x[self.cols[k] as usize];
            }
            out[i] = acc;
        }
        out
    }

    /// Transpose application; the reverse-mode gradient of [`apply`].
    ///
    /// [`apply`]: DensityFilter::apply
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let gi = g[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k] as usize] += self.weights[k] * gi;
            }
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Projects a filtered field onto the volume constraint through the
/// amplified shifted sigmoid `rho_tilde_i = sigma(a rho_bar_i - b)` with
/// `a = 10`; the shift `b` is found by bisection so that
/// `mean(rho_tilde) = vstar` within [`VOLUME_TOLERANCE`] (the bisection
/// itself runs to f64 resolution). Returns the projected field (values
/// strictly inside `(0,1)`, monotone in each input) and the shift.
pub fn sigmoid_volume_project(rho_bar: &[f64], vstar: f64) -> Result<(Vec<f64>, f64), FilterError> {
    assert!(vstar > 0.0 && vstar < 1.0, "volume fraction must be in (0,1)");
    assert!(!rho_bar.is_empty());
    let a = PROJECTION_GAIN;
    let n = rho_bar.len() as f64;
    let mean_at = |b: f64| rho_bar.iter().map(|&r| sigmoid(a * r - b)).sum::<f64>() / n;

    let (mut lo, mut hi) = {
        let min = rho_bar.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = rho_bar.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (a * min - 40.0, a * max + 40.0)
    };
    // mean is decreasing in b: lo must give a surplus, hi a deficit
    let mut expand = 0;
    while mean_at(lo) < vstar {
        lo -= 2.0 * (hi - lo).abs().max(1.0);
        expand += 1;
        if expand > 64 {
            return Err(FilterError::BracketFailure);
        }
    }
    while mean_at(hi) > vstar {
        hi += 2.0 * (hi - lo).abs().max(1.0);
        expand += 1;
        if expand > 64 {
            return Err(FilterError::BracketFailure);
        }
    }

    // bisect to f64 resolution so the projection is a smooth function of
    // its inputs (finite-difference checks of downstream gradients rely on
    // this being far tighter than VOLUME_TOLERANCE)
    let mut b = 0.5 * (lo + hi);
    for _ in 0..200 {
        if b == lo || b == hi {
            break;
        }
        if mean_at(b) > vstar {
            lo = b;
        } else {
            hi = b;
        }
        b = 0.5 * (lo + hi);
    }
    let rho_tilde: Vec<f64> = rho_bar.iter().map(|&r| sigmoid(a * r - b)).collect();
    Ok((rho_tilde, b))
}

/// Reverse-mode gradient of [`sigmoid_volume_project`] with the shift
/// differentiated implicitly:
/// `d rho_tilde_j / d rho_bar_i = a s_j (delta_ij - s_i / sum_k s_k)`,
/// where `s_i = sigma'(a rho_bar_i - b)`. Contracts `cotangent` against the
/// Jacobian transpose.
pub fn project_backward(
    rho_bar: &[f64],
    rho_tilde: &[f64],
    b: f64,
    cotangent: &[f64],
) -> Vec<f64> {
    assert_eq!(rho_bar.len(), rho_tilde.len());
    assert_eq!(rho_bar.len(), cotangent.len());
    debug_assert!(rho_bar
        .iter()
        .zip(rho_tilde.iter())
        .all(|(&r, &t)| (sigmoid(PROJECTION_GAIN * r - b) - t).abs() < 1e-12));
    let a = PROJECTION_GAIN;
    let s: Vec<f64> = rho_tilde.iter().map(|&t| t * (1.0 - t)).collect();
    let s_sum: f64 = s.iter().sum();
    let gs: f64 = cotangent.iter().zip(s.iter()).map(|(g, si)| g * si).sum();
    let correction = gs / s_sum;
    cotangent
        .iter()
        .zip(s.iter())
        .map(|(g, si)| a * si * (g - correction))
        .collect()
}

/// Log-normalizes a raw strain-energy field onto `[-1, 1]`:
/// `E = 2 (log E_raw - min) / (max - min) - 1`, with entries clamped at
/// 1e-300 before the logarithm.
pub fn preprocess_strain_energy(e_raw: &[f64]) -> Result<Vec<f64>, FilterError> {
    assert!(!e_raw.is_empty());
    let logs: Vec<f64> = e_raw.iter().map(|&e| e.max(1e-300).ln()).collect();
    let min = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min).is_finite() || max - min < 1e-12 {
        return Err(FilterError::DegenerateField);
    }
    let scale = 2.0 / (max - min);
    Ok(logs.iter().map(|&l| (l - min) * scale - 1.0).collect())
}

/// Binarizes a design keeping exactly `round(vstar * N)` solid elements —
/// the largest values win, ties broken toward the lower element index.
pub fn threshold_volume_preserving(rho: &[f64], vstar: f64) -> Vec<f64> {
    let n = rho.len();
    let k = (vstar * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        rho[j]
            .partial_cmp(&rho[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut out = vec![0.0; n];
    for &i in order.iter().take(k) {
        out[i] = 1.0;
    }
    out
}
