//! Pseudorandom generation, validation and annotation of compliance
//! minimization tasks.
//!
//! Candidates are drawn from two families: point loads with point supports
//! (training, in-distribution and cross-resolution regimes) and line
//! loads/supports (out-of-distribution). Validation runs one equilibrium
//! solve on the uniform density design at the target volume fraction,
//! rejects ill-defined candidates, and annotates survivors with the
//! log-normalized strain-energy field and the reference compliance.

use crate::fem::{
    assemble_solve, BoundaryConditions, Discretization, FemError, MaterialModel,
};
use crate::filters::{preprocess_strain_energy, FilterError};
use crate::rng::substream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Upper bound on the reference compliance of an accepted task.
pub const MAX_REFERENCE_COMPLIANCE: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Train,
    Validation,
    InDist,
    OutOfDist,
    CrossRes,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Train => "train",
            Regime::Validation => "validation",
            Regime::InDist => "in-dist",
            Regime::OutOfDist => "out-of-dist",
            Regime::CrossRes => "cross-res",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Regime::Train),
            "validation" => Some(Regime::Validation),
            "in-dist" => Some(Regime::InDist),
            "out-of-dist" => Some(Regime::OutOfDist),
            "cross-res" => Some(Regime::CrossRes),
            _ => None,
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            Regime::Train => 0,
            Regime::Validation => 1,
            Regime::InDist => 2,
            Regime::OutOfDist => 3,
            Regime::CrossRes => 4,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Regime::Train),
            1 => Some(Regime::Validation),
            2 => Some(Regime::InDist),
            3 => Some(Regime::OutOfDist),
            4 => Some(Regime::CrossRes),
            _ => None,
        }
    }
}

/// Boundary conditions and volume fraction before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCandidate {
    pub bc: BoundaryConditions,
    pub vstar: f64,
}

/// A validated, annotated compliance-minimization task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub disc: Discretization,
    pub bc: BoundaryConditions,
    /// Target volume fraction.
    pub vstar: f64,
    /// Strain energy of the uniform design, log-normalized onto `[-1, 1]`.
    pub energy: Vec<f64>,
    /// Compliance of the uniform design at `vstar`; normalizes all losses.
    pub c_ref: f64,
    pub regime: Regime,
}

/// Why a candidate was rejected.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskRejection {
    #[error("singular system under uniform density")]
    Singular,
    #[error("equilibrium solver failed to converge")]
    SolverFailure,
    #[error("non-finite reference compliance")]
    NonFiniteCompliance,
    #[error("zero or degenerate response (no work done by the loads)")]
    DegenerateResponse,
    #[error("reference compliance exceeds {MAX_REFERENCE_COMPLIANCE:e}")]
    ComplianceTooLarge,
}

/// Per-reason rejection counters recorded in dataset manifests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub singular: u64,
    pub solver_failure: u64,
    pub non_finite: u64,
    pub degenerate: u64,
    pub too_large: u64,
}

impl RejectionStats {
    pub fn total(&self) -> u64 {
        self.singular + self.solver_failure + self.non_finite + self.degenerate + self.too_large
    }

    fn record(&mut self, r: &TaskRejection) {
        match r {
            TaskRejection::Singular => self.singular += 1,
            TaskRejection::SolverFailure => self.solver_failure += 1,
            TaskRejection::NonFiniteCompliance => self.non_finite += 1,
            TaskRejection::DegenerateResponse => self.degenerate += 1,
            TaskRejection::ComplianceTooLarge => self.too_large += 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum TaskGenError {
    /// Rejection rate exceeded 99% over 1000 consecutive candidates.
    #[error("task generation stalled: {accepted} of {window} candidates accepted")]
    GenerationStall { accepted: u64, window: u64 },
}

/// Node lists used by the samplers.
struct NodePools {
    boundary: Vec<usize>,
    interior: Vec<usize>,
}

fn node_pools(disc: &Discretization) -> NodePools {
    let mut boundary = Vec::new();
    let mut interior = Vec::new();
    for ix in 0..=disc.nelx() {
        for iy in 0..=disc.nely() {
            let n = disc.node_index(ix, iy);
            if disc.is_boundary_node(ix, iy) {
                boundary.push(n);
            } else {
                interior.push(n);
            }
        }
    }
    NodePools { boundary, interior }
}

/// Node with boundary-biased probability: boundary nodes carry 4x the
/// weight of interior nodes.
fn sample_biased_node(rng: &mut ChaCha8Rng, pools: &NodePools) -> usize {
    let total = 4 * pools.boundary.len() as u64 + pools.interior.len() as u64;
    let u = rng.gen_range(0..total);
    if u < 4 * pools.boundary.len() as u64 {
        pools.boundary[(u / 4) as usize]
    } else {
        pools.interior[(u - 4 * pools.boundary.len() as u64) as usize]
    }
}

/// Point-load candidate: 1-3 unit point loads at boundary-biased nodes with
/// uniform angles, 1-4 boundary support nodes fixing both DOFs, volume
/// fraction uniform in `[0.1, 0.5]`.
pub fn generate_point_task(rng: &mut ChaCha8Rng, disc: &Discretization) -> TaskCandidate {
    let pools = node_pools(disc);
    let n_loads = rng.gen_range(1..=3usize);
    let mut loads = Vec::with_capacity(2 * n_loads);
    for _ in 0..n_loads {
        let node = sample_biased_node(rng, &pools);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        loads.push((2 * node, angle.cos()));
        loads.push((2 * node + 1, angle.sin()));
    }
    let n_supports = rng.gen_range(1..=4usize);
    let mut fixed = Vec::with_capacity(2 * n_supports);
    for _ in 0..n_supports {
        let node = pools.boundary[rng.gen_range(0..pools.boundary.len())];
        fixed.push(2 * node);
        fixed.push(2 * node + 1);
    }
    let vstar = rng.gen_range(0.1..0.5);
    TaskCandidate {
        bc: BoundaryConditions::new(fixed, loads),
        vstar,
    }
}

/// Segment of a domain edge: returns the nodes it covers.
fn edge_segment(rng: &mut ChaCha8Rng, disc: &Discretization) -> Vec<usize> {
    let edge = rng.gen_range(0..4u8);
    let side = match edge {
        0 | 2 => disc.nelx(),
        _ => disc.nely(),
    };
    let frac = rng.gen_range(0.1..0.5);
    let len = ((frac * side as f64).round() as usize).clamp(1, side);
    let start = rng.gen_range(0..=side - len);
    (start..=start + len)
        .map(|k| match edge {
            0 => disc.node_index(k, 0),             // bottom
            1 => disc.node_index(disc.nelx(), k),   // right
            2 => disc.node_index(k, disc.nely()),   // top
            _ => disc.node_index(0, k),             // left
        })
        .collect()
}

/// Node-aligned segment anywhere in the domain (boundary or interior).
fn line_segment(rng: &mut ChaCha8Rng, disc: &Discretization) -> Vec<usize> {
    let horizontal = rng.gen_bool(0.5);
    let (side, lines) = if horizontal {
        (disc.nelx(), disc.nely())
    } else {
        (disc.nely(), disc.nelx())
    };
    let line = rng.gen_range(0..=lines);
    let frac = rng.gen_range(0.1..0.5);
    let len = ((frac * side as f64).round() as usize).clamp(1, side);
    let start = rng.gen_range(0..=side - len);
    (start..=start + len)
        .map(|k| {
            if horizontal {
                disc.node_index(k, line)
            } else {
                disc.node_index(line, k)
            }
        })
        .collect()
}

/// Line-load candidate: one boundary segment fully fixed, one node-aligned
/// segment (10-50% of the domain side) carrying a unit total load at a
/// uniform angle, spread equally over its nodes.
pub fn generate_line_task(rng: &mut ChaCha8Rng, disc: &Discretization) -> TaskCandidate {
    let support_nodes = edge_segment(rng, disc);
    let mut fixed = Vec::with_capacity(2 * support_nodes.len());
    for &n in &support_nodes {
        fixed.push(2 * n);
        fixed.push(2 * n + 1);
    }

    let load_nodes = line_segment(rng, disc);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let scale = 1.0 / load_nodes.len() as f64;
    let mut loads = Vec::with_capacity(2 * load_nodes.len());
    for &n in &load_nodes {
        loads.push((2 * n, angle.cos() * scale));
        loads.push((2 * n + 1, angle.sin() * scale));
    }
    let vstar = rng.gen_range(0.1..0.5);
    TaskCandidate {
        bc: BoundaryConditions::new(fixed, loads),
        vstar,
    }
}

/// Validates a candidate with one uniform-density solve and annotates it
/// with the processed strain-energy field and reference compliance.
pub fn validate_annotate(
    disc: &Discretization,
    candidate: TaskCandidate,
    id: u64,
    regime: Regime,
) -> Result<Task, TaskRejection> {
    let mat = MaterialModel::default();
    let rho = vec![candidate.vstar; disc.num_elements()];
    let state = match assemble_solve(disc, &candidate.bc, &mat, &rho) {
        Ok(s) => s,
        Err(FemError::Singular) => return Err(TaskRejection::Singular),
        Err(FemError::NonConvergence { .. }) => return Err(TaskRejection::SolverFailure),
    };
    if !state.compliance.is_finite() {
        return Err(TaskRejection::NonFiniteCompliance);
    }
    if state.compliance <= 0.0 {
        return Err(TaskRejection::DegenerateResponse);
    }
    if state.compliance > MAX_REFERENCE_COMPLIANCE {
        return Err(TaskRejection::ComplianceTooLarge);
    }
    let energy = match preprocess_strain_energy(&state.energies) {
        Ok(e) => e,
        Err(FilterError::DegenerateField) => return Err(TaskRejection::DegenerateResponse),
        Err(FilterError::BracketFailure) => unreachable!("preprocessing does not bisect"),
    };
    Ok(Task {
        id,
        disc: *disc,
        bc: candidate.bc,
        vstar: candidate.vstar,
        energy,
        c_ref: state.compliance,
        regime,
    })
}

/// Manifest of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub regime: Regime,
    pub seed: u64,
    pub nelx: u32,
    pub nely: u32,
    pub n: u32,
    pub rejections: RejectionStats,
}

/// A set of validated tasks plus the manifest describing how it was drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub tasks: Vec<Task>,
}

fn task_id(seed: u64, regime: Regime, counter: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([regime.tag()]);
    hasher.update(counter.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Draws candidates until `n` validated tasks are collected. The candidate
/// stream is `substream(seed, "taskgen/<regime>")`; errors out if fewer than
/// 1% of 1000 consecutive candidates validate.
pub fn build_dataset(
    regime: Regime,
    n: usize,
    seed: u64,
    disc: &Discretization,
) -> Result<Dataset, TaskGenError> {
    let mut rng = substream(seed, &format!("taskgen/{}", regime.as_str()));
    let mut tasks = Vec::with_capacity(n);
    let mut rejections = RejectionStats::default();
    let mut counter = 0u64;
    let mut window_accepted = 0u64;
    let mut window_size = 0u64;

    while tasks.len() < n {
        let candidate = match regime {
            Regime::OutOfDist => generate_line_task(&mut rng, disc),
            _ => generate_point_task(&mut rng, disc),
        };
        let id = task_id(seed, regime, counter);
        counter += 1;
        window_size += 1;
        match validate_annotate(disc, candidate, id, regime) {
            Ok(task) => {
                tasks.push(task);
                window_accepted += 1;
            }
            Err(reason) => rejections.record(&reason),
        }
        if window_size == 1000 {
            if window_accepted < 10 {
                return Err(TaskGenError::GenerationStall {
                    accepted: window_accepted,
                    window: window_size,
                });
            }
            window_size = 0;
            window_accepted = 0;
        }
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: crate::io::FORMAT_VERSION,
            regime,
            seed,
            nelx: disc.nelx() as u32,
            nely: disc.nely() as u32,
            n: n as u32,
            rejections,
        },
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vstar_distribution_respects_bounds() {
        let disc = Discretization::new(8, 8);
        let mut rng = substream(3, "taskgen-test");
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let n = 10_000;
        for _ in 0..n {
            let c = generate_point_task(&mut rng, &disc);
            sum += c.vstar;
            min = min.min(c.vstar);
            max = max.max(c.vstar);
        }
        assert!(min >= 0.1 && max <= 0.5);
        let mean = sum / n as f64;
        assert!((mean - 0.3).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn generators_are_deterministic_per_stream() {
        let disc = Discretization::new(10, 10);
        let a = generate_point_task(&mut substream(5, "t"), &disc);
        let b = generate_point_task(&mut substream(5, "t"), &disc);
        assert_eq!(a, b);
        let c = generate_line_task(&mut substream(5, "t"), &disc);
        let d = generate_line_task(&mut substream(5, "t"), &disc);
        assert_eq!(c, d);
    }

    #[test]
    fn point_load_angle_decomposes_trigonometrically() {
        // directly verify the decomposition convention
        let angle = std::f64::consts::FRAC_PI_2;
        assert!(angle.cos().abs() < 1e-12);
        assert!((angle.sin() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_task_normalizes_total_load_and_fixes_segment_dofs() {
        let disc = Discretization::new(12, 12);
        let mut rng = substream(7, "taskgen-test");
        for _ in 0..50 {
            let c = generate_line_task(&mut rng, &disc);
            let fx: f64 = c.bc.loads.iter().filter(|(d, _)| d % 2 == 0).map(|(_, v)| v).sum();
            let fy: f64 = c.bc.loads.iter().filter(|(d, _)| d % 2 == 1).map(|(_, v)| v).sum();
            let mag = (fx * fx + fy * fy).sqrt();
            assert!((mag - 1.0).abs() < 1e-12, "|f| = {mag}");
            // support segment fixes both DOFs of L+1 nodes
            assert_eq!(c.bc.fixed_dofs.len() % 2, 0);
            assert!(c.bc.fixed_dofs.len() >= 4);
        }
    }

    #[test]
    fn validation_rejects_unsupported_and_degenerate_candidates() {
        let disc = Discretization::new(4, 4);
        let no_support = TaskCandidate {
            bc: BoundaryConditions::new(vec![], vec![(3, 1.0)]),
            vstar: 0.4,
        };
        assert_eq!(
            validate_annotate(&disc, no_support, 0, Regime::Train).unwrap_err(),
            TaskRejection::Singular
        );

        // load applied only at fixed DOFs does no work; two pinned nodes
        // keep the structure otherwise well-posed
        let n_top = disc.node_index(0, 4);
        let dead_load = TaskCandidate {
            bc: BoundaryConditions::new(
                vec![0, 1, 2 * n_top, 2 * n_top + 1],
                vec![(0, 1.0), (1, -1.0)],
            ),
            vstar: 0.4,
        };
        assert_eq!(
            validate_annotate(&disc, dead_load, 0, Regime::Train).unwrap_err(),
            TaskRejection::DegenerateResponse
        );
    }

    #[test]
    fn valid_cantilever_is_annotated() {
        let disc = Discretization::new(6, 6);
        let mut fixed = Vec::new();
        for iy in 0..=6 {
            let n = disc.node_index(0, iy);
            fixed.extend([2 * n, 2 * n + 1]);
        }
        let tip = disc.node_index(6, 3);
        let candidate = TaskCandidate {
            bc: BoundaryConditions::new(fixed, vec![(2 * tip + 1, -1.0)]),
            vstar: 0.35,
        };
        let task = validate_annotate(&disc, candidate, 9, Regime::InDist).unwrap();
        assert!(task.c_ref > 0.0);
        assert!(task.energy.iter().all(|&e| (-1.0..=1.0).contains(&e)));
        let min = task.energy.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = task.energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, -1.0);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn build_dataset_collects_exactly_n_tasks() {
        let disc = Discretization::new(8, 8);
        let ds = build_dataset(Regime::InDist, 25, 11, &disc).unwrap();
        assert_eq!(ds.tasks.len(), 25);
        assert_eq!(ds.manifest.n, 25);
        // ids unique
        let mut ids: Vec<u64> = ds.tasks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 25);
    }

    #[test]
    fn cross_res_regime_carries_the_fine_grid() {
        let fine = Discretization::new(32, 32);
        let ds = build_dataset(Regime::CrossRes, 3, 17, &fine).unwrap();
        assert_eq!(ds.manifest.nelx, 32);
        for task in &ds.tasks {
            assert_eq!(task.disc, fine);
            assert_eq!(task.regime, Regime::CrossRes);
            assert_eq!(task.energy.len(), fine.num_elements());
        }
    }

    #[test]
    fn datasets_with_different_seeds_are_disjoint() {
        let disc = Discretization::new(6, 6);
        let a = build_dataset(Regime::Train, 15, 1, &disc).unwrap();
        let b = build_dataset(Regime::InDist, 15, 2, &disc).unwrap();
        let ids_a: std::collections::HashSet<u64> = a.tasks.iter().map(|t| t.id).collect();
        let collisions = b.tasks.iter().filter(|t| ids_a.contains(&t.id)).count();
        assert_eq!(collisions, 0);
    }

    #[test]
    fn stored_c_ref_matches_recomputation() {
        let disc = Discretization::new(8, 8);
        let ds = build_dataset(Regime::InDist, 5, 13, &disc).unwrap();
        for task in &ds.tasks {
            let rho = vec![task.vstar; disc.num_elements()];
            let state = assemble_solve(&disc, &task.bc, &MaterialModel::default(), &rho).unwrap();
            assert!((state.compliance - task.c_ref).abs() <= 1e-9 * task.c_ref);
        }
    }
}
