//! Per-task optimization: Adam, the relative-change stopping rule, MMA, and
//! the neural / conventional optimization loops.

mod adam;
mod mma;

pub use adam::AdamState;
pub use mma::{mma_step, MmaState};

use crate::fem::{
    assemble_solve, compliance_sensitivities, Discretization, FemError, FieldState,
    MaterialModel,
};
use crate::filters::{
    sigmoid_volume_project, threshold_volume_preserving, DensityField, DensityFilter,
    DensityStage, FilterError,
};
use crate::network::{
    backward_from_trace, forward_with_trace, NetworkError, NetworkParameters,
};
use crate::taskgen::Task;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("MMA subproblem infeasible within the box constraints")]
    SubproblemInfeasible,
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Relative-change stopping criterion with iteration bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingConfig {
    pub epsilon: f64,
    pub min_iters: usize,
    pub max_iters: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            min_iters: 10,
            max_iters: 200,
        }
    }
}

/// True iff the trace has reached `min_iters` entries and the last pair
/// satisfies `|L_t - L_{t-1}| < eps (1 + |L_{t-1}|)` (strict).
pub fn stopping_check(trace: &[f64], eps: f64, min_iters: usize) -> bool {
    assert!(!trace.is_empty(), "stopping check needs a non-empty trace");
    if trace.len() < min_iters.max(2) {
        return false;
    }
    let last = trace[trace.len() - 1];
    let prev = trace[trace.len() - 2];
    (last - prev).abs() < eps * (1.0 + prev.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Criterion,
    Budget,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Criterion => "criterion",
            StopReason::Budget => "budget",
        }
    }
}

/// Settings of a per-task optimization run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub material: MaterialModel,
    /// Adam learning rate of the neural path.
    pub learning_rate: f64,
    pub stopping: StoppingConfig,
    /// Density filter radius in element units; `None` selects 1/32 of the
    /// domain width.
    pub filter_radius: Option<f64>,
    /// MMA move limit for the conventional path.
    pub move_limit: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            material: MaterialModel::default(),
            learning_rate: 1e-4,
            stopping: StoppingConfig::default(),
            filter_radius: None,
            move_limit: 0.2,
        }
    }
}

impl OptimizeConfig {
    fn radius(&self, disc: &Discretization) -> f64 {
        self.filter_radius
            .unwrap_or_else(|| DensityFilter::default_radius(disc))
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Normalized compliance per iteration.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Compliance of the final continuous design.
    pub c_continuous: f64,
    /// Compliance of the final design after volume-preserving thresholding.
    pub c_thresholded: f64,
    pub wall_seconds: f64,
    /// Final physical (continuous) density field.
    pub final_continuous: DensityField,
    /// Final thresholded density field.
    pub final_thresholded: DensityField,
}

/// The differentiable chain network -> density filter -> volume projection
/// -> equilibrium -> normalized compliance, for one task.
pub struct NeuralPipeline {
    task: Task,
    config: OptimizeConfig,
    coords: Array2<f64>,
    filter: Arc<DensityFilter>,
}

/// Forward intermediates of one pipeline evaluation.
pub struct PipelineEval {
    pub loss: f64,
    pub state: FieldState,
    pub rho_tilde: Vec<f64>,
    rho_bar: Vec<f64>,
    shift: f64,
    net_trace: crate::network::ForwardTrace,
}

impl NeuralPipeline {
    pub fn new(task: &Task, config: &OptimizeConfig) -> Self {
        let disc = task.disc;
        Self {
            task: task.clone(),
            config: *config,
            coords: disc.centroids_normalized(),
            filter: DensityFilter::cached(&disc, config.radius(&disc)),
        }
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    fn energy_input<'a>(&'a self, params: &NetworkParameters) -> Option<&'a [f64]> {
        params
            .config
            .conditioned
            .then_some(self.task.energy.as_slice())
    }

    /// One forward evaluation: raw output, filter, projection, solve.
    pub fn evaluate(&self, params: &NetworkParameters) -> Result<PipelineEval, OptimError> {
        let (raw, net_trace) =
            forward_with_trace(params, &self.coords.view(), self.energy_input(params))?;
        let rho_bar = self.filter.apply(&raw);
        let (rho_tilde, shift) = sigmoid_volume_project(&rho_bar, self.task.vstar)?;
        let state = assemble_solve(&self.task.disc, &self.task.bc, &self.config.material, &rho_tilde)?;
        let loss = state.compliance / self.task.c_ref;
        Ok(PipelineEval {
            loss,
            state,
            rho_tilde,
            rho_bar,
            shift,
            net_trace,
        })
    }

    /// Reverse chain: compliance sensitivities -> projection backward ->
    /// filter transpose -> network backward. Returns `d loss / d params`.
    pub fn gradient(&self, params: &NetworkParameters, eval: &PipelineEval) -> Vec<f64> {
        let dc = compliance_sensitivities(
            &self.task.disc,
            &eval.state,
            &eval.rho_tilde,
            &self.config.material,
        );
        let dl_drho_tilde: Vec<f64> = dc.iter().map(|&d| d / self.task.c_ref).collect();
        let dl_drho_bar =
            crate::filters::project_backward(&eval.rho_bar, &eval.rho_tilde, eval.shift, &dl_drho_tilde);
        let dl_draw = self.filter.apply_transpose(&dl_drho_bar);
        backward_from_trace(params, &eval.net_trace, &dl_draw)
    }

    /// Loss and its parameter gradient in one call.
    pub fn loss_and_gradient(&self, params: &NetworkParameters) -> Result<(f64, Vec<f64>), OptimError> {
        let eval = self.evaluate(params)?;
        let grad = self.gradient(params, &eval);
        Ok((eval.loss, grad))
    }
}

/// The continuous design a parameter vector produces for a task: forward
/// pass, density filter, volume projection. Used as the hand-off surface to
/// the conventional optimizer and for rendering initial designs.
pub fn network_initial_design(
    params: &NetworkParameters,
    task: &Task,
    config: &OptimizeConfig,
) -> Result<DensityField, OptimError> {
    let pipeline = NeuralPipeline::new(task, config);
    let eval = pipeline.evaluate(params)?;
    Ok(DensityField::new(eval.rho_tilde, DensityStage::Projected))
}

/// Runs the neural optimization loop on one task from the given parameters.
/// Records the normalized loss per iteration, stops by criterion or budget,
/// and evaluates the thresholded final design with one extra solve.
pub fn neural_optimize(
    task: &Task,
    mut params: NetworkParameters,
    config: &OptimizeConfig,
) -> Result<(RunRecord, NetworkParameters), OptimError> {
    let start = Instant::now();
    let pipeline = NeuralPipeline::new(task, config);
    let mut adam = AdamState::new(params.len());
    let mut trace = Vec::new();
    let stopping = config.stopping;

    loop {
        let eval = pipeline.evaluate(&params)?;
        if !eval.loss.is_finite() {
            return Err(OptimError::NonFiniteLoss {
                iteration: trace.len() + 1,
            });
        }
        trace.push(eval.loss);

        let reason = if stopping_check(&trace, stopping.epsilon, stopping.min_iters) {
            Some(StopReason::Criterion)
        } else if trace.len() >= stopping.max_iters {
            Some(StopReason::Budget)
        } else {
            None
        };
        if let Some(stop_reason) = reason {
            let binary = threshold_volume_preserving(&eval.rho_tilde, task.vstar);
            let c_thresholded =
                assemble_solve(&task.disc, &task.bc, &config.material, &binary)?.compliance;
            let iterations = trace.len();
            return Ok((
                RunRecord {
                    loss_trace: trace,
                    iterations,
                    stop_reason,
                    c_continuous: eval.state.compliance,
                    c_thresholded,
                    wall_seconds: start.elapsed().as_secs_f64(),
                    final_continuous: DensityField::new(eval.rho_tilde, DensityStage::Projected),
                    final_thresholded: DensityField::new(binary, DensityStage::Binary),
                },
                params,
            ));
        }

        let grad = pipeline.gradient(&params, &eval);
        adam.step(&mut params.values, &grad, config.learning_rate)?;
    }
}

/// Runs conventional density-based optimization (MMA on the design
/// variables behind the density filter) with the explicit volume constraint
/// `sum(rho_i v_i) <= vstar * N` on the physical field. Loss is normalized
/// by `c_ref` so traces are comparable with the neural path.
pub fn standard_optimize(
    task: &Task,
    config: &OptimizeConfig,
    init: Option<&DensityField>,
) -> Result<RunRecord, OptimError> {
    let start = Instant::now();
    let disc = task.disc;
    let n = disc.num_elements();
    let filter = DensityFilter::cached(&disc, config.radius(&disc));
    let x0: Vec<f64> = match init {
        Some(field) => {
            assert_eq!(field.values.len(), n, "init length mismatch");
            field.values.iter().map(|v| v.clamp(0.0, 1.0)).collect()
        }
        None => vec![task.vstar; n],
    };
    let mut mma = MmaState::new(x0, config.move_limit);
    let mut trace = Vec::new();
    let stopping = config.stopping;
    let dgdx = filter.apply_transpose(&vec![1.0; n]);

    loop {
        let rho_bar = filter.apply(mma.current());
        let state = assemble_solve(&disc, &task.bc, &config.material, &rho_bar)?;
        let loss = state.compliance / task.c_ref;
        if !loss.is_finite() {
            return Err(OptimError::NonFiniteLoss {
                iteration: trace.len() + 1,
            });
        }
        trace.push(loss);

        let reason = if stopping_check(&trace, stopping.epsilon, stopping.min_iters) {
            Some(StopReason::Criterion)
        } else if trace.len() >= stopping.max_iters {
            Some(StopReason::Budget)
        } else {
            None
        };
        if let Some(stop_reason) = reason {
            let binary = threshold_volume_preserving(&rho_bar, task.vstar);
            let c_thresholded =
                assemble_solve(&disc, &task.bc, &config.material, &binary)?.compliance;
            let iterations = trace.len();
            return Ok(RunRecord {
                loss_trace: trace,
                iterations,
                stop_reason,
                c_continuous: state.compliance,
                c_thresholded,
                wall_seconds: start.elapsed().as_secs_f64(),
                final_continuous: DensityField::new(rho_bar, DensityStage::Filtered),
                final_thresholded: DensityField::new(binary, DensityStage::Binary),
            });
        }

        let dc = compliance_sensitivities(&disc, &state, &rho_bar, &config.material);
        let df0dx = filter.apply_transpose(&dc);
        let gval = rho_bar.iter().sum::<f64>() - task.vstar * n as f64;
        mma_step(&mut mma, &df0dx, gval, &dgdx)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::BoundaryConditions;
    use crate::network::{init_standard, NetworkConfig};
    use crate::taskgen::{validate_annotate, Regime, TaskCandidate};

    fn small_task(nelx: usize, nely: usize, vstar: f64) -> Task {
        let disc = Discretization::new(nelx, nely);
        let mut fixed = Vec::new();
        for iy in 0..=nely {
            let n = disc.node_index(0, iy);
            fixed.extend([2 * n, 2 * n + 1]);
        }
        let tip = disc.node_index(nelx, nely / 2);
        let candidate = TaskCandidate {
            bc: BoundaryConditions::new(fixed, vec![(2 * tip + 1, -1.0)]),
            vstar,
        };
        validate_annotate(&disc, candidate, 1, Regime::InDist).unwrap()
    }

    fn tiny_net(seed: u64) -> NetworkParameters {
        init_standard(
            &NetworkConfig {
                conditioned: true,
                hidden_width: 8,
                hidden_layers: 2,
                omega0: 30.0,
            },
            seed,
        )
    }

    #[test]
    fn stopping_rule_boundaries() {
        // constant trace of length 11 stops
        assert!(stopping_check(&vec![1.0; 11], 1e-5, 10));
        // too early regardless of flatness
        assert!(!stopping_check(&[1.0, 0.5], 1e-5, 10));
        assert!(!stopping_check(&[1.0, 1.0], 1e-5, 10));
        // strict inequality at the boundary |dL| = eps (1 + |L_prev|);
        // dyadic values keep the threshold arithmetic exact
        let eps = 2f64.powi(-20);
        let mut trace = vec![1.0; 10];
        trace.push(1.0 + 2.0 * eps); // |dL| == eps * (1 + 1) exactly
        assert!(!stopping_check(&trace, eps, 10));
        let mut trace = vec![1.0; 10];
        trace.push(1.0 + 1.5 * eps); // just inside
        assert!(stopping_check(&trace, eps, 10));
        // below min it never fires
        assert!(!stopping_check(&[1.0, 1.0 + 1e-9], 1e-5, 10));
    }

    #[test]
    fn constant_output_network_gives_unit_first_loss() {
        let task = small_task(8, 8, 0.37);
        let pipeline = NeuralPipeline::new(&task, &OptimizeConfig::default());
        // all-zero parameters produce a constant (zero) raw field
        let params = NetworkParameters::zeros(NetworkConfig {
            conditioned: true,
            hidden_width: 8,
            hidden_layers: 2,
            omega0: 30.0,
        });
        let eval = pipeline.evaluate(&params).unwrap();
        assert!((eval.loss - 1.0).abs() < 1e-6, "loss {}", eval.loss);
    }

    #[test]
    fn neural_gradient_matches_finite_differences_end_to_end() {
        let task = small_task(6, 6, 0.4);
        let config = OptimizeConfig::default();
        let pipeline = NeuralPipeline::new(&task, &config);
        let params = tiny_net(3);
        let (_, grad) = pipeline.loss_and_gradient(&params).unwrap();

        let mut rng = crate::rng::substream(77, "optim-test");
        use rand::Rng;
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for _ in 0..50 {
            let k = rng.gen_range(0..params.len());
            let mut plus = params.clone();
            plus.values[k] += h;
            let mut minus = params.clone();
            minus.values[k] -= h;
            let lp = pipeline.evaluate(&plus).unwrap().loss;
            let lm = pipeline.evaluate(&minus).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn neural_optimize_improves_over_first_iteration() {
        let task = small_task(20, 20, 0.4);
        let mut config = OptimizeConfig::default();
        config.stopping.max_iters = 50;
        config.stopping.min_iters = 50; // force the full budget
        let params = init_standard(
            &NetworkConfig {
                conditioned: true,
                hidden_width: 16,
                hidden_layers: 2,
                omega0: 30.0,
            },
            5,
        );
        let (record, _) = neural_optimize(&task, params, &config).unwrap();
        assert_eq!(record.iterations, 50);
        assert_eq!(record.stop_reason, StopReason::Budget);
        let best = record.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            best < record.loss_trace[0],
            "best {best} vs first {}",
            record.loss_trace[0]
        );
        // densities stay volume-feasible at every recorded stage
        assert!((record.final_continuous.mean() - task.vstar).abs() < 1e-6);
        let solid = record
            .final_thresholded
            .values
            .iter()
            .filter(|&&v| v == 1.0)
            .count();
        assert_eq!(solid, (task.vstar * 400.0).round() as usize);
    }

    #[test]
    fn budget_stop_is_reported() {
        let task = small_task(6, 6, 0.3);
        let mut config = OptimizeConfig::default();
        config.stopping.max_iters = 12;
        config.stopping.min_iters = 12;
        let (record, _) = neural_optimize(&task, tiny_net(9), &config).unwrap();
        assert_eq!(record.iterations, 12);
        assert_eq!(record.stop_reason, StopReason::Budget);
    }

    #[test]
    fn standard_optimize_is_volume_feasible_at_every_iterate() {
        let task = small_task(10, 8, 0.45);
        let mut config = OptimizeConfig::default();
        config.stopping.max_iters = 30;
        config.stopping.min_iters = 30;
        // replicate the loop to watch each iterate
        let disc = task.disc;
        let n = disc.num_elements();
        let filter = DensityFilter::cached(&disc, config.radius(&disc));
        let mut mma = MmaState::new(vec![task.vstar; n], config.move_limit);
        let dgdx = filter.apply_transpose(&vec![1.0; n]);
        for _ in 0..30 {
            let rho_bar = filter.apply(mma.current());
            let mean = rho_bar.iter().sum::<f64>() / n as f64;
            assert!(mean <= task.vstar + 1e-6, "mean {mean} vs {}", task.vstar);
            let state = assemble_solve(&disc, &task.bc, &config.material, &rho_bar).unwrap();
            let dc = compliance_sensitivities(&disc, &state, &rho_bar, &config.material);
            let df0dx = filter.apply_transpose(&dc);
            let gval = rho_bar.iter().sum::<f64>() - task.vstar * n as f64;
            mma_step(&mut mma, &df0dx, gval, &dgdx).unwrap();
        }
        // and the packaged runner agrees
        let record = standard_optimize(&task, &config, None).unwrap();
        assert!(record.c_continuous > 0.0);
        assert!((record.final_continuous.mean() - task.vstar).abs() < 1e-3);
    }

    #[test]
    fn standard_optimize_accepts_network_initial_design() {
        let task = small_task(8, 8, 0.4);
        let mut config = OptimizeConfig::default();
        config.stopping.max_iters = 15;
        config.stopping.min_iters = 10;
        let params = tiny_net(4);
        let init = network_initial_design(&params, &task, &config).unwrap();
        let from_net = standard_optimize(&task, &config, Some(&init)).unwrap();
        let again = standard_optimize(&task, &config, Some(&init)).unwrap();
        assert_eq!(from_net.loss_trace, again.loss_trace);
        assert_eq!(from_net.iterations, again.iterations);
    }

    #[test]
    fn runs_are_deterministic() {
        let task = small_task(8, 6, 0.35);
        let mut config = OptimizeConfig::default();
        config.stopping.max_iters = 20;
        config.stopping.min_iters = 10;
        let (a, pa) = neural_optimize(&task, tiny_net(21), &config).unwrap();
        let (b, pb) = neural_optimize(&task, tiny_net(21), &config).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(pa.values, pb.values);
        assert_eq!(a.c_thresholded, b.c_thresholded);
    }

    #[test]
    fn recorded_compliance_is_reproducible_from_the_stored_design() {
        let task = small_task(9, 7, 0.42);
        let mut config = OptimizeConfig::default();
        config.stopping.max_iters = 15;
        config.stopping.min_iters = 10;
        let (record, _) = neural_optimize(&task, tiny_net(30), &config).unwrap();
        let again = assemble_solve(
            &task.disc,
            &task.bc,
            &config.material,
            &record.final_continuous.values,
        )
        .unwrap();
        assert!((again.compliance - record.c_continuous).abs() <= 1e-9 * record.c_continuous);
    }
}
