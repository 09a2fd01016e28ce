//! Sine-activated coordinate network with residual blocks.
//!
//! The network maps per-element rows `(x, y, E)` (or `(x, y)` when
//! unconditioned) to a raw density logit. Evaluation is row-wise
//! independent, which makes the representation mesh-agnostic: the same
//! parameters evaluate on any discretization, and identical input rows give
//! identical outputs regardless of batch composition.
//!
//! Architecture: a sine input layer, `hidden_layers` sine layers of
//! `hidden_width` grouped pairwise into residual blocks
//! (`h <- h + sin(w0 (W2 sin(w0 (W1 h + b1)) + b2))`; a trailing unpaired
//! layer is applied without a skip), and a linear output layer. The
//! frequency scale `w0` multiplies every sine pre-activation. Gradients are
//! hand-written reverse mode; a forward-mode directional derivative is
//! provided for adjoint consistency checks.

use crate::rng::substream;
use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Row chunk processed at a time during backward passes; bounds peak memory
/// on large batches without changing results (batch gradients are sums of
/// per-row gradients).
const BACKWARD_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Whether the strain-energy value is appended to the coordinate input.
    pub conditioned: bool,
    pub hidden_width: usize,
    /// Number of width-to-width sine layers after the input layer.
    pub hidden_layers: usize,
    /// Frequency scale of all sine pre-activations.
    pub omega0: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::conditioned_default()
    }
}

impl NetworkConfig {
    /// Default conditioned model: 4 hidden layers of width 256 in two
    /// residual blocks, `w0 = 60`.
    pub fn conditioned_default() -> Self {
        Self {
            conditioned: true,
            hidden_width: 256,
            hidden_layers: 4,
            omega0: 60.0,
        }
    }

    /// Unconditioned ablation: coordinate-only input, `w0 = 30`.
    pub fn unconditioned_default() -> Self {
        Self {
            conditioned: false,
            hidden_width: 256,
            hidden_layers: 4,
            omega0: 30.0,
        }
    }

    pub fn input_width(&self) -> usize {
        if self.conditioned {
            3
        } else {
            2
        }
    }

    /// Exact learnable-parameter count:
    /// `(in*w + w) + hidden_layers*(w*w + w) + (w + 1)`.
    pub fn count_params(&self) -> usize {
        let w = self.hidden_width;
        (self.input_width() * w + w) + self.hidden_layers * (w * w + w) + (w + 1)
    }

    fn validate(&self) {
        assert!(self.hidden_width > 0, "hidden width must be positive");
        assert!(self.omega0 > 0.0, "omega0 must be positive");
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    w_off: usize,
    b_off: usize,
    rows: usize,
    cols: usize,
}

impl LayerSlot {
    fn weights<'a>(&self, values: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.rows, self.cols),
            &values[self.w_off..self.w_off + self.rows * self.cols],
        )
        .unwrap()
    }

    fn bias<'a>(&self, values: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from_shape(self.rows, &values[self.b_off..self.b_off + self.rows]).unwrap()
    }
}

/// Per-layer offsets/shapes for a config: input sine layer, hidden sine
/// layers, linear output layer, in parameter order (row-major weights, then
/// bias, per layer).
#[derive(Debug, Clone, PartialEq, Eq)]
struct ParamLayout {
    input: LayerSlot,
    hidden: Vec<LayerSlot>,
    output: LayerSlot,
    total: usize,
}

impl ParamLayout {
    fn new(cfg: &NetworkConfig) -> Self {
        cfg.validate();
        let w = cfg.hidden_width;
        let mut off = 0usize;
        let mut slot = |rows: usize, cols: usize| {
            let s = LayerSlot {
                w_off: off,
                b_off: off + rows * cols,
                rows,
                cols,
            };
            off += rows * cols + rows;
            s
        };
        let input = slot(w, cfg.input_width());
        let hidden: Vec<LayerSlot> = (0..cfg.hidden_layers).map(|_| slot(w, w)).collect();
        let output = slot(1, w);
        Self {
            input,
            hidden,
            output,
            total: off,
        }
    }

    /// Number of full residual pairs among the hidden layers.
    fn pairs(&self) -> usize {
        self.hidden.len() / 2
    }

    /// Whether an unpaired hidden layer trails the residual blocks.
    fn trailing(&self) -> bool {
        self.hidden.len() % 2 == 1
    }
}

/// Origin of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    StandardInit,
    MetaLearned,
    Pretrained,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::StandardInit => "standard-init",
            Provenance::MetaLearned => "meta-learned",
            Provenance::Pretrained => "pretrained",
        }
    }
}

/// Flat parameter vector plus its layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub config: NetworkConfig,
    pub provenance: Provenance,
    pub values: Vec<f64>,
}

impl NetworkParameters {
    pub fn zeros(config: NetworkConfig) -> Self {
        let n = config.count_params();
        Self {
            config,
            provenance: Provenance::StandardInit,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Standard sine-network initialization: first-layer weights uniform in
/// `+-1/fan_in`, later layers uniform in `+-sqrt(6/fan_in)/w0`, biases zero.
/// Deterministic per seed.
pub fn init_standard(cfg: &NetworkConfig, seed: u64) -> NetworkParameters {
    let layout = ParamLayout::new(cfg);
    let mut values = vec![0.0f64; layout.total];
    let mut rng = substream(seed, "network-init");

    let hidden_bound = (6.0 / cfg.hidden_width as f64).sqrt() / cfg.omega0;
    let mut slots = vec![(layout.input, 1.0 / cfg.input_width() as f64)];
    slots.extend(layout.hidden.iter().map(|s| (*s, hidden_bound)));
    slots.push((layout.output, hidden_bound));
    for (slot, bound) in slots {
        for w in values[slot.w_off..slot.w_off + slot.rows * slot.cols].iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        // biases stay zero
    }

    NetworkParameters {
        config: *cfg,
        provenance: Provenance::StandardInit,
        values,
    }
}

/// Forward intermediates: the assembled input matrix and every sine
/// pre-activation (`P = w0 (X W^T + b)`, stored in layer order). Hidden
/// activations are rebuilt from these on demand, keeping the trace at one
/// matrix per sine layer.
pub struct ForwardTrace {
    inputs: Array2<f64>,
    preacts: Vec<Array2<f64>>,
}

fn check_inputs(
    cfg: &NetworkConfig,
    coords: &ArrayView2<f64>,
    energy: Option<&[f64]>,
) -> Result<(), NetworkError> {
    if coords.ncols() != 2 {
        return Err(NetworkError::ShapeMismatch(format!(
            "coords must have 2 columns, got {}",
            coords.ncols()
        )));
    }
    match (cfg.conditioned, energy) {
        (true, None) => Err(NetworkError::ShapeMismatch(
            "conditioned network requires a strain-energy input".into(),
        )),
        (false, Some(_)) => Err(NetworkError::ShapeMismatch(
            "unconditioned network takes no strain-energy input".into(),
        )),
        (true, Some(e)) if e.len() != coords.nrows() => Err(NetworkError::ShapeMismatch(format!(
            "energy length {} != row count {}",
            e.len(),
            coords.nrows()
        ))),
        _ => Ok(()),
    }
}

fn assemble_inputs(
    cfg: &NetworkConfig,
    coords: &ArrayView2<f64>,
    energy: Option<&[f64]>,
) -> Array2<f64> {
    let n = coords.nrows();
    let mut z = Array2::zeros((n, cfg.input_width()));
    z.slice_mut(s![.., 0..2]).assign(coords);
    if let Some(e) = energy {
        for (i, &v) in e.iter().enumerate() {
            z[[i, 2]] = v;
        }
    }
    z
}

/// `w0 (X W^T + b)` for one layer.
fn preactivation(x: &ArrayView2<f64>, slot: &LayerSlot, values: &[f64], omega: f64) -> Array2<f64> {
    let mut a = x.dot(&slot.weights(values).t());
    let b = slot.bias(values);
    for mut row in a.rows_mut() {
        row += &b;
    }
    a.mapv_inplace(|v| omega * v);
    a
}

/// Runs the network on a batch of rows, saving the trace for
/// [`backward_from_trace`].
pub fn forward_with_trace(
    params: &NetworkParameters,
    coords: &ArrayView2<f64>,
    energy: Option<&[f64]>,
) -> Result<(Vec<f64>, ForwardTrace), NetworkError> {
    check_inputs(&params.config, coords, energy)?;
    let layout = ParamLayout::new(&params.config);
    let omega = params.config.omega0;
    let z = assemble_inputs(&params.config, coords, energy);

    let mut preacts = Vec::with_capacity(1 + layout.hidden.len());
    preacts.push(preactivation(&z.view(), &layout.input, &params.values, omega));
    let mut h = preacts[0].mapv(f64::sin);

    for blk in 0..layout.pairs() {
        let pa = preactivation(&h.view(), &layout.hidden[2 * blk], &params.values, omega);
        let t = pa.mapv(f64::sin);
        preacts.push(pa);
        let pb = preactivation(&t.view(), &layout.hidden[2 * blk + 1], &params.values, omega);
        h += &pb.mapv(f64::sin);
        preacts.push(pb);
    }
    if layout.trailing() {
        let last = layout.hidden.len() - 1;
        let pc = preactivation(&h.view(), &layout.hidden[last], &params.values, omega);
        h = pc.mapv(f64::sin);
        preacts.push(pc);
    }

    let mut out = h.dot(&layout.output.weights(&params.values).t());
    out += params.values[layout.output.b_off];
    Ok((out.column(0).to_vec(), ForwardTrace { inputs: z, preacts }))
}

/// Raw network output for a batch of rows; row-wise independent.
pub fn forward(
    params: &NetworkParameters,
    coords: &ArrayView2<f64>,
    energy: Option<&[f64]>,
) -> Result<Vec<f64>, NetworkError> {
    forward_with_trace(params, coords, energy).map(|(out, _)| out)
}

/// Rebuilds, for a row range, the input matrix seen by each sine layer
/// (indexed `0 = input layer`, `1 + l = hidden layer l`) and the input of
/// the output layer.
fn rebuild_layer_inputs(
    trace: &ForwardTrace,
    layout: &ParamLayout,
    r0: usize,
    r1: usize,
) -> (Vec<Array2<f64>>, Array2<f64>) {
    let mut xs: Vec<Array2<f64>> = Vec::with_capacity(1 + layout.hidden.len());
    xs.push(trace.inputs.slice(s![r0..r1, ..]).to_owned());
    let mut h = trace.preacts[0].slice(s![r0..r1, ..]).mapv(f64::sin);

    for blk in 0..layout.pairs() {
        xs.push(h.clone()); // input of layer 2*blk (the block input)
        let t = trace.preacts[1 + 2 * blk].slice(s![r0..r1, ..]).mapv(f64::sin);
        xs.push(t); // input of layer 2*blk + 1
        h += &trace.preacts[1 + 2 * blk + 1]
            .slice(s![r0..r1, ..])
            .mapv(f64::sin);
    }
    if layout.trailing() {
        let last = layout.hidden.len() - 1;
        xs.push(h.clone());
        h = trace.preacts[1 + last].slice(s![r0..r1, ..]).mapv(f64::sin);
    }
    (xs, h)
}

/// Reverse-mode gradient of `<cotangent, forward(params, .)>` with respect
/// to the flat parameter vector, using a saved trace.
pub fn backward_from_trace(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    cotangent: &[f64],
) -> Vec<f64> {
    let layout = ParamLayout::new(&params.config);
    let omega = params.config.omega0;
    let n = trace.inputs.nrows();
    assert_eq!(cotangent.len(), n, "cotangent length mismatch");

    let mut grad = vec![0.0f64; layout.total];
    let mut r0 = 0;
    while r0 < n {
        let r1 = (r0 + BACKWARD_CHUNK).min(n);
        let (xs, h_out) = rebuild_layer_inputs(trace, &layout, r0, r1);
        let cot = ArrayView2::from_shape((r1 - r0, 1), &cotangent[r0..r1]).unwrap();

        // linear output layer
        {
            let slot = &layout.output;
            let dw = cot.t().dot(&h_out);
            for (g, v) in grad[slot.w_off..slot.w_off + slot.cols].iter_mut().zip(dw.iter()) {
                *g += v;
            }
            grad[slot.b_off] += cot.sum();
        }
        let mut dh = cot.dot(&layout.output.weights(&params.values));

        // backprop through one sine layer: accumulates dW, db, returns dX
        let sine_backward = |dout: &Array2<f64>,
                                 preact_idx: usize,
                                 slot: &LayerSlot,
                                 x: &Array2<f64>,
                                 grad: &mut [f64]|
         -> Array2<f64> {
            let p = trace.preacts[preact_idx].slice(s![r0..r1, ..]);
            let mut da = dout.clone();
            ndarray::Zip::from(&mut da).and(&p).for_each(|d, &pv| {
                *d *= omega * pv.cos();
            });
            let dw = da.t().dot(x);
            for (g, v) in grad[slot.w_off..slot.w_off + slot.rows * slot.cols]
                .iter_mut()
                .zip(dw.iter())
            {
                *g += v;
            }
            let db = da.sum_axis(Axis(0));
            for (g, v) in grad[slot.b_off..slot.b_off + slot.rows].iter_mut().zip(db.iter()) {
                *g += v;
            }
            da.dot(&slot.weights(&params.values))
        };

        if layout.trailing() {
            let last = layout.hidden.len() - 1;
            dh = sine_backward(&dh, 1 + last, &layout.hidden[last], &xs[1 + last], &mut grad);
        }
        for blk in (0..layout.pairs()).rev() {
            let (la, lb) = (2 * blk, 2 * blk + 1);
            let dt = sine_backward(&dh, 1 + lb, &layout.hidden[lb], &xs[1 + lb], &mut grad);
            let dx = sine_backward(&dt, 1 + la, &layout.hidden[la], &xs[1 + la], &mut grad);
            dh += &dx; // skip connection
        }
        let _ = sine_backward(&dh, 0, &layout.input, &xs[0], &mut grad);

        r0 = r1;
    }
    grad
}

/// Gradient of `<cotangent, forward(params, inputs)>`; recomputes the
/// forward trace internally.
pub fn backward(
    params: &NetworkParameters,
    coords: &ArrayView2<f64>,
    energy: Option<&[f64]>,
    cotangent: &[f64],
) -> Result<Vec<f64>, NetworkError> {
    let (_, trace) = forward_with_trace(params, coords, energy)?;
    Ok(backward_from_trace(params, &trace, cotangent))
}

/// Forward-mode directional derivative: `(output, J . tangent)` for a
/// parameter-space tangent. Used by adjoint consistency checks.
pub fn forward_jvp(
    params: &NetworkParameters,
    tangent: &[f64],
    coords: &ArrayView2<f64>,
    energy: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>), NetworkError> {
    check_inputs(&params.config, coords, energy)?;
    let layout = ParamLayout::new(&params.config);
    assert_eq!(tangent.len(), layout.total, "tangent length mismatch");
    let omega = params.config.omega0;
    let z = assemble_inputs(&params.config, coords, energy);

    // dual dense layer: value and tangent of X W^T + b
    let dual_dense = |x: &Array2<f64>, dx: Option<&Array2<f64>>, slot: &LayerSlot| {
        let w = slot.weights(&params.values);
        let dw = slot.weights(tangent);
        let mut a = x.dot(&w.t());
        let b = slot.bias(&params.values);
        for mut row in a.rows_mut() {
            row += &b;
        }
        let mut da = x.dot(&dw.t());
        if let Some(dx) = dx {
            da += &dx.dot(&w.t());
        }
        let db = slot.bias(tangent);
        for mut row in da.rows_mut() {
            row += &db;
        }
        (a, da)
    };
    let dual_sine = |a: Array2<f64>, da: Array2<f64>| {
        let p = a.mapv(|v| omega * v);
        let h = p.mapv(f64::sin);
        let mut dh = da.mapv(|v| omega * v);
        ndarray::Zip::from(&mut dh).and(&p).for_each(|d, &pv| {
            *d *= pv.cos();
        });
        (h, dh)
    };

    let (a, da) = dual_dense(&z, None, &layout.input);
    let (mut h, mut dh) = dual_sine(a, da);

    for blk in 0..layout.pairs() {
        let (a1, da1) = dual_dense(&h, Some(&dh), &layout.hidden[2 * blk]);
        let (t, dt) = dual_sine(a1, da1);
        let (a2, da2) = dual_dense(&t, Some(&dt), &layout.hidden[2 * blk + 1]);
        let (u, du) = dual_sine(a2, da2);
        h += &u;
        dh += &du;
    }
    if layout.trailing() {
        let last = layout.hidden.len() - 1;
        let (a, da) = dual_dense(&h, Some(&dh), &layout.hidden[last]);
        let (hn, dhn) = dual_sine(a, da);
        h = hn;
        dh = dhn;
    }

    let (out, dout) = dual_dense(&h, Some(&dh), &layout.output);
    Ok((out.column(0).to_vec(), dout.column(0).to_vec()))
}
