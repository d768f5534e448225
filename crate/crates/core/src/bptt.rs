//! Stacked recurrent network: forward over whole sequences, exact reverse-mode
//! gradients through time, and a central-difference oracle to check them.
//!
//! The classifier reads the top layer's hidden state at the final timestep
//! through one fully connected layer. Initial states are zero. Dropout (train
//! mode only) masks each layer's output sequence, resampled per timestep, with
//! inverted scaling; recurrent connections are never dropped.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::analysis::{AttentionTrace, LayerTrace};
use crate::cells::glorot_uniform;
use crate::cells::{
    eleatt_step_cached, CellCache, CellKind, CellParams, GateMode, InputGate, LayerParams,
    StepCache, StepState,
};
use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::numerics::{affine, axpy, matvec_t_acc, outer_acc, softmax, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: CellKind,
    pub mode: GateMode,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
    pub seed: u64,
    /// Initial LSTM forget-gate bias.
    #[serde(default)]
    pub forget_bias: f64,
}

impl NetworkSpec {
    /// `depth` identical layers of width `hidden` over inputs of width `input_dim`.
    #[allow(clippy::too_many_arguments)]
    pub fn stacked(
        kind: CellKind,
        mode: GateMode,
        input_dim: usize,
        hidden: usize,
        depth: usize,
        classes: usize,
        dropout_p: f64,
        seed: u64,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| LayerSpec {
                kind,
                mode,
                input_dim: if i == 0 { input_dim } else { hidden },
                hidden_dim: hidden,
                dropout_p,
            })
            .collect();
        NetworkSpec {
            layers,
            classes,
            seed,
            forget_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("network needs at least one layer".into()));
        }
        if self.classes < 2 {
            return Err(Error::Invalid(format!("class count {} < 2", self.classes)));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.input_dim == 0 || l.hidden_dim == 0 {
                return Err(Error::Invalid(format!("layer {i} has a zero dimension")));
            }
            if !(0.0..1.0).contains(&l.dropout_p) {
                return Err(Error::Invalid(format!(
                    "layer {i} dropout {} outside [0, 1)",
                    l.dropout_p
                )));
            }
            if i > 0 && self.layers[i - 1].hidden_dim != l.input_dim {
                return Err(Error::shape(
                    "NetworkSpec",
                    format!("layer {} output {}", i - 1, self.layers[i - 1].hidden_dim),
                    format!("layer {i} input {}", l.input_dim),
                ));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn top_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_dim)
    }

    pub fn without_dropout(&self) -> NetworkSpec {
        let mut s = self.clone();
        for l in &mut s.layers {
            l.dropout_p = 0.0;
        }
        s
    }
}

/// All trainable tensors of a network. Also used as the gradient and Adam-moment
/// container, since those share the parameter shape tree.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub fc_w: Matrix,
    pub fc_b: Vector,
}

pub type Gradients = NetworkParams;

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        NetworkParams {
            layers: spec
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.kind, l.mode, l.input_dim, l.hidden_dim))
                .collect(),
            fc_w: Matrix::zeros(spec.classes, spec.top_dim()),
            fc_b: Vector::zeros(spec.classes),
        }
    }

    pub fn init(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                LayerParams::init(
                    l.kind,
                    l.mode,
                    l.input_dim,
                    l.hidden_dim,
                    spec.forget_bias,
                    rng,
                )
            })
            .collect();
        NetworkParams {
            layers,
            fc_w: glorot_uniform(spec.classes, spec.top_dim(), rng),
            fc_b: Vector::zeros(spec.classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Named tensors in serialization order: `layer{i}.<name>`, then `fc.w`, `fc.b`.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(
                l.tensors()
                    .into_iter()
                    .map(|(k, v)| (format!("layer{i}.{k}"), v)),
            );
        }
        out.push(("fc.w".into(), self.fc_w.as_slice()));
        out.push(("fc.b".into(), self.fc_b.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(self.fc_w.as_mut_slice());
        out.push(&mut self.fc_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flattened copy of every scalar in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    /// Path such as `layer0.w_xr[3]` for flat index `i`.
    pub fn path_of(&self, mut i: usize) -> String {
        for (name, t) in self.tensors() {
            if i < t.len() {
                return format!("{name}[{i}]");
            }
            i -= t.len();
        }
        format!("<out of range {i}>")
    }

    /// Mutable access to the scalar at flat index `i`.
    pub fn scalar_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if i < t.len() {
                return &mut t[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Checks that `other` has the same shape tree.
    pub fn check_congruent(&self, other: &NetworkParams) -> Result<()> {
        let a = self.tensors();
        let b = other.tensors();
        if a.len() != b.len()
            || a.iter()
                .zip(&b)
                .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.len() != t2.len())
        {
            return Err(Error::shape(
                "NetworkParams",
                "parameter tree",
                "incongruent tree",
            ));
        }
        Ok(())
    }

    pub fn check_spec(&self, spec: &NetworkSpec) -> Result<()> {
        NetworkParams::zeros(spec).check_congruent(self)?;
        for l in &self.layers {
            l.validate()?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    steps: Vec<StepCache>,
    /// Dropout multipliers applied to this layer's outputs; `None` when no dropout.
    masks: Option<Vec<Vector>>,
}

/// Per-sample record of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct SampleCache {
    layers: Vec<LayerCache>,
    /// Input to the classifier (top output at the last step, after dropout).
    top: Vector,
    logits: Vector,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<Vector>,
    /// Present for every sample in train mode, empty in eval mode.
    pub caches: Vec<SampleCache>,
    pub trace: AttentionTrace,
}

fn check_batch(spec: &NetworkSpec, batch: &SequenceBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if batch.dim() != spec.input_dim() {
        return Err(Error::shape(
            "forward_network",
            format!("layer 0 input {}", spec.input_dim()),
            format!("sequence width {}", batch.dim()),
        ));
    }
    if batch.steps() == 0 {
        return Err(Error::Empty("sequence"));
    }
    if batch.classes() > spec.classes {
        return Err(Error::Invalid(format!(
            "batch has {} classes, network only {}",
            batch.classes(),
            spec.classes
        )));
    }
    Ok(())
}

fn dropout_mask(len: usize, p: f64, rng: &mut dyn RngCore) -> Vector {
    let keep = 1.0 / (1.0 - p);
    Vector::from(
        (0..len)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect::<Vec<_>>(),
    )
}

/// Runs one sequence through the stack. Returns logits, the cache when
/// `keep_cache`, and per-layer attention responses when `record`.
fn forward_sample(
    spec: &NetworkSpec,
    params: &NetworkParams,
    seq: &Matrix,
    mode: Mode,
    rng: &mut dyn RngCore,
    keep_cache: bool,
    record: bool,
) -> Result<(Vector, Option<SampleCache>, Vec<Vec<Vector>>)> {
    let steps = seq.rows();
    let mut inputs: Vec<Vector> = (0..steps).map(|t| Vector::from(seq.row(t))).collect();
    let mut layer_caches = Vec::with_capacity(params.layers.len());
    let mut traces = Vec::new();
    for (ls, lp) in spec.layers.iter().zip(&params.layers) {
        let mut state = StepState::zeros(ls.kind, ls.hidden_dim);
        let mut outputs = Vec::with_capacity(steps);
        let mut step_caches = Vec::with_capacity(if keep_cache { steps } else { 0 });
        let mut trace = Vec::new();
        for x in &inputs {
            let (next, cache) = eleatt_step_cached(lp, x, &state)?;
            if record {
                if let Some(a) = cache.attention.primary() {
                    trace.push(a.clone());
                }
            }
            outputs.push(next.h.clone());
            if keep_cache {
                step_caches.push(cache);
            }
            state = next;
        }
        let masks = if mode == Mode::Train && ls.dropout_p > 0.0 {
            let masks: Vec<Vector> = (0..steps)
                .map(|_| dropout_mask(ls.hidden_dim, ls.dropout_p, rng))
                .collect();
            for (o, m) in outputs.iter_mut().zip(&masks) {
                for (v, k) in o.iter_mut().zip(m.iter()) {
                    *v *= k;
                }
            }
            Some(masks)
        } else {
            None
        };
        if record && ls.mode != GateMode::None {
            traces.push(trace);
        }
        if keep_cache {
            layer_caches.push(LayerCache {
                steps: step_caches,
                masks,
            });
        }
        inputs = outputs;
    }
    let top = inputs.pop().expect("non-empty sequence");
    let logits = affine(
        &params.fc_w,
        &top,
        &Matrix::zeros(spec.classes, 0),
        &Vector::zeros(0),
        &params.fc_b,
    )?;
    let cache = keep_cache.then(|| SampleCache {
        layers: layer_caches,
        top,
        logits: logits.clone(),
    });
    Ok((logits, cache, traces))
}

/// Logits for one sequence in eval mode, with no cache or trace.
pub fn predict(spec: &NetworkSpec, params: &NetworkParams, seq: &Matrix) -> Result<Vector> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    forward_sample(spec, params, seq, Mode::Eval, &mut rng, false, false).map(|(l, _, _)| l)
}

/// Forward pass over a batch. Caches are kept only in train mode; dropout only
/// applies in train mode and draws from `rng`.
pub fn forward_network(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &SequenceBatch,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<ForwardPass> {
    spec.validate()?;
    params.check_spec(spec)?;
    check_batch(spec, batch)?;
    let mut logits = Vec::with_capacity(batch.len());
    let mut caches = Vec::new();
    let mut layers: Vec<LayerTrace> = spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.mode != GateMode::None)
        .map(|(i, l)| LayerTrace {
            layer: i,
            mode: l.mode,
            width: if l.mode == GateMode::HiddenElement {
                l.hidden_dim
            } else {
                l.mode.input_gate_width(l.input_dim).unwrap_or(l.input_dim)
            },
            samples: Vec::with_capacity(batch.len()),
        })
        .collect();
    for s in batch.samples() {
        let (l, cache, traces) =
            forward_sample(spec, params, &s.seq, mode, rng, mode == Mode::Train, true)?;
        logits.push(l);
        caches.extend(cache);
        for (lt, t) in layers.iter_mut().zip(traces) {
            lt.samples.push(t);
        }
    }
    Ok(ForwardPass {
        logits,
        caches,
        trace: AttentionTrace { layers },
    })
}

/// Cross-entropy of one logit vector: `(-log softmax[label], softmax - onehot)`.
pub fn cross_entropy(logits: &Vector, label: usize) -> Result<(f64, Vector)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok(((max - logits[label]) + log_sum, Vector::from(grad)))
}

/// Mean cross-entropy over the batch for the given forward logits.
pub fn mean_loss(logits: &[Vector], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    let mut total = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        total += cross_entropy(l, y)?.0;
    }
    Ok(total / logits.len() as f64)
}

struct Scratch<'a> {
    grads: &'a mut LayerParams,
}

fn gate_backward(
    gate: &crate::cells::AttGateParams,
    grad: &mut crate::cells::AttGateParams,
    dpre: &[f64],
    x: &[f64],
    h: &[f64],
    dx: &mut [f64],
    dh: &mut [f64],
) {
    outer_acc(&mut grad.w_xa, dpre, x);
    outer_acc(&mut grad.w_ha, dpre, h);
    axpy(1.0, dpre, &mut grad.b_a);
    matvec_t_acc(&gate.w_xa, dpre, dx);
    matvec_t_acc(&gate.w_ha, dpre, dh);
}

/// Accumulates the gradient of one affine block `W_x·x + W_h·h + b` given the
/// gradient `dp` of its output.
#[allow(clippy::too_many_arguments)]
fn affine_backward(
    w_x: &Matrix,
    w_h: &Matrix,
    gw_x: &mut Matrix,
    gw_h: &mut Matrix,
    gb: &mut [f64],
    dp: &[f64],
    x: &[f64],
    h: &[f64],
    dx: &mut [f64],
    dh: &mut [f64],
) {
    outer_acc(gw_x, dp, x);
    outer_acc(gw_h, dp, h);
    axpy(1.0, dp, gb);
    matvec_t_acc(w_x, dp, dx);
    matvec_t_acc(w_h, dp, dh);
}

fn sig_grad(d: &[f64], s: &[f64]) -> Vec<f64> {
    d.iter().zip(s).map(|(d, s)| d * s * (1.0 - s)).collect()
}

fn tanh_grad(d: &[f64], t: &[f64]) -> Vec<f64> {
    d.iter().zip(t).map(|(d, t)| d * (1.0 - t * t)).collect()
}

/// Backward through the plain cell. Returns (d x̃, d h̃, d c_{t-1}).
fn cell_backward(
    cell: &CellParams,
    grads: &mut CellParams,
    cache: &StepCache,
    dh: &[f64],
    dc: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let (d, n) = cell.dims();
    let xm: &[f64] = &cache.x_mod;
    let hm: &[f64] = &cache.h_mod;
    let mut dxm = vec![0.0; d];
    let mut dhm = vec![0.0; n];
    match (cell, grads, &cache.cell) {
        (CellParams::Srnn(p), CellParams::Srnn(g), CellCache::Srnn(c)) => {
            let dp = tanh_grad(dh, &c.h);
            affine_backward(
                &p.w_xh,
                &p.w_hh,
                &mut g.w_xh,
                &mut g.w_hh,
                &mut g.b_h,
                &dp,
                xm,
                hm,
                &mut dxm,
                &mut dhm,
            );
            (dxm, dhm, None)
        }
        (CellParams::Lstm(p), CellParams::Lstm(g), CellCache::Lstm(c)) => {
            let mut dc_tot: Vec<f64> = (0..n)
                .map(|k| dh[k] * c.o[k] * (1.0 - c.tanh_c[k] * c.tanh_c[k]))
                .collect();
            if let Some(dc) = dc {
                axpy(1.0, dc, &mut dc_tot);
            }
            let d_o: Vec<f64> = (0..n).map(|k| dh[k] * c.tanh_c[k]).collect();
            let d_i: Vec<f64> = (0..n).map(|k| dc_tot[k] * c.g[k]).collect();
            let d_g: Vec<f64> = (0..n).map(|k| dc_tot[k] * c.i[k]).collect();
            let d_f: Vec<f64> = (0..n).map(|k| dc_tot[k] * c.c_prev[k]).collect();
            let dc_prev: Vec<f64> = (0..n).map(|k| dc_tot[k] * c.f[k]).collect();
            let dpi = sig_grad(&d_i, &c.i);
            let dpf = sig_grad(&d_f, &c.f);
            let dpg = tanh_grad(&d_g, &c.g);
            let dpo = sig_grad(&d_o, &c.o);
            affine_backward(
                &p.w_xi,
                &p.w_hi,
                &mut g.w_xi,
                &mut g.w_hi,
                &mut g.b_i,
                &dpi,
                xm,
                hm,
                &mut dxm,
                &mut dhm,
            );
            affine_backward(
                &p.w_xf,
                &p.w_hf,
                &mut g.w_xf,
                &mut g.w_hf,
                &mut g.b_f,
                &dpf,
                xm,
                hm,
                &mut dxm,
                &mut dhm,
            );
            affine_backward(
                &p.w_xc,
                &p.w_hc,
                &mut g.w_xc,
                &mut g.w_hc,
                &mut g.b_c,
                &dpg,
                xm,
                hm,
                &mut dxm,
                &mut dhm,
            );
            affine_backward(
                &p.w_xo,
                &p.w_ho,
                &mut g.w_xo,
                &mut g.w_ho,
                &mut g.b_o,
                &dpo,
                xm,
                hm,
                &mut dxm,
                &mut dhm,
            );
            (dxm, dhm, Some(dc_prev))
        }
        (CellParams::Gru(p), CellParams::Gru(g), CellCache::Gru(c)) => {
            // h = z⊙h̃ + (1-z)⊙h'
            let dz: Vec<f64> = (0..n).map(|k| dh[k] * (hm[k] - c.cand[k])).collect();
            let dcand: Vec<f64> = (0..n).map(|k| dh[k] * (1.0 - c.z[k])).collect();
            for k in 0..n {
                dhm[k] += dh[k] * c.z[k];
            }
            let dpn = tanh_grad(&dcand, &c.cand);
            let mut drh = vec![0.0; n];
            affine_backward(
                &p.w_xh,
                &p.w_hh,
                &mut g.w_xh,
                &mut g.w_hh,
                &mut g.b_h,
                &dpn,
                xm,
                &c.rh,
                &mut dxm,
                &mut drh,
            );
            let dr: Vec<f64> = (0..n).map(|k| drh[k] * hm[k]).collect();
            for k in 0..n {
                dhm[k] += drh[k] * c.r[k];
            }
            let dpz = sig_grad(&dz, &c.z);
            let dpr = sig_grad(&dr, &c.r);
            affine_backward(
                &p.w_xz,
                &p.w_hz,
                &mut g.w_xz,
                &mut g.w_hz,
                &mut g.b_z,
                &dpz,
                xm,
                hm,
                &mut dxm,
                &mut dhm,
            );
            affine_backward(
                &p.w_xr,
                &p.w_hr,
                &mut g.w_xr,
                &mut g.w_hr,
                &mut g.b_r,
                &dpr,
                xm,
                hm,
                &mut dxm,
                &mut dhm,
            );
            (dxm, dhm, None)
        }
        _ => unreachable!("cache kind matches parameter kind"),
    }
}

/// Backward through one gated step. Adds into `dx` (gradient w.r.t. the
/// original input) and returns (d h_{t-1}, d c_{t-1}).
fn step_backward(
    layer: &LayerParams,
    scratch: &mut Scratch<'_>,
    cache: &StepCache,
    dh: &[f64],
    dc: Option<&[f64]>,
    dx: &mut [f64],
) -> (Vec<f64>, Option<Vec<f64>>) {
    let (dxm, dhm, dc_prev) = cell_backward(&layer.cell, &mut scratch.grads.cell, cache, dh, dc);
    let x: &[f64] = &cache.x;
    let h: &[f64] = &cache.h_prev;
    let mut dh_prev = vec![0.0; h.len()];

    match (&layer.hidden_gate, &cache.attention.hidden) {
        (Some(gate), Some(a)) => {
            // h̃ = a ⊙ h_{t-1}, a = σ(W_xa x + W_ha h_{t-1} + b_a)
            let da: Vec<f64> = dhm.iter().zip(h).map(|(d, h)| d * h).collect();
            for k in 0..h.len() {
                dh_prev[k] += a[k] * dhm[k];
            }
            let dpre = sig_grad(&da, a);
            let grad = scratch
                .grads
                .hidden_gate
                .as_mut()
                .expect("gradient tree matches");
            gate_backward(gate, grad, &dpre, x, h, dx, &mut dh_prev);
        }
        _ => axpy(1.0, &dhm, &mut dh_prev),
    }

    match (
        &layer.input_gate,
        &cache.attention.input,
        layer.mode.input_gate(),
    ) {
        (Some(gate), Some(a), Some(kind)) => {
            // x̃ = a ⊙ x: the input receives gradient through the product and
            // again through the gate's own dependence on x.
            let dpre = match kind {
                InputGate::Scalar => {
                    axpy(a[0], &dxm, dx);
                    let da: f64 = dxm.iter().zip(x).map(|(d, x)| d * x).sum();
                    vec![da * a[0] * (1.0 - a[0])]
                }
                InputGate::Element | InputGate::Softmax => {
                    for k in 0..x.len() {
                        dx[k] += a[k] * dxm[k];
                    }
                    let da: Vec<f64> = dxm.iter().zip(x).map(|(d, x)| d * x).collect();
                    if kind == InputGate::Softmax {
                        let dot: f64 = da.iter().zip(a.iter()).map(|(d, a)| d * a).sum();
                        da.iter()
                            .zip(a.iter())
                            .map(|(d, a)| a * (d - dot))
                            .collect()
                    } else {
                        sig_grad(&da, a)
                    }
                }
            };
            let grad = scratch
                .grads
                .input_gate
                .as_mut()
                .expect("gradient tree matches");
            gate_backward(gate, grad, &dpre, x, h, dx, &mut dh_prev);
        }
        _ => axpy(1.0, &dxm, dx),
    }
    (dh_prev, dc_prev)
}

/// Mean cross-entropy over the batch and its exact gradient with respect to every
/// parameter, from the caches of a train-mode [`forward_network`].
pub fn backward_network(
    spec: &NetworkSpec,
    params: &NetworkParams,
    pass: &ForwardPass,
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    if pass.caches.is_empty() {
        return Err(Error::Invalid(
            "backward needs a train-mode forward pass".into(),
        ));
    }
    if pass.caches.len() != labels.len() {
        return Err(Error::shape(
            "backward_network",
            format!("{} cached samples", pass.caches.len()),
            format!("{} labels", labels.len()),
        ));
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    for (cache, &label) in pass.caches.iter().zip(labels) {
        if cache.layers.len() != spec.layers.len() {
            return Err(Error::Invalid("cache depth does not match network".into()));
        }
        let (l, dlogits) = cross_entropy(&cache.logits, label)?;
        loss += l;
        let dlogits: Vec<f64> = dlogits.iter().map(|v| v * scale).collect();
        outer_acc(&mut grads.fc_w, &dlogits, &cache.top);
        axpy(1.0, &dlogits, &mut grads.fc_b);
        let mut d_top = vec![0.0; spec.top_dim()];
        matvec_t_acc(&params.fc_w, &dlogits, &mut d_top);

        let steps = cache.layers[0].steps.len();
        // Gradient w.r.t. the (post-dropout) outputs of the current layer.
        let mut d_out: Vec<Vec<f64>> = vec![Vec::new(); steps];
        d_out[steps - 1] = d_top;
        for (li, ls) in spec.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let lp = &params.layers[li];
            if let Some(masks) = &lc.masks {
                for (d, m) in d_out.iter_mut().zip(masks) {
                    for (v, k) in d.iter_mut().zip(m.iter()) {
                        *v *= k;
                    }
                }
            }
            let mut scratch = Scratch {
                grads: &mut grads.layers[li],
            };
            let n = ls.hidden_dim;
            let mut dh_next = vec![0.0; n];
            let mut dc_next: Option<Vec<f64>> = (ls.kind == CellKind::Lstm).then(|| vec![0.0; n]);
            let mut d_in: Vec<Vec<f64>> = vec![vec![0.0; ls.input_dim]; steps];
            for t in (0..steps).rev() {
                let mut dh = std::mem::take(&mut d_out[t]);
                if dh.is_empty() {
                    dh = vec![0.0; n];
                }
                axpy(1.0, &dh_next, &mut dh);
                let (dhp, dcp) = step_backward(
                    lp,
                    &mut scratch,
                    &lc.steps[t],
                    &dh,
                    dc_next.as_deref(),
                    &mut d_in[t],
                );
                dh_next = dhp;
                dc_next = dcp;
            }
            d_out = d_in;
        }
    }
    Ok((loss * scale, grads))
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every coordinate of `theta`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            work[i] = theta[i] + eps;
            let up = f(&work);
            work[i] = theta[i] - eps;
            let down = f(&work);
            work[i] = theta[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Eval-mode mean cross-entropy of the batch.
pub fn batch_loss(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &SequenceBatch,
) -> Result<f64> {
    check_batch(spec, batch)?;
    let mut total = 0.0;
    for s in batch.samples() {
        total += cross_entropy(&predict(spec, params, &s.seq)?, s.label)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Derivative of `f` at 0 by Ridders' extrapolation of central differences with
/// steps `h, h/1.4, h/1.4², …`. Returns the estimate and its error estimate.
pub fn ridders_derivative(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<(f64, f64)> {
    const SHRINK: f64 = 1.4;
    const TABLE: usize = 10;
    let mut a = [[0.0f64; TABLE]; TABLE];
    let mut h = h;
    a[0][0] = (f(h)? - f(-h)?) / (2.0 * h);
    let mut best = (a[0][0], f64::INFINITY);
    for i in 1..TABLE {
        h /= SHRINK;
        a[0][i] = (f(h)? - f(-h)?) / (2.0 * h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let err = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if err <= best.1 {
                best = (a[j][i], err);
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * best.1 {
            break;
        }
    }
    Ok(best)
}

/// Central-difference gradient `(L(θ+ε) − L(θ−ε)) / 2ε` of the (dropout-free)
/// batch loss for every scalar parameter.
pub fn finite_diff_grad(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &SequenceBatch,
    eps: f64,
) -> Result<Gradients> {
    numeric_grad(spec, params, batch, eps, |f, h| {
        Ok((f(h)? - f(-h)?) / (2.0 * h))
    })
}

/// Like [`finite_diff_grad`], but each coordinate is Ridders-extrapolated from
/// initial steps `eps` and `eps / 4`, keeping the estimate with the smaller error
/// bound. Plain central differences carry roughly `1e-16 / ε` absolute roundoff,
/// which swamps gradients below about 1e-6; extrapolation from large steps does not.
pub fn extrapolated_grad(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &SequenceBatch,
    eps: f64,
) -> Result<Gradients> {
    numeric_grad(spec, params, batch, eps, |f, h| {
        let mut best = (0.0, f64::INFINITY);
        for h in [h, h / 4.0] {
            let r = ridders_derivative(&mut *f, h)?;
            if r.1 < best.1 {
                best = r;
            }
        }
        Ok(best.0)
    })
}

type Probe<'a> = dyn FnMut(f64) -> Result<f64> + 'a;

fn numeric_grad(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &SequenceBatch,
    eps: f64,
    mut derivative: impl FnMut(&mut Probe<'_>, f64) -> Result<f64>,
) -> Result<Gradients> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let spec = spec.without_dropout();
    spec.validate()?;
    params.check_spec(&spec)?;
    check_batch(&spec, batch)?;
    let mut probe = params.clone();
    let mut out = params.zeros_like();
    for i in 0..params.num_params() {
        let orig = *probe.scalar_mut(i);
        let d = derivative(
            &mut |dx| {
                *probe.scalar_mut(i) = orig + dx;
                batch_loss(&spec, &probe, batch)
            },
            eps,
        )?;
        *probe.scalar_mut(i) = orig;
        *out.scalar_mut(i) = d;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param_path: String,
    pub params_checked: usize,
    pub passed: bool,
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
pub const FINITE_DIFF_EPS: f64 = 1e-5;
/// Initial step of the extrapolated oracle used by [`grad_check`].
pub const EXTRAPOLATION_STEP: f64 = 0.05;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares [`backward_network`] against [`extrapolated_grad`] on every parameter.
pub fn grad_check(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &SequenceBatch,
) -> Result<GradCheckReport> {
    let spec = spec.without_dropout();
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let pass = forward_network(&spec, params, batch, Mode::Train, &mut rng)?;
    let (_, analytic) = backward_network(&spec, params, &pass, &batch.labels())?;
    let numeric = extrapolated_grad(&spec, params, batch, EXTRAPOLATION_STEP)?;
    let (a, n) = (analytic.to_flat(), numeric.to_flat());
    let (worst, max_rel_err) = a
        .iter()
        .zip(&n)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold(
            (0, 0.0f64),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        );
    Ok(GradCheckReport {
        max_rel_err,
        worst_param_path: params.path_of(worst),
        params_checked: a.len(),
        passed: max_rel_err <= GRAD_CHECK_TOLERANCE,
    })
}
