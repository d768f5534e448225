//! Single-timestep recurrences: sRNN, LSTM and GRU, the element-wise attention
//! gate, and the gated step that modulates the cell input before the recurrence.
//!
//! Every cell kind runs through the same two-stage step: the gate reads the
//! *original* `x_t` and `h_{t-1}`, its response modulates the input (or the
//! recurrent state for [`GateMode::HiddenElement`]), and the plain cell then runs
//! on the modulated values. A single gate is shared by all N neurons of a layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    add, affine, apply_activation, hadamard, one_minus, scale, Activation, Matrix, Vector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Srnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Srnn, CellKind::Lstm, CellKind::Gru];

    /// Number of (input, recurrent, bias) triples in the cell.
    pub fn blocks(self) -> usize {
        match self {
            CellKind::Srnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            CellKind::Srnn => 0,
            CellKind::Lstm => 1,
            CellKind::Gru => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => CellKind::Srnn,
            1 => CellKind::Lstm,
            2 => CellKind::Gru,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Srnn => "srnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srnn" | "rnn" => Ok(CellKind::Srnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Invalid(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// Which attention gate, if any, a layer carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Plain cell.
    None,
    /// Sigmoid gate with one response per input element.
    Element,
    /// Sigmoid gate emitting one scalar applied to every input element.
    Scalar,
    /// Softmax gate: responses over the input elements sum to one.
    SoftmaxElement,
    /// Sigmoid gate over `h_{t-1}` instead of `x_t`.
    HiddenElement,
    /// Two gates in one step: an element gate on `x_t` and one on `h_{t-1}`.
    InputAndHidden,
}

/// Gate families on the input side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InputGate {
    Element,
    Scalar,
    Softmax,
}

impl GateMode {
    /// The five single-gate modes; `InputAndHidden` is kept out of this list.
    pub const STANDARD: [GateMode; 5] = [
        GateMode::None,
        GateMode::Element,
        GateMode::Scalar,
        GateMode::SoftmaxElement,
        GateMode::HiddenElement,
    ];

    pub(crate) fn input_gate(self) -> Option<InputGate> {
        match self {
            GateMode::Element | GateMode::InputAndHidden => Some(InputGate::Element),
            GateMode::Scalar => Some(InputGate::Scalar),
            GateMode::SoftmaxElement => Some(InputGate::Softmax),
            GateMode::None | GateMode::HiddenElement => None,
        }
    }

    pub(crate) fn gates_hidden(self) -> bool {
        matches!(self, GateMode::HiddenElement | GateMode::InputAndHidden)
    }

    /// Width G of the input-side gate, if any.
    pub fn input_gate_width(self, input_dim: usize) -> Option<usize> {
        self.input_gate().map(|g| match g {
            InputGate::Scalar => 1,
            _ => input_dim,
        })
    }

    /// Width of the hidden-side gate, if any.
    pub fn hidden_gate_width(self, hidden_dim: usize) -> Option<usize> {
        self.gates_hidden().then_some(hidden_dim)
    }

    pub fn code(self) -> u8 {
        match self {
            GateMode::None => 0,
            GateMode::Element => 1,
            GateMode::Scalar => 2,
            GateMode::SoftmaxElement => 3,
            GateMode::HiddenElement => 4,
            GateMode::InputAndHidden => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => GateMode::None,
            1 => GateMode::Element,
            2 => GateMode::Scalar,
            3 => GateMode::SoftmaxElement,
            4 => GateMode::HiddenElement,
            5 => GateMode::InputAndHidden,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            GateMode::None => "none",
            GateMode::Element => "element",
            GateMode::Scalar => "scalar",
            GateMode::SoftmaxElement => "softmax_element",
            GateMode::HiddenElement => "hidden_element",
            GateMode::InputAndHidden => "input_and_hidden",
        }
    }
}

impl std::str::FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" | "plain" => GateMode::None,
            "element" => GateMode::Element,
            "scalar" => GateMode::Scalar,
            "softmax" | "softmax_element" => GateMode::SoftmaxElement,
            "hidden" | "hidden_element" => GateMode::HiddenElement,
            "input_and_hidden" | "both" => GateMode::InputAndHidden,
            other => return Err(Error::Invalid(format!("unknown gate mode {other:?}"))),
        })
    }
}

/// Uniform in ±√(6/(fan_in+fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.gen_range(-limit..=limit);
    }
    m
}

fn check_vec(op: &'static str, v: &Vector, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::shape(
            op,
            format!("expected length {len}"),
            format!("vector[{}]", v.len()),
        ));
    }
    Ok(())
}

fn check_mat(op: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::shape(
            op,
            format!("expected {rows}x{cols}"),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrnnParams {
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_h: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_xi: Matrix,
    pub w_xf: Matrix,
    pub w_xc: Matrix,
    pub w_xo: Matrix,
    pub w_hi: Matrix,
    pub w_hf: Matrix,
    pub w_hc: Matrix,
    pub w_ho: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_xr: Matrix,
    pub w_xz: Matrix,
    pub w_xh: Matrix,
    pub w_hr: Matrix,
    pub w_hz: Matrix,
    pub w_hh: Matrix,
    pub b_r: Vector,
    pub b_z: Vector,
    pub b_h: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Srnn(SrnnParams),
    Lstm(LstmParams),
    Gru(GruParams),
}

impl SrnnParams {
    pub fn zeros(d: usize, n: usize) -> Self {
        SrnnParams {
            w_xh: Matrix::zeros(n, d),
            w_hh: Matrix::zeros(n, n),
            b_h: Vector::zeros(n),
        }
    }
}

impl LstmParams {
    pub fn zeros(d: usize, n: usize) -> Self {
        LstmParams {
            w_xi: Matrix::zeros(n, d),
            w_xf: Matrix::zeros(n, d),
            w_xc: Matrix::zeros(n, d),
            w_xo: Matrix::zeros(n, d),
            w_hi: Matrix::zeros(n, n),
            w_hf: Matrix::zeros(n, n),
            w_hc: Matrix::zeros(n, n),
            w_ho: Matrix::zeros(n, n),
            b_i: Vector::zeros(n),
            b_f: Vector::zeros(n),
            b_c: Vector::zeros(n),
            b_o: Vector::zeros(n),
        }
    }
}

impl GruParams {
    pub fn zeros(d: usize, n: usize) -> Self {
        GruParams {
            w_xr: Matrix::zeros(n, d),
            w_xz: Matrix::zeros(n, d),
            w_xh: Matrix::zeros(n, d),
            w_hr: Matrix::zeros(n, n),
            w_hz: Matrix::zeros(n, n),
            w_hh: Matrix::zeros(n, n),
            b_r: Vector::zeros(n),
            b_z: Vector::zeros(n),
            b_h: Vector::zeros(n),
        }
    }
}

impl CellParams {
    pub fn zeros(kind: CellKind, d: usize, n: usize) -> Self {
        match kind {
            CellKind::Srnn => CellParams::Srnn(SrnnParams::zeros(d, n)),
            CellKind::Lstm => CellParams::Lstm(LstmParams::zeros(d, n)),
            CellKind::Gru => CellParams::Gru(GruParams::zeros(d, n)),
        }
    }

    /// Glorot-uniform weights, zero biases except the LSTM forget bias.
    pub fn init(kind: CellKind, d: usize, n: usize, forget_bias: f64, rng: &mut impl Rng) -> Self {
        let mut p = CellParams::zeros(kind, d, n);
        for (_, m) in p.matrices_mut() {
            *m = glorot_uniform(m.rows(), m.cols(), rng);
        }
        if let CellParams::Lstm(l) = &mut p {
            l.b_f = Vector::filled(n, forget_bias);
        }
        p
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Srnn(_) => CellKind::Srnn,
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    /// (input_dim, hidden_dim)
    pub fn dims(&self) -> (usize, usize) {
        let w = match self {
            CellParams::Srnn(p) => &p.w_xh,
            CellParams::Lstm(p) => &p.w_xi,
            CellParams::Gru(p) => &p.w_xr,
        };
        (w.cols(), w.rows())
    }

    fn matrices_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        match self {
            CellParams::Srnn(p) => vec![("w_xh", &mut p.w_xh), ("w_hh", &mut p.w_hh)],
            CellParams::Lstm(p) => vec![
                ("w_xi", &mut p.w_xi),
                ("w_xf", &mut p.w_xf),
                ("w_xc", &mut p.w_xc),
                ("w_xo", &mut p.w_xo),
                ("w_hi", &mut p.w_hi),
                ("w_hf", &mut p.w_hf),
                ("w_hc", &mut p.w_hc),
                ("w_ho", &mut p.w_ho),
            ],
            CellParams::Gru(p) => vec![
                ("w_xr", &mut p.w_xr),
                ("w_xz", &mut p.w_xz),
                ("w_xh", &mut p.w_xh),
                ("w_hr", &mut p.w_hr),
                ("w_hz", &mut p.w_hz),
                ("w_hh", &mut p.w_hh),
            ],
        }
    }

    /// Every tensor in declaration order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            CellParams::Srnn(p) => vec![
                ("w_xh", p.w_xh.as_slice()),
                ("w_hh", p.w_hh.as_slice()),
                ("b_h", p.b_h.as_slice()),
            ],
            CellParams::Lstm(p) => vec![
                ("w_xi", p.w_xi.as_slice()),
                ("w_xf", p.w_xf.as_slice()),
                ("w_xc", p.w_xc.as_slice()),
                ("w_xo", p.w_xo.as_slice()),
                ("w_hi", p.w_hi.as_slice()),
                ("w_hf", p.w_hf.as_slice()),
                ("w_hc", p.w_hc.as_slice()),
                ("w_ho", p.w_ho.as_slice()),
                ("b_i", p.b_i.as_slice()),
                ("b_f", p.b_f.as_slice()),
                ("b_c", p.b_c.as_slice()),
                ("b_o", p.b_o.as_slice()),
            ],
            CellParams::Gru(p) => vec![
                ("w_xr", p.w_xr.as_slice()),
                ("w_xz", p.w_xz.as_slice()),
                ("w_xh", p.w_xh.as_slice()),
                ("w_hr", p.w_hr.as_slice()),
                ("w_hz", p.w_hz.as_slice()),
                ("w_hh", p.w_hh.as_slice()),
                ("b_r", p.b_r.as_slice()),
                ("b_z", p.b_z.as_slice()),
                ("b_h", p.b_h.as_slice()),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CellParams::Srnn(p) => vec![p.w_xh.as_mut_slice(), p.w_hh.as_mut_slice(), &mut p.b_h],
            CellParams::Lstm(p) => vec![
                p.w_xi.as_mut_slice(),
                p.w_xf.as_mut_slice(),
                p.w_xc.as_mut_slice(),
                p.w_xo.as_mut_slice(),
                p.w_hi.as_mut_slice(),
                p.w_hf.as_mut_slice(),
                p.w_hc.as_mut_slice(),
                p.w_ho.as_mut_slice(),
                &mut p.b_i,
                &mut p.b_f,
                &mut p.b_c,
                &mut p.b_o,
            ],
            CellParams::Gru(p) => vec![
                p.w_xr.as_mut_slice(),
                p.w_xz.as_mut_slice(),
                p.w_xh.as_mut_slice(),
                p.w_hr.as_mut_slice(),
                p.w_hz.as_mut_slice(),
                p.w_hh.as_mut_slice(),
                &mut p.b_r,
                &mut p.b_z,
                &mut p.b_h,
            ],
        }
    }
}

/// Parameters of one attention gate: `φ(w_xa·x + w_ha·h + b_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttGateParams {
    pub w_xa: Matrix,
    pub w_ha: Matrix,
    pub b_a: Vector,
}

impl AttGateParams {
    pub fn zeros(width: usize, d: usize, n: usize) -> Self {
        AttGateParams {
            w_xa: Matrix::zeros(width, d),
            w_ha: Matrix::zeros(width, n),
            b_a: Vector::zeros(width),
        }
    }

    pub fn init(width: usize, d: usize, n: usize, rng: &mut impl Rng) -> Self {
        AttGateParams {
            w_xa: glorot_uniform(width, d, rng),
            w_ha: glorot_uniform(width, n, rng),
            b_a: Vector::zeros(width),
        }
    }

    pub fn width(&self) -> usize {
        self.b_a.len()
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_xa", self.w_xa.as_slice()),
            ("w_ha", self.w_ha.as_slice()),
            ("b_a", self.b_a.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_xa.as_mut_slice(),
            self.w_ha.as_mut_slice(),
            &mut self.b_a,
        ]
    }

    fn check(&self, op: &'static str, width: usize, d: usize, n: usize) -> Result<()> {
        check_mat(op, &self.w_xa, width, d)?;
        check_mat(op, &self.w_ha, width, n)?;
        check_vec(op, &self.b_a, width)
    }
}

/// Recurrent state carried between timesteps. `c` is present only for LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub h: Vector,
    pub c: Option<Vector>,
}

impl StepState {
    pub fn zeros(kind: CellKind, n: usize) -> Self {
        StepState {
            h: Vector::zeros(n),
            c: (kind == CellKind::Lstm).then(|| Vector::zeros(n)),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SrnnCache {
    pub h: Vector,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    pub i: Vector,
    pub f: Vector,
    pub g: Vector,
    pub o: Vector,
    pub c_prev: Vector,
    pub tanh_c: Vector,
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    pub r: Vector,
    pub z: Vector,
    pub cand: Vector,
    pub rh: Vector,
}

#[derive(Debug, Clone)]
pub(crate) enum CellCache {
    Srnn(SrnnCache),
    Lstm(LstmCache),
    Gru(GruCache),
}

fn srnn_forward(p: &SrnnParams, x: &Vector, h: &Vector) -> Result<(Vector, SrnnCache)> {
    let h_new = apply_activation(Activation::Tanh, &affine(&p.w_xh, x, &p.w_hh, h, &p.b_h)?);
    Ok((h_new.clone(), SrnnCache { h: h_new }))
}

fn lstm_forward(
    p: &LstmParams,
    x: &Vector,
    h: &Vector,
    c: &Vector,
) -> Result<(Vector, Vector, LstmCache)> {
    let sig = |w_x, w_h, b| -> Result<Vector> {
        Ok(apply_activation(
            Activation::Sigmoid,
            &affine(w_x, x, w_h, h, b)?,
        ))
    };
    let i = sig(&p.w_xi, &p.w_hi, &p.b_i)?;
    let f = sig(&p.w_xf, &p.w_hf, &p.b_f)?;
    let g = apply_activation(Activation::Tanh, &affine(&p.w_xc, x, &p.w_hc, h, &p.b_c)?);
    let c_new = add(&hadamard(&f, c)?, &hadamard(&i, &g)?)?;
    let o = sig(&p.w_xo, &p.w_ho, &p.b_o)?;
    let tanh_c = apply_activation(Activation::Tanh, &c_new);
    let h_new = hadamard(&o, &tanh_c)?;
    let cache = LstmCache {
        i,
        f,
        g,
        o,
        c_prev: c.clone(),
        tanh_c,
    };
    Ok((h_new, c_new, cache))
}

fn gru_forward(p: &GruParams, x: &Vector, h: &Vector) -> Result<(Vector, GruCache)> {
    let r = apply_activation(
        Activation::Sigmoid,
        &affine(&p.w_xr, x, &p.w_hr, h, &p.b_r)?,
    );
    let z = apply_activation(
        Activation::Sigmoid,
        &affine(&p.w_xz, x, &p.w_hz, h, &p.b_z)?,
    );
    let rh = hadamard(&r, h)?;
    let cand = apply_activation(Activation::Tanh, &affine(&p.w_xh, x, &p.w_hh, &rh, &p.b_h)?);
    // z carries the previous state, (1 - z) admits the candidate.
    let h_new = add(&hadamard(&z, h)?, &hadamard(&one_minus(&z), &cand)?)?;
    Ok((h_new, GruCache { r, z, cand, rh }))
}

fn cell_forward(
    p: &CellParams,
    x: &Vector,
    h: &Vector,
    c: Option<&Vector>,
) -> Result<(StepState, CellCache)> {
    let (d, n) = p.dims();
    check_vec("cell step (input)", x, d)?;
    check_vec("cell step (state)", h, n)?;
    match p {
        CellParams::Srnn(p) => {
            let (h, cache) = srnn_forward(p, x, h)?;
            Ok((StepState { h, c: None }, CellCache::Srnn(cache)))
        }
        CellParams::Lstm(p) => {
            let c = c.ok_or_else(|| Error::Invalid("LSTM step requires a cell state".into()))?;
            check_vec("lstm step (cell)", c, n)?;
            let (h, c, cache) = lstm_forward(p, x, h, c)?;
            Ok((StepState { h, c: Some(c) }, CellCache::Lstm(cache)))
        }
        CellParams::Gru(p) => {
            let (h, cache) = gru_forward(p, x, h)?;
            Ok((StepState { h, c: None }, CellCache::Gru(cache)))
        }
    }
}

pub fn srnn_step(p: &SrnnParams, x: &Vector, s: &StepState) -> Result<StepState> {
    cell_forward(&CellParams::Srnn(p.clone()), x, &s.h, None).map(|(s, _)| s)
}

pub fn lstm_step(p: &LstmParams, x: &Vector, s: &StepState) -> Result<StepState> {
    cell_forward(&CellParams::Lstm(p.clone()), x, &s.h, s.c.as_ref()).map(|(s, _)| s)
}

pub fn gru_step(p: &GruParams, x: &Vector, s: &StepState) -> Result<StepState> {
    cell_forward(&CellParams::Gru(p.clone()), x, &s.h, None).map(|(s, _)| s)
}

/// Plain step for any cell kind.
pub fn cell_step(p: &CellParams, x: &Vector, s: &StepState) -> Result<StepState> {
    cell_forward(p, x, &s.h, s.c.as_ref()).map(|(s, _)| s)
}

/// Attention response for `mode`. Length is D for element/softmax modes, 1 for
/// the scalar gate, N for the hidden-state gate.
pub fn att_gate(g: &AttGateParams, mode: GateMode, x: &Vector, h: &Vector) -> Result<Vector> {
    let (d, n) = (x.len(), h.len());
    let (width, act) = match mode {
        GateMode::None => return Err(Error::Invalid("att_gate called with GateMode::None".into())),
        GateMode::Element | GateMode::InputAndHidden => (d, Activation::Sigmoid),
        GateMode::Scalar => (1, Activation::Sigmoid),
        GateMode::SoftmaxElement => (d, Activation::Softmax),
        GateMode::HiddenElement => (n, Activation::Sigmoid),
    };
    g.check("att_gate", width, d, n)?;
    Ok(apply_activation(
        act,
        &affine(&g.w_xa, x, &g.w_ha, h, &g.b_a)?,
    ))
}

/// Applies a gate response to `target`: `x` for input modes, `h_{t-1}` for
/// [`GateMode::HiddenElement`]. The scalar gate broadcasts `a[0]`.
pub fn modulate(a: &Vector, target: &Vector, mode: GateMode) -> Result<Vector> {
    match mode {
        GateMode::None => Ok(target.clone()),
        GateMode::Scalar => {
            check_vec("modulate (scalar gate)", a, 1)?;
            Ok(scale(a[0], target))
        }
        _ => hadamard(a, target),
    }
}

/// A layer's parameters: the cell plus whichever gates its mode requires.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub mode: GateMode,
    pub cell: CellParams,
    pub input_gate: Option<AttGateParams>,
    pub hidden_gate: Option<AttGateParams>,
}

impl LayerParams {
    pub fn new(
        mode: GateMode,
        cell: CellParams,
        input_gate: Option<AttGateParams>,
        hidden_gate: Option<AttGateParams>,
    ) -> Result<Self> {
        let layer = LayerParams {
            mode,
            cell,
            input_gate,
            hidden_gate,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(kind: CellKind, mode: GateMode, d: usize, n: usize) -> Self {
        LayerParams {
            mode,
            cell: CellParams::zeros(kind, d, n),
            input_gate: mode
                .input_gate_width(d)
                .map(|w| AttGateParams::zeros(w, d, n)),
            hidden_gate: mode
                .hidden_gate_width(n)
                .map(|w| AttGateParams::zeros(w, d, n)),
        }
    }

    pub fn init(
        kind: CellKind,
        mode: GateMode,
        d: usize,
        n: usize,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let cell = CellParams::init(kind, d, n, forget_bias, rng);
        let input_gate = mode
            .input_gate_width(d)
            .map(|w| AttGateParams::init(w, d, n, rng));
        let hidden_gate = mode
            .hidden_gate_width(n)
            .map(|w| AttGateParams::init(w, d, n, rng));
        LayerParams {
            mode,
            cell,
            input_gate,
            hidden_gate,
        }
    }

    pub fn kind(&self) -> CellKind {
        self.cell.kind()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.cell.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = self.dims();
        let expect = |gate: &Option<AttGateParams>,
                      width: Option<usize>,
                      what: &'static str|
         -> Result<()> {
            match (gate, width) {
                (None, None) => Ok(()),
                (Some(g), Some(w)) => g.check(what, w, d, n),
                (Some(_), None) => Err(Error::Invalid(format!(
                    "{what} present but mode {} has none",
                    self.mode.name()
                ))),
                (None, Some(_)) => Err(Error::Invalid(format!(
                    "{what} missing for mode {}",
                    self.mode.name()
                ))),
            }
        };
        expect(
            &self.input_gate,
            self.mode.input_gate_width(d),
            "input gate",
        )?;
        expect(
            &self.hidden_gate,
            self.mode.hidden_gate_width(n),
            "hidden gate",
        )
    }

    /// Every tensor in declaration order, gates after the cell.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = self
            .cell
            .tensors()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        if let Some(g) = &self.input_gate {
            out.extend(
                g.tensors()
                    .into_iter()
                    .map(|(k, v)| (format!("gate.{k}"), v)),
            );
        }
        if let Some(g) = &self.hidden_gate {
            out.extend(
                g.tensors()
                    .into_iter()
                    .map(|(k, v)| (format!("hidden_gate.{k}"), v)),
            );
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.cell.tensors_mut();
        if let Some(g) = &mut self.input_gate {
            out.extend(g.tensors_mut());
        }
        if let Some(g) = &mut self.hidden_gate {
            out.extend(g.tensors_mut());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Gate responses produced by one gated step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAttention {
    pub input: Option<Vector>,
    pub hidden: Option<Vector>,
}

impl StepAttention {
    /// The response that traces record: the input gate when present, else the hidden gate.
    pub fn primary(&self) -> Option<&Vector> {
        self.input.as_ref().or(self.hidden.as_ref())
    }
}

/// Everything the backward pass needs from one gated step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub x_mod: Vector,
    pub h_mod: Vector,
    pub attention: StepAttention,
    pub cell: CellCache,
}

pub(crate) fn eleatt_step_cached(
    layer: &LayerParams,
    x: &Vector,
    s: &StepState,
) -> Result<(StepState, StepCache)> {
    let mode = layer.mode;
    let (d, n) = layer.dims();
    check_vec("eleatt step (input)", x, d)?;
    check_vec("eleatt step (state)", &s.h, n)?;
    let a_in = match (&layer.input_gate, mode.input_gate()) {
        (Some(g), Some(_)) => {
            let gate_mode = if mode == GateMode::InputAndHidden {
                GateMode::Element
            } else {
                mode
            };
            Some(att_gate(g, gate_mode, x, &s.h)?)
        }
        (None, None) => None,
        _ => return Err(Error::Invalid("input gate does not match mode".into())),
    };
    let a_hid = match (&layer.hidden_gate, mode.gates_hidden()) {
        (Some(g), true) => Some(att_gate(g, GateMode::HiddenElement, x, &s.h)?),
        (None, false) => None,
        _ => return Err(Error::Invalid("hidden gate does not match mode".into())),
    };
    let x_mod = match &a_in {
        Some(a) => modulate(
            a,
            x,
            if mode == GateMode::Scalar {
                GateMode::Scalar
            } else {
                GateMode::Element
            },
        )?,
        None => x.clone(),
    };
    let h_mod = match &a_hid {
        Some(a) => modulate(a, &s.h, GateMode::HiddenElement)?,
        None => s.h.clone(),
    };
    let (next, cell) = cell_forward(&layer.cell, &x_mod, &h_mod, s.c.as_ref())?;
    let cache = StepCache {
        x: x.clone(),
        h_prev: s.h.clone(),
        x_mod,
        h_mod,
        attention: StepAttention {
            input: a_in,
            hidden: a_hid,
        },
        cell,
    };
    Ok((next, cache))
}

/// One gated step: gate on the original `x_t`, `h_{t-1}`, modulate, then run the
/// plain cell on the modulated values.
pub fn eleatt_step(
    layer: &LayerParams,
    x: &Vector,
    s: &StepState,
) -> Result<(StepState, StepAttention)> {
    eleatt_step_cached(layer, x, s).map(|(next, cache)| (next, cache.attention))
}
