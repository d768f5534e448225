//! Model-cost accounting and attention-trace statistics/exports.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bptt::NetworkSpec;
use crate::cells::{CellKind, GateMode};
use crate::error::{Error, Result};
use crate::numerics::{FlopTally, Matrix, Vector};

/// Attention responses of one gated layer: `samples[s][t]` is the gate output at
/// step `t` of sample `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub mode: GateMode,
    pub width: usize,
    pub samples: Vec<Vec<Vector>>,
}

/// Gate responses for every gated layer of a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<LayerTrace>,
}

impl AttentionTrace {
    pub fn layer(&self, index: usize) -> Option<&LayerTrace> {
        self.layers.iter().find(|l| l.layer == index)
    }

    /// Appends another trace's samples layer by layer.
    pub fn extend(&mut self, other: AttentionTrace) {
        if self.layers.is_empty() {
            self.layers = other.layers;
            return;
        }
        for (mine, theirs) in self.layers.iter_mut().zip(other.layers) {
            mine.samples.extend(theirs.samples);
        }
    }
}

fn gate_params(mode: GateMode, d: usize, n: usize) -> usize {
    let row = d + n + 1;
    mode.input_gate_width(d).map_or(0, |g| g * row)
        + mode.hidden_gate_width(n).map_or(0, |g| g * row)
}

/// Trainable parameters of one layer.
///
/// A cell with `b` affine blocks has `b·N(D+N+1)` (b = 1, 4, 3 for sRNN, LSTM,
/// GRU); a gate of width G adds `G(D+N+1)`.
pub fn param_count(kind: CellKind, mode: GateMode, d: usize, n: usize) -> usize {
    kind.blocks() * n * (d + n + 1) + gate_params(mode, d, n)
}

/// Whole-network count: every layer plus the `K·N + K` classifier.
pub fn network_param_count(spec: &NetworkSpec) -> usize {
    let layers: usize = spec
        .layers
        .iter()
        .map(|l| param_count(l.kind, l.mode, l.input_dim, l.hidden_dim))
        .sum();
    layers + spec.classes * spec.top_dim() + spec.classes
}

/// Multiplies and adds for one timestep of one layer. Activations are not
/// counted. An affine block of G rows costs `G(D+N)` multiplies and `G(D+N)` adds
/// (two partial sums plus bias).
pub fn flop_breakdown(kind: CellKind, mode: GateMode, d: usize, n: usize) -> FlopTally {
    let (d64, n64) = (d as u64, n as u64);
    let block = n64 * (d64 + n64);
    let blocks = kind.blocks() as u64;
    // Elementwise work after the affine blocks.
    let (em, ea) = match kind {
        CellKind::Srnn => (0, 0),
        // f⊙c, i⊙g, o⊙tanh(c); one sum
        CellKind::Lstm => (3 * n64, n64),
        // r⊙h, z⊙h, (1−z)⊙h'; one subtraction, one sum
        CellKind::Gru => (3 * n64, 2 * n64),
    };
    let mut t = FlopTally {
        mults: blocks * block + em,
        adds: blocks * block + ea,
    };
    if let Some(g) = mode.input_gate_width(d) {
        let g = g as u64;
        t.mults += g * (d64 + n64) + d64;
        t.adds += g * (d64 + n64);
    }
    if let Some(g) = mode.hidden_gate_width(n) {
        let g = g as u64;
        t.mults += g * (d64 + n64) + n64;
        t.adds += g * (d64 + n64);
    }
    t
}

/// Total floating-point operations per timestep, e.g. `N(6D+6N+5)` for a plain GRU
/// and `N(6D+6N+5) + D(2D+2N+1)` with an element gate.
pub fn flop_count(kind: CellKind, mode: GateMode, d: usize, n: usize) -> u64 {
    flop_breakdown(kind, mode, d, n).total()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub kind: CellKind,
    pub mode: GateMode,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub params: usize,
    pub flops_per_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub classifier_params: usize,
    pub total_params: usize,
    /// Recurrent layers only, per timestep.
    pub total_flops_per_step: u64,
}

impl CostReport {
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        let layers: Vec<LayerCost> = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerCost {
                layer: i,
                kind: l.kind,
                mode: l.mode,
                input_dim: l.input_dim,
                hidden_dim: l.hidden_dim,
                params: param_count(l.kind, l.mode, l.input_dim, l.hidden_dim),
                flops_per_step: flop_count(l.kind, l.mode, l.input_dim, l.hidden_dim),
            })
            .collect();
        let classifier_params = spec.classes * spec.top_dim() + spec.classes;
        CostReport {
            total_params: layers.iter().map(|l| l.params).sum::<usize>() + classifier_params,
            total_flops_per_step: layers.iter().map(|l| l.flops_per_step).sum(),
            classifier_params,
            layers,
        }
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5}  {:<5}  {:<16}  {:>6}  {:>6}  {:>12}  {:>14}",
            "layer", "cell", "gate", "D", "N", "params", "flops/step"
        )?;
        for l in &self.layers {
            writeln!(
                f,
                "{:>5}  {:<5}  {:<16}  {:>6}  {:>6}  {:>12}  {:>14}",
                l.layer,
                l.kind.name(),
                l.mode.name(),
                l.input_dim,
                l.hidden_dim,
                l.params,
                l.flops_per_step
            )?;
        }
        writeln!(
            f,
            "{:>5}  {:<5}  {:<16}  {:>6}  {:>6}  {:>12}",
            "fc", "", "", "", "", self.classifier_params
        )?;
        write!(
            f,
            "total params {} ({:.2}M), recurrent flops/step {}",
            self.total_params,
            self.total_params as f64 / 1e6,
            self.total_flops_per_step
        )
    }
}

/// Mean squared value of each input element over all samples and steps.
pub fn element_energy<'a>(inputs: impl IntoIterator<Item = &'a Matrix>) -> Result<Vector> {
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for seq in inputs {
        if sums.is_empty() {
            sums = vec![0.0; seq.cols()];
        } else if seq.cols() != sums.len() {
            return Err(Error::shape(
                "element_energy",
                format!("width {}", sums.len()),
                format!("width {}", seq.cols()),
            ));
        }
        for t in 0..seq.rows() {
            for (s, v) in sums.iter_mut().zip(seq.row(t)) {
                *s += v * v;
            }
        }
        count += seq.rows();
    }
    if count == 0 {
        return Err(Error::Empty("element_energy inputs"));
    }
    Ok(Vector::from(
        sums.into_iter()
            .map(|s| s / count as f64)
            .collect::<Vec<_>>(),
    ))
}

/// Per-element RMS gain of the gate, `√(E[(a_i x_i)²] / E[x_i²])`, over the
/// reference inputs and their recorded responses. Scalar gates broadcast `a[0]`.
/// Elements with zero input energy get 0 and are reported as excluded.
pub fn static_modulation(trace: &LayerTrace, inputs: &[&Matrix]) -> Result<(Vector, Vec<usize>)> {
    if inputs.len() != trace.samples.len() {
        return Err(Error::shape(
            "static_modulation",
            format!("{} traced samples", trace.samples.len()),
            format!("{} input sequences", inputs.len()),
        ));
    }
    let energy = element_energy(inputs.iter().copied())?;
    let d = energy.len();
    if trace.width != d && trace.width != 1 {
        return Err(Error::shape(
            "static_modulation",
            format!("gate width {}", trace.width),
            format!("input width {d}"),
        ));
    }
    let mut modulated = vec![0.0; d];
    let mut count = 0usize;
    for (seq, steps) in inputs.iter().zip(&trace.samples) {
        if steps.len() != seq.rows() {
            return Err(Error::shape(
                "static_modulation",
                format!("{} steps", seq.rows()),
                format!("{} responses", steps.len()),
            ));
        }
        for (t, a) in steps.iter().enumerate() {
            for (i, m) in modulated.iter_mut().enumerate() {
                let ai = if a.len() == 1 { a[0] } else { a[i] };
                let v = ai * seq.get(t, i);
                *m += v * v;
            }
        }
        count += seq.rows();
    }
    let mut excluded = Vec::new();
    let gain = (0..d)
        .map(|i| {
            if energy[i] > 0.0 {
                (modulated[i] / count as f64 / energy[i]).sqrt()
            } else {
                excluded.push(i);
                0.0
            }
        })
        .collect::<Vec<_>>();
    Ok((Vector::from(gain), excluded))
}

/// Relative response `â = a / a̅`. Elements with `a̅_i <= 0` are excluded: their
/// responses are set to 0 and their indices returned.
pub fn relative_attention(
    trace: &LayerTrace,
    static_mod: &Vector,
) -> Result<(LayerTrace, Vec<usize>)> {
    if trace.width != static_mod.len() {
        return Err(Error::shape(
            "relative_attention",
            format!("gate width {}", trace.width),
            format!("static modulation [{}]", static_mod.len()),
        ));
    }
    let excluded: Vec<usize> = (0..static_mod.len())
        .filter(|&i| !(static_mod[i] > 0.0 && static_mod[i].is_finite()))
        .collect();
    let samples = trace
        .samples
        .iter()
        .map(|steps| {
            steps
                .iter()
                .map(|a| {
                    Vector::from(
                        a.iter()
                            .zip(static_mod.iter())
                            .map(|(a, s)| {
                                if *s > 0.0 && s.is_finite() {
                                    a / s
                                } else {
                                    0.0
                                }
                            })
                            .collect::<Vec<_>>(),
                    )
                })
                .collect()
        })
        .collect();
    Ok((
        LayerTrace {
            layer: trace.layer,
            mode: trace.mode,
            width: trace.width,
            samples,
        },
        excluded,
    ))
}

/// Mean response of each gate element over all samples and steps.
pub fn mean_attention(trace: &LayerTrace) -> Vector {
    let mut sums = vec![0.0; trace.width];
    let mut count = 0usize;
    for steps in &trace.samples {
        for a in steps {
            for (s, v) in sums.iter_mut().zip(a.iter()) {
                *s += v;
            }
            count += 1;
        }
    }
    Vector::from(
        sums.into_iter()
            .map(|s| s / count.max(1) as f64)
            .collect::<Vec<_>>(),
    )
}

pub const TRACE_CSV_HEADER: &str = "layer,sample,t,dim,value";

/// One row of an exported trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub layer: usize,
    pub sample: usize,
    pub t: usize,
    pub dim: usize,
    pub value: f64,
}

pub fn trace_rows(trace: &AttentionTrace) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for lt in &trace.layers {
        for (s, steps) in lt.samples.iter().enumerate() {
            for (t, a) in steps.iter().enumerate() {
                for (dim, &value) in a.iter().enumerate() {
                    rows.push(TraceRow {
                        layer: lt.layer,
                        sample: s,
                        t,
                        dim,
                        value,
                    });
                }
            }
        }
    }
    rows
}

pub fn trace_to_csv(trace: &AttentionTrace) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in trace_rows(trace) {
        // `{}` on f64 prints the shortest representation that parses back exactly.
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.layer, r.sample, r.t, r.dim, r.value
        ));
    }
    out
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRACE_CSV_HEADER => {}
        other => {
            return Err(Error::Invalid(format!(
                "bad trace header {:?}",
                other.unwrap_or("")
            )));
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Invalid(format!(
                "line {}: expected 5 fields, got {}",
                n + 2,
                fields.len()
            )));
        }
        let int = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|e| Error::Invalid(format!("line {}: {e}", n + 2)))
        };
        let value: f64 = fields[4]
            .trim()
            .parse()
            .map_err(|e| Error::Invalid(format!("line {}: {e}", n + 2)))?;
        if !value.is_finite() {
            return Err(Error::Invalid(format!("line {}: non-finite value", n + 2)));
        }
        rows.push(TraceRow {
            layer: int(fields[0])?,
            sample: int(fields[1])?,
            t: int(fields[2])?,
            dim: int(fields[3])?,
            value,
        });
    }
    Ok(rows)
}

/// 8-bit grey level for a response in [0, 1], rounding half up.
pub fn grey_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Image layout for one sample: a single-element trace whose length is a perfect
/// square (784 pixels) folds into a square; otherwise one row per step.
fn image_dims(steps: usize, width: usize) -> (usize, usize) {
    if width == 1 {
        let side = (steps as f64).sqrt().round() as usize;
        if side * side == steps {
            return (side, side);
        }
    }
    (width, steps)
}

/// Binary PGM (P5) of one sample's responses; larger response, brighter pixel.
pub fn sample_to_pgm(steps: &[Vector]) -> Result<Vec<u8>> {
    let width = steps.first().map_or(0, |a| a.len());
    if width == 0 || steps.iter().any(|a| a.len() != width) {
        return Err(Error::Invalid("trace sample is empty or ragged".into()));
    }
    let (w, h) = image_dims(steps.len(), width);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(steps.iter().flat_map(|a| a.iter().map(|&v| grey_level(v))));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Pgm,
}

/// Writes a trace. CSV goes to `path`; PGM writes one image per sample of the
/// first gated layer into the directory `path`, returning the files written.
pub fn export_trace(
    trace: &AttentionTrace,
    path: &Path,
    format: TraceFormat,
) -> Result<Vec<PathBuf>> {
    match format {
        TraceFormat::Csv => {
            let mut f = fs::File::create(path)?;
            f.write_all(trace_to_csv(trace).as_bytes())?;
            Ok(vec![path.to_path_buf()])
        }
        TraceFormat::Pgm => {
            let layer = trace
                .layers
                .first()
                .ok_or(Error::Empty("attention trace"))?;
            fs::create_dir_all(path)?;
            let mut written = Vec::new();
            for (s, steps) in layer.samples.iter().enumerate() {
                let file = path.join(format!("attn_layer{}_sample{s}.pgm", layer.layer));
                fs::write(&file, sample_to_pgm(steps)?)?;
                written.push(file);
            }
            Ok(written)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bptt::NetworkParams;
    use crate::cells::{eleatt_step, LayerParams, StepState};
    use crate::numerics::count_flops;

    fn layer_trace(width: usize, samples: Vec<Vec<Vec<f64>>>) -> LayerTrace {
        LayerTrace {
            layer: 0,
            mode: GateMode::Element,
            width,
            samples: samples
                .into_iter()
                .map(|s| s.into_iter().map(Vector::from).collect())
                .collect(),
        }
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(CellKind::Gru, GateMode::None, 150, 100), 75_300);
        assert_eq!(
            param_count(CellKind::Gru, GateMode::Element, 150, 100),
            112_950
        );
        assert_eq!(param_count(CellKind::Gru, GateMode::None, 1, 1), 9);
        assert_eq!(param_count(CellKind::Gru, GateMode::Element, 1, 1), 12);
        let spec = NetworkSpec::stacked(CellKind::Gru, GateMode::Element, 150, 100, 3, 60, 0.0, 0);
        assert_eq!(network_param_count(&spec), 279_810);
    }

    #[test]
    fn param_count_matches_constructed_bundle() {
        for kind in CellKind::ALL {
            for mode in GateMode::STANDARD
                .into_iter()
                .chain([GateMode::InputAndHidden])
            {
                for d in 1..=8 {
                    for n in 1..=8 {
                        let layer = LayerParams::zeros(kind, mode, d, n);
                        assert_eq!(
                            param_count(kind, mode, d, n),
                            layer.num_params(),
                            "{kind:?} {mode:?} {d} {n}"
                        );
                    }
                }
            }
        }
        let spec = NetworkSpec::stacked(CellKind::Lstm, GateMode::Scalar, 5, 7, 2, 4, 0.0, 0);
        assert_eq!(
            network_param_count(&spec),
            NetworkParams::zeros(&spec).num_params()
        );
    }

    #[test]
    fn flop_count_examples() {
        assert_eq!(flop_count(CellKind::Gru, GateMode::None, 4, 3), 141);
        assert_eq!(flop_count(CellKind::Gru, GateMode::Element, 4, 3), 201);
        assert_eq!(flop_count(CellKind::Gru, GateMode::None, 1, 1), 17);
        let (d, n) = (150u64, 100u64);
        let gate = flop_breakdown(CellKind::Gru, GateMode::Element, 150, 100);
        let plain = flop_breakdown(CellKind::Gru, GateMode::None, 150, 100);
        assert_eq!(gate.mults - plain.mults, d * (d + n + 1));
        assert_eq!(gate.adds - plain.adds, d * (d + n));
        assert_eq!(plain.total(), n * (6 * d + 6 * n + 5));
    }

    #[test]
    fn flop_count_matches_instrumented_step() {
        for kind in CellKind::ALL {
            for mode in GateMode::STANDARD
                .into_iter()
                .chain([GateMode::InputAndHidden])
            {
                for d in 1..=8 {
                    for n in 1..=8 {
                        let layer = LayerParams::zeros(kind, mode, d, n);
                        let x = Vector::filled(d, 0.5);
                        let s = StepState::zeros(kind, n);
                        let (_, tally) = count_flops(|| eleatt_step(&layer, &x, &s).unwrap());
                        assert_eq!(
                            tally,
                            flop_breakdown(kind, mode, d, n),
                            "{kind:?} {mode:?} {d} {n}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cost_report_totals_are_sums() {
        let spec = NetworkSpec::stacked(CellKind::Gru, GateMode::Element, 150, 100, 2, 60, 0.0, 0);
        let r = CostReport::for_spec(&spec);
        assert_eq!(
            r.total_params,
            r.layers.iter().map(|l| l.params).sum::<usize>() + r.classifier_params
        );
        assert_eq!(r.total_params, 199_410);
        let text = r.to_string();
        assert!(text.contains("0.20M"), "{text}");
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<CostReport>(&json).unwrap(), r);
    }

    #[test]
    fn energy_examples() {
        let a = Matrix::new(2, 2, vec![3.0, 0.0, 3.0, 0.0]).unwrap();
        let e = element_energy([&a]).unwrap();
        assert_eq!(e.as_slice(), &[9.0, 0.0]);
        let b = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let c = Matrix::new(1, 2, vec![3.0, -4.0]).unwrap();
        let e = element_energy([&b, &c]).unwrap();
        assert_eq!(e.as_slice(), &[5.0, 10.0]);
        assert!(element_energy(std::iter::empty()).is_err());
    }

    #[test]
    fn constant_attention_has_unit_relative_response() {
        let x = Matrix::new(3, 2, vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0]).unwrap();
        let trace = layer_trace(2, vec![vec![vec![0.3, 0.3]; 3]]);
        let (gain, excluded) = static_modulation(&trace, &[&x]).unwrap();
        assert!(excluded.is_empty());
        for g in gain.iter() {
            assert!((g - 0.3).abs() < 1e-15);
        }
        let (rel, _) = relative_attention(&trace, &gain).unwrap();
        for a in &rel.samples[0] {
            for v in a.iter() {
                assert!((v - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unit_static_modulation_is_identity() {
        let trace = layer_trace(2, vec![vec![vec![0.1, 0.9], vec![0.4, 0.6]]]);
        let (rel, excluded) = relative_attention(&trace, &Vector::filled(2, 1.0)).unwrap();
        assert!(excluded.is_empty());
        assert_eq!(rel, trace);
    }

    #[test]
    fn static_modulation_hand_case() {
        // Element 0: x = (1, 2), a = (0.5, 0.25) → E[(ax)²] = (0.25 + 0.25)/2, E[x²] = 2.5
        // Element 1: x = (0, 0) → excluded.
        let x = Matrix::new(2, 2, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let trace = layer_trace(2, vec![vec![vec![0.5, 0.7], vec![0.25, 0.7]]]);
        let (gain, excluded) = static_modulation(&trace, &[&x]).unwrap();
        assert!((gain[0] - (0.25f64 / 2.5).sqrt()).abs() < 1e-15);
        assert_eq!(excluded, vec![1]);
        let (rel, excluded) = relative_attention(&trace, &gain).unwrap();
        assert_eq!(excluded, vec![1]);
        assert!((rel.samples[0][0][0] - 0.5 / 0.1f64.sqrt()).abs() < 1e-12);
        assert_eq!(rel.samples[0][1][1], 0.0);
    }

    #[test]
    fn csv_has_one_row_per_value_and_round_trips() {
        let trace = AttentionTrace {
            layers: vec![layer_trace(1, vec![vec![vec![0.25], vec![1.0 / 3.0]]])],
        };
        let csv = trace_to_csv(&trace);
        let rows = parse_trace_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(csv.lines().next(), Some(TRACE_CSV_HEADER));
        assert_eq!(rows, trace_rows(&trace));
        assert!(parse_trace_csv("nope\n").is_err());
        assert!(parse_trace_csv(&format!("{TRACE_CSV_HEADER}\n0,0,0,0\n")).is_err());
        assert!(parse_trace_csv(&format!("{TRACE_CSV_HEADER}\n0,0,0,0,NaN\n")).is_err());
    }

    #[test]
    fn pgm_of_constant_half_is_uniform_128() {
        let steps: Vec<Vector> = (0..784).map(|_| Vector::from(vec![0.5])).collect();
        let pgm = sample_to_pgm(&steps).unwrap();
        let header = b"P5\n28 28\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 784);
        assert!(pgm[header.len()..].iter().all(|&b| b == 128));
    }

    #[test]
    fn pgm_rowwise_layout_is_steps_by_width() {
        let steps: Vec<Vector> = (0..3)
            .map(|t| Vector::from(vec![t as f64 / 2.0; 5]))
            .collect();
        let pgm = sample_to_pgm(&steps).unwrap();
        assert!(pgm.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(grey_level(1.0), 255);
        assert_eq!(grey_level(-0.2), 0);
    }

    #[test]
    fn export_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let trace = AttentionTrace {
            layers: vec![layer_trace(1, vec![vec![vec![0.5]; 4], vec![vec![0.1]; 4]])],
        };
        let csv = dir.path().join("t.csv");
        export_trace(&trace, &csv, TraceFormat::Csv).unwrap();
        let rows = parse_trace_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
        assert_eq!(rows.len(), 8);
        let files = export_trace(&trace, &dir.path().join("pgm"), TraceFormat::Pgm).unwrap();
        assert_eq!(files.len(), 2);
        assert!(fs::read(&files[0]).unwrap().starts_with(b"P5\n2 2\n255\n"));
    }
}
