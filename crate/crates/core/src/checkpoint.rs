//! Binary parameter container.
//!
//! Each layer is one record: magic `EARN`, version u32, cell kind u8, gate mode u8,
//! D u32, N u32 (little-endian), then its tensors in declaration order as row-major
//! f64 LE. The classifier follows as a record with magic `EAFC`, version, K u32,
//! N u32, then `fc.w` and `fc.b`.

use std::fs;
use std::path::Path;

use crate::bptt::{LayerSpec, NetworkParams, NetworkSpec};
use crate::cells::{CellKind, GateMode, LayerParams};
use crate::error::{CheckpointError, Error, Result};
use crate::numerics::{Matrix, Vector};

pub const LAYER_MAGIC: [u8; 4] = *b"EARN";
pub const FC_MAGIC: [u8; 4] = *b"EAFC";
pub const VERSION: u32 = 1;

/// Upper bound on any single dimension, to refuse absurd headers early.
const MAX_DIM: u32 = 1 << 20;

pub fn encode(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.num_params() * 8 + 64);
    for layer in &params.layers {
        let (d, n) = layer.dims();
        out.extend_from_slice(&LAYER_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(layer.kind().code());
        out.push(layer.mode.code());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for (_, t) in layer.tensors() {
            put_f64s(&mut out, t);
        }
    }
    out.extend_from_slice(&FC_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.fc_w.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(params.fc_w.cols() as u32).to_le_bytes());
    put_f64s(&mut out, params.fc_w.as_slice());
    put_f64s(&mut out, &params.fc_b);
    out
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self) -> Result<[u8; 4], CheckpointError> {
        Ok(self.take(4)?.try_into().unwrap())
    }

    fn dim(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let v = self.u32()?;
        if v == 0 || v > MAX_DIM {
            return Err(CheckpointError::Dims(format!("{what} = {v}")));
        }
        Ok(v as usize)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn fill(&mut self, dst: &mut [f64]) -> Result<(), CheckpointError> {
        let bytes = self.take(dst.len() * 8)?;
        for (d, c) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
            let v = f64::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(CheckpointError::NonFinite);
            }
            *d = v;
        }
        Ok(())
    }
}

fn layer_scalars(kind: CellKind, mode: GateMode, d: usize, n: usize) -> Option<usize> {
    let per_row = d.checked_add(n)?.checked_add(1)?;
    let mut total = kind.blocks().checked_mul(n)?.checked_mul(per_row)?;
    for w in [mode.input_gate_width(d), mode.hidden_gate_width(n)]
        .into_iter()
        .flatten()
    {
        total = total.checked_add(w.checked_mul(per_row)?)?;
    }
    Some(total)
}

/// Decodes a checkpoint into its architecture and parameters. The returned spec
/// carries no dropout and seed 0, since neither is stored.
pub fn decode(bytes: &[u8]) -> Result<(NetworkSpec, NetworkParams), CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let mut layers = Vec::new();
    let mut specs: Vec<LayerSpec> = Vec::new();
    loop {
        let magic = r.magic()?;
        let version = r.u32()?;
        if magic == FC_MAGIC {
            if version != VERSION {
                return Err(CheckpointError::Version(version));
            }
            break;
        }
        if magic != LAYER_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let kc = r.u8()?;
        let kind = CellKind::from_code(kc).ok_or(CheckpointError::CellKind(kc))?;
        let mc = r.u8()?;
        let mode = GateMode::from_code(mc).ok_or(CheckpointError::GateMode(mc))?;
        let d = r.dim("D")?;
        let n = r.dim("N")?;
        if let Some(prev) = specs.last() {
            if prev.hidden_dim != d {
                return Err(CheckpointError::Dims(format!(
                    "layer {} input {d} does not match previous width {}",
                    specs.len(),
                    prev.hidden_dim
                )));
            }
        }
        let need = layer_scalars(kind, mode, d, n).and_then(|s| s.checked_mul(8));
        if need.is_none_or(|b| b > r.remaining()) {
            return Err(CheckpointError::Truncated(bytes.len()));
        }
        let mut layer = LayerParams::zeros(kind, mode, d, n);
        for t in layer.tensors_mut() {
            r.fill(t)?;
        }
        specs.push(LayerSpec {
            kind,
            mode,
            input_dim: d,
            hidden_dim: n,
            dropout_p: 0.0,
        });
        layers.push(layer);
    }
    if layers.is_empty() {
        return Err(CheckpointError::Dims("no layers".into()));
    }
    let k = r.dim("K")?;
    let n = r.dim("N")?;
    let top = specs.last().map(|s| s.hidden_dim).unwrap_or(0);
    if n != top || k < 2 {
        return Err(CheckpointError::Dims(format!(
            "classifier {k}x{n} over width {top}"
        )));
    }
    if k.checked_mul(n + 1)
        .and_then(|s| s.checked_mul(8))
        .is_none_or(|b| b > r.remaining())
    {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let mut fc_w = Matrix::zeros(k, n);
    r.fill(fc_w.as_mut_slice())?;
    let mut fc_b = Vector::zeros(k);
    r.fill(&mut fc_b)?;
    if r.remaining() > 0 {
        return Err(CheckpointError::Trailing(r.remaining()));
    }
    let spec = NetworkSpec {
        layers: specs,
        classes: k,
        seed: 0,
        forget_bias: 0.0,
    };
    Ok((spec, NetworkParams { layers, fc_w, fc_b }))
}

pub fn save(params: &NetworkParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(NetworkSpec, NetworkParams)> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{stream_rng, Stream};

    fn sample(kind: CellKind, mode: GateMode) -> NetworkParams {
        let spec = NetworkSpec::stacked(kind, mode, 3, 4, 2, 5, 0.0, 0);
        NetworkParams::init(&spec, &mut stream_rng(7, Stream::Init))
    }

    #[test]
    fn round_trip_all_combinations() {
        for kind in CellKind::ALL {
            for mode in GateMode::STANDARD
                .into_iter()
                .chain([GateMode::InputAndHidden])
            {
                let p = sample(kind, mode);
                let (spec, q) = decode(&encode(&p)).unwrap();
                assert_eq!(p, q);
                assert_eq!(spec.layers.len(), 2);
                assert_eq!(spec.layers[0].kind, kind);
                assert_eq!(spec.layers[1].mode, mode);
                q.check_spec(&spec).unwrap();
            }
        }
    }

    #[test]
    fn header_layout() {
        let p = sample(CellKind::Gru, GateMode::Element);
        let b = encode(&p);
        assert_eq!(&b[..4], b"EARN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(b[8], 2);
        assert_eq!(b[9], 1);
        assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[14..18].try_into().unwrap()), 4);
        let first = p.layers[0].tensors()[0].1[0];
        assert_eq!(f64::from_le_bytes(b[18..26].try_into().unwrap()), first);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let good = encode(&sample(CellKind::Lstm, GateMode::Scalar));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(decode(&bad).unwrap_err(), CheckpointError::Version(9));
        let mut bad = good.clone();
        bad[8] = 7;
        assert_eq!(decode(&bad).unwrap_err(), CheckpointError::CellKind(7));
        let mut bad = good.clone();
        bad[9] = 42;
        assert_eq!(decode(&bad).unwrap_err(), CheckpointError::GateMode(42));
        assert!(matches!(
            decode(&good[..good.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(decode(&bad).unwrap_err(), CheckpointError::Trailing(1));
        let mut bad = good.clone();
        bad[18..26].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(decode(&bad).unwrap_err(), CheckpointError::NonFinite);
        let mut bad = good;
        bad[14..18].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bad), Err(CheckpointError::Dims(_))));
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let p = sample(CellKind::Srnn, GateMode::HiddenElement);
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap().1, p);
        assert!(matches!(
            load(&dir.path().join("missing")),
            Err(Error::Io(_))
        ));
    }
}
