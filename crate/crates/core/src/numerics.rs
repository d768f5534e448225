//! Dense row-major matrices, vectors, and the handful of kernels the cells need.
//!
//! Forward kernels (`matvec`, `affine`, `hadamard`, `add`, `one_minus`, `scale`)
//! report their multiply/add counts to a thread-local tally so a forward pass
//! can be instrumented with [`count_flops`]. Activations are not counted.

use std::cell::Cell;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    /// Checked constructor; rejects non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("vector contains non-finite entry".into()));
        }
        Ok(Vector(data))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&v| f(v)).collect())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Vector(data.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

#[derive(Clone, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// Column-major copy for the forward kernels, dropped on every mutable borrow.
    #[serde(skip)]
    by_cols: OnceLock<Vec<f64>>,
}

impl PartialEq for Matrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data == other.data
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            by_cols: OnceLock::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Checked constructor from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("matrix contains non-finite entry".into()));
        }
        Ok(Matrix {
            rows,
            cols,
            data,
            by_cols: OnceLock::new(),
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.by_cols.take();
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        self.by_cols.take();
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.by_cols.take();
        &mut self.data
    }

    /// Column `c` is `columns()[c * rows..(c + 1) * rows]`.
    fn columns(&self) -> &[f64] {
        self.by_cols.get_or_init(|| {
            let mut t = vec![0.0; self.data.len()];
            for (r, row) in self.data.chunks_exact(self.cols.max(1)).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    t[c * self.rows + r] = v;
                }
            }
            t
        })
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.rows).map(|r| self.row(r)).collect();
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &rows)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Softmax,
}

/// Multiply and add counts accumulated by the forward kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopTally {
    pub mults: u64,
    pub adds: u64,
}

impl FlopTally {
    pub fn total(&self) -> u64 {
        self.mults + self.adds
    }
}

thread_local! {
    static TALLY: Cell<FlopTally> = const { Cell::new(FlopTally { mults: 0, adds: 0 }) };
}

fn tally(mults: usize, adds: usize) {
    TALLY.with(|t| {
        let mut cur = t.get();
        cur.mults += mults as u64;
        cur.adds += adds as u64;
        t.set(cur);
    });
}

/// Runs `f` and returns the multiply/add operations its forward kernels performed
/// on this thread.
pub fn count_flops<R>(f: impl FnOnce() -> R) -> (R, FlopTally) {
    let saved = TALLY.with(|t| t.replace(FlopTally::default()));
    let out = f();
    let counted = TALLY.with(|t| t.replace(saved));
    TALLY.with(|t| {
        let mut cur = t.get();
        cur.mults += counted.mults;
        cur.adds += counted.adds;
        t.set(cur);
    });
    (out, counted)
}

/// Builds `$name` twice, once with AVX2 enabled, and picks the wide build at run
/// time. Neither build fuses multiplies into adds, so both round identically.
macro_rules! wide_kernel {
    ($(#[$doc:meta])* fn $name:ident($($arg:ident: $ty:ty),*) $body:block) => {
        $(#[$doc])*
        pub(crate) fn $name($($arg: $ty),*) {
            #[inline(always)]
            fn body($($arg: $ty),*) $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) {
                    body($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports the enabled feature.
                    return unsafe { wide($($arg),*) };
                }
            }
            body($($arg),*)
        }
    };
}

wide_kernel! {
/// `out += m·v`, accumulated column by column.
fn matvec_add(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    if m.rows == 0 {
        return;
    }
    for (col, &x) in m.columns().chunks_exact(m.rows).zip(v) {
        axpy(x, col, out);
    }
}
}

/// `y += alpha * x`
#[inline(always)]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_matvec(op: &'static str, m: &Matrix, v: &[f64]) -> Result<()> {
    if m.cols != v.len() {
        return Err(Error::shape(
            op,
            m.shape_str(),
            format!("vector[{}]", v.len()),
        ));
    }
    Ok(())
}

pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    check_matvec("matvec", m, v)?;
    tally(m.rows * m.cols, m.rows * m.cols.saturating_sub(1));
    let mut out = vec![0.0; m.rows];
    matvec_add(m, v, &mut out);
    Ok(Vector(out))
}

/// `w_x·x + w_h·h + b`, the pre-activation shared by every gate.
pub fn affine(w_x: &Matrix, x: &Vector, w_h: &Matrix, h: &Vector, b: &Vector) -> Result<Vector> {
    check_matvec("affine (input)", w_x, x)?;
    check_matvec("affine (recurrent)", w_h, h)?;
    if w_x.rows != w_h.rows || w_x.rows != b.len() {
        return Err(Error::shape(
            "affine",
            format!("{} / {}", w_x.shape_str(), w_h.shape_str()),
            format!("bias[{}]", b.len()),
        ));
    }
    let (d, n, g) = (w_x.cols, w_h.cols, w_x.rows);
    // Each row: d + n products, (d - 1) + (n - 1) accumulations, two more to combine with b.
    tally(
        g * (d + n),
        g * (d.saturating_sub(1) + n.saturating_sub(1) + 2),
    );
    let mut out = vec![0.0; g];
    matvec_add(w_x, x, &mut out);
    matvec_add(w_h, h, &mut out);
    for (o, bi) in out.iter_mut().zip(b.iter()) {
        *o += bi;
    }
    Ok(Vector(out))
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn apply_activation(kind: Activation, v: &Vector) -> Vector {
    match kind {
        Activation::Sigmoid => v.map(sigmoid),
        Activation::Tanh => v.map(f64::tanh),
        Activation::Softmax => Vector(softmax(v)),
    }
}

pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "hadamard",
            format!("vector[{}]", a.len()),
            format!("vector[{}]", b.len()),
        ));
    }
    tally(a.len(), 0);
    Ok(Vector(a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()))
}

pub fn add(a: &Vector, b: &Vector) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "add",
            format!("vector[{}]", a.len()),
            format!("vector[{}]", b.len()),
        ));
    }
    tally(0, a.len());
    Ok(Vector(a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()))
}

/// `1 - v`, counted as one add per element.
pub fn one_minus(v: &Vector) -> Vector {
    tally(0, v.len());
    v.map(|x| 1.0 - x)
}

pub fn scale(alpha: f64, v: &Vector) -> Vector {
    tally(v.len(), 0);
    v.map(|x| alpha * x)
}

// Backward kernels. These are not tallied.

wide_kernel! {
/// `out += mᵀ·v`
fn matvec_t_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (r, &vr) in v.iter().enumerate() {
        if vr != 0.0 {
            axpy(vr, m.row(r), out);
        }
    }
}
}

wide_kernel! {
/// `m += u·vᵀ`
fn outer_acc(m: &mut Matrix, u: &[f64], v: &[f64]) {
    debug_assert_eq!(m.rows, u.len());
    debug_assert_eq!(m.cols, v.len());
    let cols = m.cols;
    if cols == 0 {
        return;
    }
    for (row, &ur) in m.as_mut_slice().chunks_exact_mut(cols).zip(u) {
        if ur != 0.0 {
            axpy(ur, v, row);
        }
    }
}
}
