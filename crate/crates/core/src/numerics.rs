//! Dense linear algebra, element-wise nonlinearities and seeded random streams.
//!
//! Everything here works on `f64`. Matrices are stored row-major. The random
//! streams are ChaCha20 (`rand_chacha::ChaCha20Rng`), a counter-based
//! generator; a stream is fully determined by its 64-bit seed and child
//! streams are keyed by `(seed, label)` through SHA-256, so they do not depend
//! on how many draws were taken from the parent.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_len, Error, Result};

/// A dense real vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Self {
        Vector(values)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    /// The `i`-th canonical basis vector of length `len`.
    pub fn basis(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[i] = 1.0;
        v
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
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

impl From<Vec<f64>> for Vector {
    fn from(values: Vec<f64>) -> Self {
        Vector(values)
    }
}

impl From<&[f64]> for Vector {
    fn from(values: &[f64]) -> Self {
        Vector(values.to_vec())
    }
}

impl<'a> IntoIterator for &'a Vector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

/// A dense row-major `rows x cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("matrix dimensions must be positive"));
        }
        ensure_len("Matrix::from_row_major", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_row_major(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `y = A x` on raw row-major storage. Callers check the shapes.
pub(crate) fn matvec_raw(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (aij, xj) in row.iter().zip(x) {
            acc += aij * xj;
        }
        *o = acc;
    }
}

/// `x = Aᵀ y` on raw row-major storage; every output entry sums over rows in
/// ascending order.
pub(crate) fn matvec_t_raw(a: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..rows {
        let yi = y[i];
        let row = &a[i * cols..(i + 1) * cols];
        for (o, aij) in out.iter_mut().zip(row) {
            *o += aij * yi;
        }
    }
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vector> {
    ensure_len("matvec", a.cols, x.len())?;
    let mut out = vec![0.0; a.rows];
    matvec_raw(&a.data, a.rows, a.cols, x, &mut out);
    Ok(Vector(out))
}

pub fn matvec_t(a: &Matrix, y: &[f64]) -> Result<Vector> {
    ensure_len("matvec_t", a.rows, y.len())?;
    let mut out = vec![0.0; a.cols];
    matvec_t_raw(&a.data, a.rows, a.cols, y, &mut out);
    Ok(Vector(out))
}

pub fn relu(x: &[f64]) -> Vector {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// `tanh(t * x)` element-wise, the differentiable stand-in for `sign`.
pub fn smooth_sign(x: &[f64], t: f64) -> Result<Vector> {
    if !(t > 0.0) {
        return Err(Error::contract(format!("smoothness must be positive, got {t}")));
    }
    Ok(x.iter().map(|&v| (t * v).tanh()).collect())
}

/// Sign with the convention `sign(0) = +1`.
#[inline]
pub fn sign_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn exact_sign(x: &[f64]) -> Vector {
    x.iter().map(|&v| sign_scalar(v)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `v / ‖v‖₂`; `None` for the zero vector.
pub fn normalized(v: &[f64]) -> Option<Vector> {
    let norm = norm2(v);
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

/// Indices of the `k` largest-magnitude entries. Ties go to the smaller index.
/// The result is sorted by index.
pub(crate) fn top_k_indices(x: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()).then(i.cmp(&j)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    keep
}

/// Gap between the `k`-th and `(k+1)`-th largest magnitudes; infinite when
/// `k` covers the whole vector.
pub(crate) fn top_k_gap(x: &[f64], k: usize) -> f64 {
    if k >= x.len() {
        return f64::INFINITY;
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags[k - 1] - mags[k]
}

/// A seeded, reproducible random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream from `(seed, label)`. The parent's draw
    /// position has no influence on the child.
    pub fn child(&self, label: &str) -> RngStream {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        RngStream::new(u64::from_le_bytes(bytes))
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform_index(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..upper)
    }

    pub(crate) fn inner(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn gaussian_vector(&mut self, len: usize) -> Vector {
        (0..len).map(|_| self.gaussian()).collect()
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.gaussian()).collect();
        Matrix { rows, cols, data }
    }
}
