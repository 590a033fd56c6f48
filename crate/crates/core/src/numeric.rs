//! Dense vector/matrix primitives, a stable softmax, the seeded RNG, and a
//! central finite-difference gradient oracle used by the loss tests.
//!
//! Everything is 64-bit: the finite-difference checks need headroom well
//! below 32-bit rounding noise.

use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Row-major dense matrix with immutable dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::EmptySet("matrix with zero rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoreError::DimensionMismatch("ragged matrix rows".into()));
        }
        let n_rows = rows.len();
        let data = rows.into_iter().flatten().collect();
        Ok(Matrix {
            rows: n_rows,
            cols,
            data,
        })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::DimensionMismatch(format!(
                "flat data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(CoreError::DimensionMismatch(format!(
                "matvec: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            out[r] = acc;
        }
        Ok(out)
    }

    /// y = A^T x
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(CoreError::DimensionMismatch(format!(
                "matvec_transpose: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += a * xr;
            }
        }
        Ok(out)
    }

    /// self += scale * (u v^T)
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(CoreError::DimensionMismatch(format!(
                "add_outer: matrix is {}x{}, outer product is {}x{}",
                self.rows,
                self.cols,
                u.len(),
                v.len()
            )));
        }
        for r in 0..self.rows {
            let base = r * self.cols;
            let ur = u[r] * scale;
            for c in 0..self.cols {
                self.data[base + c] += ur * v[c];
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard inner product.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "dot: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scale a vector to unit Euclidean norm. Errors on the zero vector.
pub fn l2_normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 {
        return Err(CoreError::DegenerateInput(
            "cannot normalize the zero vector".into(),
        ));
    }
    Ok(a.iter().map(|v| v / n).collect())
}

/// Gradient of `g . l2_normalize(x)` with respect to the raw vector `x`,
/// given the upstream gradient `g` at the normalized output.
pub fn l2_normalize_backward(raw: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != upstream.len() {
        return Err(CoreError::DimensionMismatch(
            "l2_normalize_backward: length mismatch".into(),
        ));
    }
    let n = norm(raw);
    if n == 0.0 {
        return Err(CoreError::DegenerateInput(
            "cannot normalize the zero vector".into(),
        ));
    }
    let unit: Vec<f64> = raw.iter().map(|v| v / n).collect();
    let proj = dot(&unit, upstream)?;
    Ok(upstream
        .iter()
        .zip(unit.iter())
        .map(|(g, u)| (g - u * proj) / n)
        .collect())
}

/// Temperature softmax with max-subtraction so large scores cannot overflow.
pub fn softmax(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(CoreError::invalid_parameter(
            "tau",
            format!("temperature must be positive, got {tau}"),
        ));
    }
    if z.is_empty() {
        return Err(CoreError::EmptySet("softmax over an empty vector".into()));
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| ((v - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Central finite difference (f(x+eps e_i) - f(x-eps e_i)) / (2 eps) per
/// coordinate. The independent gradient oracle for every analytic gradient
/// in this workspace.
pub fn finite_diff_grad<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(CoreError::invalid_parameter(
            "eps",
            "step size must be positive",
        ));
    }
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(CoreError::Numeric(format!(
                "finite_diff_grad: non-finite evaluation at coordinate {i}"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Deterministic pseudorandom generator.
///
/// Backed by ChaCha8: the same 64-bit seed yields the same integer stream on
/// every platform, which makes data generation, initialization, and sampling
/// reproducible across runs.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(rand_distr::StandardNormal)
    }

    /// Uniform index in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// k distinct elements drawn without replacement, in draw order.
    pub fn sample_without_replacement<T: Clone>(&mut self, items: &[T], k: usize) -> Vec<T> {
        let mut pool: Vec<T> = items.to_vec();
        let k = k.min(pool.len());
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let i = self.index(pool.len());
            out.push(pool.swap_remove(i));
        }
        out
    }
}

/// splitmix64 finalizer; used to derive independent sub-seeds from a master
/// seed without correlating the resulting ChaCha streams.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
