//! Small dense-matrix helpers on top of `ndarray`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

pub type Matrix = Array2<f64>;

/// Glorot-uniform initialisation for a `fan_in x fan_out` weight.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

pub fn uniform<R: Rng + ?Sized>(shape: (usize, usize), limit: f64, rng: &mut R) -> Matrix {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-limit..limit))
}

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn row_norms(m: &Matrix) -> Array1<f64> {
    m.axis_iter(Axis(0)).map(norm).collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| libm::fabs(x - y)).fold(0.0, f64::max)
}

/// Column-wise concatenation of equally tall blocks.
pub fn hstack(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for b in blocks {
        out.slice_mut(ndarray::s![.., at..at + b.ncols()]).assign(*b);
        at += b.ncols();
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}
