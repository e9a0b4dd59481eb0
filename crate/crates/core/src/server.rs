//! Server-side combination and MLP, plus the softmax head kept by the label holder.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{glorot, hstack, sigmoid, Matrix};

/// How the server merges local embeddings into a global one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CombineKind {
    Concat,
    #[default]
    Mean,
    Regression,
}

impl CombineKind {
    pub const ALL: [CombineKind; 3] = [CombineKind::Concat, CombineKind::Mean, CombineKind::Regression];

    pub fn name(self) -> &'static str {
        match self {
            CombineKind::Concat => "concat",
            CombineKind::Mean => "mean",
            CombineKind::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub kind: CombineKind,
    /// One weight vector per holder; used only by `Regression`.
    pub omega: Vec<Array1<f64>>,
}

impl Combiner {
    /// Regression weights start at `1 / holders`, so it begins equal to `Mean`.
    pub fn new(kind: CombineKind, holders: usize, dim: usize) -> Self {
        let omega = match kind {
            CombineKind::Regression => vec![Array1::from_elem(dim, 1.0 / holders as f64); holders],
            _ => Vec::new(),
        };
        Combiner { kind, omega }
    }

    pub fn output_dim(&self, dims: &[usize]) -> usize {
        match self.kind {
            CombineKind::Concat => dims.iter().sum(),
            _ => dims.first().copied().unwrap_or(0),
        }
    }
}

fn check_locals(locals: &[&Matrix], same_width: bool) -> Result<()> {
    let first = locals.first().ok_or(Error::TooFewParties(0))?;
    for m in locals {
        if m.nrows() != first.nrows() || (same_width && m.ncols() != first.ncols()) {
            return Err(Error::shape("local embeddings", first.dim(), m.dim()));
        }
    }
    Ok(())
}

pub fn combine(locals: &[&Matrix], combiner: &Combiner) -> Result<Matrix> {
    match combiner.kind {
        CombineKind::Concat => {
            check_locals(locals, false)?;
            Ok(hstack(locals))
        }
        CombineKind::Mean => {
            check_locals(locals, true)?;
            let mut acc = Array2::zeros(locals[0].dim());
            for m in locals {
                acc += *m;
            }
            Ok(acc / locals.len() as f64)
        }
        CombineKind::Regression => {
            check_locals(locals, true)?;
            if combiner.omega.len() != locals.len() {
                return Err(Error::shape("regression weights", (locals.len(), 0), (combiner.omega.len(), 0)));
            }
            let mut acc = Array2::zeros(locals[0].dim());
            for (m, w) in locals.iter().zip(&combiner.omega) {
                if w.len() != m.ncols() {
                    return Err(Error::shape("regression weight", (m.ncols(), 1), (w.len(), 1)));
                }
                acc += &(*m * w);
            }
            Ok(acc)
        }
    }
}

/// Returns per-holder gradients and, for `Regression`, the gradients of each `omega_i`.
pub fn combine_backward(
    d_global: &Matrix,
    locals: &[&Matrix],
    combiner: &Combiner,
) -> Result<(Vec<Matrix>, Vec<Array1<f64>>)> {
    match combiner.kind {
        CombineKind::Concat => {
            let mut at = 0;
            let mut out = Vec::with_capacity(locals.len());
            for m in locals {
                out.push(d_global.slice(ndarray::s![.., at..at + m.ncols()]).to_owned());
                at += m.ncols();
            }
            if at != d_global.ncols() {
                return Err(Error::shape("concat gradient", (d_global.nrows(), at), d_global.dim()));
            }
            Ok((out, Vec::new()))
        }
        CombineKind::Mean => {
            let part = d_global / locals.len() as f64;
            Ok((vec![part; locals.len()], Vec::new()))
        }
        CombineKind::Regression => {
            let holders = locals.iter().zip(&combiner.omega).map(|(_, w)| d_global * w).collect();
            let omegas = locals.iter().map(|m| (d_global * *m).sum_axis(Axis(0))).collect();
            Ok((holders, omegas))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Bias-free sigmoid MLP `W_0 .. W_{L-1}` with inverted dropout on every hidden output.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerMlp {
    weights: Vec<Matrix>,
    pub dropout: f64,
    generation: u64,
}

impl ServerMlp {
    pub fn new(weights: Vec<Matrix>, dropout: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("the server needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(alloc::format!("dropout must lie in [0, 1), got {dropout}")));
        }
        for pair in weights.windows(2) {
            if pair[1].nrows() != pair[0].ncols() {
                return Err(Error::shape("server layers", (pair[0].ncols(), pair[1].ncols()), pair[1].dim()));
            }
        }
        Ok(ServerMlp { weights, dropout, generation: 0 })
    }

    /// `layers` layers: `d_in -> d`, then `d -> d`.
    pub fn glorot<R: Rng + ?Sized>(layers: usize, d_in: usize, d: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        let weights = (0..layers).map(|l| glorot(if l == 0 { d_in } else { d }, d, rng)).collect();
        Self::new(weights, dropout)
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        self.generation += 1;
        &mut self.weights
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].ncols()
    }

    pub fn sgd_step(&mut self, grads: &[Matrix], lr: f64, l2: f64) -> Result<()> {
        sgd(self.weights_mut(), grads, lr, l2)
    }
}

pub(crate) fn sgd(weights: &mut [Matrix], grads: &[Matrix], lr: f64, l2: f64) -> Result<()> {
    if weights.len() != grads.len() {
        return Err(Error::shape("gradients", (weights.len(), 0), (grads.len(), 0)));
    }
    for (w, g) in weights.iter_mut().zip(grads) {
        if w.dim() != g.dim() {
            return Err(Error::shape("gradient", w.dim(), g.dim()));
        }
        w.zip_mut_with(g, |w, g| *w -= lr * (g + l2 * *w));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    generation: u64,
    /// Input of each layer.
    inputs: Vec<Matrix>,
    /// Sigmoid output of each layer, before dropout.
    activations: Vec<Matrix>,
    /// Scaled keep masks (train mode only).
    masks: Vec<Option<Matrix>>,
}

pub fn server_forward<R: Rng + ?Sized>(
    global: &Matrix,
    mlp: &ServerMlp,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, MlpCache)> {
    if global.ncols() != mlp.input_dim() {
        return Err(Error::shape("global embedding", (global.nrows(), mlp.input_dim()), global.dim()));
    }
    let keep = 1.0 - mlp.dropout;
    let mut cache = MlpCache { generation: mlp.generation, inputs: Vec::new(), activations: Vec::new(), masks: Vec::new() };
    let mut a = global.clone();
    for w in mlp.weights() {
        let s = a.dot(w).mapv(sigmoid);
        let mask = if mode == Mode::Train && mlp.dropout > 0.0 {
            Some(Array2::from_shape_simple_fn(s.dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
        } else {
            None
        };
        let out = match &mask {
            Some(m) => &s * m,
            None => s.clone(),
        };
        cache.inputs.push(a);
        cache.activations.push(s);
        cache.masks.push(mask);
        a = out;
    }
    Ok((a, cache))
}

/// Returns the layer gradients and the gradient of the global embedding.
pub fn server_backward(d_z: &Matrix, cache: &MlpCache, mlp: &ServerMlp) -> Result<(Vec<Matrix>, Matrix)> {
    if cache.generation != mlp.generation || cache.inputs.len() != mlp.weights.len() {
        return Err(Error::StaleCache);
    }
    let last = &cache.activations[cache.activations.len() - 1];
    if d_z.dim() != last.dim() {
        return Err(Error::shape("server output gradient", last.dim(), d_z.dim()));
    }
    let mut grad = d_z.clone();
    let mut grads = Vec::with_capacity(mlp.weights.len());
    for l in (0..mlp.weights.len()).rev() {
        if let Some(m) = &cache.masks[l] {
            grad = &grad * m;
        }
        let s = &cache.activations[l];
        let d_pre = &grad * &s.mapv(|v| v * (1.0 - v));
        grads.push(cache.inputs[l].t().dot(&d_pre));
        grad = d_pre.dot(&mlp.weights[l].t());
    }
    grads.reverse();
    Ok((grads, grad))
}

/// The label holder's final layer `W_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub weight: Matrix,
}

impl OutputHead {
    pub fn glorot<R: Rng + ?Sized>(d: usize, classes: usize, rng: &mut R) -> Self {
        OutputHead { weight: glorot(d, classes, rng) }
    }

    pub fn classes(&self) -> usize {
        self.weight.ncols()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| libm::exp(v - m));
        let z = row.sum();
        row /= z;
    }
    out
}

/// Returns `(logits, probabilities)`.
pub fn output_forward(z: &Matrix, head: &OutputHead) -> Result<(Matrix, Matrix)> {
    if z.ncols() != head.weight.nrows() {
        return Err(Error::shape("output head input", (z.nrows(), head.weight.nrows()), z.dim()));
    }
    let logits = z.dot(&head.weight);
    let probs = softmax(&logits);
    Ok((logits, probs))
}

/// Gradients of `W_L` and of `z` from the logit gradient.
pub fn output_backward(d_logits: &Matrix, z: &Matrix, head: &OutputHead) -> (Matrix, Matrix) {
    (z.t().dot(d_logits), d_logits.dot(&head.weight.t()))
}

/// Mean negative log-likelihood over `mask` and its gradient with respect to the logits.
pub fn cross_entropy(probs: &Matrix, labels: &[usize], mask: &[bool]) -> Result<(f64, Matrix)> {
    if labels.len() != probs.nrows() || mask.len() != probs.nrows() {
        return Err(Error::shape("labels", (probs.nrows(), 1), (labels.len().min(mask.len()), 1)));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros(probs.dim());
    for v in 0..probs.nrows() {
        if !mask[v] {
            continue;
        }
        let y = labels[v];
        if y >= probs.ncols() {
            return Err(Error::Graph(alloc::format!("label {y} of node {v} out of range")));
        }
        loss -= libm::log(probs[[v, y]].max(f64::MIN_POSITIVE));
        let mut g = grad.row_mut(v);
        g.assign(&probs.row(v));
        g[y] -= 1.0;
    }
    grad /= count as f64;
    Ok((loss / count as f64, grad))
}

/// Argmax per row, ties to the lowest class id.
pub fn argmax_rows(probs: &Matrix) -> Vec<usize> {
    probs
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
