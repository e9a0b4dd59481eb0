//! Holder-side GraphSAGE propagation with a mean aggregator.
//!
//! Each hop computes `h^k = tanh([h^{k-1} | mean_{N(v)} h^{k-1}] . W^k)` using
//! only the holder's own edges. The last hop is L2-normalised per row.

use alloc::vec::Vec;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::NeighborIndex;
use crate::party::PartyId;
use crate::tensor::{glorot, hstack, norm, Matrix};

/// Rows with a smaller norm are left at zero by the final normalisation.
pub const NORM_EPS: f64 = 1e-12;

/// Per-hop weights `W^1..W^K`, each `(2 d_in) x d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGnnParams {
    weights: Vec<Matrix>,
    generation: u64,
}

impl LocalGnnParams {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("at least one propagation hop is required".into()));
        }
        for pair in weights.windows(2) {
            if pair[1].nrows() != 2 * pair[0].ncols() {
                return Err(Error::shape("hop weights", (2 * pair[0].ncols(), pair[1].ncols()), pair[1].dim()));
            }
        }
        Ok(LocalGnnParams { weights, generation: 0 })
    }

    /// Glorot-initialised `depth` hops mapping `d_in` to `d_out` (and `d_out` to `d_out` after the first).
    pub fn glorot<R: Rng + ?Sized>(depth: usize, d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let weights = (0..depth)
            .map(|k| {
                let fan_in = if k == 0 { 2 * d_in } else { 2 * d_out };
                glorot(fan_in, d_out, rng)
            })
            .collect();
        Self::new(weights)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows() / 2
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].ncols()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Bumped on every mutation; caches from older generations are rejected.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        self.generation += 1;
        &mut self.weights
    }

    /// `W <- W - lr (grad + l2 W)` for every hop.
    pub fn sgd_step(&mut self, grads: &[Matrix], lr: f64, l2: f64) -> Result<()> {
        if grads.len() != self.weights.len() {
            return Err(Error::shape("hop gradients", (self.weights.len(), 0), (grads.len(), 0)));
        }
        for (w, g) in self.weights.iter().zip(grads) {
            if w.dim() != g.dim() {
                return Err(Error::shape("hop gradient", w.dim(), g.dim()));
            }
        }
        for (w, g) in self.weights_mut().iter_mut().zip(grads) {
            w.zip_mut_with(g, |w, g| *w -= lr * (g + l2 * *w));
        }
        Ok(())
    }
}

/// One holder's normalised local node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEmbeddings {
    pub holder: PartyId,
    pub h: Matrix,
}

/// Activations kept by [`local_forward`] for [`local_backward`].
#[derive(Debug, Clone)]
pub struct GnnCache {
    generation: u64,
    holder: PartyId,
    neighbors: NeighborIndex,
    /// `h^{k-1}` for each hop.
    inputs: Vec<Matrix>,
    /// `h^k` before normalisation.
    outputs: Vec<Matrix>,
    normalized: Matrix,
    norms: Array1<f64>,
}

impl GnnCache {
    pub fn holder(&self) -> PartyId {
        self.holder
    }
}

/// Row `v` is the mean of `h[u]` over `u` in `N(v)`; isolated nodes get zeros.
pub fn mean_aggregate(h: &Matrix, neighbors: &NeighborIndex) -> Result<Matrix> {
    if h.nrows() != neighbors.node_count() {
        return Err(Error::shape("mean_aggregate", (neighbors.node_count(), h.ncols()), h.dim()));
    }
    let mut out = Array2::zeros(h.dim());
    for v in 0..h.nrows() {
        let ns = neighbors.neighbors(v);
        if ns.is_empty() {
            continue;
        }
        let mut row = out.row_mut(v);
        for &u in ns {
            row += &h.row(u);
        }
        row /= ns.len() as f64;
    }
    Ok(out)
}

/// Transpose of [`mean_aggregate`]: spreads each row's gradient back over its neighbours.
pub fn mean_aggregate_backward(d_agg: &Matrix, neighbors: &NeighborIndex) -> Matrix {
    let mut out = Array2::zeros(d_agg.dim());
    for v in 0..d_agg.nrows() {
        let ns = neighbors.neighbors(v);
        if ns.is_empty() {
            continue;
        }
        let share = &d_agg.row(v) / ns.len() as f64;
        for &u in ns {
            let mut r = out.row_mut(u);
            r += &share;
        }
    }
    out
}

/// Divides every row by its L2 norm, leaving near-zero rows at zero.
pub fn normalize_rows(h: &Matrix) -> (Matrix, Array1<f64>) {
    let norms: Array1<f64> = h.axis_iter(Axis(0)).map(norm).collect();
    let mut out = h.clone();
    for (mut row, &n) in out.axis_iter_mut(Axis(0)).zip(norms.iter()) {
        if n < NORM_EPS {
            row.fill(0.0);
        } else {
            row /= n;
        }
    }
    (out, norms)
}

/// Gradient of [`normalize_rows`]: `(dy - y (y . dy)) / |h|` per row.
pub fn normalize_rows_backward(dy: &Matrix, y: &Matrix, norms: &Array1<f64>) -> Matrix {
    let mut out = Array2::zeros(dy.dim());
    for v in 0..dy.nrows() {
        if norms[v] < NORM_EPS {
            continue;
        }
        let yv = y.row(v);
        let dyv = dy.row(v);
        let along = yv.dot(&dyv);
        let mut o = out.row_mut(v);
        o.assign(&((&dyv - &(&yv * along)) / norms[v]));
    }
    out
}

pub fn local_forward(
    holder: PartyId,
    h0: &Matrix,
    params: &LocalGnnParams,
    neighbors: &NeighborIndex,
) -> Result<(LocalEmbeddings, GnnCache)> {
    if h0.ncols() != params.input_dim() {
        return Err(Error::shape("initial embedding", (h0.nrows(), params.input_dim()), h0.dim()));
    }
    let mut inputs = Vec::with_capacity(params.depth());
    let mut outputs = Vec::with_capacity(params.depth());
    let mut h = h0.clone();
    for w in params.weights() {
        let agg = mean_aggregate(&h, neighbors)?;
        let next = hstack(&[&h, &agg]).dot(w).mapv(libm::tanh);
        inputs.push(h);
        outputs.push(next.clone());
        h = next;
    }
    let (normalized, norms) = normalize_rows(&h);
    let cache = GnnCache {
        generation: params.generation(),
        holder,
        neighbors: neighbors.clone(),
        inputs,
        outputs,
        normalized: normalized.clone(),
        norms,
    };
    Ok((LocalEmbeddings { holder, h: normalized }, cache))
}

/// Gradients of one holder's propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradients {
    pub weights: Vec<Matrix>,
    pub h0: Matrix,
}

pub fn local_backward(dl_dh: &Matrix, cache: &GnnCache, params: &LocalGnnParams) -> Result<LocalGradients> {
    if cache.generation != params.generation() || cache.inputs.len() != params.depth() {
        return Err(Error::StaleCache);
    }
    if dl_dh.dim() != cache.normalized.dim() {
        return Err(Error::shape("embedding gradient", cache.normalized.dim(), dl_dh.dim()));
    }
    let mut grad = normalize_rows_backward(dl_dh, &cache.normalized, &cache.norms);
    let mut weight_grads = Vec::with_capacity(params.depth());
    for k in (0..params.depth()).rev() {
        let out = &cache.outputs[k];
        let input = &cache.inputs[k];
        let w = &params.weights()[k];
        let d_pre = &grad * &out.mapv(|t| 1.0 - t * t);
        let agg = mean_aggregate(input, &cache.neighbors)?;
        let cat = hstack(&[input, &agg]);
        weight_grads.push(cat.t().dot(&d_pre));
        let d_cat = d_pre.dot(&w.t());
        let d_in = input.ncols();
        let d_self = d_cat.slice(ndarray::s![.., ..d_in]).to_owned();
        let d_agg = d_cat.slice(ndarray::s![.., d_in..]).to_owned();
        grad = d_self + mean_aggregate_backward(&d_agg, &cache.neighbors);
    }
    weight_grads.reverse();
    Ok(LocalGradients { weights: weight_grads, h0: grad })
}
