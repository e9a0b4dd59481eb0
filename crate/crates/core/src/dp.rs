//! Differentially private publication of holder-side vectors.
//!
//! A vector is clipped to norm `C`, then Gaussian noise with standard
//! deviation `sigma * C` is added per coordinate, with
//! `sigma = sqrt(2 ln(1.25 / delta)) / epsilon`. Optionally the noisy vector is
//! shrunk with the James-Stein factor `1 - (d - 2) sigma^2 C^2 / |x~|^2`.
//! `epsilon = inf` and `C = inf` are accepted as noiseless / unclipped.

use alloc::format;

use ndarray::{Array1, ArrayView1, ArrayViewMut1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{norm, Matrix};

/// Which publication mechanism to run after clipping and noising.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mechanism {
    #[default]
    Gaussian,
    JamesStein,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpParams {
    epsilon: f64,
    delta: f64,
    clip: f64,
    sigma: f64,
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64, clip: f64) -> Result<Self> {
        if !(clip > 0.0) {
            return Err(Error::InvalidDpParams(format!("clip must be positive, got {clip}")));
        }
        let sigma = sigma_from_eps(epsilon, delta)?;
        Ok(DpParams { epsilon, delta, clip, sigma })
    }

    /// No noise and no clipping.
    pub fn disabled() -> Self {
        DpParams { epsilon: f64::INFINITY, delta: 1e-4, clip: f64::INFINITY, sigma: 0.0 }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Per-coordinate noise standard deviation, `sigma * C` (zero when noiseless).
    pub fn noise_std(&self) -> f64 {
        if self.sigma == 0.0 {
            0.0
        } else {
            self.sigma * self.clip
        }
    }
}

/// `sqrt(2 ln(1.25 / delta)) / epsilon`, or 0 for `epsilon = inf`.
pub fn sigma_from_eps(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidDpParams(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDpParams(format!("delta must lie in (0, 1), got {delta}")));
    }
    if epsilon == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(libm::sqrt(2.0 * libm::log(1.25 / delta)) / epsilon)
}

/// Scales `x` by `min(1, C / |x|)`.
pub fn clip(x: ArrayView1<'_, f64>, c: f64) -> Array1<f64> {
    let mut out = x.to_owned();
    clip_in_place(out.view_mut(), c);
    out
}

pub fn clip_in_place(mut x: ArrayViewMut1<'_, f64>, c: f64) {
    let n = norm(x.view());
    if n > c {
        let k = c / n;
        x.mapv_inplace(|v| v * k);
    }
}

fn add_noise<R: Rng + ?Sized>(mut x: ArrayViewMut1<'_, f64>, std: f64, rng: &mut R) {
    if std > 0.0 {
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += std * z;
        }
    }
}

/// James-Stein shrinkage of an already noised vector.
pub fn james_stein_shrink(mut noisy: ArrayViewMut1<'_, f64>, noise_std: f64) -> Result<()> {
    let d = noisy.len();
    if d < 3 {
        return Err(Error::DimensionTooSmall(d));
    }
    let n2: f64 = noisy.iter().map(|v| v * v).sum();
    if libm::sqrt(n2) < 1e-12 {
        noisy.fill(0.0);
        return Ok(());
    }
    let factor = 1.0 - (d as f64 - 2.0) * noise_std * noise_std / n2;
    noisy.mapv_inplace(|v| v * factor);
    Ok(())
}

/// Clip, then add `N(0, sigma^2 C^2)` per coordinate.
pub fn gaussian_publish<R: Rng + ?Sized>(x: ArrayView1<'_, f64>, params: &DpParams, rng: &mut R) -> Array1<f64> {
    let mut out = clip(x, params.clip);
    add_noise(out.view_mut(), params.noise_std(), rng);
    out
}

/// Gaussian mechanism followed by James-Stein shrinkage; needs `d >= 3`.
pub fn james_stein_publish<R: Rng + ?Sized>(
    x: ArrayView1<'_, f64>,
    params: &DpParams,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if x.len() < 3 {
        return Err(Error::DimensionTooSmall(x.len()));
    }
    let mut out = gaussian_publish(x, params, rng);
    james_stein_shrink(out.view_mut(), params.noise_std())?;
    Ok(out)
}

/// Publishes every row of `m` independently.
pub fn publish_rows<R: Rng + ?Sized>(
    m: &Matrix,
    params: &DpParams,
    mechanism: Mechanism,
    rng: &mut R,
) -> Result<Matrix> {
    if mechanism == Mechanism::JamesStein && m.ncols() < 3 {
        return Err(Error::DimensionTooSmall(m.ncols()));
    }
    let mut out = m.clone();
    let std = params.noise_std();
    for mut row in out.axis_iter_mut(Axis(0)) {
        clip_in_place(row.view_mut(), params.clip);
        add_noise(row.view_mut(), std, rng);
        if mechanism == Mechanism::JamesStein {
            james_stein_shrink(row, std)?;
        }
    }
    Ok(out)
}

/// Expected squared error of the Gaussian mechanism, `d sigma^2 C^2`.
pub fn mse_gaussian(d: usize, sigma: f64, c: f64) -> f64 {
    d as f64 * sigma * sigma * c * c
}

/// Closed-form James-Stein error for `x ~ N(0, w^2 I)`:
/// `d sigma^2 C^2 (1 - ((d-2)^2 / d^2) sigma^2 C^2 / (w^2 + sigma^2 C^2))`.
pub fn mse_james_stein(d: usize, sigma: f64, c: f64, w: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::DimensionTooSmall(d));
    }
    let df = d as f64;
    let s2 = sigma * sigma * c * c;
    let reduction = (df - 2.0) * (df - 2.0) / (df * df) * s2 / (w * w + s2);
    Ok(df * s2 * (1.0 - reduction))
}

/// Exact risk of the same estimator under the same prior, obtained from
/// Stein's identity: `d s^2 - (d - 2) s^4 / (w^2 + s^2)` with `s = sigma C`.
pub fn mse_james_stein_exact(d: usize, sigma: f64, c: f64, w: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::DimensionTooSmall(d));
    }
    let df = d as f64;
    let s2 = sigma * sigma * c * c;
    Ok(df * s2 - (df - 2.0) * s2 * s2 / (w * w + s2))
}

/// Outcome of a composition step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardStatus {
    /// `epsilon < c1 q sqrt(T)` holds.
    Satisfied,
    /// The closed form was applied outside its stated regime.
    Violated,
}

/// Tracks `epsilon' = c2 q sqrt(T) epsilon` across iterations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrivacyAccountant {
    pub q: f64,
    pub steps: u64,
    pub per_step_epsilon: f64,
    pub c1: f64,
    pub c2: f64,
}

impl PrivacyAccountant {
    pub fn new(q: f64, per_step_epsilon: f64) -> Self {
        PrivacyAccountant { q, steps: 0, per_step_epsilon, c1: 1.0, c2: 1.0 }
    }

    pub fn with_constants(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    pub fn total(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.c2 * self.q * libm::sqrt(self.steps as f64) * self.per_step_epsilon
    }

    pub fn guard(&self) -> GuardStatus {
        if self.per_step_epsilon < self.c1 * self.q * libm::sqrt(self.steps as f64) {
            GuardStatus::Satisfied
        } else {
            GuardStatus::Violated
        }
    }

    /// Advances by `steps` iterations.
    pub fn compose(&mut self, steps: u64) -> GuardStatus {
        self.steps += steps;
        self.guard()
    }
}
