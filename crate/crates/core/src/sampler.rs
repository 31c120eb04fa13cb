//! Approximate posterior function draws via random Fourier features, and
//! maximization of those draws over finite or continuous domains.
//!
//! A feature map `φ(x) = a·cos(Ωx + b)` with `a = sqrt(2 s² / M)` turns the
//! SE-kernel GP into Bayesian linear regression on `M` weights with a
//! standard normal prior. Conditioning on the data gives
//! `w | y ~ N(A⁻¹Φᵀy, λA⁻¹)` with `A = ΦᵀΦ + λI`; a draw of `w` with its
//! covariance scaled by `β²` is a sampled function.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{shifted_halton, Domain};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, KernelParams};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kernel: KernelParams,
    num_features: usize,
    /// Row-major `num_features × dim`.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    amplitude: f64,
}

/// Frequencies from the SE spectral density (per-dimension normal with
/// standard deviation `1/ℓ`), phases uniform on `[0, 2π)`.
pub fn draw_feature_map(kernel: &KernelParams, num_features: usize, seed: u64) -> Result<FeatureMap> {
    if num_features == 0 {
        return Err(Error::input("num_features must be at least 1"));
    }
    kernel.validate()?;
    let dim = kernel.dim();
    let mut rng = stream_rng(seed, Stream::ObjectiveFeatures, &[num_features as u64]);
    let mut frequencies = Vec::with_capacity(num_features * dim);
    for _ in 0..num_features {
        for l in &kernel.lengthscales {
            let z: f64 = StandardNormal.sample(&mut rng);
            frequencies.push(z / l);
        }
    }
    let phases = (0..num_features).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    Ok(FeatureMap {
        kernel: kernel.clone(),
        num_features,
        frequencies,
        phases,
        amplitude: (2.0 * kernel.signal_variance / num_features as f64).sqrt(),
    })
}

impl FeatureMap {
    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    #[inline]
    fn projection(&self, i: usize, x: &[f64]) -> f64 {
        let d = self.dim();
        let w = &self.frequencies[i * d..(i + 1) * d];
        w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.phases[i]
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_features)
            .map(|i| self.amplitude * self.projection(i, x).cos())
            .collect()
    }

    /// Feature matrix with one row per point.
    pub fn design(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.num_features);
        for (r, x) in xs.iter().enumerate() {
            for i in 0..self.num_features {
                m[(r, i)] = self.amplitude * self.projection(i, x).cos();
            }
        }
        m
    }

    /// `φ(x)ᵀφ(x')`, the kernel the map actually represents.
    pub fn induced_kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.features(a).iter().zip(self.features(b)).map(|(p, q)| p * q).sum()
    }
}

/// Weight-space posterior of a GP under a feature map; reusable across
/// many draws.
#[derive(Debug, Clone)]
pub struct FeaturePosterior {
    map: Arc<FeatureMap>,
    mean_weights: DVector<f64>,
    precision: Cholesky<f64, Dyn>,
    regularizer: f64,
}

impl FeaturePosterior {
    pub fn new(posterior: &GpPosterior, map: Arc<FeatureMap>) -> Result<Self> {
        if posterior.kernel() != map.kernel() {
            return Err(Error::input(
                "feature map was drawn for different kernel hyperparameters than the posterior",
            ));
        }
        let m = map.num_features();
        let lambda = posterior.kernel().regularizer;
        let data = posterior.data();
        let (precision, rhs) = if data.is_empty() {
            (DMatrix::from_diagonal_element(m, m, lambda), DVector::zeros(m))
        } else {
            let phi = map.design(data.inputs());
            let y = DVector::from_column_slice(data.targets());
            let mut a = phi.tr_mul(&phi);
            for i in 0..m {
                a[(i, i)] += lambda;
            }
            (a, phi.tr_mul(&y))
        };
        let precision = Cholesky::new(precision)
            .ok_or_else(|| Error::Numerical("feature-space precision matrix is not positive definite".into()))?;
        let mean_weights = precision.solve(&rhs);
        Ok(Self {
            map,
            mean_weights,
            precision,
            regularizer: lambda,
        })
    }

    pub fn map(&self) -> &Arc<FeatureMap> {
        &self.map
    }

    /// The projected posterior mean function.
    pub fn mean_function(&self) -> SampledFunction {
        SampledFunction {
            map: self.map.clone(),
            weights: self.mean_weights.iter().copied().collect(),
            scale: 0.0,
        }
    }

    pub fn sample(&self, scale: f64, seed: u64) -> Result<SampledFunction> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::input("sampling scale must be finite and non-negative"));
        }
        let m = self.map.num_features();
        let mut rng = stream_rng(seed, Stream::ObjectiveDraw, &[m as u64]);
        let eps = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let weights = if scale == 0.0 {
            self.mean_weights.clone()
        } else {
            let z = self
                .precision
                .l_dirty()
                .tr_solve_lower_triangular(&eps)
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            &self.mean_weights + z * (scale * self.regularizer.sqrt())
        };
        Ok(SampledFunction {
            map: self.map.clone(),
            weights: weights.iter().copied().collect(),
            scale,
        })
    }
}

/// Draw from the feature-approximated `GP(μ, β²σ²)`.
pub fn sample_function(posterior: &GpPosterior, map: &FeatureMap, scale: f64, seed: u64) -> Result<SampledFunction> {
    FeaturePosterior::new(posterior, Arc::new(map.clone()))?.sample(scale, seed)
}

#[derive(Debug, Clone)]
pub struct SampledFunction {
    map: Arc<FeatureMap>,
    weights: Vec<f64>,
    scale: f64,
}

impl SampledFunction {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let a = self.map.amplitude;
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * a * self.map.projection(i, x).cos())
            .sum()
    }

    /// Values at every row of a design matrix built by the same map.
    pub fn eval_design(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let w = DVector::from_column_slice(&self.weights);
        (design * w).iter().copied().collect()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.map.dim();
        let a = self.map.amplitude;
        let mut g = vec![0.0; d];
        for (i, w) in self.weights.iter().enumerate() {
            let s = -w * a * self.map.projection(i, x).sin();
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += s * self.map.frequencies[i * d + k];
            }
        }
        g
    }
}

/// Something that can be maximized over a box.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

impl Objective for SampledFunction {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        SampledFunction::gradient(self, x)
    }
}

/// `ω f + (1 − ω) g`.
pub struct Weighted<'a> {
    pub f: &'a SampledFunction,
    pub g: &'a SampledFunction,
    pub omega: f64,
}

impl Objective for Weighted<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.omega * self.f.eval(x) + (1.0 - self.omega) * self.g.eval(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let gf = self.f.gradient(x);
        let gg = self.g.gradient(x);
        gf.iter()
            .zip(gg)
            .map(|(a, b)| self.omega * a + (1.0 - self.omega) * b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxOptions {
    pub candidates: usize,
    pub restarts: usize,
    pub local_iterations: usize,
}

impl Default for ArgmaxOptions {
    fn default() -> Self {
        Self {
            candidates: 10_000,
            restarts: 100,
            local_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximizer {
    pub index: Option<usize>,
    pub x: Vec<f64>,
    pub value: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_values(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::input("cannot maximize over an empty domain"));
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Finite domains: exhaustive scan. Boxes: quasi-random screen followed by
/// multi-start projected gradient ascent from the best screened points.
pub fn argmax(objective: &dyn Objective, domain: &Domain, options: &ArgmaxOptions, seed: u64) -> Result<Maximizer> {
    if let Some(points) = domain.points() {
        let values: Vec<f64> = points.iter().map(|p| objective.value(p)).collect();
        let i = argmax_values(&values)?;
        return Ok(Maximizer {
            index: Some(i),
            x: points[i].clone(),
            value: values[i],
        });
    }
    let mut rng = stream_rng(seed, Stream::Acquisition, &[]);
    let candidates = shifted_halton(options.candidates.max(1), domain.dim(), &mut rng);
    let values: Vec<f64> = candidates.iter().map(|p| objective.value(p)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut best = Maximizer {
        index: None,
        x: candidates[order[0]].clone(),
        value: values[order[0]],
    };
    for &start in order.iter().take(options.restarts) {
        let (x, v) = ascend(
            objective,
            candidates[start].clone(),
            values[start],
            options.local_iterations,
        );
        if v > best.value {
            best = Maximizer {
                index: None,
                x,
                value: v,
            };
        }
    }
    Ok(best)
}

fn ascend(objective: &dyn Objective, mut x: Vec<f64>, mut value: f64, iterations: usize) -> (Vec<f64>, f64) {
    let mut step = 0.05;
    for _ in 0..iterations {
        let g = objective.gradient(&x);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let trial: Vec<f64> = x
            .iter()
            .zip(&g)
            .map(|(xi, gi)| (xi + step * gi / norm).clamp(0.0, 1.0))
            .collect();
        let tv = objective.value(&trial);
        if tv > value {
            x = trial;
            value = tv;
            step *= 1.5;
        } else {
            step *= 0.5;
            if step < 1e-9 {
                break;
            }
        }
    }
    (x, value)
}

/// Draws `count` values from `N(mean, sd²)`; shared helper for simulators.
pub fn normal_draws<R: Rng + ?Sized>(mean: f64, sd: f64, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    let dist = Normal::new(mean, sd).map_err(|e| Error::input(format!("bad normal parameters: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}
