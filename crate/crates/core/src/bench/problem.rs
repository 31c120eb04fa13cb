//! Synthetic heteroscedastic test problems on finite grids.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::KnownVariance;
use crate::domain::{unit_grid_points, DomainSpec};
use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sampler::{argmax_values, draw_feature_map, normal_draws};

/// Everything needed to regenerate a problem bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub seed: u64,
    pub dim: usize,
    /// Grid points per axis on `[0, 1]^dim`.
    pub grid_size: usize,
    pub mean_lengthscale: f64,
    pub noise_lengthscale: f64,
    pub mean_range: (f64, f64),
    pub noise_range: (f64, f64),
    /// Random features used to draw each function.
    #[serde(default = "default_generator_features")]
    pub generator_features: usize,
}

fn default_generator_features() -> usize {
    4096
}

impl ProblemSpec {
    /// 1-D, 1000-point grid, lengthscales 0.04/0.15, ranges `[0, 1]` and
    /// `[0.0001, 0.2]`.
    pub fn standard_1d(seed: u64) -> Self {
        Self {
            seed,
            dim: 1,
            grid_size: 1000,
            mean_lengthscale: 0.04,
            noise_lengthscale: 0.15,
            mean_range: (0.0, 1.0),
            noise_range: (0.0001, 0.2),
            generator_features: default_generator_features(),
        }
    }

    /// 2-D stand-in for lab-style tuning problems: smoother landscape on a
    /// 40×40 grid with the same normalization ranges.
    pub fn surrogate_2d(seed: u64) -> Self {
        Self {
            seed,
            dim: 2,
            grid_size: 40,
            mean_lengthscale: 0.2,
            noise_lengthscale: 0.3,
            mean_range: (0.0, 1.0),
            noise_range: (0.0001, 0.2),
            generator_features: default_generator_features(),
        }
    }

    pub fn domain(&self) -> DomainSpec {
        DomainSpec::Grid {
            lower: vec![0.0; self.dim],
            upper: vec![1.0; self.dim],
            points_per_dim: vec![self.grid_size; self.dim],
        }
    }
}

/// A mean function and a noise-variance function tabulated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub domain: DomainSpec,
    /// Normalized grid coordinates.
    pub points: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub sigma2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ProblemSpec>,
}

fn min_max(values: &mut [f64], (lo, hi): (f64, f64)) {
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = vmax - vmin;
    for v in values.iter_mut() {
        *v = if width > 0.0 {
            lo + (hi - lo) * (*v - vmin) / width
        } else {
            lo
        };
    }
}

fn prior_draw(points: &[Vec<f64>], lengthscale: f64, features: usize, seed: u64) -> Result<Vec<f64>> {
    let dim = points[0].len();
    let kernel = KernelParams::isotropic(dim, 1.0, lengthscale, 1.0)?;
    let map = draw_feature_map(&kernel, features, seed)?;
    let mut rng = stream_rng(seed, Stream::Problem, &[]);
    let w: Vec<f64> = (0..features).map(|_| rng.sample(StandardNormal)).collect();
    let design = map.design(points);
    Ok((design * nalgebra::DVector::from_vec(w)).iter().copied().collect())
}

/// Two independent GP prior draws, min-max normalized over the grid.
pub fn make_synthetic_problem(spec: &ProblemSpec) -> Result<SyntheticProblem> {
    if spec.dim == 0 {
        return Err(Error::input("problem dimension must be positive"));
    }
    if spec.grid_size < 2 {
        return Err(Error::input("grid_size must be at least 2"));
    }
    if !(spec.noise_range.0 > 0.0 && spec.noise_range.0 <= spec.noise_range.1) {
        return Err(Error::input("noise range needs 0 < lower <= upper"));
    }
    if !(spec.mean_range.0 <= spec.mean_range.1) {
        return Err(Error::input("mean range needs lower <= upper"));
    }
    if spec.generator_features == 0 {
        return Err(Error::input("generator_features must be positive"));
    }
    let points = unit_grid_points(&vec![spec.grid_size; spec.dim]);
    let mut f = prior_draw(
        &points,
        spec.mean_lengthscale,
        spec.generator_features,
        derive_seed(spec.seed, Stream::Problem, &[0]),
    )?;
    let mut sigma2 = prior_draw(
        &points,
        spec.noise_lengthscale,
        spec.generator_features,
        derive_seed(spec.seed, Stream::Problem, &[1]),
    )?;
    min_max(&mut f, spec.mean_range);
    min_max(&mut sigma2, spec.noise_range);
    Ok(SyntheticProblem {
        domain: spec.domain(),
        points,
        f,
        sigma2,
        spec: Some(spec.clone()),
    })
}

impl SyntheticProblem {
    /// A problem from tabulated values on the domain's enumeration.
    pub fn from_values(domain: DomainSpec, f: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        let resolved = domain.resolve()?;
        let points = resolved
            .points()
            .ok_or_else(|| Error::input("tabulated problems need a finite domain"))?
            .to_vec();
        if f.len() != points.len() || sigma2.len() != points.len() {
            return Err(Error::input("need one mean and one variance per domain point"));
        }
        if f.iter().chain(&sigma2).any(|v| !v.is_finite()) || sigma2.iter().any(|&v| v < 0.0) {
            return Err(Error::input("values must be finite with non-negative variances"));
        }
        Ok(Self {
            domain,
            points,
            f,
            sigma2,
            spec: None,
        })
    }

    /// The same mean function with a constant noise variance.
    pub fn with_constant_noise(&self, variance: f64) -> Self {
        Self {
            sigma2: vec![variance; self.sigma2.len()],
            spec: None,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// `h_ω(x) = ω f(x) − (1 − ω) σ²(x)`.
    pub fn h(&self, omega: f64, i: usize) -> f64 {
        omega * self.f[i] - (1.0 - omega) * self.sigma2[i]
    }

    /// Index of `x*`.
    pub fn optimum(&self) -> usize {
        argmax_values(&self.f).expect("problems are non-empty")
    }

    /// Index of `x*_ω`.
    pub fn mean_variance_optimum(&self, omega: f64) -> usize {
        let h: Vec<f64> = (0..self.len()).map(|i| self.h(omega, i)).collect();
        argmax_values(&h).expect("problems are non-empty")
    }

    pub fn max_variance(&self) -> f64 {
        self.sigma2.iter().copied().fold(0.0, f64::max)
    }

    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.points
            .iter()
            .position(|p| p.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12))
    }
}

impl KnownVariance for SyntheticProblem {
    fn variance(&self, x: &[f64], index: Option<usize>) -> Result<f64> {
        let i = index
            .or_else(|| self.index_of(x))
            .ok_or_else(|| Error::input("point is not on the problem grid"))?;
        Ok(self.sigma2[i])
    }

    fn max_variance(&self) -> f64 {
        SyntheticProblem::max_variance(self)
    }
}

/// `n` independent draws from `N(f(x), σ²(x))` at grid point `index`.
pub fn simulate_observation(problem: &SyntheticProblem, index: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::input("need at least one replicate"));
    }
    if index >= problem.len() {
        return Err(Error::input(format!("grid index {index} out of range")));
    }
    let mut rng = stream_rng(seed, Stream::Observation, &[index as u64]);
    normal_draws(problem.f[index], problem.sigma2[index].sqrt(), n, &mut rng)
}
