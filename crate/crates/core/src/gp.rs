//! Gaussian-process regression with a squared-exponential kernel.
//!
//! The posterior is an immutable snapshot: a kernel, a dataset and a
//! cached lower Cholesky factor of `K + λI`. The factor is stored row by
//! row and each row only depends on earlier rows, so appending data
//! produces bit-for-bit the same factor as refactoring from scratch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::contains_unit;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Squared-exponential kernel hyperparameters plus the regularizer `λ`
/// added to the Gram diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub regularizer: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, regularizer: f64) -> Result<Self> {
        let k = Self {
            signal_variance,
            lengthscales,
            regularizer,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn isotropic(dim: usize, signal_variance: f64, lengthscale: f64, regularizer: f64) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; dim], regularizer)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_variance) {
            return Err(Error::input("signal_variance must be finite and positive"));
        }
        if self.lengthscales.is_empty() || !self.lengthscales.iter().all(|&l| positive(l)) {
            return Err(Error::input("lengthscales must be non-empty, finite and positive"));
        }
        if !positive(self.regularizer) {
            return Err(Error::input("regularizer must be finite and positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `λ = 1 + 2/T`, the regularizer under which the confidence bounds hold.
    pub fn theory_regularizer(horizon: usize) -> f64 {
        1.0 + 2.0 / horizon as f64
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let z = (x - y) / l;
            d2 += z * z;
        }
        self.signal_variance * (-0.5 * d2).exp()
    }
}

/// Observation pairs in normalized coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::input(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let dim = first.len();
            if let Some(bad) = inputs.iter().position(|x| !contains_unit(x, dim)) {
                return Err(Error::input(format!(
                    "input {bad} is outside the unit box or has the wrong dimension"
                )));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// Packed lower-triangular factor; row `i` holds `i + 1` entries.
#[derive(Debug, Clone, Default, PartialEq)]
struct LowerFactor {
    n: usize,
    packed: Vec<f64>,
}

impl LowerFactor {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.packed[start..start + i + 1]
    }

    /// Appends rows for `inputs[self.n..]`. Row-oriented (Banachiewicz)
    /// order keeps the result independent of how the rows were batched.
    fn extend(&mut self, kernel: &KernelParams, inputs: &[Vec<f64>]) -> Result<()> {
        let n_new = inputs.len();
        self.packed.reserve(n_new * (n_new + 1) / 2 - self.packed.len());
        for i in self.n..n_new {
            let start = self.packed.len();
            for j in 0..=i {
                let mut s = kernel.eval(&inputs[i], &inputs[j]);
                if i == j {
                    s += kernel.regularizer;
                }
                let row_j_start = j * (j + 1) / 2;
                let value = {
                    let (done, current) = self.packed.split_at(start);
                    let li = &current[..j];
                    let lj = if j < i { &done[row_j_start..row_j_start + j] } else { li };
                    s -= lj.iter().zip(li).map(|(a, b)| a * b).sum::<f64>();
                    if j < i {
                        s / done[row_j_start + j]
                    } else {
                        if !(s.is_finite() && s > 0.0) {
                            return Err(Error::Numerical(format!(
                                "Gram matrix K + λI is not positive definite at row {i} \
                                 (pivot {s:e}); the regularizer {:e} is too small for this data",
                                kernel.regularizer
                            )));
                        }
                        s.sqrt()
                    }
                };
                self.packed.push(value);
            }
            self.n = i + 1;
        }
        Ok(())
    }

    /// Solves `L z = b` in place.
    fn forward(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = self.row(i);
            let s: f64 = row[..i].iter().zip(&b[..i]).map(|(a, z)| a * z).sum();
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `Lᵀ x = z` in place.
    fn backward(&self, z: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = self.row(i);
            z[i] /= row[i];
            let zi = z[i];
            for (k, a) in row[..i].iter().enumerate() {
                z[k] -= a * zi;
            }
        }
    }

    fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.row(i)[i].ln()).sum::<f64>()
    }
}

/// Immutable GP posterior snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    kernel: KernelParams,
    data: Dataset,
    factor: LowerFactor,
    alpha: Vec<f64>,
}

/// Fits the posterior `GP(μ, σ²)` of a zero-mean prior to `data`.
pub fn fit(data: Dataset, kernel: KernelParams) -> Result<GpPosterior> {
    kernel.validate()?;
    check_data(&data, &kernel, 0)?;
    let mut factor = LowerFactor::default();
    factor.extend(&kernel, data.inputs())?;
    let alpha = solve_alpha(&factor, data.targets());
    Ok(GpPosterior {
        kernel,
        data,
        factor,
        alpha,
    })
}

fn check_data(data: &Dataset, kernel: &KernelParams, from: usize) -> Result<()> {
    if let Some(i) = data.targets[from..].iter().position(|t| !t.is_finite()) {
        return Err(Error::input(format!("target {} is not finite", from + i)));
    }
    if let Some(i) = data.inputs[from..].iter().position(|x| !contains_unit(x, kernel.dim())) {
        return Err(Error::input(format!(
            "input {} does not match the kernel dimension or leaves the unit box",
            from + i
        )));
    }
    Ok(())
}

fn solve_alpha(factor: &LowerFactor, targets: &[f64]) -> Vec<f64> {
    let mut alpha = targets.to_vec();
    factor.forward(&mut alpha);
    factor.backward(&mut alpha);
    alpha
}

impl GpPosterior {
    pub fn prior(kernel: KernelParams) -> Result<Self> {
        fit(Dataset::empty(), kernel)
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// A new snapshot with extra observations; reuses the cached factor.
    pub fn extend(&self, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<GpPosterior> {
        if inputs.len() != targets.len() {
            return Err(Error::input("inputs and targets differ in length"));
        }
        let mut data = self.data.clone();
        let from = data.len();
        data.inputs.extend(inputs);
        data.targets.extend(targets);
        check_data(&data, &self.kernel, from)?;
        let mut factor = self.factor.clone();
        factor.extend(&self.kernel, data.inputs())?;
        let alpha = solve_alpha(&factor, data.targets());
        Ok(GpPosterior {
            kernel: self.kernel.clone(),
            data,
            factor,
            alpha,
        })
    }

    /// Same data under different hyperparameters.
    pub fn refit(&self, kernel: KernelParams) -> Result<GpPosterior> {
        fit(self.data.clone(), kernel)
    }

    fn cross(&self, x: &[f64]) -> Vec<f64> {
        self.data.inputs.iter().map(|xi| self.kernel.eval(x, xi)).collect()
    }

    /// Posterior mean and variance at a normalized point.
    pub fn posterior_at(&self, x: &[f64]) -> Result<(f64, f64)> {
        if !contains_unit(x, self.kernel.dim()) {
            return Err(Error::input(format!("query point {x:?} is outside the unit box")));
        }
        Ok(self.posterior_unchecked(x))
    }

    pub(crate) fn posterior_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.kernel.signal_variance;
        if self.data.is_empty() {
            return (0.0, prior);
        }
        let mut v = self.cross(x);
        let mean: f64 = v.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        self.factor.forward(&mut v);
        let reduction: f64 = v.iter().map(|a| a * a).sum();
        (mean, (prior - reduction).clamp(0.0, prior))
    }

    pub fn posterior_many(&self, xs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        xs.iter().map(|x| self.posterior_at(x)).collect()
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        self.posterior_at(x).map(|m| m.0)
    }

    /// Posterior cross-covariance `σ²(x, x')`.
    pub fn covariance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let dim = self.kernel.dim();
        if !contains_unit(a, dim) || !contains_unit(b, dim) {
            return Err(Error::input("covariance query outside the unit box"));
        }
        let prior = self.kernel.eval(a, b);
        if self.data.is_empty() {
            return Ok(prior);
        }
        let mut va = self.cross(a);
        let mut vb = self.cross(b);
        self.factor.forward(&mut va);
        self.factor.forward(&mut vb);
        Ok(prior - va.iter().zip(&vb).map(|(p, q)| p * q).sum::<f64>())
    }

    /// Gaussian log evidence of the targets under `K + λI`.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::input("log marginal likelihood needs at least one observation"));
        }
        let n = self.data.len() as f64;
        let fit: f64 = self.data.targets.iter().zip(&self.alpha).map(|(y, a)| y * a).sum();
        Ok(-0.5 * fit - 0.5 * self.factor.log_det() - 0.5 * n * LN_2PI)
    }

    /// `½ log det(I + λ⁻¹K)`, the information gain of the observed inputs.
    pub fn information_gain(&self) -> f64 {
        let n = self.data.len() as f64;
        0.5 * (self.factor.log_det() - n * self.kernel.regularizer.ln())
    }
}

/// Confidence width `b + r·sqrt(2(γ + 1 + ln(k/δ)))` of the regret analysis,
/// with `k` the number of union-bounded events. Reporting only; selection
/// uses the configured constant `beta`.
pub fn theoretical_beta(rkhs_bound: f64, sub_gaussian: f64, gain: f64, delta: f64, events: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input("delta must lie in (0, 1)"));
    }
    if !(rkhs_bound >= 0.0 && sub_gaussian >= 0.0 && gain >= 0.0 && events >= 1.0) {
        return Err(Error::input("bounds, gain and event count must be non-negative"));
    }
    Ok(rkhs_bound + sub_gaussian * (2.0 * (gain + 1.0 + (events / delta).ln())).sqrt())
}

/// Convenience wrapper around [`GpPosterior::posterior_at`].
pub fn posterior_at(model: &GpPosterior, x: &[f64]) -> Result<(f64, f64)> {
    model.posterior_at(x)
}

pub fn log_marginal_likelihood(model: &GpPosterior) -> Result<f64> {
    model.log_marginal_likelihood()
}

/// Box constraints for marginal-likelihood fitting. When `regularizer` is
/// `None` the incumbent's `λ` is held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub signal_variance: (f64, f64),
    pub lengthscale: (f64, f64),
    #[serde(default)]
    pub regularizer: Option<(f64, f64)>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let mut ranges = vec![
            ("signal_variance", self.signal_variance),
            ("lengthscale", self.lengthscale),
        ];
        if let Some(r) = self.regularizer {
            ranges.push(("regularizer", r));
        }
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0) {
                return Err(Error::input(format!("{name} bounds must be finite and positive")));
            }
            if lo > hi {
                return Err(Error::input(format!(
                    "{name} lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperOptions {
    /// Random restarts in addition to the incumbent.
    pub restarts: usize,
    /// Nelder–Mead evaluations per start.
    pub max_evals: usize,
    /// Larger datasets are thinned to an evenly strided subset.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for HyperOptions {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_evals: 120,
            max_points: 250,
            seed: 0,
        }
    }
}

struct LogBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    fit_regularizer: bool,
}

impl LogBox {
    fn new(space: &SearchSpace, dim: usize) -> Self {
        let mut lo = vec![space.signal_variance.0.ln()];
        let mut hi = vec![space.signal_variance.1.ln()];
        for _ in 0..dim {
            lo.push(space.lengthscale.0.ln());
            hi.push(space.lengthscale.1.ln());
        }
        if let Some((a, b)) = space.regularizer {
            lo.push(a.ln());
            hi.push(b.ln());
        }
        Self {
            lo,
            hi,
            fit_regularizer: space.regularizer.is_some(),
        }
    }

    fn clamp(&self, theta: &mut [f64]) {
        for ((t, lo), hi) in theta.iter_mut().zip(&self.lo).zip(&self.hi) {
            *t = t.clamp(*lo, *hi);
        }
    }

    fn encode(&self, k: &KernelParams) -> Vec<f64> {
        let mut theta = vec![k.signal_variance.ln()];
        theta.extend(k.lengthscales.iter().map(|l| l.ln()));
        if self.fit_regularizer {
            theta.push(k.regularizer.ln());
        }
        self.clamp(&mut theta);
        theta
    }

    fn decode(&self, theta: &[f64], fixed_regularizer: f64, dim: usize) -> KernelParams {
        KernelParams {
            signal_variance: theta[0].exp(),
            lengthscales: theta[1..=dim].iter().map(|t| t.exp()).collect(),
            regularizer: if self.fit_regularizer {
                theta[dim + 1].exp()
            } else {
                fixed_regularizer
            },
        }
    }
}

fn thin(data: &Dataset, max_points: usize) -> Dataset {
    if data.len() <= max_points || max_points == 0 {
        return data.clone();
    }
    let idx: Vec<usize> = (0..max_points).map(|k| k * data.len() / max_points).collect();
    data.select(&idx)
}

/// Multi-start Nelder–Mead over log-hyperparameters maximizing the log
/// marginal likelihood. The result never scores below the incumbent
/// (after projecting the incumbent into the search box).
pub fn optimize_hyperparameters(
    data: &Dataset,
    space: &SearchSpace,
    incumbent: &KernelParams,
    options: &HyperOptions,
) -> Result<KernelParams> {
    if data.is_empty() {
        return Err(Error::input("hyperparameter fitting needs a non-empty dataset"));
    }
    space.validate()?;
    incumbent.validate()?;
    let dim = incumbent.dim();
    let data = thin(data, options.max_points);
    let bounds = LogBox::new(space, dim);
    let objective = |theta: &[f64]| -> f64 {
        let kernel = bounds.decode(theta, incumbent.regularizer, dim);
        match fit(data.clone(), kernel).and_then(|p| p.log_marginal_likelihood()) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };

    let start = bounds.encode(incumbent);
    let mut best_theta = start.clone();
    let mut best = objective(&start);
    let mut rng = stream_rng(options.seed, Stream::Hyperparameters, &[data.len() as u64]);
    let mut starts = vec![start];
    for _ in 0..options.restarts {
        starts.push(
            bounds
                .lo
                .iter()
                .zip(&bounds.hi)
                .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo })
                .collect(),
        );
    }
    for s in starts {
        let (theta, value) = nelder_mead(&objective, s, &bounds, options.max_evals);
        if value > best {
            best = value;
            best_theta = theta;
        }
    }
    if !best.is_finite() {
        return Err(Error::Numerical(
            "marginal likelihood is not finite anywhere in the search space".into(),
        ));
    }
    Ok(bounds.decode(&best_theta, incumbent.regularizer, dim))
}

/// Bounded Nelder–Mead maximizer (vertices are clamped into the box).
fn nelder_mead(
    objective: &dyn Fn(&[f64]) -> f64,
    start: Vec<f64>,
    bounds: &LogBox,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut simplex = vec![start.clone()];
    for i in 0..d {
        let mut v = start.clone();
        let span = bounds.hi[i] - bounds.lo[i];
        let step = (0.25 * span).min(1.0);
        v[i] = if v[i] + step <= bounds.hi[i] {
            v[i] + step
        } else {
            v[i] - step
        };
        bounds.clamp(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| objective(v)).collect();
    let mut evals = values.len();
    let point = |c: &[f64], x: &[f64], t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = c.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect();
        bounds.clamp(&mut p);
        p
    };
    while evals < max_evals {
        // sort descending (maximization)
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[0] - values[d]).abs() < 1e-9 * (1.0 + values[0].abs()) && values[d].is_finite() {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let reflected = point(&centroid, &worst, -1.0);
        let fr = objective(&reflected);
        evals += 1;
        if fr > values[0] {
            let expanded = point(&centroid, &worst, -2.0);
            let fe = objective(&expanded);
            evals += 1;
            if fe > fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr > values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let contracted = if fr > values[d] {
                point(&centroid, &worst, -0.5)
            } else {
                point(&centroid, &worst, 0.5)
            };
            let fc = objective(&contracted);
            evals += 1;
            if fc > values[d].max(fr) {
                simplex[d] = contracted;
                values[d] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=d {
                    simplex[i] = point(&best, &simplex[i], 0.5);
                    values[i] = objective(&simplex[i]);
                }
                evals += d;
            }
        }
    }
    let (i, v) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, v)| (i, *v))
        .unwrap_or((0, f64::NEG_INFINITY));
    (simplex[i].clone(), v)
}

/// Greedy maximum-variance design over `domain`: each pick conditions the
/// model on all previous picks (with placeholder targets). Returns domain
/// indices; ties go to the lowest index.
pub fn uncertainty_sampling(model: &GpPosterior, domain: &[Vec<f64>], count: usize) -> Result<Vec<usize>> {
    if count > domain.len() {
        return Err(Error::input(format!(
            "cannot pick {count} points from a domain of {}",
            domain.len()
        )));
    }
    let mut current = model.clone();
    let mut picks = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best = 0;
        let mut best_var = f64::NEG_INFINITY;
        for (i, x) in domain.iter().enumerate() {
            let (_, v) = current.posterior_at(x)?;
            if v > best_var {
                best_var = v;
                best = i;
            }
        }
        picks.push(best);
        current = current.extend(vec![domain[best].clone()], vec![0.0])?;
    }
    Ok(picks)
}
