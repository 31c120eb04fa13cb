//! Run configuration. JSON keys mirror the field names below.

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, DomainSpec};
use crate::error::{Error, FieldError, Result};
use crate::gp::{KernelParams, SearchSpace};
use crate::sampler::ArgmaxOptions;
use crate::schedule::{Mode, NMaxPolicy};

/// How the GP regularizer `λ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `1 + 2/T`.
    Theory,
    Fixed {
        value: f64,
    },
    /// Starts at `initial` and is refit with the other hyperparameters.
    Fitted {
        initial: f64,
        lower: f64,
        upper: f64,
    },
}

/// Prior and fitting bounds for one of the two GPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSettings {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub regularizer: Regularizer,
    /// Refit hyperparameters by marginal likelihood on the run's cadence.
    #[serde(default = "yes")]
    pub refit: bool,
    pub signal_variance_bounds: (f64, f64),
    pub lengthscale_bounds: (f64, f64),
}

fn yes() -> bool {
    true
}

impl GpSettings {
    pub fn objective_default() -> Self {
        Self {
            signal_variance: 1.0,
            lengthscale: 0.1,
            regularizer: Regularizer::Fitted {
                initial: 0.01,
                lower: 1e-6,
                upper: 1.0,
            },
            refit: true,
            signal_variance_bounds: (1e-3, 10.0),
            lengthscale_bounds: (0.01, 1.0),
        }
    }

    pub fn noise_default() -> Self {
        Self {
            signal_variance: 0.04,
            lengthscale: 0.15,
            regularizer: Regularizer::Fitted {
                initial: 0.01,
                lower: 1e-6,
                upper: 1.0,
            },
            refit: true,
            signal_variance_bounds: (1e-6, 1.0),
            lengthscale_bounds: (0.01, 1.0),
        }
    }

    /// Kernel used before the first refit.
    pub fn initial_kernel(&self, dim: usize, horizon: usize) -> Result<KernelParams> {
        let lambda = match self.regularizer {
            Regularizer::Theory => KernelParams::theory_regularizer(horizon),
            Regularizer::Fixed { value } => value,
            Regularizer::Fitted { initial, .. } => initial,
        };
        KernelParams::isotropic(dim, self.signal_variance, self.lengthscale, lambda)
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            signal_variance: self.signal_variance_bounds,
            lengthscale: self.lengthscale_bounds,
            regularizer: match self.regularizer {
                Regularizer::Fitted { lower, upper, .. } => Some((lower, upper)),
                _ => None,
            },
        }
    }

    fn validate(&self, prefix: &str, errors: &mut Vec<FieldError>) {
        positive(errors, &format!("{prefix}.signal_variance"), self.signal_variance);
        positive(errors, &format!("{prefix}.lengthscale"), self.lengthscale);
        bounds(
            errors,
            &format!("{prefix}.signal_variance_bounds"),
            self.signal_variance_bounds,
        );
        bounds(errors, &format!("{prefix}.lengthscale_bounds"), self.lengthscale_bounds);
        match self.regularizer {
            Regularizer::Theory => {}
            Regularizer::Fixed { value } => positive(errors, &format!("{prefix}.regularizer.value"), value),
            Regularizer::Fitted { initial, lower, upper } => {
                positive(errors, &format!("{prefix}.regularizer.initial"), initial);
                bounds(errors, &format!("{prefix}.regularizer"), (lower, upper));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    #[default]
    Random,
    /// Greedy posterior-variance maximization on a finite domain.
    UncertaintySampling,
}

/// Noise variance supplied up front in known-variance mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnownNoise {
    Constant {
        variance: f64,
    },
    /// One variance per domain point, in enumeration order.
    PerPoint {
        variances: Vec<f64>,
    },
}

impl KnownNoise {
    pub fn max(&self) -> f64 {
        match self {
            KnownNoise::Constant { variance } => *variance,
            KnownNoise::PerPoint { variances } => variances.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn at(&self, index: Option<usize>) -> Result<f64> {
        match (self, index) {
            (KnownNoise::Constant { variance }, _) => Ok(*variance),
            (KnownNoise::PerPoint { variances }, Some(i)) if i < variances.len() => Ok(variances[i]),
            _ => Err(Error::input(
                "per-point noise variances need an enumerated domain point",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Replications available per iteration.
    pub budget: usize,
    /// Number of iterations `T`, the initial design included.
    pub horizon: usize,
    pub kappa: f64,
    /// Fixes `R²` instead of deriving it from `kappa` and `σ²_max`.
    #[serde(default)]
    pub r_squared: Option<f64>,
    pub n_min: usize,
    #[serde(default)]
    pub n_max_policy: NMaxPolicy,
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub beta_noise: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seed: u64,
    pub domain: DomainSpec,
    pub mode: Mode,
    /// Finish an overflowing input from the next iteration's budget;
    /// otherwise the input is dropped.
    #[serde(default = "yes")]
    pub carry_over: bool,
    #[serde(default)]
    pub initialization: Initialization,
    /// Number of initial-design points; defaults to `⌊𝔹/n_min⌋`.
    #[serde(default)]
    pub initial_points: Option<usize>,
    #[serde(default = "default_refit_every")]
    pub refit_every: usize,
    #[serde(default = "default_num_features")]
    pub num_features: usize,
    /// `σ²_max` used until a sample variance has been observed.
    #[serde(default = "default_sigma2_max_prior")]
    pub sigma2_max_prior: f64,
    #[serde(default = "GpSettings::objective_default")]
    pub objective_gp: GpSettings,
    #[serde(default = "GpSettings::noise_default")]
    pub noise_gp: GpSettings,
    #[serde(default)]
    pub known_noise: Option<KnownNoise>,
    #[serde(default)]
    pub argmax: ArgmaxOptions,
}

fn one() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.05
}

fn default_delta() -> f64 {
    0.1
}

fn default_refit_every() -> usize {
    10
}

fn default_num_features() -> usize {
    512
}

fn default_sigma2_max_prior() -> f64 {
    0.1
}

fn positive(errors: &mut Vec<FieldError>, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(FieldError::new(path, "must be a finite positive number"));
    }
}

fn bounds(errors: &mut Vec<FieldError>, path: &str, (lo, hi): (f64, f64)) {
    if !(lo > 0.0 && hi.is_finite() && lo <= hi) {
        errors.push(FieldError::new(path, "needs 0 < lower <= upper < inf"));
    }
}

fn probability(errors: &mut Vec<FieldError>, path: &str, v: f64) {
    if !(v > 0.0 && v < 1.0) {
        errors.push(FieldError::new(path, "must lie strictly between 0 and 1"));
    }
}

impl ExperimentConfig {
    /// A mean-optimization run on the unit interval.
    pub fn new(mode: Mode, domain: DomainSpec, budget: usize, horizon: usize, seed: u64) -> Self {
        Self {
            budget,
            horizon,
            kappa: 0.3,
            r_squared: None,
            n_min: 2,
            n_max_policy: NMaxPolicy::Scheduled,
            omega: 1.0,
            beta: 1.0,
            beta_noise: 1.0,
            alpha: default_alpha(),
            delta: default_delta(),
            seed,
            domain,
            mode,
            carry_over: true,
            initialization: Initialization::Random,
            initial_points: None,
            refit_every: default_refit_every(),
            num_features: default_num_features(),
            sigma2_max_prior: default_sigma2_max_prior(),
            objective_gp: GpSettings::objective_default(),
            noise_gp: GpSettings::noise_default(),
            known_noise: None,
            argmax: ArgmaxOptions::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field, reporting all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.budget == 0 {
            errors.push(FieldError::new("budget", "must be positive"));
        }
        if self.horizon == 0 {
            errors.push(FieldError::new("horizon", "must be positive"));
        }
        positive(&mut errors, "kappa", self.kappa);
        if let Some(r) = self.r_squared {
            positive(&mut errors, "r_squared", r);
        }
        let n_floor = if self.mode == Mode::Known { 1 } else { 2 };
        if self.n_min < n_floor {
            errors.push(FieldError::new(
                "n_min",
                format!("must be at least {n_floor} in this mode"),
            ));
        }
        if self.n_min > self.budget {
            errors.push(FieldError::new("n_min", "must not exceed budget"));
        }
        if self.r_squared.is_none() && self.budget < 2 {
            errors.push(FieldError::new(
                "budget",
                "must be at least 2 unless r_squared is given",
            ));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            errors.push(FieldError::new("omega", "must lie in [0, 1]"));
        }
        if self.mode != Mode::MeanVar && self.omega != 1.0 {
            errors.push(FieldError::new("omega", "only mean_var mode uses a weight below 1"));
        }
        for (path, v) in [("beta", self.beta), ("beta_noise", self.beta_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(FieldError::new(path, "must be finite and non-negative"));
            }
        }
        probability(&mut errors, "alpha", self.alpha);
        probability(&mut errors, "delta", self.delta);
        errors.extend(self.domain.validate("domain"));
        if let Some(p) = self.initial_points {
            if p == 0 || p * self.n_min > self.budget {
                errors.push(FieldError::new(
                    "initial_points",
                    "initial design must fit in one iteration's budget",
                ));
            }
        }
        if self.refit_every == 0 {
            errors.push(FieldError::new("refit_every", "must be positive"));
        }
        if self.num_features == 0 {
            errors.push(FieldError::new("num_features", "must be positive"));
        }
        positive(&mut errors, "sigma2_max_prior", self.sigma2_max_prior);
        self.objective_gp.validate("objective_gp", &mut errors);
        self.noise_gp.validate("noise_gp", &mut errors);
        if self.argmax.candidates == 0 {
            errors.push(FieldError::new("argmax.candidates", "must be positive"));
        }
        if self.argmax.restarts > self.argmax.candidates {
            errors.push(FieldError::new("argmax.restarts", "must not exceed argmax.candidates"));
        }
        match (&self.known_noise, self.mode) {
            (None, Mode::Known) => {}
            (Some(_), m) if m != Mode::Known => {
                errors.push(FieldError::new("known_noise", "only used in known mode"));
            }
            (Some(KnownNoise::Constant { variance }), _) => {
                if !(*variance >= 0.0 && variance.is_finite()) {
                    errors.push(FieldError::new(
                        "known_noise.variance",
                        "must be finite and non-negative",
                    ));
                }
            }
            (Some(KnownNoise::PerPoint { variances }), _) => {
                if let Some(i) = variances.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                    errors.push(FieldError::new(
                        format!("known_noise.variances[{i}]"),
                        "must be finite and non-negative",
                    ));
                }
                if let Ok(domain) = self.domain.resolve() {
                    if domain.len() != Some(variances.len()) {
                        errors.push(FieldError::new(
                            "known_noise.variances",
                            "needs one entry per domain point on a finite domain",
                        ));
                    }
                }
            }
            _ => {}
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn resolve_domain(&self) -> Result<Domain> {
        self.domain.resolve()
    }

    /// Size of the initial random design.
    pub fn initial_design_size(&self) -> usize {
        self.initial_points.unwrap_or(self.budget / self.n_min).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::new(Mode::Unknown, DomainSpec::unit_grid(101), 50, 30, 7)
    }

    fn paths(cfg: &ExperimentConfig) -> Vec<String> {
        match cfg.validate() {
            Err(Error::Validation(f)) => f.into_iter().map(|f| f.path).collect(),
            Ok(()) => vec![],
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn default_is_valid() {
        base().validate().unwrap();
        assert_eq!(base().initial_design_size(), 25);
    }

    #[test]
    fn reports_field_paths() {
        let mut cfg = base();
        cfg.mode = Mode::MeanVar;
        cfg.omega = 1.2;
        assert_eq!(paths(&cfg), vec!["omega"]);

        let mut cfg = base();
        cfg.kappa = -1.0;
        cfg.n_min = 1;
        cfg.alpha = 1.0;
        cfg.objective_gp.lengthscale_bounds = (0.5, 0.1);
        assert_eq!(
            paths(&cfg),
            vec!["kappa", "n_min", "alpha", "objective_gp.lengthscale_bounds"]
        );

        let mut cfg = base();
        cfg.mode = Mode::Known;
        cfg.n_min = 1;
        cfg.known_noise = Some(KnownNoise::PerPoint {
            variances: vec![0.1; 3],
        });
        assert_eq!(paths(&cfg), vec!["known_noise.variances"]);
    }

    #[test]
    fn json_round_trip_uses_field_names() {
        let text = serde_json::to_string(&base()).unwrap();
        for key in [
            "\"budget\"",
            "\"horizon\"",
            "\"kappa\"",
            "\"n_min\"",
            "\"omega\"",
            "\"mode\":\"unknown\"",
        ] {
            assert!(text.contains(key), "{key} missing from {text}");
        }
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, base());
        let minimal = r#"{"budget": 20, "horizon": 5, "kappa": 0.2, "n_min": 2, "seed": 1,
            "mode": "mean_var", "omega": 0.3,
            "domain": {"kind": "box", "lower": [0, -1], "upper": [1, 1]}}"#;
        let cfg = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(cfg.refit_every, 10);
        assert!(cfg.carry_over);
        assert!(ExperimentConfig::from_json(r#"{"budget": 1}"#).is_err());
    }
}
