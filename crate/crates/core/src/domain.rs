//! Search domains. All computation happens in normalized coordinates on
//! `[0, 1]^d`; `lower`/`upper` only matter when talking to the outside world.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};

const BOUNDARY_TOL: f64 = 1e-12;

/// Domain description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    /// Regular grid with `points_per_dim[i]` equally spaced values per axis
    /// (endpoints included), enumerated row-major with the last axis fastest.
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        points_per_dim: Vec<usize>,
    },
    /// Explicit candidate conditions in real units.
    Points {
        lower: Vec<f64>,
        upper: Vec<f64>,
        points: Vec<Vec<f64>>,
    },
    /// Continuous box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl DomainSpec {
    pub fn unit_grid(points: usize) -> Self {
        DomainSpec::Grid {
            lower: vec![0.0],
            upper: vec![1.0],
            points_per_dim: vec![points],
        }
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            DomainSpec::Grid { lower, upper, .. }
            | DomainSpec::Points { lower, upper, .. }
            | DomainSpec::Box { lower, upper } => (lower, upper),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds().0.len()
    }

    /// Field-level validation; `prefix` is the path of this spec in the
    /// enclosing document.
    pub fn validate(&self, prefix: &str) -> Vec<FieldError> {
        let mut errors = Vec::new();
        let (lower, upper) = self.bounds();
        if lower.is_empty() {
            errors.push(FieldError::new(format!("{prefix}.lower"), "must be non-empty"));
        }
        if lower.len() != upper.len() {
            errors.push(FieldError::new(
                format!("{prefix}.upper"),
                "must have the same length as lower",
            ));
        }
        for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                errors.push(FieldError::new(
                    format!("{prefix}.upper[{i}]"),
                    "bounds must be finite with lower < upper",
                ));
            }
        }
        match self {
            DomainSpec::Grid { points_per_dim, .. } => {
                if points_per_dim.len() != lower.len() {
                    errors.push(FieldError::new(
                        format!("{prefix}.points_per_dim"),
                        "must have one entry per dimension",
                    ));
                }
                for (i, &n) in points_per_dim.iter().enumerate() {
                    if n < 2 {
                        errors.push(FieldError::new(
                            format!("{prefix}.points_per_dim[{i}]"),
                            "must be at least 2",
                        ));
                    }
                }
            }
            DomainSpec::Points { points, .. } => {
                if points.is_empty() {
                    errors.push(FieldError::new(format!("{prefix}.points"), "must be non-empty"));
                }
                for (i, p) in points.iter().enumerate() {
                    let inside = p.len() == lower.len()
                        && p.iter()
                            .zip(lower.iter().zip(upper))
                            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
                    if !inside {
                        errors.push(FieldError::new(
                            format!("{prefix}.points[{i}]"),
                            "point lies outside the bounds or has the wrong dimension",
                        ));
                    }
                }
            }
            DomainSpec::Box { .. } => {}
        }
        errors
    }

    pub fn resolve(&self) -> Result<Domain> {
        let errors = self.validate("domain");
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let (lower, upper) = self.bounds();
        let lower = lower.to_vec();
        let upper = upper.to_vec();
        let points = match self {
            DomainSpec::Grid { points_per_dim, .. } => Some(unit_grid_points(points_per_dim)),
            DomainSpec::Points { points, .. } => Some(
                points
                    .iter()
                    .map(|p| {
                        p.iter()
                            .zip(lower.iter().zip(&upper))
                            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
                            .collect()
                    })
                    .collect(),
            ),
            DomainSpec::Box { .. } => None,
        };
        Ok(Domain { lower, upper, points })
    }
}

/// Normalized points of a regular grid, last axis varying fastest.
pub fn unit_grid_points(points_per_dim: &[usize]) -> Vec<Vec<f64>> {
    let total: usize = points_per_dim.iter().product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut p = vec![0.0; points_per_dim.len()];
        for axis in (0..points_per_dim.len()).rev() {
            let n = points_per_dim[axis];
            let i = rem % n;
            rem /= n;
            p[axis] = i as f64 / (n - 1) as f64;
        }
        out.push(p);
    }
    out
}

/// A resolved domain in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Option<Vec<Vec<f64>>>,
}

impl Domain {
    /// Finite domain from normalized points on the unit box.
    pub fn finite(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::input("finite domain must contain at least one point"))?;
        if dim == 0 {
            return Err(Error::input("points must have at least one coordinate"));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::input("all domain points must share one dimension"));
            }
            if !p.iter().all(|v| (-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(v)) {
                return Err(Error::input("domain points must lie in the unit box"));
            }
        }
        Ok(Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
            points: Some(points),
        })
    }

    pub fn unit_box(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
            points: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn points(&self) -> Option<&[Vec<f64>]> {
        self.points.as_deref()
    }

    pub fn is_finite(&self) -> bool {
        self.points.is_some()
    }

    pub fn len(&self) -> Option<usize> {
        self.points.as_ref().map(Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        matches!(&self.points, Some(p) if p.is_empty())
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Whether a normalized point lies in the unit box of this domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        contains_unit(x, self.dim())
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::input(format!(
                "point {x:?} lies outside the {}-dimensional unit box",
                self.dim()
            )))
        }
    }

    pub fn to_real(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }

    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    /// Index of a normalized point in a finite domain (exact match within
    /// a small tolerance).
    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.points
            .as_ref()?
            .iter()
            .position(|p| p.len() == x.len() && p.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12))
    }

    /// `count` distinct random points (finite domains sample indices without
    /// replacement while possible; boxes sample uniformly).
    pub fn random_design<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<(Option<usize>, Vec<f64>)> {
        match &self.points {
            Some(points) => {
                let mut order: Vec<usize> = (0..points.len()).collect();
                let mut out = Vec::with_capacity(count);
                for k in 0..count {
                    let idx = if k < order.len() {
                        let j = rng.random_range(k..order.len());
                        order.swap(k, j);
                        order[k]
                    } else {
                        rng.random_range(0..points.len())
                    };
                    out.push((Some(idx), points[idx].clone()));
                }
                out
            }
            None => (0..count)
                .map(|_| (None, (0..self.dim()).map(|_| rng.random::<f64>()).collect()))
                .collect(),
        }
    }
}

pub(crate) fn contains_unit(x: &[f64], dim: usize) -> bool {
    x.len() == dim
        && x.iter()
            .all(|v| v.is_finite() && *v >= -BOUNDARY_TOL && *v <= 1.0 + BOUNDARY_TOL)
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Randomly shifted Halton points on `[0,1]^dim`. Dimensions beyond the
/// prime table fall back to plain uniform coordinates.
pub fn shifted_halton<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    if d < PRIMES.len() {
                        (radical_inverse(i as u64 + 1, PRIMES[d] as u64) + shift[d]).fract()
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn grid_enumeration_is_row_major() {
        let pts = unit_grid_points(&[2, 3]);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert_eq!(pts[1], vec![0.0, 0.5]);
        assert_eq!(pts[3], vec![1.0, 0.0]);
    }

    #[test]
    fn points_spec_normalizes() {
        let spec = DomainSpec::Points {
            lower: vec![2.5, 0.0],
            upper: vec![6.5, 30000.0],
            points: vec![vec![2.5, 15000.0], vec![6.5, 30000.0]],
        };
        let d = spec.resolve().unwrap();
        assert_eq!(d.points().unwrap()[0], vec![0.0, 0.5]);
        assert_eq!(d.to_real(&[0.5, 0.5]), vec![4.5, 15000.0]);
    }

    #[test]
    fn invalid_bounds_are_reported_with_paths() {
        let spec = DomainSpec::Box {
            lower: vec![1.0],
            upper: vec![0.0],
        };
        match spec.resolve() {
            Err(Error::Validation(f)) => assert_eq!(f[0].path, "domain.upper[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_design_without_replacement() {
        let d = Domain::finite(unit_grid_points(&[10])).unwrap();
        let mut rng = stream_rng(1, Stream::InitialDesign, &[]);
        let design = d.random_design(10, &mut rng);
        let mut idx: Vec<usize> = design.iter().map(|(i, _)| i.unwrap()).collect();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn halton_stays_in_box() {
        let mut rng = stream_rng(3, Stream::Acquisition, &[]);
        let pts = shifted_halton(500, 3, &mut rng);
        assert!(pts.iter().all(|p| contains_unit(p, 3)));
    }
}
