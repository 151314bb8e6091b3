//! Shared domain types: design points, boxes, fidelity hierarchies, and the
//! space-filling initial design.
//!
//! Convention used throughout the crate: surrogate training and acquisition
//! happen in normalized `[0,1]^d` coordinates, while cost models, trust
//! features, and feasibility rules are evaluated on raw problem-unit
//! coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinate {index} = {value} outside bounds [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A point in design space. Coordinates are raw problem units or normalized
/// `[0,1]` values depending on context; the two never mix within one API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub coords: Vec<f64>,
}

impl DesignPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Euclidean distance to another point of the same dimension.
    pub fn distance(&self, other: &DesignPoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for DesignPoint {
    fn from(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

/// Axis-aligned box of valid designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DomainError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(DomainError::InvalidArgument(format!(
                "bounds must be non-empty and equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) {
                return Err(DomainError::InvalidArgument(format!(
                    "lower[{j}] = {lo} must be < upper[{j}] = {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit box `[0,1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, point: &DesignPoint) -> bool {
        point.dim() == self.dim()
            && point
                .coords
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    fn check(&self, point: &DesignPoint) -> Result<(), DomainError> {
        if point.dim() != self.dim() {
            return Err(DomainError::DimensionMismatch {
                expected: self.dim(),
                got: point.dim(),
            });
        }
        for (j, x) in point.coords.iter().enumerate() {
            if *x < self.lower[j] || *x > self.upper[j] {
                return Err(DomainError::OutOfBounds {
                    index: j,
                    value: *x,
                    lower: self.lower[j],
                    upper: self.upper[j],
                });
            }
        }
        Ok(())
    }
}

/// Affine map of an in-domain point onto the unit box.
pub fn normalize(point: &DesignPoint, domain: &Domain) -> Result<DesignPoint, DomainError> {
    domain.check(point)?;
    let coords = point
        .coords
        .iter()
        .zip(domain.lower.iter().zip(&domain.upper))
        .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
        .collect();
    Ok(DesignPoint::new(coords))
}

/// Inverse of [`normalize`]; expects coordinates in `[0,1]`.
pub fn denormalize(point: &DesignPoint, domain: &Domain) -> Result<DesignPoint, DomainError> {
    if point.dim() != domain.dim() {
        return Err(DomainError::DimensionMismatch {
            expected: domain.dim(),
            got: point.dim(),
        });
    }
    for (j, u) in point.coords.iter().enumerate() {
        if !(-1e-12..=1.0 + 1e-12).contains(u) {
            return Err(DomainError::OutOfBounds {
                index: j,
                value: *u,
                lower: 0.0,
                upper: 1.0,
            });
        }
    }
    let coords = point
        .coords
        .iter()
        .zip(domain.lower.iter().zip(&domain.upper))
        .map(|(u, (lo, hi))| lo + u * (hi - lo))
        .collect();
    Ok(DesignPoint::new(coords))
}

/// Latin hypercube design: `n` points, one per equal-width bin in every
/// dimension, deterministic in `seed`. Points are returned in raw units.
pub fn lhs_design(n: usize, domain: &Domain, seed: u64) -> Result<Vec<DesignPoint>, DomainError> {
    if n == 0 {
        return Err(DomainError::InvalidArgument(
            "LHS design needs n >= 1 points".into(),
        ));
    }
    let d = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // unit[i][j] holds the normalized coordinate of point i in dimension j
    let mut unit = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut bins: Vec<usize> = (0..n).collect();
        bins.shuffle(&mut rng);
        for (i, bin) in bins.iter().enumerate() {
            let u: f64 = rng.gen::<f64>();
            unit[i][j] = (*bin as f64 + u) / n as f64;
        }
    }
    unit.into_iter()
        .map(|u| denormalize(&DesignPoint::new(u), domain))
        .collect()
}

/// Multivariate polynomial over point coordinates, total degree at most 2.
///
/// The monomial basis is ordered: constant, then `x_0 .. x_{d-1}`, then all
/// quadratic terms `x_i * x_j` with `i <= j` in lexicographic `(i, j)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub dim: usize,
    pub degree: u32,
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(dim: usize, degree: u32, coeffs: Vec<f64>) -> Result<Self, DomainError> {
        if degree > 2 {
            return Err(DomainError::InvalidArgument(format!(
                "polynomial degree {degree} exceeds the supported maximum of 2"
            )));
        }
        let want = Self::n_terms(dim, degree);
        if coeffs.len() != want {
            return Err(DomainError::InvalidArgument(format!(
                "degree-{degree} polynomial in {dim} dims needs {want} coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self {
            dim,
            degree,
            coeffs,
        })
    }

    /// Constant polynomial.
    pub fn constant(dim: usize, value: f64) -> Self {
        Self {
            dim,
            degree: 0,
            coeffs: vec![value],
        }
    }

    pub fn n_terms(dim: usize, degree: u32) -> usize {
        match degree {
            0 => 1,
            1 => 1 + dim,
            2 => 1 + dim + dim * (dim + 1) / 2,
            _ => unreachable!("degree capped at 2"),
        }
    }

    /// Evaluate the monomial basis at `x` in the documented order.
    pub fn basis(dim: usize, degree: u32, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::n_terms(dim, degree));
        out.push(1.0);
        if degree >= 1 {
            out.extend_from_slice(x);
        }
        if degree >= 2 {
            for i in 0..dim {
                for j in i..dim {
                    out.push(x[i] * x[j]);
                }
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        Self::basis(self.dim, self.degree, x)
            .iter()
            .zip(&self.coeffs)
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Cost of one evaluation at a given design: resource units and wall-clock
/// seconds, optionally modulated by a point-dependent multiplier.
///
/// The multiplier is clamped below at `1e-6` so the evaluated cost stays
/// strictly positive everywhere in the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub base_cost: f64,
    pub base_walltime: f64,
    pub multiplier: Option<Poly>,
}

impl CostModel {
    pub fn fixed(base_cost: f64, base_walltime: f64) -> Result<Self, DomainError> {
        Self::new(base_cost, base_walltime, None)
    }

    pub fn new(
        base_cost: f64,
        base_walltime: f64,
        multiplier: Option<Poly>,
    ) -> Result<Self, DomainError> {
        if !(base_cost > 0.0) || !(base_walltime > 0.0) {
            return Err(DomainError::InvalidArgument(format!(
                "cost model requires positive base cost and walltime (got {base_cost}, {base_walltime})"
            )));
        }
        Ok(Self {
            base_cost,
            base_walltime,
            multiplier,
        })
    }

    fn factor(&self, point_raw: &DesignPoint) -> f64 {
        match &self.multiplier {
            Some(p) => p.eval(&point_raw.coords).max(1e-6),
            None => 1.0,
        }
    }

    /// Resource cost of evaluating at `point_raw` (raw problem units).
    pub fn cost(&self, point_raw: &DesignPoint) -> f64 {
        self.base_cost * self.factor(point_raw)
    }

    /// Wall-clock seconds for evaluating at `point_raw`.
    pub fn walltime(&self, point_raw: &DesignPoint) -> f64 {
        self.base_walltime * self.factor(point_raw)
    }

    /// Upper bound on the walltime over a domain, from the multiplier
    /// sampled at the box corners, the center, and a fixed space-filling
    /// set. Exact for multiplier-free and linear-multiplier models.
    pub fn walltime_bound(&self, domain: &Domain) -> f64 {
        let poly = match &self.multiplier {
            None => return self.base_walltime,
            Some(p) => p,
        };
        let d = domain.dim();
        let mut max_factor = 0.0f64;
        let mut visit = |coords: &[f64]| {
            max_factor = max_factor.max(poly.eval(coords).max(1e-6));
        };
        if d <= 12 {
            for corner in 0..(1usize << d) {
                let coords: Vec<f64> = (0..d)
                    .map(|j| {
                        if corner & (1 << j) != 0 {
                            domain.upper()[j]
                        } else {
                            domain.lower()[j]
                        }
                    })
                    .collect();
                visit(&coords);
            }
        }
        let center: Vec<f64> = domain
            .lower()
            .iter()
            .zip(domain.upper())
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect();
        visit(&center);
        for p in lhs_design(64, domain, 0x57A7).expect("n >= 1") {
            visit(&p.coords);
        }
        self.base_walltime * max_factor
    }
}

/// Scalar feature feeding a trust prior, evaluated on raw coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrustFeature {
    /// Feature identically zero; the trust variance reduces to `c1`.
    Zero,
    /// A designated raw coordinate.
    Coordinate(usize),
}

impl TrustFeature {
    pub fn eval(&self, point_raw: &DesignPoint) -> f64 {
        match self {
            TrustFeature::Zero => 0.0,
            TrustFeature::Coordinate(j) => point_raw.coords.get(*j).copied().unwrap_or(0.0),
        }
    }
}

/// Domain-expert variance inflation: `c1 + c2*k + c3*k^2` in objective
/// variance units, where `k` is the configured feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustPrior {
    pub coeffs: [f64; 3],
    pub feature: TrustFeature,
}

impl TrustPrior {
    pub fn new(coeffs: [f64; 3], feature: TrustFeature) -> Result<Self, DomainError> {
        if coeffs.iter().any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(DomainError::InvalidArgument(format!(
                "trust coefficients must be finite and non-negative, got {coeffs:?}"
            )));
        }
        Ok(Self { coeffs, feature })
    }

    pub fn zero() -> Self {
        Self {
            coeffs: [0.0; 3],
            feature: TrustFeature::Zero,
        }
    }
}

/// Declared (non-hidden) feasibility rule for a fidelity level, evaluated on
/// raw coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeasibilityRule {
    /// Feasible where `coeffs . x + offset >= 0`.
    LinearGe { coeffs: Vec<f64>, offset: f64 },
}

impl FeasibilityRule {
    pub fn satisfied(&self, point_raw: &DesignPoint) -> bool {
        match self {
            FeasibilityRule::LinearGe { coeffs, offset } => {
                let dot: f64 = coeffs
                    .iter()
                    .zip(&point_raw.coords)
                    .map(|(a, x)| a * x)
                    .sum();
                dot + offset >= 0.0
            }
        }
    }
}

/// One member of the fidelity hierarchy. Index 0 is the cheapest and least
/// trusted level; indices are contiguous within a hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityLevel {
    pub index: usize,
    pub name: String,
    pub cost_model: CostModel,
    pub trust_prior: TrustPrior,
    pub feasibility: Option<FeasibilityRule>,
    pub queue_name: String,
}

impl FidelityLevel {
    pub fn is_feasible(&self, point_raw: &DesignPoint) -> bool {
        self.feasibility
            .as_ref()
            .map_or(true, |rule| rule.satisfied(point_raw))
    }
}

/// Validate that a hierarchy's level indices are contiguous from zero.
pub fn validate_hierarchy(levels: &[FidelityLevel]) -> Result<(), DomainError> {
    if levels.is_empty() {
        return Err(DomainError::InvalidArgument(
            "hierarchy needs at least one fidelity level".into(),
        ));
    }
    for (i, lvl) in levels.iter().enumerate() {
        if lvl.index != i {
            return Err(DomainError::InvalidArgument(format!(
                "level indices must be contiguous from 0; position {i} has index {}",
                lvl.index
            )));
        }
    }
    Ok(())
}

/// Optimization direction declared once per problem. Internally every value
/// is converted to the maximization convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Convert a raw objective value to the internal maximization scale.
    pub fn to_internal(self, value: f64) -> f64 {
        match self {
            Direction::Maximize => value,
            Direction::Minimize => -value,
        }
    }

    /// Convert an internal value back to problem units.
    pub fn to_raw(self, value: f64) -> f64 {
        self.to_internal(value)
    }
}

/// A completed (or failed) evaluation of some fidelity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Raw problem-unit coordinates.
    pub point: DesignPoint,
    pub level: usize,
    /// Objective value in problem units; meaningful only when `feasible`.
    pub value: f64,
    pub noise_var: f64,
    pub feasible: bool,
    pub task_id: String,
    pub walltime_actual: f64,
}

impl Observation {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.noise_var < 0.0 {
            return Err(DomainError::InvalidArgument(format!(
                "observation noise variance must be >= 0, got {}",
                self.noise_var
            )));
        }
        if self.feasible && !self.value.is_finite() {
            return Err(DomainError::InvalidArgument(format!(
                "feasible observation must carry a finite value, got {}",
                self.value
            )));
        }
        Ok(())
    }
}

/// Normalized distance below which a candidate is disqualified by a known
/// infeasible location.
pub const REPULSION_RADIUS: f64 = 0.02;
