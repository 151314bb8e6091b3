//! Multi-fidelity surrogate: per-level GPs joined by autoregressive bridge
//! functions `y_hi(x) = rho(x) * y_lo(x) + delta(x)`, with trust priors
//! inflating predictive variance at the queried level.
//!
//! Training is recursive: the level-0 GP is fitted first, then each bridge
//! upward in level order against the already-built lower chain. Bridge
//! polynomials live in normalized coordinates; trust features are evaluated
//! on raw coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{denormalize, DesignPoint, Domain, Poly, TrustPrior};
use crate::gp::{fit_gp_with_noise, GpError, GpModel};
use crate::linalg;
use crate::seeding;

pub use crate::domain::TrustFeature;

#[derive(Debug, Error)]
pub enum MfError {
    #[error("level {level} out of range (hierarchy has {count} levels)")]
    LevelOutOfRange { level: usize, count: usize },
    #[error("no observations at level {level}; the bridge cannot be fitted")]
    MissingData { level: usize },
    #[error("training set has {data} levels but {trust} trust priors")]
    LevelCountMismatch { data: usize, trust: usize },
    #[error("bridge degree {0} unsupported (max 2)")]
    BadDegree(u32),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

/// Trust-prior variance `c1 + c2*k + c3*k^2` at a raw-coordinate point,
/// clamped at zero for features that go negative.
pub fn trust_variance(prior: &TrustPrior, point_raw: &DesignPoint) -> f64 {
    let k = prior.feature.eval(point_raw);
    let [c1, c2, c3] = prior.coeffs;
    (c1 + c2 * k + c3 * k * k).max(0.0)
}

/// Scaling/discrepancy pair connecting two adjacent fidelity levels, plus an
/// optional GP over the bridge residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bridge {
    pub rho: Poly,
    pub delta: Poly,
    pub degree: u32,
    pub residual_gp: Option<GpModel>,
    /// Sample variance of the fit residuals; used as a constant variance
    /// inflation when no residual GP exists.
    pub residual_var_fallback: f64,
    /// Set when the requested degree was rank-deficient and the fit fell
    /// back to a simpler form.
    pub degraded: bool,
}

impl Bridge {
    /// The identity bridge: rho = 1, delta = 0, no residual model.
    pub fn identity(dim: usize) -> Self {
        Bridge {
            rho: Poly::constant(dim, 1.0),
            delta: Poly::constant(dim, 0.0),
            degree: 0,
            residual_gp: None,
            residual_var_fallback: 0.0,
            degraded: false,
        }
    }

    /// Bridge mean given the lower-level mean at the same point.
    pub fn mean(&self, x_norm: &DesignPoint, lower_mean: f64) -> f64 {
        let res = match &self.residual_gp {
            Some(gp) => gp.predict(x_norm).map(|(m, _)| m).unwrap_or(0.0),
            None => 0.0,
        };
        self.rho.eval(&x_norm.coords) * lower_mean + self.delta.eval(&x_norm.coords) + res
    }

    fn residual_variance(&self, x_norm: &DesignPoint) -> f64 {
        match &self.residual_gp {
            Some(gp) => gp.predict(x_norm).map(|(_, v)| v).unwrap_or(0.0),
            None => self.residual_var_fallback,
        }
    }
}

/// Training data for one fidelity level: normalized points, targets in the
/// internal maximization convention, and per-observation aleatoric noise.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LevelData {
    pub x: Vec<DesignPoint>,
    pub y: Vec<f64>,
    pub noise: Vec<f64>,
}

impl LevelData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn push(&mut self, x: DesignPoint, y: f64, noise: f64) {
        self.x.push(x);
        self.y.push(y);
        self.noise.push(noise);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfTrainingSet {
    pub levels: Vec<LevelData>,
}

impl MfTrainingSet {
    pub fn empty(level_count: usize) -> Self {
        Self {
            levels: vec![LevelData::default(); level_count],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MfFitOptions {
    /// Noise floor for the level-0 GP and residual GPs.
    pub noise_floor: f64,
    /// Explicit per-bridge polynomial degrees; adaptive when absent
    /// (degree 1 with at least 2(d+1) observations at the upper level,
    /// degree 0 otherwise).
    pub bridge_degrees: Option<Vec<u32>>,
}

impl Default for MfFitOptions {
    fn default() -> Self {
        Self {
            noise_floor: 1e-10,
            bridge_degrees: None,
        }
    }
}

/// The fitted hierarchy. Immutable; refits produce new values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfSurrogate {
    base: GpModel,
    bridges: Vec<Bridge>,
    trust: Vec<TrustPrior>,
    domain: Domain,
    data: MfTrainingSet,
}

impl MfSurrogate {
    pub fn from_parts(
        base: GpModel,
        bridges: Vec<Bridge>,
        trust: Vec<TrustPrior>,
        domain: Domain,
        data: MfTrainingSet,
    ) -> Result<Self, MfError> {
        if trust.len() != bridges.len() + 1 {
            return Err(MfError::LevelCountMismatch {
                data: bridges.len() + 1,
                trust: trust.len(),
            });
        }
        Ok(Self {
            base,
            bridges,
            trust,
            domain,
            data,
        })
    }

    pub fn level_count(&self) -> usize {
        self.trust.len()
    }

    pub fn base(&self) -> &GpModel {
        &self.base
    }

    pub fn bridges(&self) -> &[Bridge] {
        &self.bridges
    }

    pub fn trust(&self) -> &[TrustPrior] {
        &self.trust
    }

    pub fn data(&self) -> &MfTrainingSet {
        &self.data
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Mean and variance of the recursive bridge chain up to `level`,
    /// before the trust term.
    fn predict_chain(&self, x_norm: &DesignPoint, level: usize) -> Result<(f64, f64), MfError> {
        let (mut mean, mut var) = self.base.predict(x_norm)?;
        for bridge in self.bridges.iter().take(level) {
            let r = bridge.rho.eval(&x_norm.coords);
            mean = bridge.mean(x_norm, mean);
            var = r * r * var + bridge.residual_variance(x_norm);
        }
        Ok((mean, var.max(0.0)))
    }

    /// Posterior mean and variance at `level`, trust-inflated. `x_norm` is a
    /// normalized point; values are in the internal maximization convention.
    pub fn predict(&self, x_norm: &DesignPoint, level: usize) -> Result<(f64, f64), MfError> {
        if level >= self.level_count() {
            return Err(MfError::LevelOutOfRange {
                level,
                count: self.level_count(),
            });
        }
        let (mean, var) = self.predict_chain(x_norm, level)?;
        let raw = denormalize(x_norm, &self.domain)?;
        Ok((mean, var + trust_variance(&self.trust[level], &raw)))
    }

    /// Fraction of the trust-inflated top-level variance at `x_norm` that an
    /// observation at `level` could remove: the level's chain variance scaled
    /// through the remaining bridge rhos, over the total. In [0, 1]. Used to
    /// discount the acquisition value of cheap-level candidates.
    pub fn variance_weight(&self, x_norm: &DesignPoint, level: usize) -> Result<f64, MfError> {
        let top = self.level_count() - 1;
        if level >= self.level_count() {
            return Err(MfError::LevelOutOfRange {
                level,
                count: self.level_count(),
            });
        }
        let (_, var_top) = self.predict(x_norm, top)?;
        if var_top <= 1e-300 {
            return Ok(0.0);
        }
        let (_, var_chain) = self.predict_chain(x_norm, level)?;
        let mut scale = 1.0;
        for bridge in &self.bridges[level..] {
            let r = bridge.rho.eval(&x_norm.coords);
            scale *= r * r;
        }
        Ok((scale * var_chain / var_top).clamp(0.0, 1.0))
    }

    /// New surrogate conditioned on one extra observation, with every
    /// hyperparameter, bridge coefficient, and structural choice frozen.
    /// Used for placeholder batching and frozen-structure refits.
    pub fn condition_on(
        &self,
        level: usize,
        x_norm: &DesignPoint,
        y_internal: f64,
        noise: f64,
    ) -> Result<MfSurrogate, MfError> {
        if level >= self.level_count() {
            return Err(MfError::LevelOutOfRange {
                level,
                count: self.level_count(),
            });
        }
        let mut out = self.clone();
        out.data.levels[level].push(x_norm.clone(), y_internal, noise);
        if level == 0 {
            out.base = self.base.with_point(&x_norm.coords, y_internal, noise)?;
        } else if let Some(gp) = &self.bridges[level - 1].residual_gp {
            let (lower_mean, _) = out.predict_chain(x_norm, level - 1)?;
            let b = &self.bridges[level - 1];
            let fitted = b.rho.eval(&x_norm.coords) * lower_mean + b.delta.eval(&x_norm.coords);
            // the residual is defined against the polynomial part only
            let resid = y_internal - fitted;
            out.bridges[level - 1].residual_gp =
                Some(gp.with_point(&x_norm.coords, resid, noise)?);
        }
        Ok(out)
    }

    /// Rebuild all conditioning (GP factorizations, residuals) from `data`
    /// with hyperparameters, bridge coefficients, and structure frozen.
    pub fn refit_conditioning(&self, data: MfTrainingSet) -> Result<MfSurrogate, MfError> {
        if data.levels.len() != self.level_count() {
            return Err(MfError::LevelCountMismatch {
                data: data.levels.len(),
                trust: self.level_count(),
            });
        }
        let lvl0 = &data.levels[0];
        let xs0: Vec<Vec<f64>> = lvl0.x.iter().map(|p| p.coords.clone()).collect();
        let base = self.base.refit_conditioning(xs0, &lvl0.y, &lvl0.noise)?;
        let mut out = MfSurrogate {
            base,
            bridges: self.bridges.clone(),
            trust: self.trust.clone(),
            domain: self.domain.clone(),
            data,
        };
        for l in 1..self.level_count() {
            let lvl = out.data.levels[l].clone();
            if let Some(gp) = &self.bridges[l - 1].residual_gp {
                if lvl.is_empty() {
                    continue;
                }
                let b = &out.bridges[l - 1];
                let mut resid = Vec::with_capacity(lvl.len());
                for (x, y) in lvl.x.iter().zip(&lvl.y) {
                    let (lower_mean, _) = out.predict_chain(x, l - 1)?;
                    resid.push(y - (b.rho.eval(&x.coords) * lower_mean + b.delta.eval(&x.coords)));
                }
                let xs: Vec<Vec<f64>> = lvl.x.iter().map(|p| p.coords.clone()).collect();
                out.bridges[l - 1].residual_gp =
                    Some(gp.refit_conditioning(xs, &resid, &lvl.noise)?);
            }
        }
        Ok(out)
    }
}

/// Least-squares bridge fit of `y = rho(x) * lower_mean(x) + delta(x)`.
///
/// Falls back to degree 0 when the design matrix is rank deficient, and to
/// the pure-shift bridge `rho = 1, delta = mean(y - lower)` when even that
/// is degenerate; both fallbacks set `degraded`. A residual GP is fitted
/// when at least 3 observations exist.
pub fn fit_bridge<F: Fn(&DesignPoint) -> f64>(
    lower_mean: F,
    data: &LevelData,
    degree: u32,
    seed: u64,
) -> Result<Bridge, MfError> {
    if degree > 2 {
        return Err(MfError::BadDegree(degree));
    }
    let n = data.len();
    if n == 0 {
        return Err(MfError::MissingData { level: 1 });
    }
    let dim = data.x[0].dim();
    let lf: Vec<f64> = data.x.iter().map(|x| lower_mean(x)).collect();

    let mut fit = None;
    let mut degraded = false;
    for try_degree in [degree, 0] {
        let p = Poly::n_terms(dim, try_degree);
        if n >= 2 * p {
            if let Some((rho_c, delta_c)) = solve_ls(&data.x, &lf, &data.y, dim, try_degree) {
                fit = Some((
                    Poly::new(dim, try_degree, rho_c).expect("validated size"),
                    Poly::new(dim, try_degree, delta_c).expect("validated size"),
                    try_degree,
                ));
                break;
            }
        }
        degraded = true;
        if try_degree == 0 {
            break;
        }
    }
    let (rho, delta, fitted_degree, n_coeffs) = match fit {
        Some((r, d, deg)) => {
            let p = 2 * Poly::n_terms(dim, deg);
            (r, d, deg, p)
        }
        None => {
            // pure shift: rho = 1 fixed, delta = mean(y - lf); one coefficient
            let shift = data.y.iter().zip(&lf).map(|(y, l)| y - l).sum::<f64>() / n as f64;
            (Poly::constant(dim, 1.0), Poly::constant(dim, shift), 0, 1)
        }
    };

    let residuals: Vec<f64> = data
        .y
        .iter()
        .zip(data.x.iter().zip(&lf))
        .map(|(y, (x, l))| y - (rho.eval(&x.coords) * l + delta.eval(&x.coords)))
        .collect();
    // Degrees-of-freedom-corrected residual variance. A saturated fit has
    // proven nothing about the bridge yet, so the null-model variance of the
    // targets stands in until real residual dof exist.
    let dof = n.saturating_sub(n_coeffs);
    let residual_var_fallback = if dof >= 1 {
        residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64
    } else if n >= 2 {
        let mean = data.y.iter().sum::<f64>() / n as f64;
        data.y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n as f64 - 1.0)
    } else {
        0.0
    };
    let residual_gp = if n >= 3 {
        Some(fit_gp_with_noise(
            &data.x,
            &residuals,
            &data.noise,
            1e-10,
            seeding::derive(seed, "bridge-residual", 0),
        )?)
    } else {
        None
    };

    Ok(Bridge {
        rho,
        delta,
        degree: fitted_degree,
        residual_gp,
        residual_var_fallback,
        degraded,
    })
}

/// Normal-equations least squares for the stacked [rho-basis * lf, basis]
/// design. Returns `None` on rank deficiency.
fn solve_ls(
    xs: &[DesignPoint],
    lf: &[f64],
    y: &[f64],
    dim: usize,
    degree: u32,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let p = Poly::n_terms(dim, degree);
    let m = 2 * p;
    let mut ata = vec![0.0; m * m];
    let mut aty = vec![0.0; m];
    for (i, x) in xs.iter().enumerate() {
        let basis = Poly::basis(dim, degree, &x.coords);
        let mut row = Vec::with_capacity(m);
        row.extend(basis.iter().map(|b| b * lf[i]));
        row.extend(basis.iter());
        for r in 0..m {
            aty[r] += row[r] * y[i];
            for c in 0..m {
                ata[r * m + c] += row[r] * row[c];
            }
        }
    }
    let chol = linalg::cholesky(&ata, m)?;
    let sol = linalg::cholesky_solve(&chol, m, &aty);
    Some((sol[..p].to_vec(), sol[p..].to_vec()))
}

/// Fit the hierarchy from per-level data: level-0 GP first, then bridges in
/// level order. Upper levels without data get the identity bridge, flagged
/// degraded; a data-free level 0 is an error.
pub fn fit_mf(
    data: &MfTrainingSet,
    trust: Vec<TrustPrior>,
    domain: &Domain,
    opts: &MfFitOptions,
    seed: u64,
) -> Result<MfSurrogate, MfError> {
    let level_count = data.levels.len();
    if trust.len() != level_count {
        return Err(MfError::LevelCountMismatch {
            data: level_count,
            trust: trust.len(),
        });
    }
    let lvl0 = &data.levels[0];
    if lvl0.is_empty() {
        return Err(MfError::MissingData { level: 0 });
    }
    let base = fit_gp_with_noise(
        &lvl0.x,
        &lvl0.y,
        &lvl0.noise,
        opts.noise_floor,
        seeding::derive(seed, "gp-level", 0),
    )?;
    let dim = domain.dim();
    let mut partial = MfSurrogate {
        base,
        bridges: Vec::new(),
        trust: trust.clone(),
        domain: domain.clone(),
        data: data.clone(),
    };
    for l in 1..level_count {
        let lvl = &data.levels[l];
        let bridge = if lvl.is_empty() {
            let mut b = Bridge::identity(dim);
            b.degraded = true;
            b
        } else {
            let degree = match &opts.bridge_degrees {
                Some(ds) => *ds.get(l - 1).unwrap_or(&0),
                None => {
                    if lvl.len() >= 2 * (dim + 1) {
                        1
                    } else {
                        0
                    }
                }
            };
            let chain = &partial;
            fit_bridge(
                |x| {
                    chain
                        .predict_chain(x, l - 1)
                        .map(|(m, _)| m)
                        .unwrap_or(f64::NAN)
                },
                lvl,
                degree,
                seeding::derive(seed, "bridge", l as u64),
            )?
        };
        partial.bridges.push(bridge);
    }
    Ok(partial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TrustFeature;
    use crate::gp::{gp_with_params, KernelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(c: &[f64]) -> DesignPoint {
        DesignPoint::new(c.to_vec())
    }

    fn level_data(xs: &[f64], f: impl Fn(f64) -> f64) -> LevelData {
        LevelData {
            x: xs.iter().map(|x| pt(&[*x])).collect(),
            y: xs.iter().map(|x| f(*x)).collect(),
            noise: vec![0.0; xs.len()],
        }
    }

    #[test]
    fn trust_variance_polynomial() {
        let p = TrustPrior::new([0.5, 0.0, 0.0], TrustFeature::Zero).unwrap();
        assert_eq!(trust_variance(&p, &pt(&[3.0])), 0.5);
        let z = TrustPrior::zero();
        assert_eq!(trust_variance(&z, &pt(&[9.0])), 0.0);
        let q = TrustPrior::new([0.1, 0.2, 0.3], TrustFeature::Coordinate(0)).unwrap();
        assert!((trust_variance(&q, &pt(&[2.0])) - 1.7).abs() < 1e-15);
    }

    #[test]
    fn bridge_recovers_exact_affine() {
        let xs = [0.1, 0.35, 0.6, 0.9];
        let lf = |x: f64| (3.0 * x).sin();
        let data = level_data(&xs, |x| 2.0 * lf(x) + 3.0);
        let b = fit_bridge(|p| lf(p.coords[0]), &data, 0, 1).unwrap();
        assert!(
            (b.rho.coeffs[0] - 2.0).abs() < 1e-9,
            "rho {:?}",
            b.rho.coeffs
        );
        assert!((b.delta.coeffs[0] - 3.0).abs() < 1e-9);
        assert!(!b.degraded);
    }

    #[test]
    fn bridge_identity_relation() {
        let xs = [0.05, 0.4, 0.75, 1.0];
        let lf = |x: f64| x * x - 0.3;
        let data = level_data(&xs, lf);
        let b = fit_bridge(|p| lf(p.coords[0]), &data, 0, 2).unwrap();
        assert!((b.rho.coeffs[0] - 1.0).abs() < 1e-9);
        assert!(b.delta.coeffs[0].abs() < 1e-9);
    }

    #[test]
    fn bridge_degree2_matches_normal_equations_oracle() {
        let xs: Vec<f64> = (0..8).map(|i| 0.05 + 0.12 * i as f64).collect();
        let lf = |x: f64| (2.0 * x).cos() + 0.5 * x;
        let hf = |x: f64| (1.0 + x) * lf(x) + x * x;
        let data = level_data(&xs, hf);
        let b = fit_bridge(|p| lf(p.coords[0]), &data, 2, 3).unwrap();

        // independent oracle: Gaussian elimination on the normal equations
        let m = 6;
        let mut ata = vec![0.0; m * m];
        let mut aty = vec![0.0; m];
        for x in &xs {
            let basis = [1.0, *x, x * x];
            let l = lf(*x);
            let row = [
                basis[0] * l,
                basis[1] * l,
                basis[2] * l,
                basis[0],
                basis[1],
                basis[2],
            ];
            for r in 0..m {
                aty[r] += row[r] * hf(*x);
                for c in 0..m {
                    ata[r * m + c] += row[r] * row[c];
                }
            }
        }
        let mut a = ata.clone();
        let mut rhs = aty.clone();
        for col in 0..m {
            let piv = (col..m)
                .max_by(|i, j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))
                .unwrap();
            for j in 0..m {
                a.swap(col * m + j, piv * m + j);
            }
            rhs.swap(col, piv);
            for r in 0..m {
                if r != col {
                    let f = a[r * m + col] / a[col * m + col];
                    for j in 0..m {
                        a[r * m + j] -= f * a[col * m + j];
                    }
                    rhs[r] -= f * rhs[col];
                }
            }
        }
        let oracle: Vec<f64> = (0..m).map(|i| rhs[i] / a[i * m + i]).collect();
        for (got, want) in b.rho.coeffs.iter().chain(&b.delta.coeffs).zip(&oracle) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn bridge_rank_deficient_falls_back() {
        // constant lf makes rho and delta unidentifiable at degree 0
        let xs = [0.2, 0.5, 0.8];
        let data = level_data(&xs, |_| 5.0);
        let b = fit_bridge(|_| 2.0, &data, 1, 4).unwrap();
        assert!(b.degraded);
        // the fallback bridge still reproduces the data through its mean
        for x in &xs {
            let m = b.rho.eval(&[*x]) * 2.0 + b.delta.eval(&[*x]);
            assert!((m - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bridge_zero_observations_is_missing_data() {
        let data = LevelData::default();
        assert!(matches!(
            fit_bridge(|_| 0.0, &data, 0, 5),
            Err(MfError::MissingData { .. })
        ));
    }

    #[test]
    fn ls_optimality_under_perturbation() {
        let xs: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
        let lf = |x: f64| (4.0 * x).sin();
        let hf = |x: f64| 1.4 * lf(x) - 0.2 + 0.3 * x;
        let data = level_data(&xs, hf);
        let b = fit_bridge(|p| lf(p.coords[0]), &data, 1, 6).unwrap();
        let rss = |rho: &Poly, delta: &Poly| -> f64 {
            data.x
                .iter()
                .zip(&data.y)
                .map(|(x, y)| {
                    let r = y - (rho.eval(&x.coords) * lf(x.coords[0]) + delta.eval(&x.coords));
                    r * r
                })
                .sum()
        };
        let base = rss(&b.rho, &b.delta);
        for idx in 0..b.rho.coeffs.len() {
            for sign in [1.0, -1.0] {
                let mut rho = b.rho.clone();
                rho.coeffs[idx] += sign * 1e-3;
                assert!(rss(&rho, &b.delta) >= base - 1e-12);
                let mut delta = b.delta.clone();
                delta.coeffs[idx] += sign * 1e-3;
                assert!(rss(&b.rho, &delta) >= base - 1e-12);
            }
        }
    }

    fn single_level_fixture(trust: TrustPrior) -> MfSurrogate {
        let params = KernelParams::new(1.0, vec![0.2], 1e-8).unwrap();
        let xs = [pt(&[0.5])];
        let base = gp_with_params(params, &xs, &[2.0], &[0.0]).unwrap();
        let mut data = MfTrainingSet::empty(1);
        data.levels[0].push(pt(&[0.5]), 2.0, 0.0);
        MfSurrogate::from_parts(base, vec![], vec![trust], Domain::unit(1), data).unwrap()
    }

    #[test]
    fn single_level_is_gp_plus_trust() {
        let trust = TrustPrior::new([0.25, 0.0, 0.0], TrustFeature::Zero).unwrap();
        let s = single_level_fixture(trust);
        let q = pt(&[0.3]);
        let (gm, gv) = s.base().predict(&q).unwrap();
        let (mm, mv) = s.predict(&q, 0).unwrap();
        assert_eq!(gm, mm);
        assert!((mv - (gv + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn level_out_of_range_rejected() {
        let s = single_level_fixture(TrustPrior::zero());
        assert!(matches!(
            s.predict(&pt(&[0.1]), 1),
            Err(MfError::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn identity_bridges_collapse_to_level_zero() {
        let params = KernelParams::new(0.8, vec![0.3], 1e-6).unwrap();
        let xs = [pt(&[0.2]), pt(&[0.7])];
        let base = gp_with_params(params, &xs, &[1.0, -0.5], &[0.0; 2]).unwrap();
        let bridges = vec![Bridge::identity(1), Bridge::identity(1)];
        let trust = vec![TrustPrior::zero(); 3];
        let s = MfSurrogate::from_parts(
            base,
            bridges,
            trust,
            Domain::unit(1),
            MfTrainingSet::empty(3),
        )
        .unwrap();
        for i in 0..11 {
            let q = pt(&[i as f64 / 10.0]);
            let l0 = s.predict(&q, 0).unwrap();
            for level in 1..3 {
                let ll = s.predict(&q, level).unwrap();
                assert_eq!(l0, ll);
            }
        }
    }

    #[test]
    fn trust_monotone_in_feature() {
        // GP variance is symmetric about the single training point, so pairs
        // (0.5 - t, 0.5 + t) isolate the trust contribution
        let trust = TrustPrior::new([0.0, 0.3, 0.2], TrustFeature::Coordinate(0)).unwrap();
        let s = single_level_fixture(trust);
        for i in 1..10 {
            let t = i as f64 * 0.05;
            let (_, v_lo) = s.predict(&pt(&[0.5 - t]), 0).unwrap();
            let (_, v_hi) = s.predict(&pt(&[0.5 + t]), 0).unwrap();
            assert!(v_hi >= v_lo, "t={t}: {v_hi} < {v_lo}");
        }
    }

    #[test]
    fn two_level_analytic_bridge_recovery() {
        // lf = sin, hf = 2 sin + 0.5; dense lf data, 5 hf points
        let lf = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        let hf = |x: f64| 2.0 * lf(x) + 0.5;
        let mut data = MfTrainingSet::empty(2);
        for i in 0..25 {
            let x = i as f64 / 24.0;
            data.levels[0].push(pt(&[x]), lf(x), 0.0);
        }
        for x in [0.1, 0.3, 0.5, 0.7, 0.9] {
            data.levels[1].push(pt(&[x]), hf(x), 0.0);
        }
        let s = fit_mf(
            &data,
            vec![TrustPrior::zero(); 2],
            &Domain::unit(1),
            &MfFitOptions::default(),
            9,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let x: f64 = rng.gen();
            let (mean, _) = s.predict(&pt(&[x]), 1).unwrap();
            assert!((mean - hf(x)).abs() < 5e-2, "at {x}: {mean} vs {}", hf(x));
        }
    }

    #[test]
    fn conditioning_update_shrinks_variance_and_preserves_original() {
        let lf = |x: f64| x;
        let mut data = MfTrainingSet::empty(2);
        for x in [0.0, 0.25, 0.5, 0.75, 1.0] {
            data.levels[0].push(pt(&[x]), lf(x), 0.0);
        }
        for x in [0.1, 0.5, 0.9] {
            data.levels[1].push(pt(&[x]), 2.0 * lf(x) + 1.0, 0.0);
        }
        let s = fit_mf(
            &data,
            vec![TrustPrior::zero(); 2],
            &Domain::unit(1),
            &MfFitOptions::default(),
            10,
        )
        .unwrap();
        let q = pt(&[0.3]);
        let (m_pred, v_before) = s.predict(&q, 1).unwrap();
        let s2 = s.condition_on(1, &q, m_pred, 0.0).unwrap();
        let (_, v_after) = s2.predict(&q, 1).unwrap();
        assert!(v_after <= v_before + 1e-12, "{v_after} > {v_before}");
        // original surrogate unchanged
        let (_, v_orig) = s.predict(&q, 1).unwrap();
        assert_eq!(v_orig, v_before);
    }
}
