//! Single-fidelity Gaussian-process regression with squared-exponential ARD
//! kernel and marginal-likelihood hyperparameter fitting.
//!
//! Targets are standardized to zero mean / unit variance before fitting and
//! the prior mean is the constant 0 in standardized space. Hyperparameters
//! are fitted by derivative-free compass search from 8 quasi-random starts
//! in log-parameter space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{lhs_design, DesignPoint, Domain};
use crate::linalg;
use crate::search::compass_max;

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const SIGNAL_VAR_BOUNDS: (f64, f64) = (1e-8, 1e6);
pub const NOISE_VAR_BOUNDS: (f64, f64) = (1e-12, 1e3);

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
const N_STARTS: usize = 8;
const EVALS_PER_START: usize = 500;

/// Start box for the multi-start search, in the scale of standardized
/// targets and normalized inputs. Starts are quasi-random inside this
/// region; the search itself may walk anywhere within the full parameter
/// bounds when the objective strictly improves. Keeping starts at sane
/// scales resolves objective ties away from degenerate corner kernels.
const START_SIGNAL_VAR: (f64, f64) = (0.2, 5.0);
const START_LENGTHSCALE: (f64, f64) = (0.05, 2.0);
const START_NOISE_VAR: (f64, f64) = (1e-8, 1e-2);

// Weakly-informative stabilizers for the fit objective. The marginal
// likelihood of a handful of points is nearly flat across orders of
// magnitude of lengthscale, and its ties include degenerate kernels that
// wreck the acquisition downstream; a broad log-normal prior on the
// lengthscales (and a very broad one on the signal variance) makes the
// small-sample fit posterior-guided while the data term takes over as
// observations accumulate.
const LN_LENGTHSCALE_PRIOR_MEAN: f64 = -1.108_662_624_779_315; // ln 0.33
const LN_LENGTHSCALE_PRIOR_SD: f64 = 0.06;
const LN_SIGNAL_VAR_PRIOR_SD: f64 = 0.15;
// The residual noise term defaults to near-deterministic; a few points of
// flat likelihood otherwise tie "all noise" with interpolation. Aleatoric
// noise enters through the per-observation diagonal instead.
const LN_NOISE_PRIOR_MEAN: f64 = -23.025_850_929_940_457; // ln 1e-10
const LN_NOISE_PRIOR_SD: f64 = 1.5;

/// Log-prior over the log-parameter vector [ln sv, ln l_1..l_d, ln nv].
fn log_prior(theta: &[f64], d: usize) -> f64 {
    let mut lp = -0.5 * (theta[0] / LN_SIGNAL_VAR_PRIOR_SD).powi(2);
    for t in &theta[1..=d] {
        let z = (t - LN_LENGTHSCALE_PRIOR_MEAN) / LN_LENGTHSCALE_PRIOR_SD;
        lp -= 0.5 * z * z;
    }
    let zn = (theta[d + 1] - LN_NOISE_PRIOR_MEAN) / LN_NOISE_PRIOR_SD;
    lp - 0.5 * zn * zn
}

#[derive(Debug, Error)]
pub enum GpError {
    #[error("training set is empty")]
    Empty,
    #[error("length mismatch: {points} points vs {targets} targets")]
    LengthMismatch { points: usize, targets: usize },
    #[error("non-finite target at index {0}")]
    NonFiniteTarget(usize),
    #[error("dimension mismatch: model has {expected} dims, query has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ill-conditioned kernel matrix: {0}")]
    IllConditioned(String),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
}

/// Squared-exponential ARD kernel hyperparameters plus the homoskedastic
/// residual noise term, all in standardized-target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
}

impl KernelParams {
    pub fn new(signal_var: f64, lengthscales: Vec<f64>, noise_var: f64) -> Result<Self, GpError> {
        let p = Self {
            signal_var,
            lengthscales,
            noise_var,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), GpError> {
        let (sl, sh) = SIGNAL_VAR_BOUNDS;
        if !(self.signal_var >= sl && self.signal_var <= sh) {
            return Err(GpError::InvalidParams(format!(
                "signal_var {} outside [{sl}, {sh}]",
                self.signal_var
            )));
        }
        let (ll, lh) = LENGTHSCALE_BOUNDS;
        for (j, l) in self.lengthscales.iter().enumerate() {
            if !(*l >= ll && *l <= lh) {
                return Err(GpError::InvalidParams(format!(
                    "lengthscale[{j}] = {l} outside [{ll}, {lh}]"
                )));
            }
        }
        let (nl, nh) = NOISE_VAR_BOUNDS;
        if !(self.noise_var >= nl && self.noise_var <= nh) {
            return Err(GpError::InvalidParams(format!(
                "noise_var {} outside [{nl}, {nh}]",
                self.noise_var
            )));
        }
        Ok(())
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((ai, bi), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let z = (ai - bi) / l;
            s += z * z;
        }
        self.signal_var * (-0.5 * s).exp()
    }
}

/// A fitted GP: immutable, queryable from many threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    pub params: KernelParams,
    x: Vec<Vec<f64>>,
    /// Standardized targets.
    y: Vec<f64>,
    /// Per-observation aleatoric noise in standardized units.
    obs_noise: Vec<f64>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    jitter: f64,
}

impl GpModel {
    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_std(&self) -> f64 {
        self.y_std
    }

    /// Jitter added to the kernel diagonal when factorizing.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Lower Cholesky factor of the regularized kernel matrix (row-major).
    pub fn chol(&self) -> &[f64] {
        &self.chol
    }

    /// Posterior predictive in standardized-target units, excluding
    /// observation noise.
    pub fn predict_latent(&self, x: &DesignPoint) -> Result<(f64, f64), GpError> {
        if x.dim() != self.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let n = self.n_train();
        let k_star: Vec<f64> = self
            .x
            .iter()
            .map(|xi| self.params.kernel(xi, &x.coords))
            .collect();
        let mean = k_star
            .iter()
            .zip(&self.alpha)
            .map(|(k, a)| k * a)
            .sum::<f64>();
        let v = linalg::solve_lower(&self.chol, n, &k_star);
        let var =
            self.params.kernel(&x.coords, &x.coords) - v.iter().map(|vi| vi * vi).sum::<f64>();
        Ok((mean, var.max(0.0)))
    }

    /// Posterior predictive mean and variance in problem units
    /// (de-standardized, excluding observation noise).
    pub fn predict(&self, x: &DesignPoint) -> Result<(f64, f64), GpError> {
        let (m, v) = self.predict_latent(x)?;
        Ok((self.y_mean + self.y_std * m, self.y_std * self.y_std * v))
    }

    /// Rebuild the conditioning (factorization and weights) on new data with
    /// this model's hyperparameters and standardization constants frozen.
    pub fn refit_conditioning(
        &self,
        x: Vec<Vec<f64>>,
        y_raw: &[f64],
        obs_noise_raw: &[f64],
    ) -> Result<GpModel, GpError> {
        if x.len() != y_raw.len() || x.len() != obs_noise_raw.len() {
            return Err(GpError::LengthMismatch {
                points: x.len(),
                targets: y_raw.len(),
            });
        }
        if x.is_empty() {
            return Err(GpError::Empty);
        }
        let var_scale = self.y_std * self.y_std;
        let y: Vec<f64> = y_raw
            .iter()
            .map(|v| (v - self.y_mean) / self.y_std)
            .collect();
        let obs_noise: Vec<f64> = obs_noise_raw.iter().map(|v| v / var_scale).collect();
        let (chol, alpha, jitter) = factorize(&self.params, &x, &y, &obs_noise)?;
        Ok(GpModel {
            params: self.params.clone(),
            x,
            y,
            obs_noise,
            chol,
            alpha,
            y_mean: self.y_mean,
            y_std: self.y_std,
            jitter,
        })
    }

    /// Conditioning update with one extra observation (raw units).
    pub fn with_point(&self, x: &[f64], y_raw: f64, noise_raw: f64) -> Result<GpModel, GpError> {
        let mut xs = self.x.clone();
        xs.push(x.to_vec());
        let mut ys: Vec<f64> = self
            .y
            .iter()
            .map(|v| self.y_mean + self.y_std * v)
            .collect();
        ys.push(y_raw);
        let scale = self.y_std * self.y_std;
        let mut noise: Vec<f64> = self.obs_noise.iter().map(|v| v * scale).collect();
        noise.push(noise_raw);
        self.refit_conditioning(xs, &ys, &noise)
    }
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut std = var.sqrt();
    if std < 1e-12 {
        std = 1.0;
    }
    (y.iter().map(|v| (v - mean) / std).collect(), mean, std)
}

/// Build K + diag(obs_noise) + noise_var I, factorize with the jitter ladder.
/// Returns (chol, alpha, jitter_used).
fn factorize(
    params: &KernelParams,
    x: &[Vec<f64>],
    y_std_units: &[f64],
    obs_noise: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64), GpError> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = params.kernel(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += params.noise_var + obs_noise[i];
    }
    let mut jitter = JITTER_START;
    loop {
        let mut reg = k.clone();
        for i in 0..n {
            reg[i * n + i] += jitter;
        }
        if let Some(chol) = linalg::cholesky(&reg, n) {
            let alpha = linalg::cholesky_solve(&chol, n, y_std_units);
            return Ok((chol, alpha, jitter));
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX {
            return Err(GpError::IllConditioned(format!(
                "kernel matrix not positive definite even with jitter {JITTER_MAX}"
            )));
        }
    }
}

fn lml_from_factor(chol: &[f64], alpha: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let quad: f64 = y.iter().zip(alpha).map(|(yi, ai)| yi * ai).sum();
    let logdet_half: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
    -0.5 * quad - logdet_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood of `y` under the kernel, computed through the
/// Cholesky factorization with the standard jitter ladder. `y` is used as
/// given; no standardization is applied here.
pub fn log_marginal_likelihood(
    params: &KernelParams,
    x: &[DesignPoint],
    y: &[f64],
) -> Result<f64, GpError> {
    validate_training(x, y)?;
    params.validate()?;
    let xs: Vec<Vec<f64>> = x.iter().map(|p| p.coords.clone()).collect();
    let zeros = vec![0.0; y.len()];
    let (chol, alpha, _) = factorize(params, &xs, y, &zeros)?;
    Ok(lml_from_factor(&chol, &alpha, y))
}

fn validate_training(x: &[DesignPoint], y: &[f64]) -> Result<(), GpError> {
    if x.is_empty() {
        return Err(GpError::Empty);
    }
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch {
            points: x.len(),
            targets: y.len(),
        });
    }
    for (i, v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(GpError::NonFiniteTarget(i));
        }
    }
    Ok(())
}

/// Fit hyperparameters by maximizing the log marginal likelihood plus the
/// weak stabilizer priors, from 8 quasi-random starts in log-parameter
/// space, then factorize once at the winner. Per-observation aleatoric
/// noise is added to the kernel diagonal; the fitted homoskedastic term
/// never drops below `noise_floor`.
pub fn fit_gp_with_noise(
    x: &[DesignPoint],
    y_raw: &[f64],
    obs_noise_raw: &[f64],
    noise_floor: f64,
    seed: u64,
) -> Result<GpModel, GpError> {
    validate_training(x, y_raw)?;
    if obs_noise_raw.len() != x.len() {
        return Err(GpError::LengthMismatch {
            points: x.len(),
            targets: obs_noise_raw.len(),
        });
    }
    // Conflicting duplicates are unresolvable with a zero noise floor.
    if noise_floor <= 0.0 {
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                if x[i].distance(&x[j]) < 1e-10 && (y_raw[i] - y_raw[j]).abs() > 1e-8 {
                    return Err(GpError::IllConditioned(format!(
                        "training points {i} and {j} coincide with conflicting targets \
                         ({} vs {}); raise the noise floor above zero to absorb replicate noise",
                        y_raw[i], y_raw[j]
                    )));
                }
            }
        }
    }

    let d = x[0].dim();
    let (y, y_mean, y_std) = standardize(y_raw);
    let var_scale = y_std * y_std;
    let obs_noise: Vec<f64> = obs_noise_raw.iter().map(|v| v / var_scale).collect();
    let xs: Vec<Vec<f64>> = x.iter().map(|p| p.coords.clone()).collect();

    // Search space: ln(signal_var), ln(l_1..l_d), ln(noise_var).
    let nv_lo = NOISE_VAR_BOUNDS.0.max(noise_floor);
    let mut lower = vec![SIGNAL_VAR_BOUNDS.0.ln()];
    let mut upper = vec![SIGNAL_VAR_BOUNDS.1.ln()];
    lower.extend(std::iter::repeat(LENGTHSCALE_BOUNDS.0.ln()).take(d));
    upper.extend(std::iter::repeat(LENGTHSCALE_BOUNDS.1.ln()).take(d));
    lower.push(nv_lo.ln());
    upper.push(NOISE_VAR_BOUNDS.1.ln());

    let params_from = |theta: &[f64]| KernelParams {
        signal_var: theta[0].exp(),
        lengthscales: theta[1..=d].iter().map(|t| t.exp()).collect(),
        noise_var: theta[d + 1].exp().max(nv_lo),
    };
    let mut objective = |theta: &[f64]| -> f64 {
        let p = params_from(theta);
        match factorize(&p, &xs, &y, &obs_noise) {
            Ok((chol, alpha, _)) => lml_from_factor(&chol, &alpha, &y) + log_prior(theta, d),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let box_dim = d + 2;
    let mut start_lower = vec![START_SIGNAL_VAR.0.ln()];
    let mut start_upper = vec![START_SIGNAL_VAR.1.ln()];
    start_lower.extend(std::iter::repeat(START_LENGTHSCALE.0.ln()).take(d));
    start_upper.extend(std::iter::repeat(START_LENGTHSCALE.1.ln()).take(d));
    start_lower.push(START_NOISE_VAR.0.max(nv_lo).ln());
    start_upper.push(
        START_NOISE_VAR
            .1
            .max(nv_lo * 10.0)
            .min(NOISE_VAR_BOUNDS.1)
            .ln(),
    );
    let start_box = Domain::unit(box_dim);
    let starts = lhs_design(N_STARTS, &start_box, seed).expect("n >= 1");
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let theta0: Vec<f64> = (0..box_dim)
            .map(|j| {
                (start_lower[j] + s.coords[j] * (start_upper[j] - start_lower[j]))
                    .clamp(lower[j], upper[j])
            })
            .collect();
        let (theta, value) = compass_max(
            &mut objective,
            &theta0,
            &lower,
            &upper,
            0.25,
            1e-3,
            EVALS_PER_START,
        );
        if value.is_finite() && best.as_ref().map_or(true, |(_, b)| value > *b) {
            best = Some((theta, value));
        }
    }
    let (theta, _) = best.ok_or_else(|| {
        GpError::IllConditioned(
            "no hyperparameter start produced a positive-definite kernel".into(),
        )
    })?;
    let params = params_from(&theta);
    let (chol, alpha, jitter) = factorize(&params, &xs, &y, &obs_noise)?;
    Ok(GpModel {
        params,
        x: xs,
        y,
        obs_noise,
        chol,
        alpha,
        y_mean,
        y_std,
        jitter,
    })
}

/// [`fit_gp_with_noise`] with zero aleatoric noise on every observation.
pub fn fit_gp(
    x: &[DesignPoint],
    y: &[f64],
    noise_floor: f64,
    seed: u64,
) -> Result<GpModel, GpError> {
    let zeros = vec![0.0; x.len()];
    fit_gp_with_noise(x, y, &zeros, noise_floor, seed)
}

/// Build a model at explicit hyperparameters (no search). Targets are
/// standardized exactly as in [`fit_gp`].
pub fn gp_with_params(
    params: KernelParams,
    x: &[DesignPoint],
    y_raw: &[f64],
    obs_noise_raw: &[f64],
) -> Result<GpModel, GpError> {
    validate_training(x, y_raw)?;
    params.validate()?;
    let (y, y_mean, y_std) = standardize(y_raw);
    let var_scale = y_std * y_std;
    let obs_noise: Vec<f64> = obs_noise_raw.iter().map(|v| v / var_scale).collect();
    let xs: Vec<Vec<f64>> = x.iter().map(|p| p.coords.clone()).collect();
    let (chol, alpha, jitter) = factorize(&params, &xs, &y, &obs_noise)?;
    Ok(GpModel {
        params,
        x: xs,
        y,
        obs_noise,
        chol,
        alpha,
        y_mean,
        y_std,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(coords: &[f64]) -> DesignPoint {
        DesignPoint::new(coords.to_vec())
    }

    // ---- independent dense oracle (Gauss-Jordan inverse, no Cholesky) ----

    fn invert(a: &[f64], n: usize) -> Vec<f64> {
        let mut aug = vec![0.0; n * 2 * n];
        for i in 0..n {
            for j in 0..n {
                aug[i * 2 * n + j] = a[i * n + j];
            }
            aug[i * 2 * n + n + i] = 1.0;
        }
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if aug[r * 2 * n + col].abs() > aug[piv * 2 * n + col].abs() {
                    piv = r;
                }
            }
            for j in 0..2 * n {
                aug.swap(col * 2 * n + j, piv * 2 * n + j);
            }
            let p = aug[col * 2 * n + col];
            for j in 0..2 * n {
                aug[col * 2 * n + j] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[r * 2 * n + col];
                    for j in 0..2 * n {
                        aug[r * 2 * n + j] -= f * aug[col * 2 * n + j];
                    }
                }
            }
        }
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                inv[i * n + j] = aug[i * 2 * n + n + j];
            }
        }
        inv
    }

    fn se_kernel(p: &KernelParams, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a
            .iter()
            .zip(b)
            .zip(&p.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        p.signal_var * (-0.5 * s).exp()
    }

    /// Dense-solve posterior at `q` in the provided target units.
    fn dense_posterior(
        p: &KernelParams,
        xs: &[Vec<f64>],
        ys: &[f64],
        jitter: f64,
        q: &[f64],
    ) -> (f64, f64) {
        let n = xs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = se_kernel(p, &xs[i], &xs[j]);
            }
            k[i * n + i] += p.noise_var + jitter;
        }
        let kinv = invert(&k, n);
        let kstar: Vec<f64> = xs.iter().map(|x| se_kernel(p, x, q)).collect();
        let mut mean = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += kinv[i * n + j] * ys[j];
                quad += kstar[i] * kinv[i * n + j] * kstar[j];
            }
            mean += kstar[i] * row;
        }
        (mean, se_kernel(p, q, q) - quad)
    }

    #[test]
    fn single_point_interpolates() {
        let m = fit_gp(&[pt(&[0.5])], &[2.0], 0.0, 1).unwrap();
        let (mean, var) = m.predict(&pt(&[0.5])).unwrap();
        assert!((mean - 2.0).abs() < 1e-9, "mean {mean}");
        assert!(var <= 1e-8, "var {var}");
    }

    #[test]
    fn constant_targets_predict_constant() {
        let xs: Vec<DesignPoint> = (0..5).map(|i| pt(&[i as f64 / 4.0])).collect();
        let ys = vec![3.25; 5];
        let m = fit_gp(&xs, &ys, 0.0, 2).unwrap();
        for i in 0..21 {
            let (mean, _) = m.predict(&pt(&[i as f64 / 20.0])).unwrap();
            assert!((mean - 3.25).abs() < 1e-6, "{mean}");
        }
    }

    #[test]
    fn fixed_params_match_dense_oracle() {
        let params = KernelParams::new(1.7, vec![0.31], 0.05).unwrap();
        let xs = [pt(&[0.1]), pt(&[0.55]), pt(&[0.9])];
        let ys = [0.4, -1.1, 0.3];
        let m = gp_with_params(params.clone(), &xs, &ys, &[0.0; 3]).unwrap();
        // oracle works in the same standardized units as the model
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let std = (ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let ys_std: Vec<f64> = ys.iter().map(|v| (v - mean) / std).collect();
        let xs_raw: Vec<Vec<f64>> = xs.iter().map(|p| p.coords.clone()).collect();
        let (om, ov) = dense_posterior(&params, &xs_raw, &ys_std, m.jitter(), &[0.3]);
        let (mm, mv) = m.predict_latent(&pt(&[0.3])).unwrap();
        assert!((om - mm).abs() < 1e-10, "mean {om} vs {mm}");
        assert!((ov - mv).abs() < 1e-10, "var {ov} vs {mv}");
    }

    #[test]
    fn predict_at_training_point_and_far_away() {
        let params = KernelParams::new(2.0, vec![0.05], 1e-10).unwrap();
        let xs = [pt(&[0.0]), pt(&[0.02])];
        let ys = [1.0, 1.4];
        let m = gp_with_params(params, &xs, &ys, &[0.0; 2]).unwrap();
        let (mean, var) = m.predict(&pt(&[0.0])).unwrap();
        assert!((mean - 1.0).abs() < 1e-6);
        assert!(var < 1e-6);
        // > 10 lengthscales from all data: prior reversion
        let (_, var_far) = m.predict_latent(&pt(&[0.9])).unwrap();
        assert!((var_far - 2.0).abs() / 2.0 < 0.01, "far variance {var_far}");
    }

    #[test]
    fn two_point_closed_form() {
        // symbolic 2x2 solve with hand-set hyperparameters
        let sv = 1.3;
        let l = 0.4;
        let nv = 0.1;
        let params = KernelParams::new(sv, vec![l], nv).unwrap();
        let xs = [pt(&[0.2]), pt(&[0.8])];
        let ys = [1.0, -1.0];
        let m = gp_with_params(params, &xs, &ys, &[0.0; 2]).unwrap();

        // standardized targets: mean 0, std 1 -> y = [1, -1]
        let q = 0.5;
        let j = m.jitter();
        let k12 = sv * (-0.5 * (0.6f64 / l).powi(2)).exp();
        let kd = sv + nv + j;
        let k1 = sv * (-0.5 * (0.3f64 / l).powi(2)).exp();
        let k2 = sv * (-0.5 * (0.3f64 / l).powi(2)).exp();
        let det = kd * kd - k12 * k12;
        // K^{-1} = [[kd, -k12], [-k12, kd]] / det
        let a1 = (kd * 1.0 + -k12 * -1.0) / det;
        let a2 = (-k12 * 1.0 + kd * -1.0) / det;
        let mean = k1 * a1 + k2 * a2;
        let quad = (k1 * (kd * k1 - k12 * k2) + k2 * (-k12 * k1 + kd * k2)) / det;
        let var = sv - quad;
        let (mm, mv) = m.predict_latent(&pt(&[q])).unwrap();
        assert!((mean - mm).abs() < 1e-10);
        assert!((var - mv).abs() < 1e-10);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let m = fit_gp(&[pt(&[0.5, 0.5])], &[1.0], 0.0, 1).unwrap();
        assert!(matches!(
            m.predict(&pt(&[0.5])),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_conflict_rejected_with_guidance() {
        let xs = [pt(&[0.4]), pt(&[0.4])];
        let err = fit_gp(&xs, &[1.0, 2.0], 0.0, 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("noise floor"), "{msg}");
        // with a floor the same data fits fine
        assert!(fit_gp(&xs, &[1.0, 2.0], 1e-4, 3).is_ok());
    }

    #[test]
    fn lml_univariate_standard_normal() {
        let params = KernelParams::new(0.6, vec![0.5], 0.4).unwrap();
        let lml = log_marginal_likelihood(&params, &[pt(&[0.3])], &[0.0]).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lml - want).abs() < 1e-9, "{lml} vs {want}");
    }

    #[test]
    fn lml_matches_dense_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 5;
            let xs: Vec<DesignPoint> = (0..n)
                .map(|_| pt(&[rng.gen::<f64>(), rng.gen::<f64>()]))
                .collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let params = KernelParams::new(
                0.5 + rng.gen::<f64>(),
                vec![0.2 + rng.gen::<f64>(), 0.2 + rng.gen::<f64>()],
                0.01 + 0.2 * rng.gen::<f64>(),
            )
            .unwrap();
            let lml = log_marginal_likelihood(&params, &xs, &ys).unwrap();

            // dense oracle: -1/2 y' K^-1 y - 1/2 ln det K - n/2 ln 2pi,
            // determinant via unpivoted LU product of the SPD matrix
            let xr: Vec<Vec<f64>> = xs.iter().map(|p| p.coords.clone()).collect();
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    k[i * n + j] = se_kernel(&params, &xr[i], &xr[j]);
                }
                k[i * n + i] += params.noise_var + JITTER_START;
            }
            let kinv = invert(&k, n);
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += ys[i] * kinv[i * n + j] * ys[j];
                }
            }
            let mut lu = k.clone();
            let mut logdet = 0.0;
            for c in 0..n {
                logdet += lu[c * n + c].ln();
                for r in c + 1..n {
                    let f = lu[r * n + c] / lu[c * n + c];
                    for j in c..n {
                        lu[r * n + j] -= f * lu[c * n + j];
                    }
                }
            }
            let want =
                -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            assert!((lml - want).abs() < 1e-9, "trial {trial}: {lml} vs {want}");
        }
    }

    #[test]
    fn lml_peaks_near_residual_variance_for_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 24;
        let xs: Vec<DesignPoint> = (0..n).map(|i| pt(&[i as f64 / (n - 1) as f64])).collect();
        // pure noise, tiny signal so K ~ noise_var I
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let resid_var = ys.iter().map(|v| v * v).sum::<f64>() / n as f64;

        // grid-scan oracle over noise_var
        let grid: Vec<f64> = (0..60)
            .map(|i| (i as f64 / 59.0 * 4.0 - 2.0).exp2() * resid_var)
            .collect();
        let lml_at = |nv: f64| {
            let p = KernelParams::new(1e-6, vec![0.5], nv).unwrap();
            log_marginal_likelihood(&p, &xs, &ys).unwrap()
        };
        let values: Vec<f64> = grid.iter().map(|nv| lml_at(*nv)).collect();
        let peak = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // strictly increasing toward the peak from both sides
        for i in 0..peak {
            assert!(values[i] < values[i + 1], "left side not increasing at {i}");
        }
        for i in peak..values.len() - 1 {
            assert!(
                values[i] > values[i + 1],
                "right side not decreasing at {i}"
            );
        }
        // and the peak sits near the residual variance
        assert!(
            (grid[peak] / resid_var).ln().abs() < 0.5,
            "peak at {}",
            grid[peak]
        );
    }

    #[test]
    fn chol_reconstructs_regularized_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<DesignPoint> = (0..8).map(|_| pt(&[rng.gen(), rng.gen()])).collect();
        let ys: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        let m = fit_gp(&xs, &ys, 1e-6, 9).unwrap();
        let n = 8;
        let l = m.chol();
        let mut frob_err = 0.0;
        let mut frob = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut rec = 0.0;
                for k in 0..n {
                    rec += l[i * n + k] * l[j * n + k];
                }
                let mut want = se_kernel(&m.params, &m.train_x()[i], &m.train_x()[j]);
                if i == j {
                    want += m.params.noise_var + m.jitter();
                }
                frob_err += (rec - want).powi(2);
                frob += want * want;
            }
        }
        assert!((frob_err / frob).sqrt() < 1e-8);
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let n = 2 + (rng.gen::<u32>() % 6) as usize;
            let xs: Vec<DesignPoint> = (0..n).map(|_| pt(&[rng.gen(), rng.gen()])).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0).collect();
            let m = fit_gp(&xs, &ys, 1e-8, rng.gen()).unwrap();
            for _ in 0..40 {
                let q = pt(&[rng.gen(), rng.gen()]);
                let (_, v) = m.predict_latent(&q).unwrap();
                assert!(v >= 0.0);
                assert!(v <= m.params.signal_var + m.params.noise_var + 1e-8);
            }
        }
    }

    #[test]
    fn extra_observation_never_increases_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for dim in [1usize, 2] {
            for _ in 0..10 {
                let n = 3 + (rng.gen::<u32>() % 4) as usize;
                let xs: Vec<DesignPoint> = (0..n)
                    .map(|_| pt(&(0..dim).map(|_| rng.gen::<f64>()).collect::<Vec<_>>()))
                    .collect();
                let ys: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                let params =
                    KernelParams::new(1.0, vec![0.2 + 0.4 * rng.gen::<f64>(); dim], 1e-4).unwrap();
                let m = gp_with_params(params, &xs, &ys, &vec![0.0; n]).unwrap();
                let extra: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
                let m2 = m.with_point(&extra, rng.gen::<f64>(), 0.0).unwrap();
                for _ in 0..25 {
                    let q = pt(&(0..dim).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
                    let (_, v1) = m.predict_latent(&q).unwrap();
                    let (_, v2) = m2.predict_latent(&q).unwrap();
                    assert!(v2 <= v1 + 1e-9, "variance grew: {v1} -> {v2}");
                }
            }
        }
    }

    #[test]
    fn multistart_final_beats_every_start() {
        // derivative-free search: assert the objective-improvement property
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let xs: Vec<DesignPoint> = (0..7).map(|_| pt(&[rng.gen()])).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|p| (p.coords[0] * 4.0).sin() + 0.1 * rng.gen::<f64>())
            .collect();
        let seed = 77;
        let m = fit_gp(&xs, &ys, 1e-8, seed).unwrap();

        // recompute the start LMLs the same way fit_gp derives them
        let (y_std_units, _, y_std) = standardize(&ys);
        let _ = y_std;
        let d = 1;
        let nv_lo = NOISE_VAR_BOUNDS.0.max(1e-8);
        let lower = [
            START_SIGNAL_VAR.0.ln(),
            START_LENGTHSCALE.0.ln(),
            START_NOISE_VAR.0.max(nv_lo).ln(),
        ];
        let upper = [
            START_SIGNAL_VAR.1.ln(),
            START_LENGTHSCALE.1.ln(),
            START_NOISE_VAR
                .1
                .max(nv_lo * 10.0)
                .min(NOISE_VAR_BOUNDS.1)
                .ln(),
        ];
        let starts = lhs_design(N_STARTS, &Domain::unit(d + 2), seed).unwrap();
        let xr: Vec<Vec<f64>> = xs.iter().map(|p| p.coords.clone()).collect();
        let zeros = vec![0.0; xs.len()];
        // the fit objective is the penalized marginal likelihood
        let objective = |p: &KernelParams| -> f64 {
            let theta = [p.signal_var.ln(), p.lengthscales[0].ln(), p.noise_var.ln()];
            match factorize(p, &xr, &y_std_units, &zeros) {
                Ok((chol, alpha, _)) => {
                    lml_from_factor(&chol, &alpha, &y_std_units) + log_prior(&theta, d)
                }
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let final_obj = objective(&m.params);
        for s in &starts {
            let theta: Vec<f64> = (0..d + 2)
                .map(|j| lower[j] + s.coords[j] * (upper[j] - lower[j]))
                .collect();
            let p = KernelParams {
                signal_var: theta[0].exp(),
                lengthscales: vec![theta[1].exp()],
                noise_var: theta[2].exp().max(nv_lo),
            };
            assert!(final_obj >= objective(&p) - 1e-12);
        }
    }
}
