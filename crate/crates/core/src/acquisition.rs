//! Candidate scoring and batch proposal: expected improvement for
//! optimization goals, variance reduction for surrogate-training goals,
//! benefit normalization by evaluation cost, and placeholder (constant-liar)
//! batching.
//!
//! In optimize mode every candidate is scored against the top-level
//! posterior: the top level gets the full expected improvement, and a
//! cheaper level gets the EI mass enabled by the share of top-level
//! variance it can remove. Cheap levels therefore win while they still
//! inform the target, and the expensive level takes over for verification
//! once they stop.
//!
//! The inner maximization is a deterministic multi-start compass search over
//! the normalized box; placeholder observations at the surrogate's predicted
//! mean suppress duplicate proposals within a batch and are discarded before
//! returning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    denormalize, DesignPoint, Domain, DomainError, FidelityLevel, REPULSION_RADIUS,
};
use crate::mf::{MfError, MfSurrogate};
use crate::search::compass_max;
use crate::seeding;
use crate::stats::{normal_cdf, normal_pdf};

const INNER_STARTS: usize = 32;
const INNER_EVALS_PER_START: usize = 200;
/// Same-level candidates closer than this (normalized) count as duplicates.
const DUPLICATE_RADIUS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("no feasible candidate found at level {level} after repulsion filtering")]
    NoCandidates { level: usize },
    #[error("counts has {got} entries for a {expected}-level hierarchy")]
    CountsMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Mf(#[from] MfError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Campaign goal driving the per-level acquisition function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionMode {
    Optimize,
    ReduceVariance,
}

/// A proposed evaluation awaiting the budget-constrained selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateTask {
    /// Candidate index within the proposal batch.
    pub m: usize,
    pub level: usize,
    /// Raw problem-unit coordinates.
    pub point: DesignPoint,
    /// The same point in normalized coordinates.
    pub point_norm: DesignPoint,
    pub acq_value: f64,
    /// Resource cost t of running this evaluation.
    pub cost: f64,
    /// Wall-clock seconds this evaluation is expected to take.
    pub walltime: f64,
    /// Acquisition value divided by cost.
    pub benefit: f64,
}

/// Closed-form expected improvement under the maximization convention.
/// Degenerates to `max(mean - best, 0)` when the standard deviation is
/// effectively zero.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gap = mean - best;
    if sigma <= 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// Variance of the surrogate at `level` minus the variance at the next
/// lowest level; the level-0 benefit is its own predictive variance. May be
/// negative for upper levels (callers clamp when using it as an acquisition
/// value).
pub fn variance_reduction_benefit(
    surrogate: &MfSurrogate,
    x_norm: &DesignPoint,
    level: usize,
) -> Result<f64, MfError> {
    let (_, var) = surrogate.predict(x_norm, level)?;
    if level == 0 {
        Ok(var)
    } else {
        let (_, var_below) = surrogate.predict(x_norm, level - 1)?;
        Ok(var - var_below)
    }
}

/// Everything the batch proposer needs besides the surrogate itself.
pub struct ProposalContext<'a> {
    pub domain: &'a Domain,
    pub levels: &'a [FidelityLevel],
    /// Best feasible observed value on the highest fidelity level, in the
    /// internal maximization convention. When absent, the best training
    /// value across all levels is used.
    pub incumbent: Option<f64>,
    /// Normalized locations of known-infeasible evaluations.
    pub repulsion: &'a [DesignPoint],
    pub seed: u64,
}

fn fallback_incumbent(surrogate: &MfSurrogate) -> f64 {
    surrogate
        .data()
        .levels
        .iter()
        .flat_map(|l| l.y.iter())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Propose `counts[level]` candidates per level.
///
/// Per level, iteratively: maximize the level's acquisition with a
/// multi-start compass search, append the maximizer, insert a placeholder
/// observation at the predicted mean, recondition, repeat. Placeholders are
/// confined to a scratch copy; the input surrogate is untouched.
pub fn propose_batch(
    surrogate: &MfSurrogate,
    ctx: &ProposalContext<'_>,
    counts: &[usize],
    mode: AcquisitionMode,
) -> Result<Vec<CandidateTask>, AcquisitionError> {
    let level_count = surrogate.level_count();
    if counts.len() != level_count || ctx.levels.len() != level_count {
        return Err(AcquisitionError::CountsMismatch {
            got: counts.len(),
            expected: level_count,
        });
    }
    let dim = ctx.domain.dim();
    let unit = Domain::unit(dim);
    let lower = vec![0.0; dim];
    let upper = vec![1.0; dim];

    let mut scratch = surrogate.clone();
    let mut best = ctx
        .incumbent
        .unwrap_or_else(|| fallback_incumbent(surrogate));
    let mut out: Vec<CandidateTask> = Vec::new();

    for level in 0..level_count {
        for slot in 0..counts[level] {
            let taken: Vec<DesignPoint> = out
                .iter()
                .filter(|c| c.level == level)
                .map(|c| c.point_norm.clone())
                .collect();
            let score = |x: &[f64]| -> f64 {
                let xp = DesignPoint::new(x.to_vec());
                let raw = match denormalize(&xp, ctx.domain) {
                    Ok(r) => r,
                    Err(_) => return f64::NEG_INFINITY,
                };
                if !ctx.levels[level].is_feasible(&raw) {
                    return f64::NEG_INFINITY;
                }
                if ctx
                    .repulsion
                    .iter()
                    .any(|r| r.distance(&xp) < REPULSION_RADIUS)
                {
                    return f64::NEG_INFINITY;
                }
                if taken.iter().any(|t| t.distance(&xp) < DUPLICATE_RADIUS) {
                    return f64::NEG_INFINITY;
                }
                match mode {
                    // Top-level candidates get the full EI; a cheaper level
                    // cannot collect the improvement itself, so it is scored
                    // by the EI mass enabled by the top-level variance it
                    // can remove, which hands over to the expensive level
                    // once the cheap one stops informing.
                    AcquisitionMode::Optimize => {
                        let top = level_count - 1;
                        match scratch.predict(&xp, top) {
                            Ok((mean, var)) => {
                                let ei = expected_improvement(mean, var, best);
                                if level == top {
                                    ei
                                } else {
                                    match scratch.variance_weight(&xp, level) {
                                        Ok(w) => {
                                            let kept =
                                                expected_improvement(mean, var * (1.0 - w), best);
                                            (ei - kept).max(0.0)
                                        }
                                        Err(_) => f64::NEG_INFINITY,
                                    }
                                }
                            }
                            Err(_) => f64::NEG_INFINITY,
                        }
                    }
                    AcquisitionMode::ReduceVariance => {
                        match variance_reduction_benefit(&scratch, &xp, level) {
                            Ok(v) => v.max(0.0),
                            Err(_) => f64::NEG_INFINITY,
                        }
                    }
                }
            };

            let start_seed =
                seeding::derive(ctx.seed, "propose", (level as u64) << 32 | slot as u64);
            let starts = crate::domain::lhs_design(INNER_STARTS, &unit, start_seed)?;
            let mut winner: Option<(Vec<f64>, f64)> = None;
            for s in &starts {
                let (x, v) = compass_max(
                    |x| score(x),
                    &s.coords,
                    &lower,
                    &upper,
                    0.25,
                    1e-5,
                    INNER_EVALS_PER_START,
                );
                if v.is_finite() && winner.as_ref().map_or(true, |(_, b)| v > *b) {
                    winner = Some((x, v));
                }
            }
            let (x_best, value) = winner.ok_or(AcquisitionError::NoCandidates { level })?;
            let point_norm = DesignPoint::new(x_best);
            let point = denormalize(&point_norm, ctx.domain)?;
            let acq_value = value.max(0.0);
            let cost = ctx.levels[level].cost_model.cost(&point);
            let walltime = ctx.levels[level].cost_model.walltime(&point);
            out.push(CandidateTask {
                m: out.len(),
                level,
                point,
                point_norm: point_norm.clone(),
                acq_value,
                cost,
                walltime,
                benefit: acq_value / cost,
            });

            // constant-liar placeholder at the predicted mean
            let (placeholder, _) = scratch.predict(&point_norm, level)?;
            scratch = scratch.condition_on(level, &point_norm, placeholder, 0.0)?;
            if mode == AcquisitionMode::Optimize && level == level_count - 1 {
                best = best.max(placeholder);
            }
        }
    }
    Ok(out)
}
