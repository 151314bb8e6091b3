//! Synthetic multi-fidelity problems with known ground truth. They stand in
//! for external simulators so campaigns stay reproducible at desk scale.
//!
//! Every evaluator is pure given (point, campaign seed): stochastic levels
//! draw from a counter-based stream keyed by (campaign seed, task id), so
//! concurrent execution cannot perturb the values.

use serde::{Deserialize, Serialize};

use crate::domain::{
    CostModel, DesignPoint, Direction, Domain, FeasibilityRule, FidelityLevel, Poly, TrustPrior,
};
use crate::orchestrator::{EvalOutcome, Task, TaskEvaluator};
use crate::seeding;

/// Closed-form level evaluators, all over raw problem coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelEvaluator {
    Poly { poly: Poly },
    GaussianSum { components: Vec<GaussComponent> },
    ForresterHigh,
    ForresterLow,
    MicroSurface,
    MicroCheap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussComponent {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub sigma: f64,
}

fn gaussian_sum(components: &[GaussComponent], x: &[f64]) -> f64 {
    components
        .iter()
        .map(|c| {
            let d2: f64 = x
                .iter()
                .zip(&c.center)
                .map(|(xi, ci)| (xi - ci) * (xi - ci))
                .sum();
            c.amplitude * (-d2 / (2.0 * c.sigma * c.sigma)).exp()
        })
        .sum()
}

pub fn forrester_high(x: f64) -> f64 {
    let a = 6.0 * x - 2.0;
    a * a * (12.0 * x - 4.0).sin()
}

pub fn forrester_low(x: f64) -> f64 {
    0.5 * forrester_high(x) + 10.0 * (x - 0.5) - 5.0
}

fn micro_surface(x: &[f64]) -> f64 {
    let d2 = (x[0] - 0.65) * (x[0] - 0.65) + (x[1] - 0.45) * (x[1] - 0.45);
    (-d2 / (2.0 * 0.25 * 0.25)).exp()
}

fn micro_cheap(x: &[f64]) -> f64 {
    0.85 * micro_surface(x) - 0.05 + 0.1 * x[0]
}

impl LevelEvaluator {
    /// Noise-free value at a raw point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            LevelEvaluator::Poly { poly } => poly.eval(x),
            LevelEvaluator::GaussianSum { components } => gaussian_sum(components, x),
            LevelEvaluator::ForresterHigh => forrester_high(x[0]),
            LevelEvaluator::ForresterLow => forrester_low(x[0]),
            LevelEvaluator::MicroSurface => micro_surface(x),
            LevelEvaluator::MicroCheap => micro_cheap(x),
        }
    }
}

/// Aleatoric noise: a variance field sigma^2(x), polynomial in raw
/// coordinates, clamped at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseField {
    pub variance_poly: Poly,
}

impl NoiseField {
    pub fn variance(&self, x: &[f64]) -> f64 {
        self.variance_poly.eval(x).max(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchLevel {
    pub name: String,
    pub queue_name: String,
    pub evaluator: LevelEvaluator,
    pub cost_model: CostModel,
    pub trust_prior: TrustPrior,
    pub noise: Option<NoiseField>,
    pub feasibility: Option<FeasibilityRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkProblem {
    pub name: String,
    pub domain: Domain,
    pub direction: Direction,
    pub levels: Vec<BenchLevel>,
    /// Known optimum of the top level's noise-free value, problem units.
    pub true_optimum: Option<(DesignPoint, f64)>,
    /// Hidden constraint: evaluation fails where this rule is violated.
    /// Unknown to the acquisition layer by definition.
    pub hidden_constraint: Option<FeasibilityRule>,
}

impl BenchmarkProblem {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// The fidelity hierarchy as the acquisition/allocator layers see it.
    pub fn fidelity_levels(&self) -> Vec<FidelityLevel> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, l)| FidelityLevel {
                index: i,
                name: l.name.clone(),
                cost_model: l.cost_model.clone(),
                trust_prior: l.trust_prior.clone(),
                feasibility: l.feasibility.clone(),
                queue_name: l.queue_name.clone(),
            })
            .collect()
    }

    /// Noise-free value of a level at a raw point.
    pub fn mean_value(&self, level: usize, x_raw: &DesignPoint) -> f64 {
        self.levels[level].evaluator.eval(&x_raw.coords)
    }

    pub fn noise_variance(&self, level: usize, x_raw: &DesignPoint) -> f64 {
        self.levels[level]
            .noise
            .as_ref()
            .map_or(0.0, |n| n.variance(&x_raw.coords))
    }

    /// Full evaluation with the seeded noise draw. Returns the observed
    /// value and its aleatoric variance, or `None` where the hidden
    /// constraint blocks evaluation.
    pub fn evaluate(
        &self,
        level: usize,
        x_raw: &DesignPoint,
        campaign_seed: u64,
        task_id: &str,
    ) -> Option<(f64, f64)> {
        if let Some(hidden) = &self.hidden_constraint {
            if !hidden.satisfied(x_raw) {
                return None;
            }
        }
        let mean = self.mean_value(level, x_raw);
        let var = self.noise_variance(level, x_raw);
        if var > 0.0 {
            let draw = standard_normal(campaign_seed, task_id);
            Some((mean + var.sqrt() * draw, var))
        } else {
            Some((mean, 0.0))
        }
    }

    /// Restriction to the highest level only, for single-fidelity baselines.
    pub fn top_level_only(&self) -> BenchmarkProblem {
        let mut top = self.levels[self.top_level()].clone();
        top.name = format!("{}-only", top.name);
        BenchmarkProblem {
            name: format!("{}-hf-only", self.name),
            domain: self.domain.clone(),
            direction: self.direction,
            levels: vec![top],
            true_optimum: self.true_optimum.clone(),
            hidden_constraint: self.hidden_constraint.clone(),
        }
    }
}

/// One standard-normal draw from the (campaign seed, task id) stream.
fn standard_normal(seed: u64, task_id: &str) -> f64 {
    let h1 = seeding::derive(seed, task_id, 1);
    let h2 = seeding::derive(seed, task_id, 2);
    let u1 = (((h1 >> 11) as f64 / (1u64 << 53) as f64).max(1e-300)).min(1.0 - 1e-16);
    let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Adapter executing benchmark evaluations inside the orchestrator.
pub struct ProblemEvaluator {
    pub problem: BenchmarkProblem,
    pub campaign_seed: u64,
}

impl TaskEvaluator for ProblemEvaluator {
    fn evaluate(&self, task: &Task, _attempt: u32) -> EvalOutcome {
        match self
            .problem
            .evaluate(task.level, &task.point, self.campaign_seed, &task.id)
        {
            Some((value, noise_var)) => EvalOutcome::Value { value, noise_var },
            None => EvalOutcome::Infeasible,
        }
    }
}

/// Canonical two-level 1D pair: an expensive oscillatory high level and a
/// cheap shifted-and-scaled low level. Minimization problem on [0, 1].
pub fn forrester_pair() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "forrester".into(),
        domain: Domain::unit(1),
        direction: Direction::Minimize,
        levels: vec![
            BenchLevel {
                name: "lf".into(),
                queue_name: "lf".into(),
                evaluator: LevelEvaluator::ForresterLow,
                cost_model: CostModel::fixed(1.0, 1.0).expect("positive"),
                trust_prior: TrustPrior::zero(),
                noise: None,
                feasibility: None,
            },
            BenchLevel {
                name: "hf".into(),
                queue_name: "hf".into(),
                evaluator: LevelEvaluator::ForresterHigh,
                cost_model: CostModel::fixed(10.0, 10.0).expect("positive"),
                trust_prior: TrustPrior::zero(),
                noise: None,
                feasibility: None,
            },
        ],
        true_optimum: Some((DesignPoint::new(vec![0.757248757812]), -6.020740055767)),
        hidden_constraint: None,
    }
}

/// 2D single-fidelity analogue of a reactor design optimization: a smooth
/// two-Gaussian surface with a single interior maximum and point-dependent
/// walltime, maximized on the unit box.
pub fn eh_analogue() -> BenchmarkProblem {
    let components = vec![
        GaussComponent {
            amplitude: 1.0,
            center: vec![0.55, 0.55],
            sigma: 0.22,
        },
        GaussComponent {
            amplitude: 0.25,
            center: vec![0.56, 0.56],
            sigma: 0.12,
        },
    ];
    BenchmarkProblem {
        name: "eh_analogue".into(),
        domain: Domain::unit(2),
        direction: Direction::Maximize,
        levels: vec![BenchLevel {
            name: "sim".into(),
            queue_name: "sim".into(),
            evaluator: LevelEvaluator::GaussianSum { components },
            cost_model: CostModel::new(
                1.0,
                1.0,
                // walltime grows across the domain to exercise cost-aware benefit
                Some(Poly::new(2, 1, vec![1.0, 0.5, 0.0]).expect("valid poly")),
            )
            .expect("positive"),
            trust_prior: TrustPrior::zero(),
            noise: None,
            feasibility: None,
        }],
        true_optimum: Some((
            DesignPoint::new(vec![0.554562011719, 0.554562011719]),
            1.249057222388,
        )),
        hidden_constraint: None,
    }
}

/// 2-level 2D problem coupling a cheap biased approximation with an
/// expensive stochastic level whose noise variance grows across the domain;
/// the target of variance-reduction campaigns.
pub fn stochastic_micro() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "stochastic_micro".into(),
        domain: Domain::unit(2),
        direction: Direction::Maximize,
        levels: vec![
            BenchLevel {
                name: "continuum".into(),
                queue_name: "cheap".into(),
                evaluator: LevelEvaluator::MicroCheap,
                cost_model: CostModel::fixed(1.0, 1.0).expect("positive"),
                trust_prior: TrustPrior::zero(),
                noise: None,
                feasibility: None,
            },
            BenchLevel {
                name: "particle".into(),
                queue_name: "particle".into(),
                evaluator: LevelEvaluator::MicroSurface,
                cost_model: CostModel::fixed(8.0, 8.0).expect("positive"),
                trust_prior: TrustPrior::zero(),
                noise: Some(NoiseField {
                    variance_poly: Poly::new(2, 1, vec![0.01, 0.09, 0.0]).expect("valid poly"),
                }),
                feasibility: None,
            },
        ],
        true_optimum: Some((DesignPoint::new(vec![0.65, 0.45]), 1.0)),
        hidden_constraint: None,
    }
}

pub fn by_name(name: &str) -> Option<BenchmarkProblem> {
    match name {
        "forrester" => Some(forrester_pair()),
        "eh_analogue" => Some(eh_analogue()),
        "stochastic_micro" => Some(stochastic_micro()),
        _ => None,
    }
}

pub fn list() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "forrester",
            "1D two-level pair (cheap shifted low level, oscillatory high level), minimize",
        ),
        (
            "eh_analogue",
            "2D single-level two-Gaussian surface with walltime variation, maximize",
        ),
        (
            "stochastic_micro",
            "2D two-level pair with heteroskedastic noise on the high level, for variance reduction",
        ),
    ]
}
