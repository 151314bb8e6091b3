//! Campaign configuration files: a versioned TOML schema covering the
//! problem (built-in benchmark or declarative custom hierarchy), the budget
//! and goal, orchestrator resources, and clock mode.
//!
//! Validation produces one diagnostic per defect, each naming the offending
//! key; parse failures carry the line/column from the TOML parser.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::AcquisitionMode;
use crate::allocator::Heuristic;
use crate::bench::{
    self, BenchLevel, BenchmarkProblem, GaussComponent, LevelEvaluator, NoiseField,
};
use crate::domain::{
    CostModel, Direction, Domain, FeasibilityRule, Poly, TrustFeature, TrustPrior,
};
use crate::driver::{CampaignConfig, ClockMode};
use crate::orchestrator::WorkerProfile;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration ({} diagnostics)", .0.len())]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Dotted path of the offending key.
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    pub campaign: CampaignSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub orchestrator: OrchestratorSection,
    pub resources: Vec<ResourceSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub goal: String,
    pub n_init: usize,
    pub iterations: usize,
    pub wallclock_budget: f64,
    pub resource_budget: f64,
    #[serde(default = "default_heuristic")]
    pub heuristic: String,
    pub seed: u64,
    #[serde(default = "default_max_candidates")]
    pub max_candidates_per_level: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
    #[serde(default = "default_hf_anchors")]
    pub hf_anchors: usize,
}

fn default_heuristic() -> String {
    "longest_sim".into()
}
fn default_max_candidates() -> usize {
    4
}
fn default_max_attempts() -> u32 {
    3
}
fn default_noise_floor() -> f64 {
    1e-10
}
fn default_hf_anchors() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default)]
    pub benchmark: Option<String>,
    #[serde(default)]
    pub custom: Option<CustomProblem>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    pub name: String,
    pub direction: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub levels: Vec<CustomLevel>,
    #[serde(default)]
    pub bridges: Option<Vec<BridgeSection>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CustomLevel {
    pub name: String,
    pub queue: String,
    pub kind: String,
    #[serde(default)]
    pub degree: Option<u32>,
    #[serde(default)]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default)]
    pub components: Option<Vec<GaussSection>>,
    pub cost: f64,
    pub walltime: f64,
    #[serde(default)]
    pub cost_multiplier_degree: Option<u32>,
    #[serde(default)]
    pub cost_multiplier_coeffs: Option<Vec<f64>>,
    #[serde(default)]
    pub trust: Option<[f64; 3]>,
    #[serde(default)]
    pub trust_feature: Option<String>,
    #[serde(default)]
    pub noise_degree: Option<u32>,
    #[serde(default)]
    pub noise_coeffs: Option<Vec<f64>>,
    #[serde(default)]
    pub feasibility_coeffs: Option<Vec<f64>>,
    #[serde(default)]
    pub feasibility_offset: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GaussSection {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSection {
    pub degree: u32,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorSection {
    #[serde(default)]
    pub clock: Option<String>,
    #[serde(default)]
    pub time_scale: Option<f64>,
    #[serde(default)]
    pub queues: Vec<QueueSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSection {
    pub name: String,
    pub latency: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSection {
    pub id: String,
    pub queues: Vec<String>,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default)]
    pub failure_rate: f64,
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub directory: Option<String>,
}

/// Parse the file; parse failures report line/column via the TOML parser.
pub fn load_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
}

fn push(diags: &mut Vec<Diagnostic>, key: &str, message: impl Into<String>) {
    diags.push(Diagnostic {
        key: key.into(),
        message: message.into(),
    });
}

/// Full schema and cross-field validation; one diagnostic per defect.
pub fn validate_file(cfg: &FileConfig) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if cfg.schema_version != SCHEMA_VERSION {
        push(
            &mut diags,
            "schema_version",
            format!("expected {SCHEMA_VERSION}, got {}", cfg.schema_version),
        );
    }
    let c = &cfg.campaign;
    if !matches!(c.goal.as_str(), "optimize" | "reduce_variance") {
        push(
            &mut diags,
            "campaign.goal",
            "must be 'optimize' or 'reduce_variance'",
        );
    }
    if c.n_init < 1 {
        push(&mut diags, "campaign.n_init", "must be >= 1");
    }
    if c.iterations < 1 {
        push(&mut diags, "campaign.iterations", "must be >= 1");
    }
    if !(c.wallclock_budget > 0.0) {
        push(&mut diags, "campaign.wallclock_budget", "must be positive");
    }
    if !(c.resource_budget > 0.0) {
        push(&mut diags, "campaign.resource_budget", "must be positive");
    }
    if !matches!(c.heuristic.as_str(), "longest_sim" | "proportional_steps") {
        push(
            &mut diags,
            "campaign.heuristic",
            "must be 'longest_sim' or 'proportional_steps'",
        );
    }

    // problem: exactly one of benchmark / custom
    let mut queue_names: Vec<String> = Vec::new();
    match (&cfg.problem.benchmark, &cfg.problem.custom) {
        (Some(_), Some(_)) => push(
            &mut diags,
            "problem",
            "specify either 'benchmark' or 'custom', not both",
        ),
        (None, None) => push(
            &mut diags,
            "problem",
            "one of 'benchmark' or 'custom' required",
        ),
        (Some(name), None) => match bench::by_name(name) {
            Some(p) => queue_names = p.levels.iter().map(|l| l.queue_name.clone()).collect(),
            None => push(
                &mut diags,
                "problem.benchmark",
                format!("unknown benchmark '{name}'"),
            ),
        },
        (None, Some(custom)) => {
            validate_custom(custom, &mut diags);
            queue_names = custom.levels.iter().map(|l| l.queue.clone()).collect();
        }
    }

    if let Some(clock) = &cfg.orchestrator.clock {
        if !matches!(clock.as_str(), "virtual" | "real") {
            push(
                &mut diags,
                "orchestrator.clock",
                "must be 'virtual' or 'real'",
            );
        }
    }
    if let Some(ts) = cfg.orchestrator.time_scale {
        if !(ts > 0.0) {
            push(&mut diags, "orchestrator.time_scale", "must be positive");
        }
    }
    for (i, q) in cfg.orchestrator.queues.iter().enumerate() {
        if q.latency < 0.0 {
            push(
                &mut diags,
                &format!("orchestrator.queues[{i}].latency"),
                "must be >= 0",
            );
        }
        if !queue_names.is_empty() && !queue_names.contains(&q.name) {
            push(
                &mut diags,
                &format!("orchestrator.queues[{i}].name"),
                format!("queue '{}' is not used by any level", q.name),
            );
        }
    }

    if cfg.resources.is_empty() {
        push(&mut diags, "resources", "at least one resource is required");
    }
    for (i, r) in cfg.resources.iter().enumerate() {
        if r.queues.is_empty() {
            push(
                &mut diags,
                &format!("resources[{i}].queues"),
                "must be non-empty",
            );
        }
        if !(r.speed > 0.0) {
            push(
                &mut diags,
                &format!("resources[{i}].speed"),
                "must be positive",
            );
        }
        if !(0.0..1.0).contains(&r.failure_rate) {
            push(
                &mut diags,
                &format!("resources[{i}].failure_rate"),
                "must be in [0, 1)",
            );
        }
    }
    // every level's queue needs at least one worker
    for q in &queue_names {
        let served = cfg
            .resources
            .iter()
            .any(|r| r.queues.iter().any(|rq| rq == q));
        if !served {
            push(
                &mut diags,
                "resources",
                format!("queue '{q}' has no worker servicing it"),
            );
        }
    }
    diags
}

fn validate_custom(custom: &CustomProblem, diags: &mut Vec<Diagnostic>) {
    let dim = custom.lower.len();
    if dim == 0 || dim != custom.upper.len() {
        push(
            diags,
            "problem.custom.lower",
            "lower/upper must be non-empty and equal length",
        );
    }
    for j in 0..dim.min(custom.upper.len()) {
        if !(custom.lower[j] < custom.upper[j]) {
            push(
                diags,
                &format!("problem.custom.lower[{j}]"),
                "lower bound must be < upper bound",
            );
        }
    }
    if !matches!(custom.direction.as_str(), "maximize" | "minimize") {
        push(
            diags,
            "problem.custom.direction",
            "must be 'maximize' or 'minimize'",
        );
    }
    if custom.levels.is_empty() {
        push(
            diags,
            "problem.custom.levels",
            "at least one level required",
        );
    }
    if let Some(bridges) = &custom.bridges {
        if custom.levels.len() >= 1 && bridges.len() != custom.levels.len() - 1 {
            push(
                diags,
                "problem.custom.bridges",
                format!(
                    "needs exactly L-1 = {} entries for {} levels, got {}",
                    custom.levels.len().saturating_sub(1),
                    custom.levels.len(),
                    bridges.len()
                ),
            );
        }
        for (i, b) in bridges.iter().enumerate() {
            if b.degree > 2 {
                push(
                    diags,
                    &format!("problem.custom.bridges[{i}].degree"),
                    "degree must be at most 2",
                );
            }
        }
    }
    for (i, lvl) in custom.levels.iter().enumerate() {
        let at = |field: &str| format!("problem.custom.levels[{i}].{field}");
        if !(lvl.cost > 0.0) {
            push(diags, &at("cost"), "must be positive");
        }
        if !(lvl.walltime > 0.0) {
            push(diags, &at("walltime"), "must be positive");
        }
        match lvl.kind.as_str() {
            "poly" => {
                let degree = lvl.degree.unwrap_or(0);
                if degree > 2 {
                    push(diags, &at("degree"), "degree must be at most 2");
                } else {
                    let want = Poly::n_terms(dim, degree);
                    let got = lvl.coeffs.as_ref().map_or(0, Vec::len);
                    if got != want {
                        push(
                            diags,
                            &at("coeffs"),
                            format!("degree-{degree} poly in {dim} dims needs {want} coefficients, got {got}"),
                        );
                    }
                }
            }
            "gaussian_sum" => match &lvl.components {
                None => push(diags, &at("components"), "required for gaussian_sum levels"),
                Some(comps) => {
                    for (k, g) in comps.iter().enumerate() {
                        if g.center.len() != dim {
                            push(
                                diags,
                                &at(&format!("components[{k}].center")),
                                format!("needs {dim} coordinates"),
                            );
                        }
                        if !(g.sigma > 0.0) {
                            push(
                                diags,
                                &at(&format!("components[{k}].sigma")),
                                "must be positive",
                            );
                        }
                    }
                }
            },
            other => push(diags, &at("kind"), format!("unknown level kind '{other}'")),
        }
        if let Some(t) = &lvl.trust {
            if t.iter().any(|c| *c < 0.0) {
                push(diags, &at("trust"), "coefficients must be non-negative");
            }
        }
        if let Some(f) = &lvl.trust_feature {
            if parse_trust_feature(f).is_none() {
                push(
                    diags,
                    &at("trust_feature"),
                    "expected 'zero' or 'coord:<index>'",
                );
            }
        }
        if let (Some(deg), coeffs) = (lvl.noise_degree, &lvl.noise_coeffs) {
            let want = Poly::n_terms(dim, deg.min(2));
            if deg > 2 {
                push(diags, &at("noise_degree"), "degree must be at most 2");
            } else if coeffs.as_ref().map_or(0, Vec::len) != want {
                push(
                    diags,
                    &at("noise_coeffs"),
                    format!("needs {want} coefficients"),
                );
            }
        }
        if let (Some(mdeg), mcoeffs) = (lvl.cost_multiplier_degree, &lvl.cost_multiplier_coeffs) {
            let want = Poly::n_terms(dim, mdeg.min(2));
            if mdeg > 2 {
                push(
                    diags,
                    &at("cost_multiplier_degree"),
                    "degree must be at most 2",
                );
            } else if mcoeffs.as_ref().map_or(0, Vec::len) != want {
                push(
                    diags,
                    &at("cost_multiplier_coeffs"),
                    format!("needs {want} coefficients"),
                );
            }
        }
        if lvl.feasibility_coeffs.is_some() != lvl.feasibility_offset.is_some() {
            push(
                diags,
                &at("feasibility_coeffs"),
                "feasibility needs both coeffs and offset",
            );
        }
    }
}

fn parse_trust_feature(s: &str) -> Option<TrustFeature> {
    if s == "zero" {
        return Some(TrustFeature::Zero);
    }
    s.strip_prefix("coord:")
        .and_then(|idx| idx.parse::<usize>().ok())
        .map(TrustFeature::Coordinate)
}

fn build_custom_problem(custom: &CustomProblem) -> Result<BenchmarkProblem, ConfigError> {
    let dim = custom.lower.len();
    let domain = Domain::new(custom.lower.clone(), custom.upper.clone())
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    let direction = if custom.direction == "maximize" {
        Direction::Maximize
    } else {
        Direction::Minimize
    };
    let mut levels = Vec::new();
    for lvl in &custom.levels {
        let evaluator = match lvl.kind.as_str() {
            "poly" => LevelEvaluator::Poly {
                poly: Poly::new(
                    dim,
                    lvl.degree.unwrap_or(0),
                    lvl.coeffs.clone().unwrap_or_default(),
                )
                .map_err(|e| ConfigError::Parse(e.to_string()))?,
            },
            _ => LevelEvaluator::GaussianSum {
                components: lvl
                    .components
                    .clone()
                    .unwrap_or_default()
                    .into_iter()
                    .map(|g| GaussComponent {
                        amplitude: g.amplitude,
                        center: g.center,
                        sigma: g.sigma,
                    })
                    .collect(),
            },
        };
        let multiplier = match (&lvl.cost_multiplier_degree, &lvl.cost_multiplier_coeffs) {
            (Some(deg), Some(coeffs)) => Some(
                Poly::new(dim, *deg, coeffs.clone())
                    .map_err(|e| ConfigError::Parse(e.to_string()))?,
            ),
            _ => None,
        };
        let noise = match (&lvl.noise_degree, &lvl.noise_coeffs) {
            (Some(deg), Some(coeffs)) => Some(NoiseField {
                variance_poly: Poly::new(dim, *deg, coeffs.clone())
                    .map_err(|e| ConfigError::Parse(e.to_string()))?,
            }),
            _ => None,
        };
        let feasibility = match (&lvl.feasibility_coeffs, &lvl.feasibility_offset) {
            (Some(coeffs), Some(offset)) => Some(FeasibilityRule::LinearGe {
                coeffs: coeffs.clone(),
                offset: *offset,
            }),
            _ => None,
        };
        levels.push(BenchLevel {
            name: lvl.name.clone(),
            queue_name: lvl.queue.clone(),
            evaluator,
            cost_model: CostModel::new(lvl.cost, lvl.walltime, multiplier)
                .map_err(|e| ConfigError::Parse(e.to_string()))?,
            trust_prior: TrustPrior::new(
                lvl.trust.unwrap_or([0.0; 3]),
                lvl.trust_feature
                    .as_deref()
                    .and_then(parse_trust_feature)
                    .unwrap_or(TrustFeature::Zero),
            )
            .map_err(|e| ConfigError::Parse(e.to_string()))?,
            noise,
            feasibility,
        });
    }
    Ok(BenchmarkProblem {
        name: custom.name.clone(),
        domain,
        direction,
        levels,
        true_optimum: None,
        hidden_constraint: None,
    })
}

/// Validate and turn a parsed file into a runnable campaign configuration.
pub fn build_campaign(cfg: &FileConfig) -> Result<CampaignConfig, ConfigError> {
    let diags = validate_file(cfg);
    if !diags.is_empty() {
        return Err(ConfigError::Invalid(diags));
    }
    let problem = match (&cfg.problem.benchmark, &cfg.problem.custom) {
        (Some(name), None) => bench::by_name(name).expect("validated"),
        (None, Some(custom)) => build_custom_problem(custom)?,
        _ => unreachable!("validated"),
    };
    let goal = if cfg.campaign.goal == "optimize" {
        AcquisitionMode::Optimize
    } else {
        AcquisitionMode::ReduceVariance
    };
    let heuristic = if cfg.campaign.heuristic == "longest_sim" {
        Heuristic::LongestSim
    } else {
        Heuristic::ProportionalSteps
    };
    let clock = match cfg.orchestrator.clock.as_deref() {
        Some("real") => ClockMode::Real,
        _ => ClockMode::Virtual,
    };
    let queue_latencies: BTreeMap<String, f64> = cfg
        .orchestrator
        .queues
        .iter()
        .map(|q| (q.name.clone(), q.latency))
        .collect();
    let bridge_degrees = cfg
        .problem
        .custom
        .as_ref()
        .and_then(|c| c.bridges.as_ref())
        .map(|bs| bs.iter().map(|b| b.degree).collect());

    let mut campaign = CampaignConfig::new(problem, goal);
    campaign.n_init = cfg.campaign.n_init;
    campaign.iterations = cfg.campaign.iterations;
    campaign.wallclock_budget = cfg.campaign.wallclock_budget;
    campaign.resource_budget = cfg.campaign.resource_budget;
    campaign.heuristic = heuristic;
    campaign.seed = cfg.campaign.seed;
    campaign.max_candidates_per_level = cfg.campaign.max_candidates_per_level;
    campaign.max_attempts = cfg.campaign.max_attempts;
    campaign.noise_floor = cfg.campaign.noise_floor;
    campaign.hf_anchors = cfg.campaign.hf_anchors;
    campaign.bridge_degrees = bridge_degrees;
    campaign.clock = clock;
    campaign.time_scale = cfg.orchestrator.time_scale.unwrap_or(1.0);
    campaign.queue_latencies = queue_latencies;
    campaign.resources = cfg
        .resources
        .iter()
        .map(|r| WorkerProfile {
            id: r.id.clone(),
            serviced_queues: r.queues.clone(),
            speed_factor: r.speed,
            failure_rate: r.failure_rate,
        })
        .collect();
    Ok(campaign)
}

/// Load, validate, and build in one step.
pub fn load_campaign(path: &Path) -> Result<(FileConfig, CampaignConfig), ConfigError> {
    let file = load_file(path)?;
    let campaign = build_campaign(&file)?;
    Ok((file, campaign))
}

/// Write a config back as TOML (used to pin the effective configuration,
/// including CLI overrides, inside a campaign directory).
pub fn save_file(cfg: &FileConfig, path: &Path) -> Result<(), ConfigError> {
    let text = toml::to_string_pretty(cfg).map_err(|e| ConfigError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}
