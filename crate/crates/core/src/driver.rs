//! The outer campaign loop: LHS initialization, then iterate
//! plan -> fit -> propose -> select -> dispatch -> collect -> update
//! until the budgets exhaust or the iteration cap is reached.
//!
//! All randomness is derived functionally from the campaign seed, an
//! iteration counter, and a purpose tag, and every loop input is captured in
//! the per-iteration checkpoint, so a campaign resumed from any checkpoint
//! replays byte-identically under the virtual clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    propose_batch, AcquisitionError, AcquisitionMode, CandidateTask, ProposalContext,
};
use crate::allocator::{
    plan_iteration, select_tasks, update_budgets, AllocError, BudgetState, Heuristic,
};
use crate::bench::{BenchmarkProblem, ProblemEvaluator};
use crate::domain::{lhs_design, normalize, DesignPoint, Observation};
use crate::mf::{fit_mf, MfError, MfFitOptions, MfSurrogate, MfTrainingSet};
use crate::orchestrator::{
    run_real, run_simulated, Broker, OrchestratorError, QueueSpec, RealOptions, ResultRecord,
    SimOptions, Task, WorkerProfile,
};
use crate::seeding;

pub const CHECKPOINT_FORMAT: &str = "mfopt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Mf(#[from] MfError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Virtual,
    Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub problem: BenchmarkProblem,
    pub goal: AcquisitionMode,
    pub n_init: usize,
    /// Iteration cap I.
    pub iterations: usize,
    pub wallclock_budget: f64,
    pub resource_budget: f64,
    pub heuristic: Heuristic,
    pub seed: u64,
    pub resources: Vec<WorkerProfile>,
    pub clock: ClockMode,
    /// Real seconds per virtual second in real-clock mode.
    pub time_scale: f64,
    pub max_candidates_per_level: usize,
    pub max_attempts: u32,
    pub noise_floor: f64,
    pub bridge_degrees: Option<Vec<u32>>,
    pub queue_latencies: BTreeMap<String, f64>,
    /// Top-level anchor evaluations during initialization (budget
    /// permitting), taken at the low-level observations with the most
    /// extreme values. Two identify an affine bridge; variance-reduction
    /// campaigns may want three so the residual model exists up front.
    pub hf_anchors: usize,
}

impl CampaignConfig {
    pub fn new(problem: BenchmarkProblem, goal: AcquisitionMode) -> Self {
        CampaignConfig {
            problem,
            goal,
            n_init: 3,
            iterations: 10,
            wallclock_budget: 1e6,
            resource_budget: 100.0,
            heuristic: Heuristic::LongestSim,
            seed: 0,
            resources: Vec::new(),
            clock: ClockMode::Virtual,
            time_scale: 1.0,
            max_candidates_per_level: 4,
            max_attempts: 3,
            noise_floor: 1e-10,
            bridge_degrees: None,
            queue_latencies: BTreeMap::new(),
            hf_anchors: 2,
        }
    }

    /// One worker per queue, speed 1, no failures.
    pub fn with_default_resources(mut self) -> Self {
        self.resources = self
            .problem
            .levels
            .iter()
            .map(|l| WorkerProfile {
                id: format!("worker-{}", l.queue_name),
                serviced_queues: vec![l.queue_name.clone()],
                speed_factor: 1.0,
                failure_rate: 0.0,
            })
            .collect();
        self
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.n_init < 1 {
            return Err(CampaignError::Config("n_init must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(CampaignError::Config("iterations must be >= 1".into()));
        }
        if !(self.wallclock_budget > 0.0) || !(self.resource_budget > 0.0) {
            return Err(CampaignError::Config(
                "wallclock and resource budgets must be positive".into(),
            ));
        }
        if self.resources.is_empty() {
            return Err(CampaignError::Config(
                "at least one resource required".into(),
            ));
        }
        for level in &self.problem.levels {
            let served = self
                .resources
                .iter()
                .any(|r| r.serviced_queues.iter().any(|q| q == &level.queue_name));
            if !served {
                return Err(CampaignError::Config(format!(
                    "queue '{}' has no worker servicing it",
                    level.queue_name
                )));
            }
        }
        let init_estimate = self.n_init as f64 * self.problem.levels[0].cost_model.base_cost;
        if self.resource_budget < init_estimate {
            return Err(CampaignError::Config(format!(
                "resource budget {} cannot cover initialization (about {init_estimate})",
                self.resource_budget
            )));
        }
        Ok(())
    }

    fn digest(&self) -> String {
        seeding::fnv1a_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    fn worker_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in &self.resources {
            for q in &r.serviced_queues {
                *counts.entry(q.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    fn queue_specs(&self) -> Vec<QueueSpec> {
        let mut names: Vec<String> = self
            .problem
            .levels
            .iter()
            .map(|l| l.queue_name.clone())
            .collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .map(|name| QueueSpec {
                latency: self.queue_latencies.get(&name).copied().unwrap_or(0.0),
                name,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectedTask {
    pub m: usize,
    pub level: usize,
    pub point: DesignPoint,
    pub cost: f64,
    pub walltime: f64,
    pub benefit: f64,
    pub task_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub t_i: f64,
    pub b_i: f64,
    pub proposed: usize,
    pub selected: Vec<SelectedTask>,
    pub achieved_benefit: f64,
    /// Exact-solver flag from the selection.
    pub optimal: bool,
    /// Batch makespan actually observed.
    pub spent_t_actual: f64,
    /// Planned cost of the selected tasks.
    pub spent_b_actual: f64,
    /// Best feasible top-level value so far, problem units.
    pub best_so_far: Option<f64>,
    /// Mean top-level predictive variance over the fixed grid, measured on
    /// the surrogate fitted at the start of this iteration.
    pub mean_grid_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerRow {
    pub label: String,
    pub planned_t: f64,
    pub planned_b: f64,
    pub actual_t: f64,
    pub actual_b: f64,
    pub t_remaining_after: f64,
    pub b_remaining_after: f64,
    pub terminated_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "reason")]
pub enum CampaignStatus {
    Completed,
    Failed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestEntry {
    pub point: DesignPoint,
    /// Problem-unit objective value.
    pub value: f64,
    pub task_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpSummary {
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeSummary {
    pub degree: u32,
    pub rho_coeffs: Vec<f64>,
    pub delta_coeffs: Vec<f64>,
    pub has_residual_gp: bool,
    pub residual_var_fallback: f64,
    pub degraded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub base: GpSummary,
    pub bridges: Vec<BridgeSummary>,
    pub trust: Vec<[f64; 3]>,
}

/// One point of the plot-ready surrogate surface (top level, raw coords,
/// problem-unit mean).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub x: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub trust: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    pub status: CampaignStatus,
    pub problem_name: String,
    pub goal: AcquisitionMode,
    pub direction: crate::domain::Direction,
    pub seed: u64,
    pub n_init: usize,
    pub iterations_cap: usize,
    pub wallclock_budget: f64,
    pub resource_budget: f64,
    pub best_per_level: Vec<Option<BestEntry>>,
    pub best: Option<BestEntry>,
    /// Top-level predictive variance at the reported best point.
    pub uncertainty_at_best: Option<f64>,
    pub history: Vec<Observation>,
    pub iterations: Vec<IterationRecord>,
    pub ledger: Vec<LedgerRow>,
    pub surrogate: Option<SurrogateSummary>,
    pub variance_trace: Vec<f64>,
    /// Regular-grid surrogate surface for problems with at most 2 dims.
    pub surface_grid: Vec<SurfaceRow>,
}

/// Everything the loop needs to continue, persisted after every iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignState {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub seed: u64,
    /// Next Algorithm-1 iteration to execute (1-based).
    pub next_iteration: usize,
    pub budget: BudgetState,
    pub history: Vec<Observation>,
    /// History prefix that came from initialization.
    pub init_len: usize,
    pub iterations: Vec<IterationRecord>,
    pub ledger: Vec<LedgerRow>,
    pub task_counter: u64,
    pub status: CampaignStatus,
    pub finished: bool,
}

struct Engine<'a> {
    config: &'a CampaignConfig,
    broker: Broker,
    evaluator: ProblemEvaluator,
    levels: Vec<crate::domain::FidelityLevel>,
    worker_counts: BTreeMap<String, usize>,
    out_dir: Option<PathBuf>,
}

/// Collected batch results plus ids that never resolved within the timeout.
#[derive(Debug, Clone)]
pub struct CollectOutcome {
    pub observations: Vec<Observation>,
    pub unresolved: Vec<String>,
}

/// Poll the result store until every dispatched task resolves or
/// `timeout_secs` of real time passes. Observations come back sorted by
/// task id; failed tasks surface as infeasible observations.
pub fn collect_batch(broker: &Broker, ids: &[String], timeout_secs: f64) -> CollectOutcome {
    let start = std::time::Instant::now();
    loop {
        let records = broker.poll_results(ids);
        if records.len() == ids.len() || start.elapsed().as_secs_f64() >= timeout_secs {
            let mut observations: Vec<Observation> = records
                .iter()
                .map(|r: &ResultRecord| r.observation.clone())
                .collect();
            observations.sort_by(|a, b| a.task_id.cmp(&b.task_id));
            let resolved: std::collections::BTreeSet<&str> =
                records.iter().map(|r| r.task_id.as_str()).collect();
            let unresolved = ids
                .iter()
                .filter(|id| !resolved.contains(id.as_str()))
                .cloned()
                .collect();
            return CollectOutcome {
                observations,
                unresolved,
            };
        }
        std::thread::sleep(std::time::Duration::from_millis(1));
    }
}

impl<'a> Engine<'a> {
    fn new(
        config: &'a CampaignConfig,
        out_dir: Option<&Path>,
        segment: usize,
    ) -> Result<Self, CampaignError> {
        let queues = config.queue_specs();
        let broker = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::create_dir_all(dir.join("checkpoints"))?;
                Broker::with_files(
                    &queues,
                    &dir.join(format!("journal_{segment:02}.jsonl")),
                    &dir.join(format!("results_{segment:02}.jsonl")),
                )?
            }
            None => Broker::in_memory(&queues),
        };
        Ok(Engine {
            config,
            broker,
            evaluator: ProblemEvaluator {
                problem: config.problem.clone(),
                campaign_seed: config.seed,
            },
            levels: config.problem.fidelity_levels(),
            worker_counts: config.worker_counts(),
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }

    /// Dispatch one batch and wait for all of it. Returns the observations
    /// (sorted by task id) and the batch makespan.
    fn execute_batch(
        &self,
        tasks: Vec<Task>,
        sim_seed: u64,
    ) -> Result<(Vec<Observation>, f64), CampaignError> {
        if tasks.is_empty() {
            return Ok((Vec::new(), 0.0));
        }
        // longest-first dispatch makes FIFO claiming approximate the
        // selection's packing certificate
        let mut tasks = tasks;
        tasks.sort_by(|a, b| {
            b.walltime_est
                .total_cmp(&a.walltime_est)
                .then(a.id.cmp(&b.id))
        });
        let ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
        for t in tasks {
            self.broker.enqueue(t, 0.0)?;
        }
        let makespan = match self.config.clock {
            ClockMode::Virtual => {
                let trace = run_simulated(
                    &self.broker,
                    &self.config.resources,
                    &self.evaluator,
                    &SimOptions {
                        seed: sim_seed,
                        max_attempts: self.config.max_attempts,
                        time_limit: f64::INFINITY,
                    },
                );
                trace.makespan
            }
            ClockMode::Real => {
                run_real(
                    &self.broker,
                    &self.config.resources,
                    &self.evaluator,
                    &ids,
                    &RealOptions {
                        seed: sim_seed,
                        max_attempts: self.config.max_attempts,
                        time_scale: self.config.time_scale,
                        time_limit: f64::INFINITY,
                    },
                );
                self.broker
                    .poll_results(&ids)
                    .iter()
                    .map(|r| r.observation.walltime_actual)
                    .fold(0.0, f64::max)
            }
        };
        let collected = collect_batch(&self.broker, &ids, 60.0);
        if !collected.unresolved.is_empty() {
            return Err(CampaignError::Integrity(format!(
                "batch left unresolved tasks: {:?}",
                collected.unresolved
            )));
        }
        Ok((collected.observations, makespan))
    }

    fn write_checkpoint(&self, state: &CampaignState, index: usize) -> Result<(), CampaignError> {
        if let Some(dir) = &self.out_dir {
            let path = dir
                .join("checkpoints")
                .join(format!("checkpoint_{index:04}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(state)?)?;
        }
        Ok(())
    }
}

fn internal_value(config: &CampaignConfig, obs: &Observation) -> f64 {
    config.problem.direction.to_internal(obs.value)
}

/// Feasible observations grouped per level as normalized training data.
fn training_set(
    config: &CampaignConfig,
    history: &[Observation],
) -> Result<MfTrainingSet, CampaignError> {
    let mut data = MfTrainingSet::empty(config.problem.level_count());
    for obs in history.iter().filter(|o| o.feasible) {
        let x = normalize(&obs.point, &config.problem.domain)?;
        data.levels[obs.level].push(x, internal_value(config, obs), obs.noise_var);
    }
    Ok(data)
}

fn repulsion_points(
    config: &CampaignConfig,
    history: &[Observation],
) -> Result<Vec<DesignPoint>, CampaignError> {
    history
        .iter()
        .filter(|o| !o.feasible)
        .map(|o| Ok(normalize(&o.point, &config.problem.domain)?))
        .collect()
}

fn incumbent(config: &CampaignConfig, history: &[Observation]) -> Option<f64> {
    let top = config.problem.top_level();
    let best_top = history
        .iter()
        .filter(|o| o.feasible && o.level == top)
        .map(|o| internal_value(config, o))
        .fold(f64::NEG_INFINITY, f64::max);
    if best_top.is_finite() {
        return Some(best_top);
    }
    let any = history
        .iter()
        .filter(|o| o.feasible)
        .map(|o| internal_value(config, o))
        .fold(f64::NEG_INFINITY, f64::max);
    any.is_finite().then_some(any)
}

/// Fixed grid for the variance trace: 100 points independent of the seed.
fn variance_grid(dim: usize) -> Vec<DesignPoint> {
    match dim {
        1 => (0..100)
            .map(|i| DesignPoint::new(vec![i as f64 / 99.0]))
            .collect(),
        2 => {
            let mut pts = Vec::with_capacity(100);
            for i in 0..10 {
                for j in 0..10 {
                    pts.push(DesignPoint::new(vec![i as f64 / 9.0, j as f64 / 9.0]));
                }
            }
            pts
        }
        d => lhs_design(100, &crate::domain::Domain::unit(d), 0xFEED)
            .expect("n >= 1")
            .into_iter()
            .collect(),
    }
}

fn mean_grid_variance(surrogate: &MfSurrogate, grid: &[DesignPoint]) -> Result<f64, MfError> {
    let top = surrogate.level_count() - 1;
    let mut sum = 0.0;
    for p in grid {
        let (_, v) = surrogate.predict(p, top)?;
        sum += v;
    }
    Ok(sum / grid.len() as f64)
}

/// Fit the surrogate the loop uses at iteration `i`.
///
/// Optimization campaigns refit hyperparameters every iteration. Variance-
/// reduction campaigns fit hyperparameters, bridge coefficients, and
/// structure once on the initialization data and afterwards only recondition
/// on the growing data, which keeps the predictive-variance field provably
/// non-increasing across iterations.
fn fit_for_iteration(
    config: &CampaignConfig,
    state: &CampaignState,
) -> Result<MfSurrogate, CampaignError> {
    let opts = MfFitOptions {
        noise_floor: config.noise_floor,
        bridge_degrees: config.bridge_degrees.clone(),
    };
    let full = training_set(config, &state.history)?;
    match config.goal {
        AcquisitionMode::Optimize => {
            let seed = seeding::derive(config.seed, "fit", state.next_iteration as u64);
            Ok(fit_mf(
                &full,
                trust_of(config),
                &config.problem.domain,
                &opts,
                seed,
            )?)
        }
        AcquisitionMode::ReduceVariance => {
            let init = training_set(config, &state.history[..state.init_len])?;
            let seed = seeding::derive(config.seed, "fit-frozen", 0);
            let frozen = fit_mf(&init, trust_of(config), &config.problem.domain, &opts, seed)?;
            Ok(frozen.refit_conditioning(full)?)
        }
    }
}

fn trust_of(config: &CampaignConfig) -> Vec<crate::domain::TrustPrior> {
    config
        .problem
        .levels
        .iter()
        .map(|l| l.trust_prior.clone())
        .collect()
}

fn fresh_state(config: &CampaignConfig) -> CampaignState {
    CampaignState {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config_digest: config.digest(),
        seed: config.seed,
        next_iteration: 1,
        budget: BudgetState::new(
            config.wallclock_budget,
            config.resource_budget,
            config.iterations,
        ),
        history: Vec::new(),
        init_len: 0,
        iterations: Vec::new(),
        ledger: Vec::new(),
        task_counter: 0,
        status: CampaignStatus::Completed,
        finished: false,
    }
}

fn make_task(config: &CampaignConfig, counter: &mut u64, point: DesignPoint, level: usize) -> Task {
    let id = format!("task-{:06}", *counter);
    *counter += 1;
    let cm = &config.problem.levels[level].cost_model;
    Task::new(
        id,
        config.problem.levels[level].queue_name.clone(),
        point.clone(),
        level,
        cm.walltime(&point),
        cm.cost(&point),
    )
}

/// Initialization: `n_init` LHS evaluations at the lowest level, plus up to
/// two top-level anchors at the LHS points with extreme low-level values so
/// the bridge is identifiable from the first iteration (budget permitting).
fn run_initialization(engine: &Engine<'_>, state: &mut CampaignState) -> Result<(), CampaignError> {
    let config = engine.config;
    let points = lhs_design(
        config.n_init,
        &config.problem.domain,
        seeding::derive(config.seed, "lhs", 0),
    )?;
    let tasks: Vec<Task> = points
        .iter()
        .map(|p| make_task(config, &mut state.task_counter, p.clone(), 0))
        .collect();
    let planned_b: f64 = tasks.iter().map(|t| t.cost).sum();
    let (obs, makespan_lf) =
        engine.execute_batch(tasks, seeding::derive(config.seed, "sim-init", 0))?;
    state.history.extend(obs);

    let mut planned_b_total = planned_b;
    let mut makespan_total = makespan_lf;
    let top = config.problem.top_level();
    if top > 0 {
        let feasible_lf: Vec<&Observation> = state
            .history
            .iter()
            .filter(|o| o.feasible && o.level == 0)
            .collect();
        if !feasible_lf.is_empty() {
            // alternate extremes: best, worst, second-best, second-worst, ...
            let mut ranked = feasible_lf.clone();
            ranked.sort_by(|a, b| internal_value(config, b).total_cmp(&internal_value(config, a)));
            let mut anchor_points = Vec::new();
            let mut front = 0usize;
            let mut back = ranked.len();
            while front < back {
                anchor_points.push(ranked[front].point.clone());
                front += 1;
                if front < back {
                    back -= 1;
                    anchor_points.push(ranked[back].point.clone());
                }
            }
            let hf_cost = config.problem.levels[top].cost_model.base_cost;
            let affordable = ((config.resource_budget - planned_b_total) / hf_cost).floor();
            anchor_points.truncate((affordable.max(0.0) as usize).min(config.hf_anchors));
            if !anchor_points.is_empty() {
                let tasks: Vec<Task> = anchor_points
                    .iter()
                    .map(|p| make_task(config, &mut state.task_counter, p.clone(), top))
                    .collect();
                planned_b_total += tasks.iter().map(|t| t.cost).sum::<f64>();
                let (obs, makespan_hf) =
                    engine.execute_batch(tasks, seeding::derive(config.seed, "sim-init", 1))?;
                makespan_total += makespan_hf;
                state.history.extend(obs);
            }
        }
    }
    state.init_len = state.history.len();

    if !state.history.iter().any(|o| o.feasible) {
        state.status = CampaignStatus::Failed(
            "all initial evaluations were infeasible; nothing to fit a surrogate on".into(),
        );
        state.finished = true;
    }

    state.budget.t_remaining -= makespan_total;
    state.budget.b_remaining -= planned_b_total;
    state.ledger.push(LedgerRow {
        label: "init".into(),
        planned_t: makespan_total,
        planned_b: planned_b_total,
        actual_t: makespan_total,
        actual_b: planned_b_total,
        t_remaining_after: state.budget.t_remaining,
        b_remaining_after: state.budget.b_remaining,
        terminated_after: state.budget.terminated(),
    });
    Ok(())
}

fn run_loop(engine: &Engine<'_>, state: &mut CampaignState) -> Result<(), CampaignError> {
    let config = engine.config;
    let grid = variance_grid(config.problem.domain.dim());
    while !state.finished && state.next_iteration <= config.iterations && !state.budget.terminated()
    {
        let i = state.next_iteration;
        state.budget.iteration = i;
        let plan = match plan_iteration(
            &state.budget,
            &engine.levels,
            &config.problem.domain,
            config.heuristic,
            config.max_candidates_per_level,
        ) {
            Ok(p) => p,
            Err(AllocError::Terminated { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        state.budget.t_i = plan.t_i;
        state.budget.b_i = plan.b_i;

        let surrogate = fit_for_iteration(config, state)?;
        let grid_variance = mean_grid_variance(&surrogate, &grid)?;
        let repulsion = repulsion_points(config, &state.history)?;
        let ctx = ProposalContext {
            domain: &config.problem.domain,
            levels: &engine.levels,
            incumbent: incumbent(config, &state.history),
            repulsion: &repulsion,
            seed: seeding::derive(config.seed, "propose-batch", i as u64),
        };
        let candidates: Vec<CandidateTask> =
            match propose_batch(&surrogate, &ctx, &plan.counts, config.goal) {
                Ok(c) => c,
                // a fully repelled level leaves nothing to run this round;
                // the budget still ticks per the algorithm
                Err(AcquisitionError::NoCandidates { .. }) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
        let selection = select_tasks(
            &candidates,
            plan.t_i,
            plan.b_i,
            &engine.levels,
            &engine.worker_counts,
        )?;

        let mut selected_tasks = Vec::new();
        let mut tasks = Vec::new();
        for c in &candidates {
            if selection.decisions[&(c.m, c.level)] {
                let task = make_task(config, &mut state.task_counter, c.point.clone(), c.level);
                selected_tasks.push(SelectedTask {
                    m: c.m,
                    level: c.level,
                    point: c.point.clone(),
                    cost: c.cost,
                    walltime: c.walltime,
                    benefit: c.benefit,
                    task_id: task.id.clone(),
                });
                tasks.push(task);
            }
        }
        let (obs, makespan) =
            engine.execute_batch(tasks, seeding::derive(config.seed, "sim", i as u64))?;
        state.history.extend(obs);

        let best_so_far =
            incumbent(config, &state.history).map(|v| config.problem.direction.to_raw(v));
        state.iterations.push(IterationRecord {
            iteration: i,
            t_i: plan.t_i,
            b_i: plan.b_i,
            proposed: candidates.len(),
            selected: selected_tasks,
            achieved_benefit: selection.total_benefit,
            optimal: selection.optimal,
            spent_t_actual: makespan,
            spent_b_actual: selection.total_cost,
            best_so_far,
            mean_grid_variance: grid_variance,
        });

        // Algorithm-1 decrement: planned allowances, not actual spend
        state.budget = update_budgets(&state.budget, plan.t_i, plan.b_i);
        state.next_iteration = i + 1;
        state.ledger.push(LedgerRow {
            label: format!("iter-{i}"),
            planned_t: plan.t_i,
            planned_b: plan.b_i,
            actual_t: makespan,
            actual_b: selection.total_cost,
            t_remaining_after: state.budget.t_remaining,
            b_remaining_after: state.budget.b_remaining,
            terminated_after: state.budget.terminated(),
        });
        engine.write_checkpoint(state, i)?;
        if state.budget.terminated() {
            break;
        }
    }
    state.finished = true;
    Ok(())
}

fn best_entries(
    config: &CampaignConfig,
    history: &[Observation],
) -> (Vec<Option<BestEntry>>, Option<BestEntry>) {
    let mut per_level: Vec<Option<BestEntry>> = vec![None; config.problem.level_count()];
    for obs in history.iter().filter(|o| o.feasible) {
        let v = internal_value(config, obs);
        let slot = &mut per_level[obs.level];
        let better = slot
            .as_ref()
            .map_or(true, |b| v > config.problem.direction.to_internal(b.value));
        if better {
            *slot = Some(BestEntry {
                point: obs.point.clone(),
                value: obs.value,
                task_id: obs.task_id.clone(),
            });
        }
    }
    let top = config.problem.top_level();
    let best = per_level[top]
        .clone()
        .or_else(|| per_level.iter().rev().flatten().next().cloned());
    (per_level, best)
}

/// Build the final report from a finished (or failed) campaign state. The
/// final surrogate refit is deterministic in (history, seed), so rebuilding
/// a report from a checkpoint gives byte-identical output.
pub fn rebuild_report(
    config: &CampaignConfig,
    state: &CampaignState,
) -> Result<CampaignReport, CampaignError> {
    let (best_per_level, best) = best_entries(config, &state.history);
    let mut surrogate_summary = None;
    let mut uncertainty_at_best = None;
    let mut surface_grid = Vec::new();
    if state.history.iter().any(|o| o.feasible && o.level == 0) {
        let surrogate = fit_for_iteration(config, state)?;
        if let Some(b) = &best {
            let x = normalize(&b.point, &config.problem.domain)?;
            let (_, v) = surrogate.predict(&x, config.problem.top_level())?;
            uncertainty_at_best = Some(v);
        }
        surface_grid = surface_rows(config, &surrogate)?;
        surrogate_summary = Some(SurrogateSummary {
            base: GpSummary {
                signal_var: surrogate.base().params.signal_var,
                lengthscales: surrogate.base().params.lengthscales.clone(),
                noise_var: surrogate.base().params.noise_var,
                n_train: surrogate.base().n_train(),
            },
            bridges: surrogate
                .bridges()
                .iter()
                .map(|b| BridgeSummary {
                    degree: b.degree,
                    rho_coeffs: b.rho.coeffs.clone(),
                    delta_coeffs: b.delta.coeffs.clone(),
                    has_residual_gp: b.residual_gp.is_some(),
                    residual_var_fallback: b.residual_var_fallback,
                    degraded: b.degraded,
                })
                .collect(),
            trust: surrogate.trust().iter().map(|t| t.coeffs).collect(),
        });
    }
    Ok(CampaignReport {
        status: state.status.clone(),
        problem_name: config.problem.name.clone(),
        goal: config.goal,
        direction: config.problem.direction,
        seed: config.seed,
        n_init: config.n_init,
        iterations_cap: config.iterations,
        wallclock_budget: config.wallclock_budget,
        resource_budget: config.resource_budget,
        best_per_level,
        best,
        uncertainty_at_best,
        history: state.history.clone(),
        iterations: state.iterations.clone(),
        ledger: state.ledger.clone(),
        surrogate: surrogate_summary,
        variance_trace: state
            .iterations
            .iter()
            .map(|r| r.mean_grid_variance)
            .collect(),
        surface_grid,
    })
}

/// Top-level surrogate surface on a regular grid (41 points per axis),
/// emitted only for 1- and 2-dimensional problems.
fn surface_rows(
    config: &CampaignConfig,
    surrogate: &MfSurrogate,
) -> Result<Vec<SurfaceRow>, CampaignError> {
    let dim = config.problem.domain.dim();
    if dim > 2 {
        return Ok(Vec::new());
    }
    let top = config.problem.top_level();
    let axis: Vec<f64> = (0..41).map(|i| i as f64 / 40.0).collect();
    let mut rows = Vec::new();
    let points: Vec<Vec<f64>> = if dim == 1 {
        axis.iter().map(|x| vec![*x]).collect()
    } else {
        let mut pts = Vec::with_capacity(axis.len() * axis.len());
        for x in &axis {
            for y in &axis {
                pts.push(vec![*x, *y]);
            }
        }
        pts
    };
    for unit in points {
        let norm = DesignPoint::new(unit);
        let raw = crate::domain::denormalize(&norm, &config.problem.domain)?;
        let (mean, variance) = surrogate.predict(&norm, top)?;
        let trust = crate::mf::trust_variance(&config.problem.levels[top].trust_prior, &raw);
        rows.push(SurfaceRow {
            x: raw.coords,
            mean: config.problem.direction.to_raw(mean),
            variance,
            trust,
        });
    }
    Ok(rows)
}

/// Run a campaign from scratch. With an output directory, the queue journal,
/// result store, per-iteration checkpoints, and report files all land there.
pub fn run_campaign(
    config: &CampaignConfig,
    out_dir: Option<&Path>,
) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let engine = Engine::new(config, out_dir, 0)?;
    let mut state = fresh_state(config);
    run_initialization(&engine, &mut state)?;
    engine.write_checkpoint(&state, 0)?;
    if !state.finished {
        run_loop(&engine, &mut state)?;
    }
    state.finished = true;
    engine.write_checkpoint(&state, state.next_iteration.max(1) - 1)?;
    let report = rebuild_report(config, &state)?;
    if let Some(dir) = out_dir {
        crate::report::write_report(&report, dir)?;
    }
    Ok(report)
}

/// Load a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<CampaignState, CampaignError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CampaignError::Integrity(format!("cannot read {}: {e}", path.display())))?;
    let state: CampaignState = serde_json::from_str(&text).map_err(|e| {
        CampaignError::Integrity(format!("corrupt checkpoint {}: {e}", path.display()))
    })?;
    if state.format != CHECKPOINT_FORMAT || state.version != CHECKPOINT_VERSION {
        return Err(CampaignError::Integrity(format!(
            "unsupported checkpoint format {}/{}",
            state.format, state.version
        )));
    }
    Ok(state)
}

/// Most recent checkpoint in a campaign directory.
pub fn latest_checkpoint(dir: &Path) -> Result<(usize, PathBuf), CampaignError> {
    let ckpt_dir = dir.join("checkpoints");
    let mut best: Option<(usize, PathBuf)> = None;
    let entries = std::fs::read_dir(&ckpt_dir).map_err(|_| {
        CampaignError::Integrity(format!("no checkpoints directory in {}", dir.display()))
    })?;
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(num) = name
            .strip_prefix("checkpoint_")
            .and_then(|s| s.strip_suffix(".json"))
        {
            if let Ok(idx) = num.parse::<usize>() {
                if best.as_ref().map_or(true, |(b, _)| idx > *b) {
                    best = Some((idx, path));
                }
            }
        }
    }
    best.ok_or_else(|| {
        CampaignError::Integrity(format!("no checkpoints found in {}", dir.display()))
    })
}

/// Continue a campaign from a checkpoint (the latest, unless an index is
/// given). Appends new journal/result segments next to the old ones.
pub fn resume_campaign(
    config: &CampaignConfig,
    dir: &Path,
    checkpoint: Option<usize>,
) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let path = match checkpoint {
        Some(idx) => dir
            .join("checkpoints")
            .join(format!("checkpoint_{idx:04}.json")),
        None => latest_checkpoint(dir)?.1,
    };
    let mut state = load_checkpoint(&path)?;
    if state.config_digest != config.digest() {
        return Err(CampaignError::Integrity(
            "checkpoint was produced by a different configuration".into(),
        ));
    }
    // findings from iterations after this checkpoint are discarded
    state.finished = matches!(state.status, CampaignStatus::Failed(_));
    let segment = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| {
            e.file_name().to_str().map_or(false, |n| {
                n.starts_with("journal_") && n.ends_with(".jsonl")
            })
        })
        .count();
    let engine = Engine::new(config, Some(dir), segment)?;
    if !state.finished {
        run_loop(&engine, &mut state)?;
    }
    state.finished = true;
    let report = rebuild_report(config, &state)?;
    crate::report::write_report(&report, dir)?;
    Ok(report)
}
