//! Per-iteration task selection and budget bookkeeping.
//!
//! Each iteration solves a two-constraint 0/1 selection: maximize the summed
//! benefit of the chosen candidates subject to (a) the resource budget and
//! (b) a makespan bound, where the selected tasks of each queue are packed
//! longest-first onto that queue's workers. Up to 24 candidates the solve is
//! exact (depth-first branch and bound with a fractional bound); beyond that
//! a greedy benefit-density pass with 1-swap improvement is used.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::CandidateTask;
use crate::domain::FidelityLevel;

const EXACT_LIMIT: usize = 24;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("campaign budgets exhausted (T_r = {t_remaining}, B_r = {b_remaining})")]
    Terminated { t_remaining: f64, b_remaining: f64 },
    #[error("candidate at level {level} has no matching fidelity level")]
    UnknownLevel { level: usize },
}

/// Remaining and per-iteration budgets, Algorithm-1 style. The campaign
/// terminates once either remaining budget goes negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub t_remaining: f64,
    pub b_remaining: f64,
    /// Total iteration cap I.
    pub total_iterations: usize,
    /// Current iteration, 1-based.
    pub iteration: usize,
    /// Allowances assigned to the current iteration.
    pub t_i: f64,
    pub b_i: f64,
}

impl BudgetState {
    pub fn new(t_total: f64, b_total: f64, total_iterations: usize) -> Self {
        Self {
            t_remaining: t_total,
            b_remaining: b_total,
            total_iterations,
            iteration: 1,
            t_i: 0.0,
            b_i: 0.0,
        }
    }

    /// Algorithm-1 break condition: a remaining budget went negative.
    pub fn terminated(&self) -> bool {
        self.t_remaining < 0.0 || self.b_remaining < 0.0
    }
}

/// Batch-size heuristic for assigning the per-iteration allowances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    /// T_i equals the longest single simulation; the resource budget is
    /// split evenly over the estimated remaining batches T_r / T_i.
    LongestSim,
    /// Equal fractions of both remaining budgets over remaining iterations.
    ProportionalSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub t_i: f64,
    pub b_i: f64,
    /// Candidate count to propose per level.
    pub counts: Vec<usize>,
}

/// Assign this iteration's allowances and per-level candidate counts.
/// Errors with `Terminated` when either remaining budget is already spent.
pub fn plan_iteration(
    state: &BudgetState,
    levels: &[FidelityLevel],
    domain: &crate::domain::Domain,
    heuristic: Heuristic,
    max_per_level: usize,
) -> Result<IterationPlan, AllocError> {
    if state.terminated() || state.t_remaining <= 0.0 || state.b_remaining <= 0.0 {
        return Err(AllocError::Terminated {
            t_remaining: state.t_remaining,
            b_remaining: state.b_remaining,
        });
    }
    let (t_i, b_i) = match heuristic {
        Heuristic::LongestSim => {
            let longest = levels
                .iter()
                .map(|l| l.cost_model.walltime_bound(domain))
                .fold(0.0, f64::max);
            let n_hat = (state.t_remaining / longest).floor().max(1.0);
            (longest.min(state.t_remaining), state.b_remaining / n_hat)
        }
        Heuristic::ProportionalSteps => {
            let k = (state.total_iterations + 1)
                .saturating_sub(state.iteration)
                .max(1) as f64;
            (state.t_remaining / k, state.b_remaining / k)
        }
    };
    let counts = levels
        .iter()
        .map(|l| ((b_i / l.cost_model.base_cost).ceil() as usize).clamp(0, max_per_level))
        .collect();
    Ok(IterationPlan { t_i, b_i, counts })
}

/// Decrement the remaining budgets, advance the iteration counter. The
/// driver passes the planned allowances (T_i, B_i) here; actual spend is
/// tracked separately in the campaign ledger.
pub fn update_budgets(state: &BudgetState, spent_t: f64, spent_b: f64) -> BudgetState {
    BudgetState {
        t_remaining: state.t_remaining - spent_t,
        b_remaining: state.b_remaining - spent_b,
        total_iterations: state.total_iterations,
        iteration: state.iteration + 1,
        t_i: state.t_i,
        b_i: state.b_i,
    }
}

/// Outcome of one iteration's discrete selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionDecision {
    /// (m, level) -> chosen flag, covering every candidate.
    pub decisions: BTreeMap<(usize, usize), bool>,
    pub total_benefit: f64,
    pub total_cost: f64,
    /// Makespan of the selected set under longest-first packing.
    pub total_walltime: f64,
    /// True when the exact solver ran; false for the greedy fallback.
    pub optimal: bool,
}

impl SelectionDecision {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.decisions
            .iter()
            .filter(|(_, chosen)| **chosen)
            .map(|((m, _), _)| *m)
            .collect()
    }
}

/// Longest-processing-time packing of walltimes onto `workers` machines;
/// returns the resulting makespan. Zero workers make any non-empty set
/// infeasible (infinite makespan).
fn lpt_makespan(walltimes: &mut Vec<f64>, workers: usize) -> f64 {
    if walltimes.is_empty() {
        return 0.0;
    }
    if workers == 0 {
        return f64::INFINITY;
    }
    walltimes.sort_by(|a, b| b.total_cmp(a));
    let mut loads = vec![0.0f64; workers];
    for w in walltimes.iter() {
        let min = loads
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("workers > 0");
        loads[min] += w;
    }
    loads.iter().copied().fold(0.0, f64::max)
}

/// Makespan of a candidate subset: LPT per queue, max across queues.
fn selection_makespan(
    chosen: &[usize],
    cands: &[CandidateTask],
    levels: &[FidelityLevel],
    worker_counts: &BTreeMap<String, usize>,
) -> f64 {
    let mut per_queue: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &i in chosen {
        let queue = levels[cands[i].level].queue_name.as_str();
        per_queue.entry(queue).or_default().push(cands[i].walltime);
    }
    let mut makespan = 0.0f64;
    for (queue, mut times) in per_queue {
        let workers = worker_counts.get(queue).copied().unwrap_or(0);
        makespan = makespan.max(lpt_makespan(&mut times, workers));
    }
    makespan
}

/// Select the subset of candidates maximizing summed benefit subject to the
/// resource budget `b_i` and the makespan bound `t_i` given per-queue worker
/// counts. Ties prefer higher benefit, then lower level, then lower index.
pub fn select_tasks(
    candidates: &[CandidateTask],
    t_i: f64,
    b_i: f64,
    levels: &[FidelityLevel],
    worker_counts: &BTreeMap<String, usize>,
) -> Result<SelectionDecision, AllocError> {
    for c in candidates {
        if c.level >= levels.len() {
            return Err(AllocError::UnknownLevel { level: c.level });
        }
    }
    // processing order: benefit density, ties to higher benefit, lower level
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = &candidates[a];
        let cb = &candidates[b];
        (cb.benefit / cb.cost)
            .total_cmp(&(ca.benefit / ca.cost))
            .then(cb.benefit.total_cmp(&ca.benefit))
            .then(ca.level.cmp(&cb.level))
            .then(ca.m.cmp(&cb.m))
    });

    let exact = candidates.len() <= EXACT_LIMIT;
    let chosen = if exact {
        branch_and_bound(candidates, &order, t_i, b_i, levels, worker_counts)
    } else {
        greedy_with_swaps(candidates, &order, t_i, b_i, levels, worker_counts)
    };

    let mut decisions = BTreeMap::new();
    for c in candidates {
        decisions.insert((c.m, c.level), false);
    }
    let mut total_benefit = 0.0;
    let mut total_cost = 0.0;
    // canonical accumulation order so equal selections always produce
    // bit-identical totals
    let mut sorted_chosen = chosen.clone();
    sorted_chosen.sort_unstable();
    for &i in &sorted_chosen {
        decisions.insert((candidates[i].m, candidates[i].level), true);
        total_benefit += candidates[i].benefit;
        total_cost += candidates[i].cost;
    }
    let total_walltime = selection_makespan(&sorted_chosen, candidates, levels, worker_counts);
    Ok(SelectionDecision {
        decisions,
        total_benefit,
        total_cost,
        total_walltime,
        optimal: exact,
    })
}

fn feasible(
    chosen: &[usize],
    cands: &[CandidateTask],
    t_i: f64,
    b_i: f64,
    levels: &[FidelityLevel],
    workers: &BTreeMap<String, usize>,
) -> bool {
    let cost: f64 = chosen.iter().map(|&i| cands[i].cost).sum();
    cost <= b_i && selection_makespan(chosen, cands, levels, workers) <= t_i
}

fn branch_and_bound(
    cands: &[CandidateTask],
    order: &[usize],
    t_i: f64,
    b_i: f64,
    levels: &[FidelityLevel],
    workers: &BTreeMap<String, usize>,
) -> Vec<usize> {
    struct Ctx<'a> {
        cands: &'a [CandidateTask],
        order: &'a [usize],
        t_i: f64,
        b_i: f64,
        levels: &'a [FidelityLevel],
        workers: &'a BTreeMap<String, usize>,
        best_benefit: f64,
        best_set: Vec<usize>,
    }

    /// Fractional knapsack bound over the density-sorted tail (makespan
    /// relaxed), a valid upper bound for any completion of the prefix.
    fn bound(ctx: &Ctx<'_>, pos: usize, benefit: f64, cost: f64) -> f64 {
        let mut b = benefit;
        let mut room = ctx.b_i - cost;
        for &i in &ctx.order[pos..] {
            let c = &ctx.cands[i];
            if c.cost <= room {
                room -= c.cost;
                b += c.benefit;
            } else {
                if room > 0.0 && c.cost > 0.0 {
                    b += c.benefit * (room / c.cost);
                }
                break;
            }
        }
        b
    }

    fn dfs(ctx: &mut Ctx<'_>, pos: usize, chosen: &mut Vec<usize>, benefit: f64, cost: f64) {
        if benefit > ctx.best_benefit {
            ctx.best_benefit = benefit;
            ctx.best_set = chosen.clone();
        }
        if pos == ctx.order.len() {
            return;
        }
        if bound(ctx, pos, benefit, cost) <= ctx.best_benefit {
            return;
        }
        let idx = ctx.order[pos];
        let c = &ctx.cands[idx];
        // include branch: resource check is cheap, makespan check relies on
        // LPT monotonicity under task addition
        if cost + c.cost <= ctx.b_i {
            chosen.push(idx);
            if selection_makespan(chosen, ctx.cands, ctx.levels, ctx.workers) <= ctx.t_i {
                dfs(ctx, pos + 1, chosen, benefit + c.benefit, cost + c.cost);
            }
            chosen.pop();
        }
        dfs(ctx, pos + 1, chosen, benefit, cost);
    }

    let mut ctx = Ctx {
        cands,
        order,
        t_i,
        b_i,
        levels,
        workers,
        best_benefit: 0.0,
        best_set: Vec::new(),
    };
    let mut scratch = Vec::new();
    dfs(&mut ctx, 0, &mut scratch, 0.0, 0.0);
    ctx.best_set
}

fn greedy_with_swaps(
    cands: &[CandidateTask],
    order: &[usize],
    t_i: f64,
    b_i: f64,
    levels: &[FidelityLevel],
    workers: &BTreeMap<String, usize>,
) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for &i in order {
        chosen.push(i);
        if !feasible(&chosen, cands, t_i, b_i, levels, workers) {
            chosen.pop();
        }
    }
    // 1-swap improvement: additions first, then pairwise swaps
    for _pass in 0..50 {
        let mut improved = false;
        for i in 0..cands.len() {
            if chosen.contains(&i) {
                continue;
            }
            chosen.push(i);
            if feasible(&chosen, cands, t_i, b_i, levels, workers) {
                improved = true;
            } else {
                chosen.pop();
            }
        }
        let current: f64 = chosen.iter().map(|&i| cands[i].benefit).sum();
        'outer: for si in 0..chosen.len() {
            for u in 0..cands.len() {
                if chosen.contains(&u) {
                    continue;
                }
                let mut trial = chosen.clone();
                trial[si] = u;
                let trial_benefit: f64 = trial.iter().map(|&i| cands[i].benefit).sum();
                if trial_benefit > current && feasible(&trial, cands, t_i, b_i, levels, workers) {
                    chosen = trial;
                    improved = true;
                    break 'outer;
                }
            }
        }
        if !improved {
            break;
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CostModel, DesignPoint, TrustPrior};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lvl(index: usize, queue: &str, cost: f64, walltime: f64) -> FidelityLevel {
        FidelityLevel {
            index,
            name: format!("l{index}"),
            cost_model: CostModel::fixed(cost, walltime).unwrap(),
            trust_prior: TrustPrior::zero(),
            feasibility: None,
            queue_name: queue.into(),
        }
    }

    fn cand(m: usize, level: usize, benefit: f64, cost: f64, walltime: f64) -> CandidateTask {
        CandidateTask {
            m,
            level,
            point: DesignPoint::new(vec![0.5]),
            point_norm: DesignPoint::new(vec![0.5]),
            acq_value: benefit * cost,
            cost,
            walltime,
            benefit,
        }
    }

    fn workers(counts: &[(&str, usize)]) -> BTreeMap<String, usize> {
        counts.iter().map(|(q, n)| (q.to_string(), *n)).collect()
    }

    // Independent oracle: full subset enumeration with its own makespan rule.
    fn oracle(
        cands: &[CandidateTask],
        t_i: f64,
        b_i: f64,
        levels: &[FidelityLevel],
        w: &BTreeMap<String, usize>,
    ) -> f64 {
        let n = cands.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            let mut cost = 0.0;
            let mut benefit = 0.0;
            let mut per_queue: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    cost += cands[i].cost;
                    benefit += cands[i].benefit;
                    per_queue
                        .entry(levels[cands[i].level].queue_name.as_str())
                        .or_default()
                        .push(cands[i].walltime);
                }
            }
            if cost > b_i {
                continue;
            }
            let mut ok = true;
            for (q, mut times) in per_queue {
                let nw = w.get(q).copied().unwrap_or(0);
                if nw == 0 {
                    ok = false;
                    break;
                }
                times.sort_by(|a, b| b.total_cmp(a));
                let mut loads = vec![0.0f64; nw];
                for t in times {
                    let mi = loads
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0;
                    loads[mi] += t;
                }
                if loads.iter().cloned().fold(0.0, f64::max) > t_i {
                    ok = false;
                    break;
                }
            }
            if ok && benefit > best {
                best = benefit;
            }
        }
        best
    }

    #[test]
    fn single_candidate_selected() {
        let levels = [lvl(0, "q", 1.0, 1.0)];
        let c = [cand(0, 0, 2.5, 1.0, 1.0)];
        let d = select_tasks(&c, 10.0, 10.0, &levels, &workers(&[("q", 1)])).unwrap();
        assert_eq!(d.selected_indices(), vec![0]);
        assert_eq!(d.total_benefit, 2.5);
        assert!(d.optimal);
    }

    #[test]
    fn dominance_when_budget_fits_one() {
        let levels = [lvl(0, "q", 1.0, 1.0)];
        let c = [cand(0, 0, 3.0, 10.0, 1.0), cand(1, 0, 2.0, 10.0, 1.0)];
        let d = select_tasks(&c, 100.0, 10.0, &levels, &workers(&[("q", 2)])).unwrap();
        assert_eq!(d.selected_indices(), vec![0]);
        assert_eq!(d.total_benefit, 3.0);
    }

    #[test]
    fn empty_selection_is_valid() {
        let levels = [lvl(0, "q", 5.0, 5.0)];
        let c = [cand(0, 0, 1.0, 5.0, 5.0)];
        let d = select_tasks(&c, 1.0, 1.0, &levels, &workers(&[("q", 1)])).unwrap();
        assert!(d.selected_indices().is_empty());
        assert_eq!(d.total_benefit, 0.0);
        assert_eq!(d.total_walltime, 0.0);
    }

    #[test]
    fn exact_matches_enumeration_oracle() {
        let levels = [lvl(0, "a", 1.0, 1.0), lvl(1, "b", 1.0, 1.0)];
        let w = workers(&[("a", 1), ("b", 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..200 {
            let n = 1 + (rng.gen::<u32>() % 6) as usize;
            let cands: Vec<CandidateTask> = (0..n)
                .map(|m| {
                    // dyadic values keep float sums exact in any order
                    let benefit = (1 + rng.gen::<u32>() % 512) as f64 / 256.0;
                    let cost = (1 + rng.gen::<u32>() % 64) as f64 / 16.0;
                    let wall = (1 + rng.gen::<u32>() % 64) as f64 / 16.0;
                    cand(m, (rng.gen::<u32>() % 2) as usize, benefit, cost, wall)
                })
                .collect();
            let t_i = (1 + rng.gen::<u32>() % 128) as f64 / 16.0;
            let b_i = (1 + rng.gen::<u32>() % 128) as f64 / 16.0;
            let d = select_tasks(&cands, t_i, b_i, &levels, &w).unwrap();
            let want = oracle(&cands, t_i, b_i, &levels, &w);
            assert_eq!(d.total_benefit, want, "trial {trial}");
            assert!(d.total_cost <= b_i);
            assert!(d.total_walltime <= t_i);
        }
    }

    #[test]
    fn heuristic_mode_beats_or_equals_pure_greedy() {
        let levels = [lvl(0, "q", 1.0, 1.0)];
        let w = workers(&[("q", 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let n = 30; // above the exact limit
            let cands: Vec<CandidateTask> = (0..n)
                .map(|m| {
                    cand(
                        m,
                        0,
                        (1 + rng.gen::<u32>() % 512) as f64 / 256.0,
                        (1 + rng.gen::<u32>() % 64) as f64 / 16.0,
                        (1 + rng.gen::<u32>() % 64) as f64 / 16.0,
                    )
                })
                .collect();
            let t_i = 8.0;
            let b_i = 10.0;
            let d = select_tasks(&cands, t_i, b_i, &levels, &w).unwrap();
            assert!(!d.optimal);

            // pure greedy reference
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                (cands[b].benefit / cands[b].cost).total_cmp(&(cands[a].benefit / cands[a].cost))
            });
            let mut chosen: Vec<usize> = Vec::new();
            for i in order {
                chosen.push(i);
                if !feasible(&chosen, &cands, t_i, b_i, &levels, &w) {
                    chosen.pop();
                }
            }
            let greedy_benefit: f64 = chosen.iter().map(|&i| cands[i].benefit).sum();
            assert!(d.total_benefit >= greedy_benefit - 1e-12);
            assert!(d.total_cost <= b_i && d.total_walltime <= t_i);
        }
    }

    #[test]
    fn benefit_scaling_leaves_selection_unchanged() {
        let levels = [lvl(0, "q", 1.0, 1.0)];
        let w = workers(&[("q", 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for scale in [2.0f64, 4.0, 0.5, 3.0] {
            for _ in 0..50 {
                let n = 8;
                let cands: Vec<CandidateTask> = (0..n)
                    .map(|m| {
                        cand(
                            m,
                            0,
                            (1 + rng.gen::<u32>() % 64) as f64 / 16.0,
                            (1 + rng.gen::<u32>() % 16) as f64 / 4.0,
                            (1 + rng.gen::<u32>() % 16) as f64 / 4.0,
                        )
                    })
                    .collect();
                let scaled: Vec<CandidateTask> = cands
                    .iter()
                    .map(|c| CandidateTask {
                        benefit: c.benefit * scale,
                        ..c.clone()
                    })
                    .collect();
                let d1 = select_tasks(&cands, 3.0, 5.0, &levels, &w).unwrap();
                let d2 = select_tasks(&scaled, 3.0, 5.0, &levels, &w).unwrap();
                assert_eq!(d1.selected_indices(), d2.selected_indices());
            }
        }
    }

    #[test]
    fn plan_longest_sim_heuristic() {
        let levels = [lvl(0, "a", 1.0, 5.0), lvl(1, "b", 4.0, 25.0)];
        let state = BudgetState {
            t_remaining: 100.0,
            b_remaining: 12.0,
            total_iterations: 10,
            iteration: 1,
            t_i: 0.0,
            b_i: 0.0,
        };
        let plan = plan_iteration(
            &state,
            &levels,
            &crate::domain::Domain::unit(1),
            Heuristic::LongestSim,
            100,
        )
        .unwrap();
        assert_eq!(plan.t_i, 25.0);
        assert_eq!(plan.b_i, 3.0); // n_hat = 4
                                   // with B_i = 3: ceil(3/1) = 3, ceil(3/4) = 1
        assert_eq!(plan.counts, vec![3, 1]);
    }

    #[test]
    fn plan_counts_example() {
        // B_i = 4 from B_r = 12, n_hat = 3
        let levels = [lvl(0, "a", 1.0, 4.0), lvl(1, "b", 4.0, 30.0)];
        let state = BudgetState {
            t_remaining: 100.0,
            b_remaining: 12.0,
            total_iterations: 10,
            iteration: 1,
            t_i: 0.0,
            b_i: 0.0,
        };
        let plan = plan_iteration(
            &state,
            &levels,
            &crate::domain::Domain::unit(1),
            Heuristic::LongestSim,
            100,
        )
        .unwrap();
        assert_eq!(plan.b_i, 4.0);
        assert_eq!(plan.counts, vec![4, 1]);
    }

    #[test]
    fn plan_proportional_last_iteration_takes_all() {
        let levels = [lvl(0, "a", 1.0, 2.0)];
        let state = BudgetState {
            t_remaining: 42.0,
            b_remaining: 17.0,
            total_iterations: 10,
            iteration: 10,
            t_i: 0.0,
            b_i: 0.0,
        };
        let plan = plan_iteration(
            &state,
            &levels,
            &crate::domain::Domain::unit(1),
            Heuristic::ProportionalSteps,
            100,
        )
        .unwrap();
        assert_eq!(plan.t_i, 42.0);
        assert_eq!(plan.b_i, 17.0);
    }

    #[test]
    fn plan_terminates_on_empty_budget() {
        let levels = [lvl(0, "a", 1.0, 2.0)];
        let state = BudgetState {
            t_remaining: 0.0,
            b_remaining: 5.0,
            total_iterations: 3,
            iteration: 2,
            t_i: 0.0,
            b_i: 0.0,
        };
        assert!(matches!(
            plan_iteration(
                &state,
                &levels,
                &crate::domain::Domain::unit(1),
                Heuristic::LongestSim,
                4
            ),
            Err(AllocError::Terminated { .. })
        ));
    }

    #[test]
    fn update_budget_arithmetic() {
        let s = BudgetState::new(10.0, 10.0, 5);
        let s2 = update_budgets(&s, 3.0, 4.0);
        assert_eq!((s2.t_remaining, s2.b_remaining), (7.0, 6.0));
        assert_eq!(s2.iteration, 2);
        assert!(!s2.terminated());

        let s3 = update_budgets(&BudgetState::new(2.0, 10.0, 5), 3.0, 0.0);
        assert!(s3.terminated());

        let s4 = update_budgets(&s, 0.0, 0.0);
        assert_eq!((s4.t_remaining, s4.b_remaining), (10.0, 10.0));
        assert_eq!(s4.iteration, 2);
    }

    #[test]
    fn budgets_never_violated_randomized() {
        let levels = [lvl(0, "a", 1.0, 1.0), lvl(1, "b", 1.0, 1.0)];
        let w = workers(&[("a", 2), ("b", 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..300 {
            let n = 1 + (rng.gen::<u32>() % 20) as usize;
            let cands: Vec<CandidateTask> = (0..n)
                .map(|m| {
                    cand(
                        m,
                        (rng.gen::<u32>() % 2) as usize,
                        rng.gen::<f64>() * 5.0,
                        0.1 + rng.gen::<f64>() * 4.0,
                        0.1 + rng.gen::<f64>() * 4.0,
                    )
                })
                .collect();
            let t_i = rng.gen::<f64>() * 6.0;
            let b_i = rng.gen::<f64>() * 8.0;
            let d = select_tasks(&cands, t_i, b_i, &levels, &w).unwrap();
            assert!(d.total_cost <= b_i + 1e-12);
            assert!(d.total_walltime <= t_i + 1e-12);
        }
    }
}
