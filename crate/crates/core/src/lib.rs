//! Budget-constrained multi-fidelity surrogate optimization.
//!
//! The engine couples a Gaussian-process surrogate hierarchy (per-level GPs
//! joined by scaling/discrepancy bridge functions, with trust-prior variance
//! inflation) to a batch acquisition loop: candidate evaluations are scored,
//! normalized by cost, selected under per-iteration wall-clock and resource
//! budgets, and executed through an in-process task-queue orchestrator on
//! simulated heterogeneous workers. Results feed back into surrogate
//! retraining until the campaign budgets exhaust.
//!
//! Modules map onto the moving parts:
//! - [`domain`]: problem geometry, fidelity hierarchy, space-filling designs
//! - [`gp`]: single-fidelity GP regression with marginal-likelihood fitting
//! - [`mf`]: the multi-fidelity surrogate (bridges + trust priors)
//! - [`acquisition`]: expected improvement, variance reduction, batching
//! - [`allocator`]: per-iteration budgeted task selection (0/1 knapsack)
//! - [`orchestrator`]: queues, workers, journal, result store, clocks
//! - [`bench`]: synthetic problems with known ground truth
//! - [`driver`]: the outer campaign loop and checkpointing
//! - [`config`] / [`report`]: configuration files and plot-ready outputs

pub mod acquisition;
pub mod allocator;
pub mod bench;
pub mod config;
pub mod domain;
pub mod driver;
pub mod gp;
pub mod mf;
pub mod orchestrator;
pub mod report;
pub mod seeding;
pub mod stats;

pub(crate) mod linalg;
pub(crate) mod search;
