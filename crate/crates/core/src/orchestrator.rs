//! Task execution layer: named FIFO queues, workers that claim and execute
//! tasks, an append-only journal and result store, and two clocks — a
//! discrete-event virtual clock for deterministic campaigns and a real clock
//! with scaled sleeps.
//!
//! A single broker serializes all state transitions behind a mutex; workers
//! interact with it only through poll/complete calls, so each task is
//! claimed exactly once. Claimed tasks whose worker disappears are re-queued
//! after a visibility timeout; completion is idempotent and the result store
//! is deduplicated, which turns at-least-once execution into exactly-once
//! recording.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DesignPoint, Observation};
use crate::seeding;

pub const JOURNAL_FORMAT: &str = "mfopt-journal";
pub const RESULTS_FORMAT: &str = "mfopt-results";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("unknown queue '{0}'")]
    UnknownQueue(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("task '{task}' is {state}; cannot {action}")]
    InvalidTransition {
        task: String,
        state: String,
        action: String,
    },
    #[error("journal integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Claimed,
    Done,
    Failed,
}

impl TaskState {
    fn name(self) -> &'static str {
        match self {
            TaskState::Queued => "queued",
            TaskState::Claimed => "claimed",
            TaskState::Done => "done",
            TaskState::Failed => "failed",
        }
    }
}

/// One schedulable evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub queue_name: String,
    /// Raw problem-unit coordinates.
    pub point: DesignPoint,
    pub level: usize,
    /// Planned walltime (seconds) used for scheduling and visibility.
    pub walltime_est: f64,
    /// Planned resource cost.
    pub cost: f64,
    pub state: TaskState,
    pub enqueue_time: f64,
    pub claim_time: Option<f64>,
    pub done_time: Option<f64>,
    /// Number of times this task has been claimed.
    pub attempt: u32,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        queue_name: impl Into<String>,
        point: DesignPoint,
        level: usize,
        walltime_est: f64,
        cost: f64,
    ) -> Self {
        Task {
            id: id.into(),
            queue_name: queue_name.into(),
            point,
            level,
            walltime_est,
            cost,
            state: TaskState::Queued,
            enqueue_time: 0.0,
            claim_time: None,
            done_time: None,
            attempt: 0,
        }
    }

    fn digest(&self) -> String {
        let payload = serde_json::json!({
            "point": self.point.coords,
            "level": self.level,
            "walltime_est": self.walltime_est,
            "cost": self.cost,
        });
        seeding::fnv1a_hex(payload.to_string().as_bytes())
    }
}

/// A worker's identity and simulation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub id: String,
    /// Queues serviced, highest priority first.
    pub serviced_queues: Vec<String>,
    pub speed_factor: f64,
    /// Probability that the worker dies mid-task (simulation only).
    pub failure_rate: f64,
}

/// Completed task outcome, deduplicated by task id in the store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: String,
    pub observation: Observation,
    pub worker_id: String,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompleteAck {
    Recorded,
    Duplicate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueSpec {
    pub name: String,
    /// Fixed dispatch latency added to every service on this queue.
    pub latency: f64,
}

impl QueueSpec {
    pub fn new(name: impl Into<String>) -> Self {
        QueueSpec {
            name: name.into(),
            latency: 0.0,
        }
    }
}

/// Journal line: exactly these five fields, one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalEvent {
    event_type: String,
    task_id: String,
    queue: String,
    timestamp: f64,
    payload_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FormatHeader {
    format: String,
    version: u32,
}

struct QueueState {
    latency: f64,
    pending: VecDeque<String>,
}

struct BrokerInner {
    queues: BTreeMap<String, QueueState>,
    tasks: BTreeMap<String, Task>,
    results: BTreeMap<String, ResultRecord>,
    /// Per-task visibility timeout (seconds of claim silence before requeue).
    visibility: BTreeMap<String, f64>,
    journal: Option<BufWriter<File>>,
    results_file: Option<BufWriter<File>>,
    visibility_factor: f64,
}

/// Serializable broker state used for journal-replay verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerSnapshot {
    pub queues: BTreeMap<String, Vec<String>>,
    pub tasks: BTreeMap<String, TaskSnap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSnap {
    pub state: String,
    pub queue: String,
    pub digest: String,
    pub attempt: u32,
    pub enqueue_time: f64,
    pub claim_time: Option<f64>,
    pub done_time: Option<f64>,
}

pub struct Broker {
    inner: Mutex<BrokerInner>,
}

impl Broker {
    /// Broker without persistence, for tests and throwaway batches.
    pub fn in_memory(queues: &[QueueSpec]) -> Broker {
        Self::build(queues, None, None).expect("in-memory broker cannot fail")
    }

    /// Broker journaling to `journal_path` and recording results to
    /// `results_path`. Both files start with a version header line.
    pub fn with_files(
        queues: &[QueueSpec],
        journal_path: &Path,
        results_path: &Path,
    ) -> Result<Broker, OrchestratorError> {
        let journal = BufWriter::new(File::create(journal_path)?);
        let results = BufWriter::new(File::create(results_path)?);
        Self::build(queues, Some(journal), Some(results))
    }

    fn build(
        queues: &[QueueSpec],
        journal: Option<BufWriter<File>>,
        results_file: Option<BufWriter<File>>,
    ) -> Result<Broker, OrchestratorError> {
        let mut inner = BrokerInner {
            queues: BTreeMap::new(),
            tasks: BTreeMap::new(),
            results: BTreeMap::new(),
            visibility: BTreeMap::new(),
            journal,
            results_file,
            visibility_factor: 3.0,
        };
        if let Some(j) = inner.journal.as_mut() {
            let header = FormatHeader {
                format: JOURNAL_FORMAT.into(),
                version: FORMAT_VERSION,
            };
            writeln!(j, "{}", serde_json::to_string(&header)?)?;
            j.flush()?;
        }
        if let Some(r) = inner.results_file.as_mut() {
            let header = FormatHeader {
                format: RESULTS_FORMAT.into(),
                version: FORMAT_VERSION,
            };
            writeln!(r, "{}", serde_json::to_string(&header)?)?;
            r.flush()?;
        }
        for q in queues {
            inner.queues.insert(
                q.name.clone(),
                QueueState {
                    latency: q.latency,
                    pending: VecDeque::new(),
                },
            );
            inner.journal_event("register-queue", "", &q.name, 0.0, "")?;
        }
        Ok(Broker {
            inner: Mutex::new(inner),
        })
    }

    /// Append the task to its queue. The event is journaled (and flushed)
    /// before the task becomes visible to pollers.
    pub fn enqueue(&self, mut task: Task, now: f64) -> Result<String, OrchestratorError> {
        let mut inner = self.inner.lock().unwrap();
        if !inner.queues.contains_key(&task.queue_name) {
            return Err(OrchestratorError::UnknownQueue(task.queue_name));
        }
        task.state = TaskState::Queued;
        task.enqueue_time = now;
        task.claim_time = None;
        task.done_time = None;
        let id = task.id.clone();
        let queue = task.queue_name.clone();
        let digest = task.digest();
        inner.journal_event("enqueue", &id, &queue, now, &digest)?;
        let vis = task.walltime_est * inner.visibility_factor;
        inner.visibility.insert(id.clone(), vis);
        inner.tasks.insert(id.clone(), task);
        inner
            .queues
            .get_mut(&queue)
            .expect("checked above")
            .pending
            .push_back(id.clone());
        Ok(id)
    }

    /// Atomically claim the oldest task from the highest-priority non-empty
    /// queue this worker services. Returns `None` when all are empty.
    pub fn worker_poll(&self, worker: &WorkerProfile, now: f64) -> Option<Task> {
        let mut inner = self.inner.lock().unwrap();
        for qname in &worker.serviced_queues {
            let id = match inner
                .queues
                .get_mut(qname)
                .and_then(|q| q.pending.pop_front())
            {
                Some(id) => id,
                None => continue,
            };
            let digest = inner.tasks[&id].digest();
            inner
                .journal_event("claim", &id, qname, now, &digest)
                .ok()?;
            let task = inner.tasks.get_mut(&id).expect("queued task exists");
            task.state = TaskState::Claimed;
            task.claim_time = Some(now);
            task.attempt += 1;
            return Some(task.clone());
        }
        None
    }

    /// Record a completed task. Repeat completions acknowledge as duplicates
    /// without touching the store; completing a task that was never claimed
    /// is a state violation.
    pub fn complete(
        &self,
        task_id: &str,
        observation: Observation,
        worker_id: &str,
        now: f64,
    ) -> Result<CompleteAck, OrchestratorError> {
        let mut inner = self.inner.lock().unwrap();
        let (state, queue, digest, attempt) = {
            let task = inner
                .tasks
                .get(task_id)
                .ok_or_else(|| OrchestratorError::UnknownTask(task_id.into()))?;
            (
                task.state,
                task.queue_name.clone(),
                task.digest(),
                task.attempt,
            )
        };
        match state {
            TaskState::Done | TaskState::Failed => return Ok(CompleteAck::Duplicate),
            TaskState::Queued => {
                return Err(OrchestratorError::InvalidTransition {
                    task: task_id.into(),
                    state: state.name().into(),
                    action: "complete".into(),
                })
            }
            TaskState::Claimed => {}
        }
        inner.journal_event("complete", task_id, &queue, now, &digest)?;
        let record = ResultRecord {
            task_id: task_id.to_string(),
            observation,
            worker_id: worker_id.to_string(),
            attempt,
        };
        inner.write_result(&record)?;
        inner.results.insert(task_id.to_string(), record);
        let task = inner.tasks.get_mut(task_id).expect("checked above");
        task.state = TaskState::Done;
        task.done_time = Some(now);
        Ok(CompleteAck::Recorded)
    }

    /// Re-queue claimed tasks whose visibility timeout expired. Tasks that
    /// already burned `max_attempts` claims are recorded as failed
    /// (infeasible) instead. Returns (requeued ids, failed ids).
    pub fn requeue_expired(
        &self,
        now: f64,
        max_attempts: u32,
    ) -> Result<(Vec<String>, Vec<String>), OrchestratorError> {
        let mut inner = self.inner.lock().unwrap();
        let expired: Vec<String> = inner
            .tasks
            .values()
            .filter(|t| {
                t.state == TaskState::Claimed
                    && t.claim_time
                        .map_or(false, |c| now >= c + inner.visibility[&t.id])
            })
            .map(|t| t.id.clone())
            .collect();
        let mut requeued = Vec::new();
        let mut failed = Vec::new();
        for id in expired {
            let (queue, digest, attempt, point, level) = {
                let t = &inner.tasks[&id];
                (
                    t.queue_name.clone(),
                    t.digest(),
                    t.attempt,
                    t.point.clone(),
                    t.level,
                )
            };
            if attempt >= max_attempts {
                inner.journal_event("fail", &id, &queue, now, &digest)?;
                let record = ResultRecord {
                    task_id: id.clone(),
                    observation: Observation {
                        point,
                        level,
                        value: 0.0,
                        noise_var: 0.0,
                        feasible: false,
                        task_id: id.clone(),
                        walltime_actual: 0.0,
                    },
                    worker_id: String::new(),
                    attempt,
                };
                inner.write_result(&record)?;
                inner.results.insert(id.clone(), record);
                let t = inner.tasks.get_mut(&id).expect("expired task exists");
                t.state = TaskState::Failed;
                t.done_time = Some(now);
                failed.push(id);
            } else {
                inner.journal_event("requeue", &id, &queue, now, &digest)?;
                let t = inner.tasks.get_mut(&id).expect("expired task exists");
                t.state = TaskState::Queued;
                t.claim_time = None;
                inner
                    .queues
                    .get_mut(&queue)
                    .expect("task queue registered")
                    .pending
                    .push_back(id.clone());
                requeued.push(id);
            }
        }
        Ok((requeued, failed))
    }

    pub fn visibility_timeout(&self, task_id: &str) -> Option<f64> {
        self.inner.lock().unwrap().visibility.get(task_id).copied()
    }

    pub fn task(&self, id: &str) -> Option<Task> {
        self.inner.lock().unwrap().tasks.get(id).cloned()
    }

    /// Non-blocking result lookup for a set of task ids.
    pub fn poll_results(&self, ids: &[String]) -> Vec<ResultRecord> {
        let inner = self.inner.lock().unwrap();
        ids.iter()
            .filter_map(|id| inner.results.get(id).cloned())
            .collect()
    }

    pub fn all_results(&self) -> Vec<ResultRecord> {
        self.inner
            .lock()
            .unwrap()
            .results
            .values()
            .cloned()
            .collect()
    }

    pub fn pending_total(&self) -> usize {
        let inner = self.inner.lock().unwrap();
        inner.queues.values().map(|q| q.pending.len()).sum()
    }

    pub fn queue_latency(&self, name: &str) -> Option<f64> {
        self.inner
            .lock()
            .unwrap()
            .queues
            .get(name)
            .map(|q| q.latency)
    }

    pub fn snapshot(&self) -> BrokerSnapshot {
        let inner = self.inner.lock().unwrap();
        BrokerSnapshot {
            queues: inner
                .queues
                .iter()
                .map(|(k, v)| (k.clone(), v.pending.iter().cloned().collect()))
                .collect(),
            tasks: inner
                .tasks
                .values()
                .map(|t| {
                    (
                        t.id.clone(),
                        TaskSnap {
                            state: t.state.name().into(),
                            queue: t.queue_name.clone(),
                            digest: t.digest(),
                            attempt: t.attempt,
                            enqueue_time: t.enqueue_time,
                            claim_time: t.claim_time,
                            done_time: t.done_time,
                        },
                    )
                })
                .collect(),
        }
    }
}

impl BrokerInner {
    fn journal_event(
        &mut self,
        event_type: &str,
        task_id: &str,
        queue: &str,
        timestamp: f64,
        payload_digest: &str,
    ) -> Result<(), OrchestratorError> {
        if let Some(j) = self.journal.as_mut() {
            let ev = JournalEvent {
                event_type: event_type.into(),
                task_id: task_id.into(),
                queue: queue.into(),
                timestamp,
                payload_digest: payload_digest.into(),
            };
            writeln!(j, "{}", serde_json::to_string(&ev)?)?;
            j.flush()?;
        }
        Ok(())
    }

    fn write_result(&mut self, record: &ResultRecord) -> Result<(), OrchestratorError> {
        if let Some(r) = self.results_file.as_mut() {
            writeln!(r, "{}", serde_json::to_string(record)?)?;
            r.flush()?;
        }
        Ok(())
    }
}

/// Rebuild the broker state a journal describes. The snapshot of a live
/// broker and the snapshot replayed from its journal are identical.
pub fn replay_journal(path: &Path) -> Result<BrokerSnapshot, OrchestratorError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| OrchestratorError::Integrity("journal is empty".into()))??;
    let header: FormatHeader = serde_json::from_str(&header_line)
        .map_err(|e| OrchestratorError::Integrity(format!("bad journal header: {e}")))?;
    if header.format != JOURNAL_FORMAT || header.version != FORMAT_VERSION {
        return Err(OrchestratorError::Integrity(format!(
            "unsupported journal format {}/{}",
            header.format, header.version
        )));
    }
    let mut snap = BrokerSnapshot {
        queues: BTreeMap::new(),
        tasks: BTreeMap::new(),
    };
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: JournalEvent = serde_json::from_str(&line).map_err(|e| {
            OrchestratorError::Integrity(format!("journal line {}: {e}", lineno + 2))
        })?;
        match ev.event_type.as_str() {
            "register-queue" => {
                snap.queues.entry(ev.queue).or_default();
            }
            "enqueue" => {
                snap.queues
                    .entry(ev.queue.clone())
                    .or_default()
                    .push(ev.task_id.clone());
                snap.tasks.insert(
                    ev.task_id.clone(),
                    TaskSnap {
                        state: "queued".into(),
                        queue: ev.queue,
                        digest: ev.payload_digest,
                        attempt: 0,
                        enqueue_time: ev.timestamp,
                        claim_time: None,
                        done_time: None,
                    },
                );
            }
            "claim" => {
                if let Some(q) = snap.queues.get_mut(&ev.queue) {
                    q.retain(|id| id != &ev.task_id);
                }
                let t = snap.tasks.get_mut(&ev.task_id).ok_or_else(|| {
                    OrchestratorError::Integrity(format!("claim of unknown task {}", ev.task_id))
                })?;
                t.state = "claimed".into();
                t.claim_time = Some(ev.timestamp);
                t.attempt += 1;
            }
            "requeue" => {
                let t = snap.tasks.get_mut(&ev.task_id).ok_or_else(|| {
                    OrchestratorError::Integrity(format!("requeue of unknown task {}", ev.task_id))
                })?;
                t.state = "queued".into();
                t.claim_time = None;
                snap.queues
                    .entry(ev.queue)
                    .or_default()
                    .push(ev.task_id.clone());
            }
            "complete" | "fail" => {
                let t = snap.tasks.get_mut(&ev.task_id).ok_or_else(|| {
                    OrchestratorError::Integrity(format!("finish of unknown task {}", ev.task_id))
                })?;
                t.state = if ev.event_type == "complete" {
                    "done".into()
                } else {
                    "failed".into()
                };
                t.done_time = Some(ev.timestamp);
            }
            other => {
                return Err(OrchestratorError::Integrity(format!(
                    "unknown event type '{other}'"
                )))
            }
        }
    }
    Ok(snap)
}

/// How a task evaluation turned out, before scheduling bookkeeping.
#[derive(Debug, Clone)]
pub enum EvalOutcome {
    Value {
        value: f64,
        noise_var: f64,
    },
    /// Hidden-constraint failure: recorded as an infeasible observation,
    /// never retried.
    Infeasible,
}

/// Problem evaluation hook implemented by the benchmark layer.
pub trait TaskEvaluator: Send + Sync {
    fn evaluate(&self, task: &Task, attempt: u32) -> EvalOutcome;
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub seed: u64,
    pub max_attempts: u32,
    /// Stop when the virtual clock passes this limit.
    pub time_limit: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_attempts: 3,
            time_limit: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: String,
    pub task_id: String,
    pub worker_id: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    pub makespan: f64,
    /// Per-worker busy intervals, for overlap checks.
    pub service_intervals: BTreeMap<String, Vec<(f64, f64)>>,
}

/// Deterministic uniform in [0,1) from a seed and task identity.
fn sim_uniform(seed: u64, task_id: &str, attempt: u32, tag: &str) -> f64 {
    let h = seeding::derive(seed, tag, u64::from(attempt))
        ^ seeding::derive(seed, task_id, u64::from(attempt));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq)]
enum SimEvent {
    WorkerFree(usize),
    TaskDone(usize, String, f64),
    RequeueCheck,
}

/// Discrete-event simulation of the queued tasks on the given workers.
/// Service time is `walltime_est / speed_factor` plus the queue latency;
/// worker deaths are injected per `failure_rate` and handled through the
/// visibility-timeout requeue path. Deterministic for a fixed seed.
pub fn run_simulated(
    broker: &Broker,
    workers: &[WorkerProfile],
    evaluator: &dyn TaskEvaluator,
    opts: &SimOptions,
) -> ExecutionTrace {
    let mut trace = ExecutionTrace::default();
    // (time, seq) ordered event list; BTreeMap keys give deterministic order
    let mut events: BTreeMap<(u64, u64), SimEvent> = BTreeMap::new();
    let mut seq = 0u64;
    let push = |events: &mut BTreeMap<(u64, u64), SimEvent>, seq: &mut u64, t: f64, e: SimEvent| {
        events.insert((t.to_bits(), *seq), e);
        *seq += 1;
    };
    for (i, _) in workers.iter().enumerate() {
        push(&mut events, &mut seq, 0.0, SimEvent::WorkerFree(i));
    }
    let mut dormant: BTreeSet<usize> = BTreeSet::new();
    let mut makespan = 0.0f64;

    while let Some((&(tbits, s), _)) = events.iter().next() {
        let time = f64::from_bits(tbits);
        if time > opts.time_limit {
            break;
        }
        let ev = events.remove(&(tbits, s)).expect("peeked key exists");
        match ev {
            SimEvent::RequeueCheck => {
                let (requeued, failed) = broker
                    .requeue_expired(time, opts.max_attempts)
                    .expect("requeue bookkeeping");
                for id in &requeued {
                    trace.events.push(TraceEvent {
                        time,
                        kind: "requeue".into(),
                        task_id: id.clone(),
                        worker_id: String::new(),
                    });
                }
                for id in &failed {
                    makespan = makespan.max(time);
                    trace.events.push(TraceEvent {
                        time,
                        kind: "fail".into(),
                        task_id: id.clone(),
                        worker_id: String::new(),
                    });
                }
                if !requeued.is_empty() {
                    let woken: Vec<usize> = dormant.iter().copied().collect();
                    for w in woken {
                        dormant.remove(&w);
                        push(&mut events, &mut seq, time, SimEvent::WorkerFree(w));
                    }
                }
            }
            SimEvent::TaskDone(w, task_id, started) => {
                let worker = &workers[w];
                let task = broker.task(&task_id).expect("running task exists");
                let service = time - started;
                let outcome = evaluator.evaluate(&task, task.attempt);
                let observation = match outcome {
                    EvalOutcome::Value { value, noise_var } => Observation {
                        point: task.point.clone(),
                        level: task.level,
                        value,
                        noise_var,
                        feasible: true,
                        task_id: task_id.clone(),
                        walltime_actual: service,
                    },
                    EvalOutcome::Infeasible => Observation {
                        point: task.point.clone(),
                        level: task.level,
                        value: 0.0,
                        noise_var: 0.0,
                        feasible: false,
                        task_id: task_id.clone(),
                        walltime_actual: service,
                    },
                };
                broker
                    .complete(&task_id, observation, &worker.id, time)
                    .expect("claimed task completes");
                makespan = makespan.max(time);
                trace.events.push(TraceEvent {
                    time,
                    kind: "complete".into(),
                    task_id,
                    worker_id: worker.id.clone(),
                });
                push(&mut events, &mut seq, time, SimEvent::WorkerFree(w));
            }
            SimEvent::WorkerFree(w) => {
                let worker = &workers[w];
                match broker.worker_poll(worker, time) {
                    None => {
                        dormant.insert(w);
                    }
                    Some(task) => {
                        trace.events.push(TraceEvent {
                            time,
                            kind: "claim".into(),
                            task_id: task.id.clone(),
                            worker_id: worker.id.clone(),
                        });
                        let latency = broker.queue_latency(&task.queue_name).unwrap_or(0.0);
                        let service = task.walltime_est / worker.speed_factor + latency;
                        let dies = sim_uniform(opts.seed, &task.id, task.attempt, "death")
                            < worker.failure_rate;
                        if dies {
                            let frac =
                                0.1 + 0.8 * sim_uniform(opts.seed, &task.id, task.attempt, "frac");
                            let death_at = time + frac * service;
                            trace.events.push(TraceEvent {
                                time: death_at,
                                kind: "worker-death".into(),
                                task_id: task.id.clone(),
                                worker_id: worker.id.clone(),
                            });
                            trace
                                .service_intervals
                                .entry(worker.id.clone())
                                .or_default()
                                .push((time, death_at));
                            // the abandoned claim resurfaces at its
                            // visibility timeout
                            let vis = broker
                                .visibility_timeout(&task.id)
                                .unwrap_or(task.walltime_est * 3.0);
                            push(&mut events, &mut seq, time + vis, SimEvent::RequeueCheck);
                            push(&mut events, &mut seq, death_at, SimEvent::WorkerFree(w));
                        } else {
                            trace
                                .service_intervals
                                .entry(worker.id.clone())
                                .or_default()
                                .push((time, time + service));
                            push(
                                &mut events,
                                &mut seq,
                                time + service,
                                SimEvent::TaskDone(w, task.id.clone(), time),
                            );
                        }
                    }
                }
            }
        }
    }
    trace.makespan = makespan;
    trace
}

#[derive(Debug, Clone)]
pub struct RealOptions {
    pub seed: u64,
    pub max_attempts: u32,
    /// Real seconds per virtual second.
    pub time_scale: f64,
    /// Wall-clock cap in virtual seconds.
    pub time_limit: f64,
}

impl Default for RealOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_attempts: 3,
            time_scale: 1.0,
            time_limit: f64::INFINITY,
        }
    }
}

/// Real-clock execution: one OS thread per worker, sleeping the scaled
/// service time. Worker deaths are injected exactly as in the virtual
/// clock; the caller's thread runs the requeue reaper until every given
/// task resolves or the limit passes.
pub fn run_real(
    broker: &Broker,
    workers: &[WorkerProfile],
    evaluator: &dyn TaskEvaluator,
    task_ids: &[String],
    opts: &RealOptions,
) {
    use std::sync::atomic::{AtomicBool, Ordering};
    let done = AtomicBool::new(false);
    let start = std::time::Instant::now();
    let virt_now = || start.elapsed().as_secs_f64() / opts.time_scale.max(1e-12);

    std::thread::scope(|scope| {
        for worker in workers {
            let broker_ref = &*broker;
            let done_ref = &done;
            let evaluator_ref = evaluator;
            let opts_ref = &*opts;
            scope.spawn(move || {
                while !done_ref.load(Ordering::Relaxed) {
                    let now = virt_now();
                    match broker_ref.worker_poll(worker, now) {
                        None => std::thread::sleep(std::time::Duration::from_micros(200)),
                        Some(task) => {
                            let latency = broker_ref.queue_latency(&task.queue_name).unwrap_or(0.0);
                            let service = task.walltime_est / worker.speed_factor + latency;
                            let dies = sim_uniform(opts_ref.seed, &task.id, task.attempt, "death")
                                < worker.failure_rate;
                            let sleep_virt = if dies { 0.5 * service } else { service };
                            std::thread::sleep(std::time::Duration::from_secs_f64(
                                sleep_virt * opts_ref.time_scale,
                            ));
                            if dies {
                                continue; // abandon the claim; the reaper requeues it
                            }
                            let outcome = evaluator_ref.evaluate(&task, task.attempt);
                            let now = virt_now();
                            let observation = match outcome {
                                EvalOutcome::Value { value, noise_var } => Observation {
                                    point: task.point.clone(),
                                    level: task.level,
                                    value,
                                    noise_var,
                                    feasible: true,
                                    task_id: task.id.clone(),
                                    walltime_actual: service,
                                },
                                EvalOutcome::Infeasible => Observation {
                                    point: task.point.clone(),
                                    level: task.level,
                                    value: 0.0,
                                    noise_var: 0.0,
                                    feasible: false,
                                    task_id: task.id.clone(),
                                    walltime_actual: service,
                                },
                            };
                            let _ = broker_ref.complete(&task.id, observation, &worker.id, now);
                        }
                    }
                }
            });
        }
        // reaper loop on the caller thread
        loop {
            let now = virt_now();
            let _ = broker.requeue_expired(now, opts.max_attempts);
            let resolved = broker.poll_results(task_ids).len();
            if resolved == task_ids.len() || now > opts.time_limit {
                done.store(true, Ordering::Relaxed);
                break;
            }
            std::thread::sleep(std::time::Duration::from_micros(200));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct ConstEval(f64);
    impl TaskEvaluator for ConstEval {
        fn evaluate(&self, _task: &Task, _attempt: u32) -> EvalOutcome {
            EvalOutcome::Value {
                value: self.0,
                noise_var: 0.0,
            }
        }
    }

    fn queue(name: &str) -> QueueSpec {
        QueueSpec::new(name)
    }

    fn task(id: &str, q: &str, walltime: f64) -> Task {
        Task::new(id, q, DesignPoint::new(vec![0.5]), 0, walltime, 1.0)
    }

    fn worker(id: &str, queues: &[&str]) -> WorkerProfile {
        WorkerProfile {
            id: id.into(),
            serviced_queues: queues.iter().map(|s| s.to_string()).collect(),
            speed_factor: 1.0,
            failure_rate: 0.0,
        }
    }

    #[test]
    fn enqueue_then_poll_returns_same_task() {
        let b = Broker::in_memory(&[queue("q")]);
        b.enqueue(task("t1", "q", 1.0), 0.0).unwrap();
        let w = worker("w", &["q"]);
        let got = b.worker_poll(&w, 0.1).unwrap();
        assert_eq!(got.id, "t1");
        assert_eq!(got.state, TaskState::Claimed);
        assert_eq!(got.attempt, 1);
    }

    #[test]
    fn fifo_within_queue() {
        let b = Broker::in_memory(&[queue("q")]);
        b.enqueue(task("t1", "q", 1.0), 0.0).unwrap();
        b.enqueue(task("t2", "q", 1.0), 0.1).unwrap();
        let w = worker("w", &["q"]);
        assert_eq!(b.worker_poll(&w, 1.0).unwrap().id, "t1");
        assert_eq!(b.worker_poll(&w, 1.0).unwrap().id, "t2");
    }

    #[test]
    fn unknown_queue_rejected_store_unchanged() {
        let b = Broker::in_memory(&[queue("q")]);
        assert!(matches!(
            b.enqueue(task("t1", "zzz", 1.0), 0.0),
            Err(OrchestratorError::UnknownQueue(_))
        ));
        assert!(b.task("t1").is_none());
        assert_eq!(b.pending_total(), 0);
    }

    #[test]
    fn poll_respects_priority_order() {
        let b = Broker::in_memory(&[queue("a"), queue("b")]);
        b.enqueue(task("tb", "b", 1.0), 0.0).unwrap();
        b.enqueue(task("ta", "a", 1.0), 0.1).unwrap();
        let w = worker("w", &["a", "b"]);
        assert_eq!(b.worker_poll(&w, 1.0).unwrap().id, "ta");
    }

    #[test]
    fn poll_empty_returns_none() {
        let b = Broker::in_memory(&[queue("q")]);
        assert!(b.worker_poll(&worker("w", &["q"]), 0.0).is_none());
    }

    #[test]
    fn complete_records_once_and_dedups() {
        let b = Broker::in_memory(&[queue("q")]);
        b.enqueue(task("t1", "q", 1.0), 0.0).unwrap();
        let w = worker("w", &["q"]);
        let t = b.worker_poll(&w, 0.0).unwrap();
        let obs = Observation {
            point: t.point.clone(),
            level: 0,
            value: 3.5,
            noise_var: 0.0,
            feasible: true,
            task_id: t.id.clone(),
            walltime_actual: 1.0,
        };
        assert_eq!(
            b.complete("t1", obs.clone(), "w", 1.0).unwrap(),
            CompleteAck::Recorded
        );
        assert_eq!(
            b.complete("t1", obs, "w", 1.5).unwrap(),
            CompleteAck::Duplicate
        );
        assert_eq!(b.all_results().len(), 1);
    }

    #[test]
    fn completing_unclaimed_task_is_state_violation() {
        let b = Broker::in_memory(&[queue("q")]);
        b.enqueue(task("t1", "q", 1.0), 0.0).unwrap();
        let obs = Observation {
            point: DesignPoint::new(vec![0.5]),
            level: 0,
            value: 0.0,
            noise_var: 0.0,
            feasible: true,
            task_id: "t1".into(),
            walltime_actual: 0.0,
        };
        assert!(matches!(
            b.complete("t1", obs, "w", 1.0),
            Err(OrchestratorError::InvalidTransition { .. })
        ));
    }

    #[test]
    fn concurrent_pollers_claim_each_task_once() {
        let b = Broker::in_memory(&[queue("q")]);
        for i in 0..100 {
            b.enqueue(task(&format!("t{i:03}"), "q", 1.0), 0.0).unwrap();
        }
        let claimed = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for wi in 0..8 {
                let b = &b;
                let claimed = &claimed;
                scope.spawn(move || {
                    let w = worker(&format!("w{wi}"), &["q"]);
                    while let Some(_t) = b.worker_poll(&w, 0.0) {
                        claimed.fetch_add(1, Ordering::Relaxed);
                    }
                });
            }
        });
        assert_eq!(claimed.load(Ordering::Relaxed), 100);
        assert_eq!(b.pending_total(), 0);
    }

    #[test]
    fn sim_serial_sum_makespan() {
        let b = Broker::in_memory(&[queue("q")]);
        b.enqueue(task("t1", "q", 3.0), 0.0).unwrap();
        b.enqueue(task("t2", "q", 5.0), 0.0).unwrap();
        let trace = run_simulated(
            &b,
            &[worker("w", &["q"])],
            &ConstEval(1.0),
            &SimOptions::default(),
        );
        assert_eq!(trace.makespan, 8.0);
    }

    #[test]
    fn sim_two_workers_lpt_bin_arithmetic() {
        let b = Broker::in_memory(&[queue("q")]);
        // enqueued longest-first, as the driver dispatches
        b.enqueue(task("t1", "q", 5.0), 0.0).unwrap();
        b.enqueue(task("t2", "q", 3.0), 0.0).unwrap();
        b.enqueue(task("t3", "q", 3.0), 0.0).unwrap();
        let trace = run_simulated(
            &b,
            &[worker("w1", &["q"]), worker("w2", &["q"])],
            &ConstEval(1.0),
            &SimOptions::default(),
        );
        assert_eq!(trace.makespan, 6.0);
    }

    #[test]
    fn sim_heterogeneous_speeds_match_naive_oracle() {
        // independent oracle: simple time-stepped simulator
        fn naive(walltimes: &[f64], speeds: &[f64]) -> f64 {
            let mut queue: VecDeque<f64> = walltimes.iter().copied().collect();
            let mut free_at = vec![0.0f64; speeds.len()];
            loop {
                if queue.is_empty() {
                    break;
                }
                // next worker to become free claims the next task
                let w = free_at
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                    .unwrap()
                    .0;
                let t = queue.pop_front().unwrap();
                free_at[w] += t / speeds[w];
            }
            free_at.iter().cloned().fold(0.0, f64::max)
        }

        let mut state = 777u64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state % 97) as f64 + 1.0) / 10.0
        };
        let walltimes: Vec<f64> = (0..20).map(|_| rng()).collect();
        let speeds = [1.0, 2.0, 4.0];

        let b = Broker::in_memory(&[queue("q")]);
        for (i, w) in walltimes.iter().enumerate() {
            b.enqueue(task(&format!("t{i:02}"), "q", *w), 0.0).unwrap();
        }
        let workers: Vec<WorkerProfile> = speeds
            .iter()
            .enumerate()
            .map(|(i, s)| WorkerProfile {
                id: format!("w{i}"),
                serviced_queues: vec!["q".into()],
                speed_factor: *s,
                failure_rate: 0.0,
            })
            .collect();
        let trace = run_simulated(&b, &workers, &ConstEval(0.0), &SimOptions::default());
        let want = naive(&walltimes, &speeds);
        assert!(
            (trace.makespan - want).abs() < 1e-9,
            "{} vs {want}",
            trace.makespan
        );
    }

    #[test]
    fn sim_failure_requeue_single_record_attempt_two() {
        let b = Broker::in_memory(&[queue("q")]);
        b.enqueue(task("t1", "q", 2.0), 0.0).unwrap();
        // find a seed whose first attempt dies and second survives
        let mut chosen = None;
        for seed in 0..50_000u64 {
            let d1 = sim_uniform(seed, "t1", 1, "death") < 0.5;
            let d2 = sim_uniform(seed, "t1", 2, "death") < 0.5;
            if d1 && !d2 {
                chosen = Some(seed);
                break;
            }
        }
        let seed = chosen.expect("seed with death-then-success exists");
        let w = WorkerProfile {
            id: "w".into(),
            serviced_queues: vec!["q".into()],
            speed_factor: 1.0,
            failure_rate: 0.5,
        };
        let trace = run_simulated(
            &b,
            &[w],
            &ConstEval(1.0),
            &SimOptions {
                seed,
                ..Default::default()
            },
        );
        let results = b.all_results();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].attempt, 2);
        assert!(trace.events.iter().any(|e| e.kind == "worker-death"));
        assert!(trace.events.iter().any(|e| e.kind == "requeue"));
    }

    #[test]
    fn sim_no_overlapping_service_intervals() {
        let b = Broker::in_memory(&[queue("a"), queue("b")]);
        for i in 0..30 {
            let q = if i % 3 == 0 { "b" } else { "a" };
            b.enqueue(task(&format!("t{i:02}"), q, 1.0 + (i % 5) as f64), 0.0)
                .unwrap();
        }
        let workers = [
            WorkerProfile {
                id: "w1".into(),
                serviced_queues: vec!["a".into(), "b".into()],
                speed_factor: 1.0,
                failure_rate: 0.1,
            },
            WorkerProfile {
                id: "w2".into(),
                serviced_queues: vec!["b".into(), "a".into()],
                speed_factor: 2.0,
                failure_rate: 0.0,
            },
        ];
        let trace = run_simulated(
            &b,
            &workers,
            &ConstEval(0.0),
            &SimOptions {
                seed: 5,
                ..Default::default()
            },
        );
        for (worker, intervals) in &trace.service_intervals {
            let mut sorted = intervals.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            for pair in sorted.windows(2) {
                assert!(
                    pair[0].1 <= pair[1].0 + 1e-12,
                    "{worker} overlaps: {pair:?}"
                );
            }
        }
    }

    #[test]
    fn journal_replay_reconstructs_state() {
        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("journal.jsonl");
        let rpath = dir.path().join("results.jsonl");
        let b = Broker::with_files(&[queue("a"), queue("b")], &jpath, &rpath).unwrap();
        for i in 0..12 {
            let q = if i % 2 == 0 { "a" } else { "b" };
            b.enqueue(task(&format!("t{i:02}"), q, 1.0), i as f64 * 0.1)
                .unwrap();
        }
        let w = WorkerProfile {
            id: "w".into(),
            serviced_queues: vec!["a".into(), "b".into()],
            speed_factor: 1.0,
            failure_rate: 0.3,
        };
        run_simulated(
            &b,
            &[w],
            &ConstEval(2.0),
            &SimOptions {
                seed: 9,
                max_attempts: 2,
                ..Default::default()
            },
        );
        let live = serde_json::to_string(&b.snapshot()).unwrap();
        let replayed = serde_json::to_string(&replay_journal(&jpath).unwrap()).unwrap();
        assert_eq!(live, replayed);
    }

    #[test]
    fn real_clock_small_batch() {
        let b = Broker::in_memory(&[queue("q")]);
        let ids: Vec<String> = (0..10)
            .map(|i| b.enqueue(task(&format!("t{i}"), "q", 1.0), 0.0).unwrap())
            .collect();
        let workers = [worker("w1", &["q"]), worker("w2", &["q"])];
        run_real(
            &b,
            &workers,
            &ConstEval(1.5),
            &ids,
            &RealOptions {
                time_scale: 1e-4,
                ..Default::default()
            },
        );
        assert_eq!(b.poll_results(&ids).len(), 10);
    }
}
