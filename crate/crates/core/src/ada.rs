//! Map/gather scheduler: a job becomes detector × work-unit tasks, a pool of
//! workers pulls tasks from a shared queue, and the partial event lists are
//! merged into one deterministic list.
//!
//! The merged output never depends on the worker count. Partials are keyed
//! by task id and gather visits them in a fixed order, so the only thing W
//! changes is wall time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::archive::{partition, read_samples, scan_archive, ArchiveError, ArchiveManifest, NamePattern, WorkUnit};
use crate::config::{ConfigError, JobConfig};
use crate::eventstore::{decode_records, encode_records, sort_canonical, store_write, Backend, EventRecord, StoreError};
use crate::registry::{Registry, RegistryError};
use crate::synthbench::{render_scene, write_scene, SynthError};
use crate::time::UtcMillis;

/// Partials with more events than this are written to a temporary file
/// until gather.
pub const SPILL_EVENTS: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum AdaError {
    #[error("plan: {0}")]
    Plan(String),
    #[error("gather: {0}")]
    Consistency(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("spill file {path}: {source}")]
    Spill {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Overlap-duplicate tolerance used by gather.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeTol {
    /// Seconds, applied to both start and end times.
    pub dt: f64,
    /// Hz, applied to both band edges.
    pub df: f64,
}

impl Default for MergeTol {
    fn default() -> Self {
        MergeTol { dt: 0.5, df: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub job_id: String,
    pub detectors: Vec<String>,
    pub unit_len: f64,
    pub pad: f64,
    pub workers: usize,
    pub backend: Backend,
    pub output: PathBuf,
    pub merge: MergeTol,
}

impl JobSpec {
    pub fn from_config(cfg: &JobConfig) -> Result<Self, AdaError> {
        Ok(JobSpec {
            job_id: cfg.job.job_id.clone(),
            detectors: cfg.detector_ids(),
            unit_len: cfg.job.unit_len,
            pad: cfg.job.pad,
            workers: cfg.job.workers,
            backend: cfg.backend()?,
            output: cfg.job.output.clone(),
            merge: MergeTol {
                dt: cfg.job.merge_dt,
                df: cfg.job.merge_df,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: usize,
    pub detector: String,
    pub unit: WorkUnit,
    /// Epoch seconds of the unit's channel start.
    pub epoch: f64,
}

impl Task {
    /// Core span in epoch milliseconds.
    fn core_millis(&self) -> (UtcMillis, UtcMillis) {
        (
            UtcMillis::from_epoch_secs(self.epoch + self.unit.core_span.0),
            UtcMillis::from_epoch_secs(self.epoch + self.unit.core_span.1),
        )
    }

    fn adjacent(&self, other: &Task) -> bool {
        self.detector == other.detector
            && self.unit.channel_id == other.unit.channel_id
            && ((self.unit.core_span.1 - other.unit.core_span.0).abs() < 1e-9
                || (other.unit.core_span.1 - self.unit.core_span.0).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    pub job_id: String,
    pub tasks: Vec<Task>,
    /// Pad the units were cut with: the job pad or the largest detector
    /// context pad, whichever is larger.
    pub pad: f64,
    pub warnings: Vec<String>,
}

/// Detector-major, time-minor Cartesian product of detectors and units.
pub fn plan(job: &JobSpec, registry: &Registry, manifest: &ArchiveManifest) -> Result<TaskPlan, AdaError> {
    if job.workers == 0 {
        return Err(AdaError::Plan("workers must be at least 1".into()));
    }
    if job.detectors.is_empty() {
        return Err(AdaError::Plan("job lists no detectors".into()));
    }
    let mut pad = job.pad;
    for id in &job.detectors {
        pad = pad.max(registry.resolve(id)?.context_pad);
    }
    if !(pad < job.unit_len) {
        return Err(AdaError::Plan(format!(
            "pad {pad} s (including detector context) must be shorter than unit_len {} s",
            job.unit_len
        )));
    }
    let units = partition(manifest, job.unit_len, pad)?;
    let mut warnings = Vec::new();
    if manifest.entries.is_empty() {
        let w = "manifest has no entries; the plan is empty".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut tasks = Vec::with_capacity(job.detectors.len() * units.len());
    for id in &job.detectors {
        for unit in &units {
            tasks.push(Task {
                task_id: tasks.len(),
                detector: id.clone(),
                epoch: manifest
                    .channel_epoch(&unit.channel_id)
                    .expect("units come from manifest channels"),
                unit: unit.clone(),
            });
        }
    }
    Ok(TaskPlan {
        job_id: job.job_id.clone(),
        tasks,
        pad,
        warnings,
    })
}

/// Runs one task. Implementations must be reentrant: the same runner is
/// shared by every worker.
pub trait TaskRunner: Sync {
    fn run_task(&self, task: &Task) -> Result<Vec<EventRecord>, String>;
}

/// Reads each unit from the archive and runs the task's pipeline on it.
///
/// A unit keeps only events that start inside its core span; the pads give
/// the detector context and let a neighbour see events that cross the
/// boundary, but the start time decides which unit reports them.
pub struct ArchiveRunner<'a> {
    pub manifest: &'a ArchiveManifest,
    pub registry: &'a Registry,
    pub run_id: String,
}

impl TaskRunner for ArchiveRunner<'_> {
    fn run_task(&self, task: &Task) -> Result<Vec<EventRecord>, String> {
        let pipeline = self.registry.resolve(&task.detector).map_err(|e| e.to_string())?;
        let block = read_samples(&task.unit, self.manifest).map_err(|e| e.to_string())?;
        let dets = pipeline.detect(&block).map_err(|e| e.to_string())?;
        let (core0, core1) = (task.epoch + task.unit.core_span.0, task.epoch + task.unit.core_span.1);
        Ok(dets
            .iter()
            .filter(|d| d.bbox.t_start >= core0 && d.bbox.t_start < core1)
            .map(|d| pipeline.to_record(d, &task.unit.channel_id, &self.run_id, String::new()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskStatus {
    Ok,
    Failed(String),
}

impl TaskStatus {
    pub fn label(&self) -> String {
        match self {
            TaskStatus::Ok => "ok".into(),
            TaskStatus::Failed(r) => format!("failed({})", r.replace(['\t', '\n', '\r'], " ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub task_id: usize,
    pub detector: String,
    pub channel: String,
    pub t0: f64,
    pub t1: f64,
    pub status: TaskStatus,
    pub wall_ms: f64,
    pub n_events: usize,
    /// Worker slot that ran the task.
    pub worker: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub job_id: String,
    pub workers: usize,
    /// Merged events in canonical order.
    pub events: Vec<EventRecord>,
    pub tasks: Vec<TaskRow>,
    pub wall_s: f64,
    pub warnings: Vec<String>,
}

pub const TASK_TABLE_HEADER: &str = "task_id\tdetector\tt0\tt1\tstatus\twall_ms\tn_events";

impl RunReport {
    pub fn failures(&self) -> usize {
        self.tasks.iter().filter(|t| t.status != TaskStatus::Ok).count()
    }

    pub fn summary(&self) -> String {
        let partial: usize = self.tasks.iter().map(|t| t.n_events).sum();
        let mut s = format!(
            "job {}: {} tasks, {} failed, {} workers, {:.3} s wall, {} partial events, {} merged events\n",
            self.job_id,
            self.tasks.len(),
            self.failures(),
            self.workers,
            self.wall_s,
            partial,
            self.events.len()
        );
        for t in self.tasks.iter().filter(|t| t.status != TaskStatus::Ok) {
            s.push_str(&format!("  task {} ({} {}): {}\n", t.task_id, t.detector, t.channel, t.status.label()));
        }
        for w in &self.warnings {
            s.push_str(&format!("  warning: {w}\n"));
        }
        s
    }

    /// Tab-separated per-task table.
    pub fn task_table(&self) -> String {
        let mut s = format!("{TASK_TABLE_HEADER}\n");
        for t in &self.tasks {
            s.push_str(&format!(
                "{}\t{}\t{:.3}\t{:.3}\t{}\t{:.3}\t{}\n",
                t.task_id,
                t.detector,
                t.t0,
                t.t1,
                t.status.label(),
                t.wall_ms,
                t.n_events
            ));
        }
        s
    }
}

#[derive(Debug)]
enum PartialEvents {
    Memory(Vec<EventRecord>),
    Spilled(tempfile::TempPath),
}

impl PartialEvents {
    fn load(self) -> Result<Vec<EventRecord>, AdaError> {
        match self {
            PartialEvents::Memory(v) => Ok(v),
            PartialEvents::Spilled(path) => {
                let bytes = std::fs::read(&path).map_err(|source| AdaError::Spill {
                    path: path.to_path_buf(),
                    source,
                })?;
                decode_records(&bytes).ok_or_else(|| AdaError::Consistency(format!("spill file {} is corrupt", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub spill_threshold: Option<usize>,
    /// Where spill files go; the system temp dir when unset.
    pub spill_dir: Option<PathBuf>,
}

fn spill(events: &[EventRecord], dir: Option<&Path>) -> Result<tempfile::TempPath, AdaError> {
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    let io = |source| AdaError::Spill {
        path: dir.clone(),
        source,
    };
    let file = tempfile::Builder::new().prefix("adamine-spill-").tempfile_in(&dir).map_err(io)?;
    std::fs::write(file.path(), encode_records(events)).map_err(io)?;
    Ok(file.into_temp_path())
}

pub fn execute(plan: &TaskPlan, runner: &dyn TaskRunner, workers: usize, merge: MergeTol) -> Result<RunReport, AdaError> {
    execute_with(plan, runner, workers, merge, &ExecOptions::default())
}

/// Runs every task on `workers` threads pulling from one queue, then
/// gathers. A failed task is recorded in the report and never stops the
/// run.
pub fn execute_with(
    plan: &TaskPlan,
    runner: &dyn TaskRunner,
    workers: usize,
    merge: MergeTol,
    opts: &ExecOptions,
) -> Result<RunReport, AdaError> {
    if workers == 0 {
        return Err(AdaError::Plan("workers must be at least 1".into()));
    }
    let threshold = opts.spill_threshold.unwrap_or(SPILL_EVENTS);
    let started = Instant::now();
    let next = AtomicUsize::new(0);
    type Slot = (TaskRow, Result<PartialEvents, AdaError>);
    let results: Mutex<Vec<Option<Slot>>> = Mutex::new((0..plan.tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for worker in 0..workers {
            let (next, results) = (&next, &results);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = plan.tasks.get(i) else { break };
                let t = Instant::now();
                let outcome = runner.run_task(task);
                let wall_ms = t.elapsed().as_secs_f64() * 1e3;
                let (status, n_events, partial) = match outcome {
                    Ok(mut events) => {
                        for (k, e) in events.iter_mut().enumerate() {
                            e.event_id = format!("t{}:{k}", task.task_id);
                        }
                        let n = events.len();
                        let partial = if n > threshold {
                            spill(&events, opts.spill_dir.as_deref()).map(PartialEvents::Spilled)
                        } else {
                            Ok(PartialEvents::Memory(events))
                        };
                        (TaskStatus::Ok, n, partial)
                    }
                    Err(reason) => {
                        log::warn!("task {} ({}) failed: {reason}", task.task_id, task.detector);
                        (TaskStatus::Failed(reason), 0, Ok(PartialEvents::Memory(Vec::new())))
                    }
                };
                let row = TaskRow {
                    task_id: task.task_id,
                    detector: task.detector.clone(),
                    channel: task.unit.channel_id.clone(),
                    t0: task.unit.core_span.0,
                    t1: task.unit.core_span.1,
                    status,
                    wall_ms,
                    n_events,
                    worker,
                };
                results.lock().expect("no worker panics while holding the lock")[i] = Some((row, partial));
            });
        }
    });
    let mut rows = Vec::with_capacity(plan.tasks.len());
    let mut partials = Vec::with_capacity(plan.tasks.len());
    for (i, slot) in results.into_inner().expect("workers finished").into_iter().enumerate() {
        let (row, partial) = slot.expect("every task ran");
        partials.push((i, partial?.load()?));
        rows.push(row);
    }
    let events = gather(&partials, plan, merge)?.events;
    Ok(RunReport {
        job_id: plan.job_id.clone(),
        workers,
        events,
        tasks: rows,
        wall_s: started.elapsed().as_secs_f64(),
        warnings: plan.warnings.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gathered {
    /// Canonically sorted, with ids `<job_id>:<n>` in that order.
    pub events: Vec<EventRecord>,
    /// Task each retained event came from.
    pub origin: Vec<usize>,
    /// Ids of the partial events folded into each retained event,
    /// including its own.
    pub merged_from: Vec<Vec<String>>,
}

impl Gathered {
    /// The merged events regrouped by origin task, ready to gather again.
    pub fn as_partials(&self) -> Vec<(usize, Vec<EventRecord>)> {
        let mut by_task: BTreeMap<usize, Vec<EventRecord>> = BTreeMap::new();
        for (e, &t) in self.events.iter().zip(&self.origin) {
            by_task.entry(t).or_default().push(e.clone());
        }
        by_task.into_iter().collect()
    }
}

fn within(a: &EventRecord, b: &EventRecord, tol: MergeTol) -> bool {
    let dt_ms = tol.dt * 1000.0 + 1e-6;
    ((a.begin.0 - b.begin.0).abs() as f64) <= dt_ms
        && ((a.end.0 - b.end.0).abs() as f64) <= dt_ms
        && (a.f_lo - b.f_lo).abs() <= tol.df + 1e-9
        && (a.f_hi - b.f_hi).abs() <= tol.df + 1e-9
}

/// Merges partial event lists.
///
/// An event that reaches into its unit's pads is a duplicate candidate. In
/// descending score order (canonical order breaks ties), each event not yet
/// absorbed is kept and absorbs every later candidate from an adjacent unit
/// of the same detector whose start, end and band edges all lie within
/// `tol` of it. No kept pair is mergeable afterwards, so gathering the
/// result again changes nothing.
pub fn gather(partials: &[(usize, Vec<EventRecord>)], plan: &TaskPlan, tol: MergeTol) -> Result<Gathered, AdaError> {
    let mut items: Vec<(usize, &EventRecord)> = Vec::new();
    for (task_id, events) in partials {
        if *task_id >= plan.tasks.len() {
            return Err(AdaError::Consistency(format!(
                "partial references task {task_id}, but the plan has {} tasks",
                plan.tasks.len()
            )));
        }
        items.extend(events.iter().map(|e| (*task_id, e)));
    }
    let candidate: Vec<bool> = items
        .iter()
        .map(|&(t, e)| {
            let (c0, c1) = plan.tasks[t].core_millis();
            e.begin < c0 || e.end > c1
        })
        .collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .1
            .score
            .total_cmp(&items[a].1.score)
            .then_with(|| items[a].1.canonical_cmp(items[b].1))
            .then_with(|| items[a].0.cmp(&items[b].0))
    });
    let mut rank = vec![0; items.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut by_task: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &(t, _)) in items.iter().enumerate() {
        if candidate[i] {
            by_task.entry(t).or_default().push(i);
        }
    }
    let neighbours = |t: usize| -> Vec<usize> {
        by_task
            .keys()
            .copied()
            .filter(|&u| u != t && plan.tasks[t].adjacent(&plan.tasks[u]))
            .collect()
    };
    let mut absorbed = vec![false; items.len()];
    let mut kept: Vec<(usize, Vec<String>)> = Vec::new();
    for &i in &order {
        if absorbed[i] {
            continue;
        }
        let (t, e) = items[i];
        let mut sources = vec![e.event_id.clone()];
        if candidate[i] {
            for u in neighbours(t) {
                for &j in &by_task[&u] {
                    if !absorbed[j] && rank[j] > rank[i] && within(e, items[j].1, tol) {
                        absorbed[j] = true;
                        sources.push(items[j].1.event_id.clone());
                    }
                }
            }
        }
        kept.push((i, sources));
    }
    kept.sort_by(|a, b| items[a.0].1.canonical_cmp(items[b.0].1).then(items[a.0].0.cmp(&items[b.0].0)));
    let mut out = Gathered {
        events: Vec::with_capacity(kept.len()),
        origin: Vec::with_capacity(kept.len()),
        merged_from: Vec::with_capacity(kept.len()),
    };
    for (n, (i, sources)) in kept.into_iter().enumerate() {
        let mut e = items[i].1.clone();
        e.event_id = format!("{}:{n}", plan.job_id);
        e.run_id = plan.job_id.clone();
        out.events.push(e);
        out.origin.push(items[i].0);
        out.merged_from.push(sources);
    }
    Ok(out)
}

/// Everything `run` needs, loaded and checked before any task starts.
pub struct PreparedJob {
    pub spec: JobSpec,
    pub manifest: ArchiveManifest,
    pub registry: Registry,
    pub plan: TaskPlan,
    /// Truth events of the rendered scene, if the config has one.
    pub truth: Option<Vec<EventRecord>>,
}

/// Renders the optional scene, scans the archive, resolves detectors and
/// plans the job.
pub fn prepare_job(cfg: &JobConfig) -> Result<PreparedJob, AdaError> {
    let spec = JobSpec::from_config(cfg)?;
    let pattern = NamePattern::new(&cfg.archive.pattern)?;
    let mut truth = None;
    if let Some(scene) = &cfg.scene {
        let rendered = render_scene(scene)?;
        write_scene(&rendered, &cfg.archive.root, &pattern)?;
        if let Some(path) = &scene.truth_path {
            let mut t = rendered.truth.clone();
            sort_canonical(&mut t);
            store_write(Backend::from_path(path).unwrap_or(Backend::Flat), path, &t)?;
        }
        truth = Some(rendered.truth);
    }
    let manifest = scan_archive(&cfg.archive.root, &pattern)?;
    for s in &manifest.skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    let registry = Registry::from_configs(&cfg.detector, &cfg.base_dir)?;
    let plan = plan(&spec, &registry, &manifest)?;
    Ok(PreparedJob {
        spec,
        manifest,
        registry,
        plan,
        truth,
    })
}

impl PreparedJob {
    pub fn execute(&self, workers: usize) -> Result<RunReport, AdaError> {
        let runner = ArchiveRunner {
            manifest: &self.manifest,
            registry: &self.registry,
            run_id: self.spec.job_id.clone(),
        };
        let opts = ExecOptions {
            spill_threshold: None,
            spill_dir: self.spec.output.parent().map(Path::to_path_buf).filter(|p| p.is_dir()),
        };
        execute_with(&self.plan, &runner, workers, self.spec.merge, &opts)
    }
}

/// plan → execute → gather → store. Task failures are in the report; only
/// setup and output I/O errors fail the run.
pub fn run_job(cfg: &JobConfig) -> Result<RunReport, AdaError> {
    let job = prepare_job(cfg)?;
    let report = job.execute(job.spec.workers)?;
    if let Some(parent) = job.spec.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| StoreError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    store_write(job.spec.backend, &job.spec.output, &report.events)?;
    Ok(report)
}
