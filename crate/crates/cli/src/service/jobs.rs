//! In-memory job store and a FIFO pool of sampler threads.
//!
//! The store lock is held only to read or flip job state; sampling runs
//! without it and publishes progress through atomics, so polling never
//! waits on a running sampler.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use ilvr_core::metrics::{lowfreq_error_with, pairwise_diversity};
use ilvr_core::sampler::{DrawOptions, IlvrSampler};
use ilvr_core::tensorio::encode_pixmap;
use ilvr_core::{IlvrConfig, Kernel, Schedule, Tensor};
use serde::{Deserialize, Serialize};

use super::registry::ModelEntry;
use crate::commands::sample_stem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

/// A validated request.
pub struct JobSpec {
    pub model: Arc<ModelEntry>,
    pub reference: Tensor,
    pub factor: usize,
    pub kernel: Kernel,
    pub stop_step: usize,
    pub count: usize,
    pub seed: u64,
}

impl JobSpec {
    pub fn ilvr_config(&self) -> IlvrConfig {
        IlvrConfig {
            reference: self.reference.clone(),
            factor: self.factor,
            kernel: self.kernel,
            stop_step: self.stop_step,
            seed: self.seed,
            count: self.count,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleResult {
    pub index: usize,
    #[serde(skip)]
    pub pixmap: Vec<u8>,
    pub lowfreq_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobResults {
    pub samples: Vec<SampleResult>,
    pub diversity: Option<f64>,
}

#[derive(Default)]
struct Progress {
    t: AtomicUsize,
    completed: AtomicUsize,
}

struct JobRecord {
    spec: Arc<JobSpec>,
    state: JobState,
    progress: Arc<Progress>,
    results: Option<Arc<JobResults>>,
    error: Option<String>,
}

/// A point-in-time copy of one job.
pub struct JobSnapshot {
    pub id: String,
    pub spec: Arc<JobSpec>,
    pub state: JobState,
    pub t: usize,
    pub completed: usize,
    pub results: Option<Arc<JobResults>>,
    pub error: Option<String>,
}

pub fn job_id(n: u64) -> String {
    format!("job-{n:06}")
}

pub fn parse_job_id(id: &str) -> Option<u64> {
    let digits = id.strip_prefix("job-")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

struct Shared {
    next: AtomicU64,
    jobs: Mutex<HashMap<u64, JobRecord>>,
    sched: Arc<Schedule>,
    run_dir: Option<PathBuf>,
}

impl Shared {
    fn jobs(&self) -> MutexGuard<'_, HashMap<u64, JobRecord>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct JobStore {
    shared: Arc<Shared>,
    queue: Mutex<Option<Sender<u64>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl JobStore {
    /// Starts `workers` sampler threads.
    pub fn start(sched: Arc<Schedule>, workers: usize, run_dir: Option<PathBuf>) -> Self {
        let shared = Arc::new(Shared {
            next: AtomicU64::new(1),
            jobs: Mutex::new(HashMap::new()),
            sched,
            run_dir,
        });
        let (tx, rx) = channel::<u64>();
        let rx = Arc::new(Mutex::new(rx));
        let handles = (0..workers.max(1))
            .map(|_| {
                let (shared, rx) = (Arc::clone(&shared), Arc::clone(&rx));
                std::thread::spawn(move || worker(&shared, &rx))
            })
            .collect();
        Self {
            shared,
            queue: Mutex::new(Some(tx)),
            workers: Mutex::new(handles),
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.shared.sched
    }

    /// Enqueues a validated job and returns its id.
    pub fn submit(&self, spec: JobSpec) -> String {
        let n = self.shared.next.fetch_add(1, Ordering::SeqCst);
        let progress = Arc::new(Progress::default());
        progress.t.store(self.shared.sched.steps(), Ordering::Relaxed);
        // Insert and send under the store lock so ids reach the queue in order.
        let mut jobs = self.shared.jobs();
        jobs.insert(
            n,
            JobRecord {
                spec: Arc::new(spec),
                state: JobState::Queued,
                progress,
                results: None,
                error: None,
            },
        );
        if let Some(tx) = self.queue.lock().unwrap_or_else(|e| e.into_inner()).as_ref() {
            let _ = tx.send(n);
        }
        job_id(n)
    }

    pub fn get(&self, id: &str) -> Option<JobSnapshot> {
        let n = parse_job_id(id)?;
        let jobs = self.shared.jobs();
        let rec = jobs.get(&n)?;
        Some(JobSnapshot {
            id: job_id(n),
            spec: Arc::clone(&rec.spec),
            state: rec.state,
            t: rec.progress.t.load(Ordering::Relaxed),
            completed: rec.progress.completed.load(Ordering::Relaxed),
            results: rec.results.clone(),
            error: rec.error.clone(),
        })
    }

    /// Stops accepting work and waits for queued jobs to finish.
    pub fn shutdown(&self) {
        self.queue.lock().unwrap_or_else(|e| e.into_inner()).take();
        let handles = std::mem::take(&mut *self.workers.lock().unwrap_or_else(|e| e.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for JobStore {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker(shared: &Shared, rx: &Mutex<Receiver<u64>>) {
    loop {
        let next = rx.lock().unwrap_or_else(|e| e.into_inner()).recv();
        let Ok(n) = next else { return };
        let (spec, progress) = {
            let mut jobs = shared.jobs();
            let Some(rec) = jobs.get_mut(&n) else { continue };
            rec.state = JobState::Running;
            (Arc::clone(&rec.spec), Arc::clone(&rec.progress))
        };
        let outcome = run_job(&spec, &shared.sched, &progress);
        if let (Some(dir), Ok(results)) = (&shared.run_dir, &outcome) {
            if let Err(e) = write_through(&dir.join(job_id(n)), &spec, results) {
                eprintln!("{}: write-through failed: {e}", job_id(n));
            }
        }
        let mut jobs = shared.jobs();
        if let Some(rec) = jobs.get_mut(&n) {
            match outcome {
                Ok(results) => {
                    rec.results = Some(Arc::new(results));
                    rec.state = JobState::Done;
                }
                Err(e) => {
                    rec.error = Some(e.to_string());
                    rec.state = JobState::Failed;
                }
            }
        }
    }
}

/// Draws the job's samples in index order on the calling thread.
fn run_job(spec: &JobSpec, sched: &Schedule, progress: &Progress) -> ilvr_core::Result<JobResults> {
    let sampler = IlvrSampler::new(&spec.model.model, sched, spec.ilvr_config())?;
    let report = |t: usize| progress.t.store(t, Ordering::Relaxed);
    let opts = DrawOptions {
        snapshot_stride: None,
        progress: Some(&report),
    };
    let mut samples = Vec::with_capacity(spec.count);
    let mut xs = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let x = sampler.draw(index, &opts)?.x0;
        samples.push(SampleResult {
            index,
            pixmap: encode_pixmap(&x)?,
            lowfreq_error: lowfreq_error_with(sampler.op(), &x, &spec.reference)?,
        });
        xs.push(x);
        progress.completed.store(index + 1, Ordering::Relaxed);
    }
    progress.t.store(0, Ordering::Relaxed);
    let diversity = if xs.len() >= 2 {
        Some(pairwise_diversity(&xs)?)
    } else {
        None
    };
    Ok(JobResults { samples, diversity })
}

fn write_through(dir: &std::path::Path, spec: &JobSpec, results: &JobResults) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let ext = if spec.reference.shape()[0] == 1 { "pgm" } else { "ppm" };
    for s in &results.samples {
        fs::write(dir.join(format!("{}.{ext}", sample_stem(s.index))), &s.pixmap)?;
    }
    if let Ok(reference) = encode_pixmap(&spec.reference) {
        fs::write(dir.join(format!("reference.{ext}")), reference)?;
    }
    let record = serde_json::json!({
        "model": spec.model.id,
        "model_id": spec.model.content_id,
        "factor": spec.factor,
        "kernel": spec.kernel,
        "stop_step": spec.stop_step,
        "count": spec.count,
        "seed": spec.seed,
        "results": results,
    });
    fs::write(dir.join("job.json"), serde_json::to_string_pretty(&record)? + "\n")
}
