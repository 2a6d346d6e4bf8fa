//! Fitness evaluation.
//!
//! An [`Evaluator`] owns one [`Backend`] (a closed-form surrogate or an
//! external training process), a [`FitnessCache`], and the task description
//! (input shape, class count). Shape inference runs before any backend call:
//! out-of-shape genomes score 0 without reaching the backend.

mod cache;
mod external;
mod surrogate;

pub use cache::FitnessCache;
pub use external::{EvalResponse, ExternalBackend, ExternalSettings, WireRequest, BACKEND_CMD_ENV};
pub use surrogate::{surrogate_fitness, Family, SurrogateBackend, SurrogateSpec};

use crate::config::TrainBudget;
use crate::genome::{infer_shapes, Genome, ImageShape};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Surrogate,
    External,
    Cache,
}

/// Result of evaluating one genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    /// Validation accuracy in [0, 1].
    pub fitness: f64,
    pub loss: Option<f64>,
    pub num_params: u64,
    pub eval_seconds: f64,
    pub source: Source,
    #[serde(default)]
    pub out_of_shape: bool,
    #[serde(default)]
    pub error: Option<String>,
}

impl FitnessRecord {
    pub fn out_of_shape(source: Source) -> Self {
        FitnessRecord {
            fitness: 0.0,
            loss: None,
            num_params: 0,
            eval_seconds: 0.0,
            source,
            out_of_shape: true,
            error: None,
        }
    }

    pub fn failed(source: Source, message: String) -> Self {
        FitnessRecord {
            fitness: 0.0,
            loss: None,
            num_params: 0,
            eval_seconds: 0.0,
            source,
            out_of_shape: false,
            error: Some(message),
        }
    }
}

/// What is being classified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub input_shape: ImageShape,
    pub num_classes: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Everything a backend needs to score one in-shape genome.
#[derive(Debug, Clone, Copy)]
pub struct EvalRequest<'a> {
    pub genome: &'a Genome,
    pub budget: &'a TrainBudget,
    pub repeat_index: u32,
    pub seed: u64,
    pub task: &'a EvalTask,
    /// Parameter count from shape inference.
    pub num_params: u64,
}

/// Raw backend answer; a per-request failure is carried in `error`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub fitness: f64,
    pub loss: Option<f64>,
    pub num_params: u64,
    pub eval_seconds: f64,
    pub error: Option<String>,
}

pub trait Backend: Send + Sync {
    fn source(&self) -> Source;

    /// Folded into cache keys so records from different backends never mix.
    fn identity(&self) -> String;

    fn evaluate(&self, request: &EvalRequest<'_>) -> Result<BackendReply, BackendError>;
}

/// One unit of work for [`Evaluator::evaluate_batch`].
#[derive(Debug, Clone, Copy)]
pub struct EvalJob<'a> {
    pub genome: &'a Genome,
    pub budget: &'a TrainBudget,
    pub repeat_index: u32,
}

pub struct Evaluator {
    backend: Box<dyn Backend>,
    cache: FitnessCache,
    task: EvalTask,
    seed: u64,
    pool: Option<rayon::ThreadPool>,
    backend_lost: AtomicBool,
}

impl Evaluator {
    pub fn new(backend: Box<dyn Backend>, task: EvalTask) -> Self {
        Evaluator {
            backend,
            cache: FitnessCache::in_memory(),
            task,
            seed: 0,
            pool: None,
            backend_lost: AtomicBool::new(false),
        }
    }

    pub fn surrogate(spec: SurrogateSpec, task: EvalTask) -> Self {
        Self::new(Box::new(SurrogateBackend::new(spec, task.input_shape)), task)
    }

    pub fn with_cache(mut self, cache: FitnessCache) -> Self {
        self.cache = cache;
        self
    }

    /// Seed mixed into the per-request training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Runs up to `jobs` backend evaluations at once.
    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.pool = (jobs > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .expect("thread pool")
        });
        self
    }

    pub fn task(&self) -> &EvalTask {
        &self.task
    }

    pub fn cache(&self) -> &FitnessCache {
        &self.cache
    }

    /// True once any evaluation failed because the backend went away.
    pub fn backend_lost(&self) -> bool {
        self.backend_lost.load(Ordering::Relaxed)
    }

    pub fn cache_key(&self, genome: &Genome, budget: &TrainBudget, repeat_index: u32) -> String {
        let material = format!(
            "{}\n{}\n{}\n{}\n{}",
            self.backend.identity(),
            genome.to_canonical_json(),
            serde_json::to_string(budget).expect("budget serializes"),
            serde_json::to_string(&self.task).expect("task serializes"),
            repeat_index
        );
        rng::hex_digest(material.as_bytes())
    }

    pub fn evaluate(&self, genome: &Genome, budget: &TrainBudget, repeat_index: u32) -> FitnessRecord {
        self.evaluate_batch(&[EvalJob {
            genome,
            budget,
            repeat_index,
        }])
        .pop()
        .expect("one record per job")
    }

    /// Evaluates every job; records come back in job order.
    ///
    /// Distinct cache misses run on the thread pool. The first job with a
    /// given key receives the backend record; later duplicates in the same
    /// batch receive the cached copy, so the output does not depend on
    /// completion order.
    pub fn evaluate_batch(&self, jobs: &[EvalJob<'_>]) -> Vec<FitnessRecord> {
        enum Slot {
            Done(FitnessRecord),
            Fresh(usize),
            Dup(usize),
        }

        let mut slots = Vec::with_capacity(jobs.len());
        let mut fresh: Vec<(String, EvalJob<'_>, u64)> = Vec::new();
        let mut fresh_index: HashMap<String, usize> = HashMap::new();

        for job in jobs {
            let num_params = match infer_shapes(job.genome, self.task.input_shape) {
                Ok(report) => report.total_params,
                Err(_) => {
                    slots.push(Slot::Done(FitnessRecord::out_of_shape(self.backend.source())));
                    continue;
                }
            };
            let key = self.cache_key(job.genome, job.budget, job.repeat_index);
            if let Some(hit) = self.cache.get(&key) {
                slots.push(Slot::Done(hit));
            } else if let Some(&i) = fresh_index.get(&key) {
                slots.push(Slot::Dup(i));
            } else {
                fresh_index.insert(key.clone(), fresh.len());
                slots.push(Slot::Fresh(fresh.len()));
                fresh.push((key, *job, num_params));
            }
        }

        let run = |(key, job, num_params): &(String, EvalJob<'_>, u64)| -> FitnessRecord {
            let seed = rng::derive_u64(self.seed, &format!("eval:{key}"), &[]);
            let request = EvalRequest {
                genome: job.genome,
                budget: job.budget,
                repeat_index: job.repeat_index,
                seed,
                task: &self.task,
                num_params: *num_params,
            };
            self.run_backend(key, &request)
        };
        let computed: Vec<FitnessRecord> = match &self.pool {
            Some(pool) => pool.install(|| fresh.par_iter().map(run).collect()),
            None => fresh.iter().map(run).collect(),
        };

        slots
            .into_iter()
            .map(|slot| match slot {
                Slot::Done(r) => r,
                Slot::Fresh(i) => computed[i].clone(),
                Slot::Dup(i) => {
                    let mut r = computed[i].clone();
                    if r.error.is_none() {
                        r.source = Source::Cache;
                    }
                    r
                }
            })
            .collect()
    }

    fn run_backend(&self, key: &str, request: &EvalRequest<'_>) -> FitnessRecord {
        let source = self.backend.source();
        match self.backend.evaluate(request) {
            Ok(reply) => {
                let record = match reply.error {
                    Some(message) => FitnessRecord {
                        num_params: reply.num_params,
                        eval_seconds: reply.eval_seconds,
                        ..FitnessRecord::failed(source, message)
                    },
                    None => FitnessRecord {
                        fitness: reply.fitness,
                        loss: reply.loss,
                        num_params: reply.num_params,
                        eval_seconds: reply.eval_seconds,
                        source,
                        out_of_shape: false,
                        error: None,
                    },
                };
                if record.error.is_none() {
                    if let Err(e) = self.cache.insert(key, &record) {
                        eprintln!("warning: fitness cache write failed: {e}");
                    }
                }
                record
            }
            Err(err) => {
                if matches!(err, BackendError::Unavailable(_)) {
                    self.backend_lost.store(true, Ordering::Relaxed);
                }
                FitnessRecord::failed(source, err.to_string())
            }
        }
    }
}
