//! Experiment driver: trains one persistent network per (setting, seed)
//! across a task stream and records task-specific test accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Counted, EvalCounts};
use crate::data::{build_stream, MnistData, StreamConfig, Task};
use crate::model::{accuracy, init_mlp, MlpObjective, ParamSet, DEFAULT_HIDDEN_WIDTH};
use crate::optim::{step, OptimizerConfig};
use crate::probes::{max_hessian_eigenvalue, SharpnessReport, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng::rng_stream;
use crate::vecops::fingerprint;
use crate::{Error, Result};

/// Settings for the periodic top-eigenvalue probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Examples in the held-out probe batch.
    pub batch_size: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stream for seed index `i` uses `stream.master_seed + i`.
    pub stream: StreamConfig,
    pub settings: Vec<OptimizerConfig>,
    pub n_seeds: usize,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    /// Probe sharpness after every `probe_every`-th task; 0 disables.
    pub probe_every: usize,
    /// Run for seed index `i` initializes and shuffles from `master_seed + i`.
    pub master_seed: u64,
    /// Reinitialize the network before every task (ablation only).
    pub reset_per_task: bool,
    pub probe: ProbeConfig,
    /// Train on only the first `n` examples of each task.
    pub train_limit: Option<usize>,
    /// Worker threads for independent runs; 0 uses all cores.
    pub threads: usize,
    /// Keep final parameters in each [`RunRecord`].
    pub keep_final_params: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: StreamConfig::default(),
            settings: OptimizerConfig::standard_presets(),
            n_seeds: 10,
            epochs_per_task: 1,
            batch_size: 64,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            probe_every: 0,
            master_seed: 0,
            reset_per_task: false,
            probe: ProbeConfig::default(),
            train_limit: None,
            threads: 0,
            keep_final_params: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        self.stream.validate()?;
        if self.settings.is_empty() {
            return bad("at least one training setting is required");
        }
        for s in &self.settings {
            s.validate()?;
        }
        let mut labels: Vec<String> = self.settings.iter().map(|s| s.label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("setting labels must be unique");
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1");
        }
        if self.epochs_per_task == 0 {
            return bad("epochs_per_task must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be at least 1");
        }
        if self.train_limit == Some(0) {
            return bad("train_limit must be positive");
        }
        if self.probe.batch_size == 0 || !(self.probe.tol > 0.0) || self.probe.max_iter == 0 {
            return bad("probe needs a positive batch size, tolerance and iteration cap");
        }
        Ok(())
    }

    pub fn run_seed(&self, seed_index: usize) -> u64 {
        self.master_seed.wrapping_add(seed_index as u64)
    }

    pub fn stream_for_seed(&self, seed_index: usize) -> StreamConfig {
        StreamConfig {
            master_seed: self.stream.master_seed.wrapping_add(seed_index as u64),
            ..self.stream.clone()
        }
    }

    pub fn layer_sizes(&self, n_features: usize) -> Vec<usize> {
        vec![
            n_features,
            self.hidden_width,
            self.hidden_width,
            self.hidden_width,
            self.stream.kind.n_outputs(),
        ]
    }
}

/// Why and where a run stopped early.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    /// 1-based task id.
    pub task_index: usize,
    pub message: String,
}

/// Which split an accuracy was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

/// Per-task bookkeeping used to audit a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task_id: usize,
    /// Sampled fingerprint of the task's train and test examples.
    pub data_fingerprint: u64,
    pub params_in: u64,
    pub params_out: u64,
    pub evaluated_on: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: String,
    pub seed: u64,
    pub per_task_accuracy: Vec<f64>,
    /// Top Hessian eigenvalue after each task, when probed.
    pub per_task_lambda_max: Vec<Option<f64>>,
    #[serde(default)]
    pub per_task_sharpness: Vec<Option<SharpnessReport>>,
    pub degenerate_step_count: u64,
    pub gradient_evals: u64,
    pub hvp_evals: u64,
    pub failure: Option<RunFailure>,
    #[serde(default)]
    pub trace: Vec<TaskTrace>,
    #[serde(skip)]
    pub final_params: Option<ParamSet>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

const FINGERPRINT_STRIDE: usize = 97;

fn task_fingerprint(task: &Task) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for split in [&task.train, &task.test] {
        for b in (split.len() as u64).to_le_bytes() {
            feed(b);
        }
        for i in (0..split.len()).step_by(FINGERPRINT_STRIDE) {
            for b in split.image_bytes(i) {
                feed(b);
            }
            feed(split.label(i) as u8);
        }
    }
    h
}

struct Accounting {
    counts: EvalCounts,
    degenerate: u64,
}

fn train_on_task(
    config: &ExperimentConfig,
    setting: &OptimizerConfig,
    run_seed: u64,
    task_pos: usize,
    task: &Task,
    params: &mut ParamSet,
    acct: &mut Accounting,
) -> Result<()> {
    let n = config
        .train_limit
        .map_or(task.train.len(), |l| l.min(task.train.len()));
    if n == 0 {
        return Err(Error::Usage(format!("task {} has no training examples", task.id)));
    }
    for epoch in 0..config.epochs_per_task {
        let stream_index = (task_pos * config.epochs_per_task + epoch) as u64;
        let mut order: Vec<usize> = (0..n).collect();
        rng_stream(run_seed, "shuffle", stream_index).shuffle(&mut order);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = task.train.batch(chunk)?;
            let obj = Counted::new(MlpObjective::for_params(params, &batch)?);
            let out = step(&obj, params.values(), setting).map_err(|e| match e {
                Error::NumericalOverflow { location } => Error::NumericalOverflow {
                    location: format!("{location} (epoch {}, batch {})", epoch + 1, b + 1),
                },
                other => other,
            })?;
            let c = obj.counts();
            acct.counts.gradients += c.gradients;
            acct.counts.hvps += c.hvps;
            acct.counts.losses += c.losses;
            acct.degenerate += u64::from(out.degenerate);
            *params = params.with_values(out.params)?;
        }
    }
    Ok(())
}

fn probe_task(config: &ExperimentConfig, run_seed: u64, task_pos: usize, task: &Task, params: &ParamSet) -> Result<SharpnessReport> {
    // Same probe positions for every task of a run.
    let mut picks = rng_stream(run_seed, "probe", 0).permutation(task.test.len());
    picks.truncate(config.probe.batch_size);
    let batch = task.test.batch(&picks)?;
    let obj = MlpObjective::for_params(params, &batch)?;
    max_hessian_eigenvalue(
        &obj,
        params.values(),
        config.probe.tol,
        config.probe.max_iter,
        &mut rng_stream(run_seed, "probe-start", task_pos as u64),
    )
}

/// Trains one network for `setting` over `tasks`.
///
/// Numerical failures stop the run and are recorded on the returned record
/// together with the offending task; configuration errors are returned.
pub fn run_setting_on_stream(
    config: &ExperimentConfig,
    setting: &OptimizerConfig,
    seed_index: usize,
    tasks: &[Task],
) -> Result<RunRecord> {
    config.validate()?;
    setting.validate()?;
    let first = tasks
        .first()
        .ok_or_else(|| Error::Config("empty task stream".into()))?;
    if tasks.iter().any(|t| t.kind != config.stream.kind) {
        return Err(Error::Config("task kinds do not match the stream configuration".into()));
    }
    let run_seed = config.run_seed(seed_index);
    let sizes = config.layer_sizes(first.train.n_features());
    let label = setting.label();

    let mut params = init_mlp(&mut rng_stream(run_seed, "init", 0), &sizes)?;
    let mut record = RunRecord {
        setting: label.clone(),
        seed: run_seed,
        per_task_accuracy: Vec::with_capacity(tasks.len()),
        per_task_lambda_max: Vec::with_capacity(tasks.len()),
        per_task_sharpness: Vec::with_capacity(tasks.len()),
        degenerate_step_count: 0,
        gradient_evals: 0,
        hvp_evals: 0,
        failure: None,
        trace: Vec::with_capacity(tasks.len()),
        final_params: None,
    };
    let mut acct = Accounting {
        counts: EvalCounts::default(),
        degenerate: 0,
    };

    for (pos, task) in tasks.iter().enumerate() {
        if config.reset_per_task && pos > 0 {
            params = init_mlp(&mut rng_stream(run_seed, "init", pos as u64), &sizes)?;
        }
        let params_in = fingerprint(params.values());
        let outcome = train_on_task(config, setting, run_seed, pos, task, &mut params, &mut acct)
            .and_then(|()| accuracy(&params, &task.test))
            .and_then(|acc| {
                let probe = if config.probe_every > 0 && task.id % config.probe_every == 0 {
                    Some(probe_task(config, run_seed, pos, task, &params)?)
                } else {
                    None
                };
                Ok((acc, probe))
            });
        match outcome {
            Ok((acc, probe)) => {
                log::info!(
                    "{label} seed {run_seed}: task {}/{} accuracy {acc:.4}{}",
                    task.id,
                    tasks.len(),
                    probe
                        .as_ref()
                        .map(|p| format!(" lambda_max {:.4}", p.lambda_max))
                        .unwrap_or_default()
                );
                record.per_task_accuracy.push(acc);
                record.per_task_lambda_max.push(probe.as_ref().map(|p| p.lambda_max));
                record.per_task_sharpness.push(probe);
                record.trace.push(TaskTrace {
                    task_id: task.id,
                    data_fingerprint: task_fingerprint(task),
                    params_in,
                    params_out: fingerprint(params.values()),
                    evaluated_on: SplitTag::Test,
                });
            }
            Err(e @ (Error::NumericalOverflow { .. } | Error::Data(_))) => {
                log::warn!("{label} seed {run_seed}: failed at task {}: {e}", task.id);
                record.failure = Some(RunFailure {
                    task_index: task.id,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    record.gradient_evals = acct.counts.gradients;
    record.hvp_evals = acct.counts.hvps;
    record.degenerate_step_count = acct.degenerate;
    if config.keep_final_params {
        record.final_params = Some(params);
    }
    Ok(record)
}

/// Builds the stream for `seed_index` and runs one setting on it.
pub fn run_setting(
    config: &ExperimentConfig,
    setting: &OptimizerConfig,
    seed_index: usize,
    base: &MnistData,
) -> Result<RunRecord> {
    let tasks = build_stream(&config.stream_for_seed(seed_index), base)?;
    run_setting_on_stream(config, setting, seed_index, &tasks)
}

/// Runs every (setting, seed) pair. Records come back ordered by setting
/// (config order) then seed index, independent of execution order.
pub fn run_suite(config: &ExperimentConfig, base: &MnistData) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let streams: Vec<Vec<Task>> = (0..config.n_seeds)
        .map(|i| build_stream(&config.stream_for_seed(i), base))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..config.settings.len())
        .flat_map(|s| (0..config.n_seeds).map(move |i| (s, i)))
        .collect();
    let run = |&(s, i): &(usize, usize)| run_setting_on_stream(config, &config.settings[s], i, &streams[i]);
    let results: Vec<Result<RunRecord>> = if config.threads == 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };
    results.into_iter().collect()
}

/// Mean of successive differences, `(a_T − a_1)/(T − 1)`.
pub fn mean_per_task_change(per_task_accuracy: &[f64]) -> Result<f64> {
    let n = per_task_accuracy.len();
    if n < 2 {
        return Err(Error::Usage(format!("need at least 2 tasks for a per-task change, got {n}")));
    }
    Ok((per_task_accuracy[n - 1] - per_task_accuracy[0]) / (n - 1) as f64)
}

/// Least-squares slope of accuracy against task index.
pub fn trend_slope(per_task_accuracy: &[f64]) -> Result<f64> {
    let n = per_task_accuracy.len();
    if n < 2 {
        return Err(Error::Usage(format!("need at least 2 tasks for a trend slope, got {n}")));
    }
    let mean_x = (n - 1) as f64 / 2.0;
    let mean_y = per_task_accuracy.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in per_task_accuracy.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}
