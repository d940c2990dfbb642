use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use plasticity_core::data::{build_stream, load_mnist_files, MnistFiles, StreamConfig, StreamKind, TaskOrder};
use plasticity_core::harness::{run_suite, ExperimentConfig};
use plasticity_core::model::{MlpObjective, ParamSet};
use plasticity_core::optim::{OptimizerConfig, OptimizerKind};
use plasticity_core::probes::{local_lipschitz_estimate, max_hessian_eigenvalue};
use plasticity_core::report::{read_records_csv, render_accuracy_plot, setting_order, summarize_table, write_records_csv, PlotOptions};
use plasticity_core::rng::rng_stream;
use plasticity_core::selftest;

#[derive(Parser)]
#[command(name = "plasticity", version, about = "Continual-learning plasticity experiments on MNIST task streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured setting over a task stream and write results.
    Run(RunArgs),
    /// Regenerate summary table and plot from a records CSV.
    Report(ReportArgs),
    /// Sharpness probe of a saved parameter vector.
    Probe(ProbeArgs),
    /// Numerical self-checks that need no dataset.
    Selftest,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
}

impl DataArgs {
    fn files(&self) -> MnistFiles {
        let mut f = MnistFiles::in_dir(&self.data_dir);
        let pick = |slot: &mut PathBuf, over: &Option<PathBuf>| {
            if let Some(p) = over {
                *slot = p.clone();
            }
        };
        pick(&mut f.train_images, &self.train_images);
        pick(&mut f.train_labels, &self.train_labels);
        pick(&mut f.test_images, &self.test_images);
        pick(&mut f.test_labels, &self.test_labels);
        f
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// domain | class
    #[arg(long)]
    stream: Option<StreamKind>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    stream_seed: Option<u64>,
    /// Shuffle the class-pair order instead of lexicographic.
    #[arg(long)]
    shuffle_pairs: bool,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    reset_per_task: bool,
    /// Probe the top Hessian eigenvalue after every N-th task (0 = never).
    #[arg(long)]
    probe_every: Option<usize>,
    #[arg(long)]
    probe_batch_size: Option<usize>,
    #[arg(long)]
    probe_tol: Option<f64>,
    #[arg(long)]
    probe_max_iter: Option<usize>,
    /// SAM perturbation radius applied to every SAM setting.
    #[arg(long)]
    rho: Option<f64>,
    /// Replace the settings list with a JSON array of optimizer configs.
    #[arg(long)]
    settings: Option<String>,
    /// Train on only the first N examples of each task.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write each run's final parameters under <out>/params/.
    #[arg(long)]
    save_params: bool,
    /// Also draw each seed's curve in the plot.
    #[arg(long)]
    per_seed_plot: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    per_seed_plot: bool,
}

#[derive(Args)]
struct ProbeArgs {
    /// ParamSet JSON as written by `run --save-params`.
    #[arg(long)]
    params: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Task whose test split supplies the probe batch.
    #[arg(long, default_value_t = 1)]
    task: usize,
    #[arg(long, default_value_t = 0)]
    stream_seed: u64,
    #[arg(long)]
    shuffle_pairs: bool,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = plasticity_core::probes::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = plasticity_core::probes::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also estimate the local Lipschitz constant at this radius.
    #[arg(long)]
    lipschitz_radius: Option<f64>,
    #[arg(long, default_value_t = 256)]
    lipschitz_samples: usize,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(kind) = args.stream {
        if kind != cfg.stream.kind && args.tasks.is_none() {
            cfg.stream.n_tasks = kind.default_tasks();
        }
        cfg.stream.kind = kind;
    }
    if let Some(n) = args.tasks {
        cfg.stream.n_tasks = n;
    }
    if let Some(s) = args.stream_seed {
        cfg.stream.master_seed = s;
    }
    if args.shuffle_pairs {
        cfg.stream.task_order = TaskOrder::Shuffled;
    }
    if let Some(json) = &args.settings {
        cfg.settings = serde_json::from_str::<Vec<OptimizerConfig>>(json).context("parsing --settings")?;
    }
    if let Some(rho) = args.rho {
        for s in cfg.settings.iter_mut().filter(|s| s.kind == OptimizerKind::Sam) {
            s.rho = rho;
        }
    }
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(args.seeds, cfg.n_seeds);
    set!(args.master_seed, cfg.master_seed);
    set!(args.epochs, cfg.epochs_per_task);
    set!(args.batch_size, cfg.batch_size);
    set!(args.hidden_width, cfg.hidden_width);
    set!(args.probe_every, cfg.probe_every);
    set!(args.probe_batch_size, cfg.probe.batch_size);
    set!(args.probe_tol, cfg.probe.tol);
    set!(args.probe_max_iter, cfg.probe.max_iter);
    set!(args.threads, cfg.threads);
    if args.train_limit.is_some() {
        cfg.train_limit = args.train_limit;
    }
    cfg.reset_per_task |= args.reset_per_task;
    cfg.keep_final_params |= args.save_params;
    cfg.validate()?;
    Ok(cfg)
}

fn write_reports(records: &[plasticity_core::harness::RunRecord], order: &[String], out: &Path, per_seed: bool) -> Result<()> {
    fs::write(out.join("summary.md"), summarize_table(records, order)).context("writing summary.md")?;
    if records.iter().any(|r| r.succeeded() && !r.per_task_accuracy.is_empty()) {
        render_accuracy_plot(
            records,
            out.join("accuracy.svg"),
            &PlotOptions {
                title: None,
                per_seed,
            },
        )?;
    } else {
        log::warn!("no successful runs; skipping accuracy.svg");
    }
    Ok(())
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let data = load_mnist_files(&args.data.files())?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("config.json"), serde_json::to_string_pretty(&cfg)?).context("writing config.json")?;
    log::info!(
        "{} settings x {} seeds over {} {:?} tasks",
        cfg.settings.len(),
        cfg.n_seeds,
        cfg.stream.n_tasks,
        cfg.stream.kind
    );
    let records = run_suite(&cfg, &data)?;
    write_records_csv(&records, args.out.join("records.csv"))?;
    let order: Vec<String> = cfg.settings.iter().map(|s| s.label()).collect();
    write_reports(&records, &order, &args.out, args.per_seed_plot)?;
    if args.save_params {
        let dir = args.out.join("params");
        fs::create_dir_all(&dir)?;
        for r in &records {
            if let Some(p) = &r.final_params {
                let path = dir.join(format!("{}_seed{}.json", file_stem(&r.setting), r.seed));
                fs::write(&path, serde_json::to_string(p)?).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    let failed = records.iter().filter(|r| !r.succeeded()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed; see records.csv", records.len());
    }
    println!("{}", summarize_table(&records, &order));
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let records = read_records_csv(&args.csv)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let order = setting_order(&records);
    write_reports(&records, &order, &args.out, args.per_seed_plot)?;
    println!("{}", summarize_table(&records, &order));
    Ok(())
}

fn cmd_probe(args: &ProbeArgs) -> Result<()> {
    let text = fs::read_to_string(&args.params).with_context(|| format!("reading {}", args.params.display()))?;
    let params: ParamSet = serde_json::from_str(&text).context("parsing parameter file")?;
    params.validate()?;
    let kind = match params.output_dim() {
        10 => StreamKind::Domain,
        2 => StreamKind::Class,
        k => bail!("parameters have {k} outputs; expected 10 (domain) or 2 (class)"),
    };
    if args.task == 0 {
        bail!("--task is 1-based");
    }
    let data = load_mnist_files(&args.data.files())?;
    let stream = StreamConfig {
        kind,
        n_tasks: args.task,
        master_seed: args.stream_seed,
        task_order: if args.shuffle_pairs {
            TaskOrder::Shuffled
        } else {
            TaskOrder::Lexicographic
        },
    };
    let tasks = build_stream(&stream, &data)?;
    let task = tasks.last().context("empty stream")?;
    let mut picks = rng_stream(args.seed, "probe", 0).permutation(task.test.len());
    picks.truncate(args.batch_size);
    let batch = task.test.batch(&picks)?;
    let obj = MlpObjective::for_params(&params, &batch)?;
    let report = max_hessian_eigenvalue(
        &obj,
        params.values(),
        args.tol,
        args.max_iter,
        &mut rng_stream(args.seed, "probe-start", 0),
    )?;
    let mut out = serde_json::json!({ "task": task.id, "sharpness": report });
    if let Some(radius) = args.lipschitz_radius {
        let est = local_lipschitz_estimate(
            &obj,
            params.values(),
            radius,
            args.lipschitz_samples,
            &mut rng_stream(args.seed, "lipschitz", 0),
        )?;
        out["lipschitz"] = serde_json::to_value(est)?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let results = selftest::run_all()?;
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} self-checks failed", results.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
