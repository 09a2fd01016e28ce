//! Subcommand implementations. Each resolves its inputs, runs the library
//! call, writes outputs plus a replayable manifest, and reports progress on
//! stderr (timings stay out of the deterministic artifacts).

use crate::manifest::Manifest;
use crate::ConfigError;
use anyhow::{bail, Context};
use clap::Args;
use metatopo::config::RunConfig;
use metatopo::eval::{BenchMethod, MethodSpec, ProfileMetric};
use metatopo::fem::Discretization;
use metatopo::filters::DensityField;
use metatopo::io::{checkpoint, dataset, density, results};
use metatopo::meta::{pretrain_identity, reptile_train, MetaConfig};
use metatopo::network::{init_standard, NetworkParameters};
use metatopo::optim::{network_initial_design, neural_optimize, standard_optimize};
use metatopo::taskgen::{build_dataset, Regime, Task};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandSpec {
    GenTasks(GenTasksArgs),
    MetaTrain(MetaTrainArgs),
    Pretrain(PretrainArgs),
    Optimize(OptimizeArgs),
    Bench(BenchArgs),
    Profile(ProfileArgs),
    Render(RenderArgs),
}

fn out_dir(config: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_manifest(config: &RunConfig, spec: CommandSpec, path: &Path) -> anyhow::Result<()> {
    Manifest::new(config, spec).write(path)
}

fn load_tasks(path: &Path) -> anyhow::Result<Vec<Task>> {
    Ok(dataset::read(path)
        .with_context(|| format!("cannot read dataset {}", path.display()))?
        .tasks)
}

fn load_params(path: &Path) -> anyhow::Result<NetworkParameters> {
    Ok(checkpoint::read(path)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?
        .params)
}

// ---------------------------------------------------------------- gen-tasks

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenTasksArgs {
    /// Task regime: train | validation | in-dist | out-of-dist | cross-res.
    #[arg(long)]
    pub regime: String,
    /// Number of validated tasks to collect.
    #[arg(long)]
    pub n: usize,
    /// Mesh override (defaults to the config mesh).
    #[arg(long)]
    pub nelx: Option<usize>,
    #[arg(long)]
    pub nely: Option<usize>,
    /// Output file name inside the output directory.
    #[arg(long)]
    pub out: Option<String>,
}

pub fn gen_tasks(config: &RunConfig, args: &GenTasksArgs) -> anyhow::Result<()> {
    let regime = Regime::parse(&args.regime)
        .ok_or_else(|| ConfigError(format!("unknown regime '{}'", args.regime)))?;
    let disc = Discretization::new(
        args.nelx.unwrap_or(config.mesh.nelx),
        args.nely.unwrap_or(config.mesh.nely),
    );
    let dir = out_dir(config)?;
    let name = args
        .out
        .clone()
        .unwrap_or_else(|| format!("tasks-{}.bin", regime.as_str()));
    let started = Instant::now();
    let ds = build_dataset(regime, args.n, config.seed, &disc)?;
    let path = dir.join(&name);
    dataset::write(&path, &ds)?;
    write_manifest(
        config,
        CommandSpec::GenTasks(args.clone()),
        &dir.join(format!("{name}.manifest.toml")),
    )?;
    eprintln!(
        "wrote {} tasks to {} ({} candidates rejected, {:.1}s)",
        ds.tasks.len(),
        path.display(),
        ds.manifest.rejections.total(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

// ---------------------------------------------------------------- meta-train

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MetaTrainArgs {
    /// Training dataset file.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation dataset file.
    #[arg(long)]
    pub val: PathBuf,
    /// Meta-iteration override.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Prefix for checkpoint and log files.
    #[arg(long, default_value = "meta")]
    pub out_prefix: String,
}

pub fn meta_train(config: &RunConfig, args: &MetaTrainArgs) -> anyhow::Result<()> {
    let train = load_tasks(&args.train)?;
    let val = load_tasks(&args.val)?;
    let dir = out_dir(config)?;
    let meta = MetaConfig {
        meta_iterations: args.iterations.unwrap_or(config.meta.meta_iterations),
        seed: config.seed,
        ..config.meta
    };
    let init = init_standard(&config.network, config.seed);
    let started = Instant::now();
    let result = reptile_train(&train, &val, &meta, &config.optimize, init)?;
    eprintln!(
        "meta-training: {} iterations, {} inner failures, {:.1}s",
        meta.meta_iterations,
        result.skipped_tasks,
        started.elapsed().as_secs_f64()
    );

    for ckpt in &result.checkpoints {
        checkpoint::write(
            &dir.join(format!("{}-ckpt-{:06}.bin", args.out_prefix, ckpt.iteration)),
            &checkpoint::Checkpoint {
                params: ckpt.params.clone(),
                seed: config.seed,
            },
        )?;
    }
    checkpoint::write(
        &dir.join(format!("{}-best.ckpt", args.out_prefix)),
        &checkpoint::Checkpoint {
            params: result.best.clone(),
            seed: config.seed,
        },
    )?;

    let mut log = String::from("# metatopo-metalog v1\nmeta_iteration,mean_inner_loss,validation_loss\n");
    for row in &result.log {
        log.push_str(&format!(
            "{},{},{}\n",
            row.iteration,
            row.mean_inner_loss,
            row.validation_loss.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    std::fs::write(dir.join(format!("{}-training-log.csv", args.out_prefix)), log)?;
    write_manifest(
        config,
        CommandSpec::MetaTrain(args.clone()),
        &dir.join(format!("{}-train.manifest.toml", args.out_prefix)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- pretrain

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PretrainArgs {
    /// Training dataset file.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value = "pretrained")]
    pub out_prefix: String,
}

pub fn pretrain(config: &RunConfig, args: &PretrainArgs) -> anyhow::Result<()> {
    if !config.network.conditioned {
        bail!(ConfigError("pretraining requires the conditioned network".into()));
    }
    let train = load_tasks(&args.train)?;
    let dir = out_dir(config)?;
    let started = Instant::now();
    let (params, losses) = pretrain_identity(&train, &config.network, args.epochs, args.lr, config.seed)?;
    eprintln!(
        "pretraining: {} epochs, final loss {:.3e}, {:.1}s",
        args.epochs,
        losses.last().copied().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    checkpoint::write(
        &dir.join(format!("{}.ckpt", args.out_prefix)),
        &checkpoint::Checkpoint {
            params,
            seed: config.seed,
        },
    )?;
    let mut log = String::from("# metatopo-pretrainlog v1\nepoch,mse\n");
    for (i, loss) in losses.iter().enumerate() {
        log.push_str(&format!("{},{}\n", i + 1, loss));
    }
    std::fs::write(dir.join(format!("{}-loss.csv", args.out_prefix)), log)?;
    write_manifest(
        config,
        CommandSpec::Pretrain(args.clone()),
        &dir.join(format!("{}.manifest.toml", args.out_prefix)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- optimize

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeArgs {
    /// Dataset file holding the task.
    #[arg(long)]
    pub task_file: PathBuf,
    /// Index of the task inside the dataset.
    #[arg(long)]
    pub task_id: usize,
    /// neural | mma
    #[arg(long, default_value = "neural")]
    pub method: String,
    /// Initialization: "standard" (neural), "uniform" (mma) or a
    /// checkpoint path.
    #[arg(long, default_value = "standard")]
    pub init: String,
    #[arg(long, default_value = "run")]
    pub out_prefix: String,
}

pub fn optimize(config: &RunConfig, args: &OptimizeArgs) -> anyhow::Result<()> {
    let tasks = load_tasks(&args.task_file)?;
    let task = tasks
        .get(args.task_id)
        .ok_or_else(|| ConfigError(format!("task index {} out of range", args.task_id)))?;
    let dir = out_dir(config)?;
    let started = Instant::now();
    let record = match args.method.as_str() {
        "neural" => {
            let params = if args.init == "standard" {
                init_standard(&config.network, config.seed)
            } else {
                load_params(Path::new(&args.init))?
            };
            neural_optimize(task, params, &config.optimize)?.0
        }
        "mma" => {
            let init: Option<DensityField> = match args.init.as_str() {
                "uniform" | "standard" => None,
                path => Some(network_initial_design(
                    &load_params(Path::new(path))?,
                    task,
                    &config.optimize,
                )?),
            };
            standard_optimize(task, &config.optimize, init.as_ref())?
        }
        other => bail!(ConfigError(format!("unknown method '{other}'"))),
    };
    eprintln!(
        "task {}: {} iterations ({}), compliance {:.6} -> thresholded {:.6}, {:.1}s",
        task.id,
        record.iterations,
        record.stop_reason.as_str(),
        record.c_continuous,
        record.c_thresholded,
        started.elapsed().as_secs_f64()
    );
    std::fs::write(
        dir.join(format!("{}-record.csv", args.out_prefix)),
        results::run_record_csv(&record),
    )?;
    let disc = task.disc;
    density::write(
        &dir.join(format!("{}-continuous.rho", args.out_prefix)),
        &record.final_continuous,
        disc.nelx(),
        disc.nely(),
    )?;
    density::write(
        &dir.join(format!("{}-thresholded.rho", args.out_prefix)),
        &record.final_thresholded,
        disc.nelx(),
        disc.nely(),
    )?;
    write_manifest(
        config,
        CommandSpec::Optimize(args.clone()),
        &dir.join(format!("{}.manifest.toml", args.out_prefix)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- bench

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Dataset file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Methods as name=spec pairs; spec is neural:standard,
    /// neural:<ckpt>, mma:uniform or mma:<ckpt>. Repeatable.
    #[arg(long = "method", required = true)]
    pub methods: Vec<String>,
    /// Results CSV (appended to when it exists: completed pairs are
    /// skipped).
    #[arg(long, default_value = "results.csv")]
    pub out: String,
}

fn parse_method(config: &RunConfig, text: &str) -> anyhow::Result<BenchMethod> {
    let (name, spec) = text
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("method '{text}' is not name=spec")))?;
    let spec = match spec.split_once(':') {
        Some(("neural", "standard")) => MethodSpec::Neural(init_standard(&config.network, config.seed)),
        Some(("neural", path)) => MethodSpec::Neural(load_params(Path::new(path))?),
        Some(("mma", "uniform")) => MethodSpec::MmaUniform,
        Some(("mma", path)) => MethodSpec::MmaFromNetwork(load_params(Path::new(path))?),
        _ => bail!(ConfigError(format!("bad method spec '{spec}'"))),
    };
    Ok(BenchMethod {
        name: name.to_string(),
        spec,
    })
}

pub fn bench(config: &RunConfig, args: &BenchArgs) -> anyhow::Result<()> {
    let tasks = load_tasks(&args.dataset)?;
    let methods: Vec<BenchMethod> = args
        .methods
        .iter()
        .map(|m| parse_method(config, m))
        .collect::<anyhow::Result<_>>()?;
    let dir = out_dir(config)?;
    let out = dir.join(&args.out);
    let started = Instant::now();
    let table = metatopo::eval::run_benchmark(&tasks, &methods, &config.optimize, Some(&out))?;
    eprintln!(
        "benchmark: {} rows ({} tasks x {} methods) in {:.1}s -> {}",
        table.rows.len(),
        tasks.len(),
        methods.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    write_manifest(
        config,
        CommandSpec::Bench(args.clone()),
        &dir.join(format!("{}.manifest.toml", args.out)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- profile

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ProfileArgs {
    /// Metric: iterations | c-cont | c-thresh.
    #[arg(long)]
    pub metric: String,
    /// Results CSV produced by bench.
    pub results: PathBuf,
    #[arg(long, default_value = "profile.csv")]
    pub out: String,
}

pub fn profile(config: &RunConfig, args: &ProfileArgs) -> anyhow::Result<()> {
    let metric = ProfileMetric::parse(&args.metric)
        .ok_or_else(|| ConfigError(format!("unknown metric '{}'", args.metric)))?;
    let table = results::read(&args.results)?;
    let curves = metatopo::eval::performance_profile(&table, metric)?;
    let dir = out_dir(config)?;
    std::fs::write(dir.join(&args.out), results::profiles_csv(&curves))?;
    write_manifest(
        config,
        CommandSpec::Profile(args.clone()),
        &dir.join(format!("{}.manifest.toml", args.out)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- render

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RenderArgs {
    /// Density file (.rho) to render.
    pub input: PathBuf,
    #[arg(long, default_value = "design.pgm")]
    pub out: String,
}

pub fn render(config: &RunConfig, args: &RenderArgs) -> anyhow::Result<()> {
    let (field, nelx, nely) = density::read(&args.input)
        .map_err(|e| ConfigError(format!("cannot read density file: {e}")))?;
    let dir = out_dir(config)?;
    std::fs::write(dir.join(&args.out), density::to_pgm(&field, nelx, nely))?;
    write_manifest(
        config,
        CommandSpec::Render(args.clone()),
        &dir.join(format!("{}.manifest.toml", args.out)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- replay

pub fn replay(path: &Path) -> anyhow::Result<()> {
    let manifest = Manifest::read(path)
        .map_err(|e| ConfigError(format!("cannot read manifest: {e}")))?;
    let config = manifest.config;
    if config.jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build_global();
    }
    match manifest.spec {
        CommandSpec::GenTasks(args) => gen_tasks(&config, &args),
        CommandSpec::MetaTrain(args) => meta_train(&config, &args),
        CommandSpec::Pretrain(args) => pretrain(&config, &args),
        CommandSpec::Optimize(args) => optimize(&config, &args),
        CommandSpec::Bench(args) => bench(&config, &args),
        CommandSpec::Profile(args) => profile(&config, &args),
        CommandSpec::Render(args) => render(&config, &args),
    }
}

