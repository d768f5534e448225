//! Command-line front end: configuration, data wiring and the subcommands.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eleatt::analysis::{
    export_trace, relative_attention, static_modulation, trace_to_csv, AttentionTrace, CostReport,
    TraceFormat,
};
use eleatt::bptt::{forward_network, grad_check, Mode, NetworkParams, NetworkSpec};
use eleatt::checkpoint;
use eleatt::data::{load_mnist, DatasetSplit, MnistProtocol, Sample, SequenceBatch};
use eleatt::numerics::{Matrix, Vector};
use eleatt::training::{evaluate, fit, stream_rng, Stream, EPOCH_CSV_HEADER};
use eleatt::{CellKind, GateMode};
use rand::rngs::mock::StepRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Overrides, RunConfig, Task};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Output { .. } => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "eleatt",
    version,
    about = "Train and inspect recurrent networks with element-wise attention gates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "K=V")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// MNIST directory; falls back to $ELEATT_DATA_DIR.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            set: self.set.clone(),
            seed: self.seed,
            out: self.out.clone(),
            data: self.data.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to load instead of a freshly initialized model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write epoch log, checkpoints and test metrics.
    Train(RunArgs),
    /// Report test loss and accuracy of a checkpoint (or an untrained model).
    Eval(ModelArgs),
    /// Compare backpropagated gradients with numerical ones on a tiny random instance.
    Gradcheck {
        cell: CellKind,
        mode: GateMode,
        /// Comma-separated sizes: D (input), N (hidden), T (steps), L (layers), B (batch), K (classes).
        #[arg(long, default_value = "D=4,N=3,T=3")]
        dims: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    #[command(subcommand)]
    Inspect(Inspect),
}

#[derive(Debug, Subcommand)]
pub enum Inspect {
    /// Parameter counts per layer and in total.
    CountParams {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        json: bool,
    },
    /// Multiply-add counts per timestep.
    CountFlops {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        json: bool,
    },
    /// Export attention responses on test samples as CSV and PGM.
    TraceAttn(ModelArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Gradcheck {
            cell,
            mode,
            dims,
            seed,
        } => cmd_gradcheck(cell, mode, &dims, seed),
        Command::Inspect(sub) => cmd_inspect(&sub),
    }
}

pub fn cmd_inspect(sub: &Inspect) -> Result<(), CliError> {
    match sub {
        Inspect::CountParams { model, json } => cmd_count(model, *json, false),
        Inspect::CountFlops { model, json } => cmd_count(model, *json, true),
        Inspect::TraceAttn(model) => cmd_trace(model),
    }
}

/// Two independent seeds from the run's data stream: train/validation, then test.
fn data_seeds(seed: u64) -> (u64, u64) {
    let mut r = stream_rng(seed, Stream::Data);
    (r.gen(), r.gen())
}

fn protocol(cfg: &RunConfig) -> MnistProtocol {
    MnistProtocol {
        scan: cfg.task.scan().expect("MNIST task"),
        val_size: cfg.val_size,
        train_size: cfg.train_size,
        test_size: cfg.test_size,
    }
}

/// Train/validation/test split for the configured task, plus the informative
/// dimensions for the planted task.
pub fn load_split(cfg: &RunConfig) -> Result<(DatasetSplit, Option<Vec<usize>>), CliError> {
    let (pool_seed, _) = data_seeds(cfg.seed);
    if cfg.task == Task::Planted {
        let d = cfg
            .planted()
            .generate(cfg.planted_samples, pool_seed)
            .map_err(usage_err)?;
        return Ok((d.split, Some(d.informative_dims)));
    }
    let dir = cfg.data_dir()?;
    let proto = protocol(cfg);
    let pool = load_mnist(dir, true).map_err(data_err)?;
    let (train, val) = proto
        .train_val(&pool, &mut ChaCha8Rng::seed_from_u64(pool_seed))
        .map_err(usage_err)?;
    drop(pool);
    let test = load_test(cfg)?;
    Ok((DatasetSplit { train, val, test }, None))
}

/// The test split alone; identical to the one in [`load_split`].
pub fn load_test(cfg: &RunConfig) -> Result<SequenceBatch, CliError> {
    let (_, test_seed) = data_seeds(cfg.seed);
    if cfg.task == Task::Planted {
        return Ok(load_split(cfg)?.0.test);
    }
    let images = load_mnist(cfg.data_dir()?, false).map_err(data_err)?;
    protocol(cfg)
        .test_subset(&images, &mut ChaCha8Rng::seed_from_u64(test_seed))
        .map_err(usage_err)
}

fn check_data(spec: &NetworkSpec, data: &SequenceBatch) -> Result<(), CliError> {
    if data.is_empty() {
        return Err(CliError::Data("empty data split".into()));
    }
    if data.dim() != spec.input_dim() || data.classes() > spec.classes {
        return Err(CliError::Usage(format!(
            "model expects input width {} and {} classes, data has {} and {}",
            spec.input_dim(),
            spec.classes,
            data.dim(),
            data.classes()
        )));
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg
        .out_dir
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --out DIR".into()))?;
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn save(params: &NetworkParams, path: &Path) -> Result<(), CliError> {
    write(path, checkpoint::encode(params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub test_loss: f64,
    pub test_acc: f64,
}

impl Metrics {
    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const INIT_CKPT: &str = "init.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";

pub fn cmd_train(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&args.overrides())?;
    let out = out_dir(&cfg)?.to_path_buf();
    write(&out.join(RESOLVED_CONFIG), cfg.to_json())?;
    let spec = cfg.network_spec()?;
    let (split, _) = load_split(&cfg)?;
    check_data(&spec, &split.train)?;
    eprintln!(
        "training {} layer(s) of {}/{} N={} on {} train / {} val samples",
        spec.layers.len(),
        cfg.cell.name(),
        cfg.mode.name(),
        cfg.hidden,
        split.train.len(),
        split.val.len()
    );
    let outcome = fit(&spec, &cfg.train_config(), &split.train, &split.val, |log| {
        eprintln!(
            "epoch {:>3}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}  lr {:e}  {:.1}s",
            log.epoch, log.train_loss, log.train_acc, log.val_loss, log.val_acc, log.lr, log.wall_seconds
        );
    })
    .map_err(usage_err)?;
    let mut csv = format!("{EPOCH_CSV_HEADER}\n");
    for log in &outcome.logs {
        let mut row = log.clone();
        if !cfg.log_wall_time {
            row.wall_seconds = 0.0;
        }
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    write(&out.join(EPOCHS_CSV), csv)?;
    save(&outcome.initial, &out.join(INIT_CKPT))?;
    save(&outcome.best, &out.join(BEST_CKPT))?;
    save(&outcome.last, &out.join(FINAL_CKPT))?;
    let metrics = if split.test.is_empty() {
        Metrics {
            test_loss: f64::NAN,
            test_acc: f64::NAN,
        }
    } else {
        let (test_loss, test_acc) =
            evaluate(&spec, &outcome.best, &split.test).map_err(usage_err)?;
        Metrics {
            test_loss,
            test_acc,
        }
    };
    write(&out.join(METRICS_JSON), metrics.to_json())?;
    eprintln!(
        "best epoch {}; test loss {:.4} acc {:.4}",
        outcome.best_epoch, metrics.test_loss, metrics.test_acc
    );
    Ok(())
}

/// Model from `--checkpoint`, or freshly initialized from the config and seed.
fn load_model(
    cfg: &RunConfig,
    ckpt: Option<&Path>,
) -> Result<(NetworkSpec, NetworkParams), CliError> {
    match ckpt {
        Some(path) => checkpoint::load(path).map_err(data_err),
        None => {
            let spec = cfg.network_spec()?;
            let params = NetworkParams::init(&spec, &mut stream_rng(cfg.seed, Stream::Init));
            Ok((spec, params))
        }
    }
}

pub fn cmd_eval(args: &ModelArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&args.run.overrides())?;
    let (spec, params) = load_model(&cfg, args.checkpoint.as_deref())?;
    let test = load_test(&cfg)?;
    check_data(&spec, &test)?;
    let (test_loss, test_acc) = evaluate(&spec, &params, &test).map_err(usage_err)?;
    let metrics = Metrics {
        test_loss,
        test_acc,
    };
    print!("{}", metrics.to_json());
    if cfg.out_dir.is_some() {
        let dir = out_dir(&cfg)?;
        write(&dir.join("eval_metrics.json"), metrics.to_json())?;
    }
    Ok(())
}

/// Sizes of a gradient-check instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckDims {
    pub d: usize,
    pub n: usize,
    pub t: usize,
    pub layers: usize,
    pub batch: usize,
    pub classes: usize,
}

pub const MAX_CHECK_INPUT: usize = 16;
pub const MAX_CHECK_STEPS: usize = 8;

impl CheckDims {
    pub fn parse(spec: &str) -> Result<CheckDims, CliError> {
        let mut dims = CheckDims {
            d: 4,
            n: 3,
            t: 3,
            layers: 1,
            batch: 2,
            classes: 3,
        };
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("--dims entry {part:?} is not KEY=VALUE"))
            })?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--dims value {v:?} is not a count")))?;
            let slot = match k.trim() {
                "D" => &mut dims.d,
                "N" => &mut dims.n,
                "T" => &mut dims.t,
                "L" => &mut dims.layers,
                "B" => &mut dims.batch,
                "K" => &mut dims.classes,
                other => return Err(CliError::Usage(format!("unknown --dims key {other:?}"))),
            };
            *slot = v;
        }
        let limits = [
            ("D", dims.d, 1, MAX_CHECK_INPUT),
            ("N", dims.n, 1, 16),
            ("T", dims.t, 1, MAX_CHECK_STEPS),
            ("L", dims.layers, 1, 3),
            ("B", dims.batch, 1, 4),
            ("K", dims.classes, 2, 10),
        ];
        for (name, v, lo, hi) in limits {
            if v < lo || v > hi {
                return Err(CliError::Usage(format!(
                    "{name}={v} outside the gradient-check range {lo}..={hi}"
                )));
            }
        }
        Ok(dims)
    }
}

/// A random gradient-check instance: Glorot weights with uniform jitter on every
/// scalar (so biases are non-zero) and uniform inputs in [-1, 1].
pub fn gradcheck_instance(
    cell: CellKind,
    mode: GateMode,
    dims: CheckDims,
    seed: u64,
) -> (NetworkSpec, NetworkParams, SequenceBatch) {
    let spec = NetworkSpec::stacked(
        cell,
        mode,
        dims.d,
        dims.n,
        dims.layers,
        dims.classes,
        0.0,
        seed,
    );
    let mut rng = stream_rng(seed, Stream::Init);
    let mut params = NetworkParams::init(&spec, &mut rng);
    for i in 0..params.num_params() {
        *params.scalar_mut(i) += rng.gen_range(-0.3..0.3);
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let samples = (0..dims.batch)
        .map(|i| Sample {
            seq: Matrix::new(
                dims.t,
                dims.d,
                (0..dims.t * dims.d)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )
            .expect("finite inputs"),
            label: i % dims.classes,
        })
        .collect();
    let batch = SequenceBatch::new(samples, dims.classes).expect("labels in range");
    (spec, params, batch)
}

pub fn cmd_gradcheck(
    cell: CellKind,
    mode: GateMode,
    dims: &str,
    seed: u64,
) -> Result<(), CliError> {
    let dims = CheckDims::parse(dims)?;
    let (spec, params, batch) = gradcheck_instance(cell, mode, dims, seed);
    let report = grad_check(&spec, &params, &batch).map_err(usage_err)?;
    println!(
        "cell {} mode {} D={} N={} T={} L={}",
        cell.name(),
        mode.name(),
        dims.d,
        dims.n,
        dims.t,
        dims.layers
    );
    println!("params checked {}", report.params_checked);
    println!("max relative error {:.3e}", report.max_rel_err);
    println!("worst parameter {}", report.worst_param_path);
    if report.passed {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Verification(format!(
            "max relative error {:.3e} at {}",
            report.max_rel_err, report.worst_param_path
        )))
    }
}

pub fn cmd_count(args: &ModelArgs, json: bool, flops: bool) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&args.run.overrides())?;
    let spec = match &args.checkpoint {
        Some(path) => checkpoint::load(path).map_err(data_err)?.0,
        None => cfg.network_spec()?,
    };
    let report = CostReport::for_spec(&spec);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        println!("{report}");
        if flops {
            println!("flops per step {}", report.total_flops_per_step);
        } else {
            println!("params {}", report.total_params);
        }
    }
    Ok(())
}

fn eval_trace(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &SequenceBatch,
) -> Result<AttentionTrace, CliError> {
    Ok(
        forward_network(spec, params, data, Mode::Eval, &mut StepRng::new(0, 0))
            .map_err(usage_err)?
            .trace,
    )
}

pub fn cmd_trace(args: &ModelArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&args.run.overrides())?;
    let out = out_dir(&cfg)?.to_path_buf();
    let (spec, params) = load_model(&cfg, args.checkpoint.as_deref())?;
    let test = load_test(&cfg)?;
    check_data(&spec, &test)?;
    let traced = test.take(cfg.trace_samples.max(1));
    let trace = eval_trace(&spec, &params, &traced)?;
    if trace.layers.is_empty() {
        return Err(CliError::Usage(
            "model has no attention gate to trace".into(),
        ));
    }
    let csv_path = out.join("attn.csv");
    export_trace(&trace, &csv_path, TraceFormat::Csv).map_err(|e| CliError::Output {
        path: csv_path.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    println!("{}", csv_path.display());
    if cfg.trace_format == TraceFormat::Pgm {
        let files = export_trace(&trace, &out, TraceFormat::Pgm).map_err(|e| CliError::Output {
            path: out.clone(),
            source: std::io::Error::other(e.to_string()),
        })?;
        for f in files {
            println!("{}", f.display());
        }
    }

    // Relative responses for the first layer's input gate, normalized by its
    // static modulation over a reference split.
    let first = &spec.layers[0];
    if first.mode.input_gate_width(first.input_dim).is_some() {
        let reference = match cfg.attn_norm_split {
            config::NormSplit::Train => load_split(&cfg)?.0.train,
            config::NormSplit::Test => test.clone(),
        };
        let reference = reference.take(cfg.attn_norm_samples.max(1));
        let ref_trace = eval_trace(&spec, &params, &reference)?;
        let inputs: Vec<&Matrix> = reference.samples().iter().map(|s| &s.seq).collect();
        let layer0 = ref_trace.layer(0).expect("first layer is gated");
        let (gain, excluded) = static_modulation(layer0, &inputs).map_err(usage_err)?;
        let gain = if layer0.width == 1 {
            Vector::from(vec![gain.iter().sum::<f64>() / gain.len() as f64])
        } else {
            gain
        };
        let (rel, _) = relative_attention(trace.layer(0).expect("first layer is gated"), &gain)
            .map_err(usage_err)?;
        let rel_path = out.join("attn_relative.csv");
        write(
            &rel_path,
            trace_to_csv(&AttentionTrace { layers: vec![rel] }),
        )?;
        let mut gains = String::from("dim,static_modulation,excluded\n");
        for (i, g) in gain.iter().enumerate() {
            gains.push_str(&format!("{i},{g},{}\n", excluded.contains(&i)));
        }
        write(&out.join("static_modulation.csv"), gains)?;
        println!("{}", rel_path.display());
    }
    Ok(())
}
