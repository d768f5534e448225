//! Run configuration: flat JSON with `key=value` overrides.

use std::path::{Path, PathBuf};

use eleatt::analysis::TraceFormat;
use eleatt::bptt::NetworkSpec;
use eleatt::data::{PlantedTask, ScanMode};
use eleatt::training::{ClipMode, TrainConfig};
use eleatt::{CellKind, GateMode};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const DATA_DIR_ENV: &str = "ELEATT_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MnistPixel,
    MnistRow,
    Planted,
}

impl Task {
    pub fn scan(self) -> Option<ScanMode> {
        match self {
            Task::MnistPixel => Some(ScanMode::Pixelwise),
            Task::MnistRow => Some(ScanMode::Rowwise),
            Task::Planted => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSplit {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,

    pub cell: CellKind,
    pub mode: GateMode,
    pub hidden: usize,
    pub layers: usize,
    pub forget_bias: f64,
    /// Overrides the task's input width (architecture-only commands).
    pub input_dim: Option<usize>,
    /// Overrides the task's class count (architecture-only commands).
    pub classes: Option<usize>,

    pub lr0: f64,
    pub clip_amp: f64,
    pub clip_mode: ClipMode,
    pub dropout_p: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_drop_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub seed: u64,

    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub val_size: usize,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,

    pub planted_samples: usize,
    pub planted_steps: usize,
    pub planted_dim: usize,
    pub planted_informative: usize,
    pub planted_sigma: f64,
    pub planted_shift: f64,

    /// Write measured epoch durations into the epoch CSV. Off by default so
    /// that repeated runs produce identical files; durations still go to stderr.
    pub log_wall_time: bool,

    pub trace_samples: usize,
    pub trace_format: TraceFormat,
    pub attn_norm_split: NormSplit,
    pub attn_norm_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = PlantedTask::default();
        RunConfig {
            task: Task::Planted,
            cell: CellKind::Gru,
            mode: GateMode::Element,
            hidden: 32,
            layers: 1,
            forget_bias: 0.0,
            input_dim: None,
            classes: None,
            lr0: t.lr0,
            clip_amp: t.clip_amp,
            clip_mode: t.clip_mode,
            dropout_p: t.dropout_p,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            lr_drop_factor: t.lr_drop_factor,
            lr_patience: t.lr_patience,
            min_lr: t.min_lr,
            seed: t.seed,
            data_dir: None,
            out_dir: None,
            val_size: 5000,
            train_size: None,
            test_size: None,
            planted_samples: 1000,
            planted_steps: p.steps,
            planted_dim: p.dim,
            planted_informative: p.informative,
            planted_sigma: p.noise_sigma,
            planted_shift: p.mean_shift,
            log_wall_time: false,
            trace_samples: 1,
            trace_format: TraceFormat::Pgm,
            attn_norm_split: NormSplit::Train,
            attn_norm_samples: 1000,
        }
    }
}

/// Command-line sources of configuration, applied in order: defaults, file,
/// `--set` pairs, then the dedicated flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

/// Applies one `key=value` pair. The value is parsed as JSON when possible and
/// taken as a bare string otherwise.
pub fn apply_set(obj: &mut Map<String, Value>, pair: &str) -> Result<(), CliError> {
    let (key, raw) = pair
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
    let key = key.trim();
    if !obj.contains_key(key) {
        return Err(CliError::Usage(format!("unknown config key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    obj.insert(key.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<RunConfig, CliError> {
        let Value::Object(mut obj) =
            serde_json::to_value(RunConfig::default()).expect("default config serializes")
        else {
            unreachable!("config serializes to an object")
        };
        if let Some(path) = &o.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let file: Value = serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("config {} is not valid JSON: {e}", path.display()))
            })?;
            let Value::Object(file) = file else {
                return Err(CliError::Usage(
                    "config file must hold a JSON object".into(),
                ));
            };
            for (k, v) in file {
                if !obj.contains_key(&k) {
                    return Err(CliError::Usage(format!(
                        "unknown config key {k:?} in {}",
                        path.display()
                    )));
                }
                obj.insert(k, v);
            }
        }
        for pair in &o.set {
            apply_set(&mut obj, pair)?;
        }
        if let Some(seed) = o.seed {
            obj.insert("seed".into(), seed.into());
        }
        if let Some(out) = &o.out {
            obj.insert("out_dir".into(), path_value(out));
        }
        if let Some(data) = &o.data {
            obj.insert("data_dir".into(), path_value(data));
        }
        let mut cfg: RunConfig = serde_json::from_value(Value::Object(obj))
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        if cfg.data_dir.is_none() && cfg.task != Task::Planted {
            cfg.data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.hidden == 0 || self.layers == 0 {
            return Err(CliError::Usage("hidden and layers must be positive".into()));
        }
        if self.task == Task::Planted {
            self.planted()
                .generate(5, 0)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            if self.planted_samples < 5 {
                return Err(CliError::Usage("planted_samples must be at least 5".into()));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            clip_amp: self.clip_amp,
            clip_mode: self.clip_mode,
            dropout_p: self.dropout_p,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            lr_drop_factor: self.lr_drop_factor,
            lr_patience: self.lr_patience,
            min_lr: self.min_lr,
            seed: self.seed,
        }
    }

    pub fn planted(&self) -> PlantedTask {
        PlantedTask {
            steps: self.planted_steps,
            dim: self.planted_dim,
            informative: self.planted_informative,
            noise_sigma: self.planted_sigma,
            mean_shift: self.planted_shift,
        }
    }

    /// Input width and class count implied by the task, unless overridden.
    pub fn io_dims(&self) -> (usize, usize) {
        let (d, k) = match self.task {
            Task::MnistPixel => (1, 10),
            Task::MnistRow => (28, 10),
            Task::Planted => (self.planted_dim, 2),
        };
        (self.input_dim.unwrap_or(d), self.classes.unwrap_or(k))
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, CliError> {
        let (d, k) = self.io_dims();
        let mut spec = NetworkSpec::stacked(
            self.cell,
            self.mode,
            d,
            self.hidden,
            self.layers,
            k,
            self.dropout_p,
            self.seed,
        );
        spec.forget_bias = self.forget_bias;
        spec.validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data_dir.as_deref().ok_or_else(|| {
            CliError::Usage(format!("MNIST tasks need --data DIR or {DATA_DIR_ENV}"))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}
