//! The resolved run configuration: defaults, then a JSON config file, then
//! `--set key=value` overrides, then dedicated flags.

use std::path::{Path, PathBuf};

use ebmlab_core::data::{load_csv, Dataset};
use ebmlab_core::{
    Activation, ConditionalTask, Grid, Method, MlpSpec, NegativeStrategy, SamplerConfig, Schedule,
    StepParams, SyntheticDistribution, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const DEFAULT_OUT: &str = "ebmlab-out";
pub const OUT_ENV: &str = "EBMLAB_OUT";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// The linear-Gaussian conditional task.
    Conditional,
    /// An unconditional synthetic distribution with a known score.
    Distribution,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub task: ConditionalTask,
    pub distribution: SyntheticDistribution,
    /// CSV only: condition columns first, then `dim_y` target columns.
    pub path: Option<PathBuf>,
    pub dim_y: usize,
    pub has_condition: bool,
    pub n_train: usize,
    /// Synthetic data draws a separate held-out set; CSV data splits off its
    /// last `n_heldout` rows.
    pub n_heldout: usize,
    pub seed: u64,
    pub heldout_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Distribution,
            task: ConditionalTask::default(),
            distribution: SyntheticDistribution::bimodal(vec![2.0, 0.0]),
            path: None,
            dim_y: 2,
            has_condition: false,
            n_train: 10_000,
            n_heldout: 2_000,
            seed: 0,
            heldout_seed: 1,
        }
    }
}

pub struct Splits {
    pub train: Dataset,
    pub heldout: Dataset,
}

impl DataConfig {
    pub fn load(&self) -> CliResult<Splits> {
        if self.n_train == 0 || self.n_heldout == 0 {
            return Err(CliError::usage("data.n_train and data.n_heldout must be at least 1"));
        }
        let splits = match self.kind {
            DataKind::Conditional => Splits {
                train: self.task.sample(self.n_train, self.seed)?,
                heldout: self.task.sample(self.n_heldout, self.heldout_seed)?,
            },
            DataKind::Distribution => Splits {
                train: Dataset::unconditional(self.distribution.sample(self.n_train, self.seed)?)?,
                heldout: Dataset::unconditional(
                    self.distribution.sample(self.n_heldout, self.heldout_seed)?,
                )?,
            },
            DataKind::Csv => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::usage("data.path: required when data.kind = csv"))?;
                let all = load_csv(path, self.dim_y, self.has_condition)?;
                let (train, heldout) = all.split_tail(self.n_heldout).map_err(|e| {
                    CliError::usage(format!("data.n_heldout: {e} ({} rows in {})", all.len(), path.display()))
                })?;
                Splits { train, heldout }
            }
        };
        Ok(splits)
    }

    pub fn task(&self) -> Option<&ConditionalTask> {
        (self.kind == DataKind::Conditional).then_some(&self.task)
    }

    pub fn oracle(&self) -> Option<&SyntheticDistribution> {
        (self.kind == DataKind::Distribution).then_some(&self.distribution)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    /// Widths for a network reading `dim_x` condition columns (time included)
    /// and `dim_y` targets.
    pub fn spec(&self, train: &TrainConfig, dim_x: usize, dim_y: usize) -> MlpSpec {
        let variant = train.score_path.variant();
        let out = match variant {
            ebmlab_core::Variant::Energy => 1,
            ebmlab_core::Variant::Score => dim_y,
        };
        let mut widths = vec![dim_x + dim_y];
        widths.extend(&self.hidden);
        widths.push(out);
        MlpSpec::new(widths, self.activation, variant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleInit {
    /// Isotropic Gaussian noise with standard deviation `init_std`.
    Noise,
    /// The conditional task's biased base predictions.
    Base,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub init: SampleInit,
    pub init_std: f64,
    /// Starting points read from CSV instead of `init`.
    pub input: Option<PathBuf>,
    pub trajectory: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n: 2000,
            init: SampleInit::Noise,
            init_std: 1.0,
            input: None,
            trajectory: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gradcheck,
    Hutchinson,
    StepSweep,
    ScoreField,
    Energy,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
            format!("unknown suite {s:?} (expected gradcheck, hutchinson, step-sweep, score-field or energy)")
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub suites: Vec<Suite>,
    pub grid: Grid,
    pub h: f64,
    pub grad_tol: f64,
    /// Parameter coordinates probed by the loss gradient check.
    pub grad_coords: usize,
    /// Held-out rows probed by the score gradient check.
    pub grad_rows: usize,
    pub draws: usize,
    pub steps: Vec<usize>,
    pub sweep_rho: f64,
    pub max_score_ratio: f64,
    pub max_energy_ratio: f64,
    pub n_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            suites: vec![Suite::Gradcheck],
            grid: Grid::default(),
            h: 1e-5,
            grad_tol: 1e-4,
            grad_coords: 20,
            grad_rows: 8,
            draws: 10_000,
            steps: vec![0, 1, 10, 50, 100],
            sweep_rho: 1.0,
            max_score_ratio: 0.2,
            max_energy_ratio: 0.5,
            n_samples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation and negative sampling. `--seed` also sets
    /// `train.seed` and `sampler.seed`.
    pub seed: u64,
    /// Worker cap. Every kernel currently runs on one thread.
    pub threads: usize,
    pub out: Option<PathBuf>,
    /// Trained model read by `sample`, `eval` and `gradcheck`.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint whose optimiser state `train` continues from.
    pub resume: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// Filled with a data-appropriate default when the loss needs negatives.
    pub negatives: Option<NegativeStrategy>,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            out: None,
            checkpoint: None,
            resume: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            negatives: None,
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            sample: SampleConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Everything that feeds config resolution, lowest precedence first.
#[derive(Default)]
pub struct Sources<'a> {
    pub file: Option<&'a Path>,
    pub sets: &'a [String],
    /// Dotted keys set by dedicated subcommand flags.
    pub flags: Vec<(&'static str, Value)>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Value of the output-directory environment variable.
    pub env_out: Option<PathBuf>,
}

impl RunConfig {
    /// Builds the config without validating it, so callers can apply
    /// flag-derived adjustments before calling [`RunConfig::validate`].
    pub fn resolve(src: Sources<'_>) -> CliResult<RunConfig> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
        if let Some(path) = src.file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("--config {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("--config {}: {e}", path.display())))?;
            if !file.is_object() {
                return Err(CliError::usage(format!("--config {}: expected a JSON object", path.display())));
            }
            merge(&mut value, file);
        }
        for s in src.sets {
            let (key, raw) = s
                .split_once('=')
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| CliError::usage(format!("--set {s:?}: expected key=value")))?;
            set_path(&mut value, key, parse_value(raw))?;
        }
        for (key, v) in src.flags {
            set_path(&mut value, key, v)?;
        }
        if let Some(seed) = src.seed {
            for key in ["seed", "train.seed", "sampler.seed"] {
                set_path(&mut value, key, Value::from(seed))?;
            }
        }
        if let Some(t) = src.threads {
            set_path(&mut value, "threads", Value::from(t))?;
        }
        if let Some(out) = src.out {
            set_path(&mut value, "out", Value::from(out.display().to_string()))?;
        }

        let mut cfg: RunConfig = serde_path_to_error::deserialize(value.clone())
            .map_err(|e| CliError::usage(format!("config key {}: {}", e.path(), e.inner())))?;
        let resolved = serde_json::to_value(&cfg).expect("config serialises");
        if let Some(key) = unknown_key(&value, &resolved, "") {
            return Err(CliError::usage(format!("config key {key}: unknown key")));
        }
        if cfg.out.is_none() {
            cfg.out = Some(src.env_out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)));
        }
        cfg.fill_defaults();
        Ok(cfg)
    }

    fn fill_defaults(&mut self) {
        if self.negatives.is_none() && self.train.loss.needs_negatives() {
            self.negatives = Some(match self.data.kind {
                DataKind::Conditional => NegativeStrategy::BasePredictor,
                _ => NegativeStrategy::GaussianJitter { sigma: 0.5 },
            });
        }
        if self.sampler.method == Method::Denoise && self.sampler.schedule.is_none() {
            self.sampler.schedule = Some(Schedule::Constant(StepParams {
                alpha: 1.0,
                beta: self.sampler.rho,
                sigma: 0.0,
            }));
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |key: &str, why: &str| Err(CliError::usage(format!("config key {key}: {why}")));
        if self.threads == 0 {
            return bad("threads", "must be at least 1");
        }
        self.train.validate().map_err(|e| match e {
            ebmlab_core::Error::Config(msg) => CliError::usage(format!("config key train.{msg}")),
            other => CliError::usage(format!("config key train: {other}")),
        })?;
        self.sampler.validate().map_err(|e| CliError::usage(format!("config key sampler: {e}")))?;
        if self.model.hidden.iter().any(|&w| w == 0) {
            return bad("model.hidden", "widths must be at least 1");
        }
        let base_negatives = matches!(
            self.negatives,
            Some(NegativeStrategy::BasePredictor | NegativeStrategy::BasePredictorPlusJitter { .. })
        );
        if base_negatives && self.data.kind != DataKind::Conditional {
            return bad("negatives", "base-predictor negatives need data.kind = conditional");
        }
        if !(self.sample.init_std > 0.0) || self.sample.n == 0 {
            return bad("sample", "n must be at least 1 and init_std positive");
        }
        let e = &self.eval;
        if !(1e-7..=1e-3).contains(&e.h) {
            return bad("eval.h", "must lie in [1e-7, 1e-3]");
        }
        if e.draws == 0 || e.n_samples == 0 || e.grad_rows == 0 || e.grad_coords == 0 {
            return bad("eval", "draws, n_samples, grad_rows and grad_coords must be at least 1");
        }
        if e.steps.is_empty() {
            return bad("eval.steps", "needs at least one step count");
        }
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("resolved")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}

/// Values parse as JSON when they can and fall back to plain strings, so
/// `lr=1e-3`, `hidden=[32,32]` and `loss=delta` all work.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, v: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::usage(format!("--set {key}: empty key segment")));
        }
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().ok_or_else(|| {
            CliError::usage(format!("config key {key}: {} is not an object", parts[..i].join(".")))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}

/// Deep merge. An object whose variant tag changes replaces the old one
/// wholesale so stale variant fields do not linger.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let tag_changed = ["kind", "strategy"]
                .iter()
                .any(|t| o.contains_key(*t) && b.contains_key(*t) && o[*t] != b[*t]);
            if tag_changed {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// First key path present in `input` but dropped by deserialisation.
fn unknown_key(input: &Value, resolved: &Value, prefix: &str) -> Option<String> {
    let Value::Object(inp) = input else { return None };
    let res = resolved.as_object();
    for (k, v) in inp {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match res.and_then(|r| r.get(k)) {
            None => return Some(path),
            Some(r) => {
                if let Some(bad) = unknown_key(v, r, &path) {
                    return Some(bad);
                }
            }
        }
    }
    None
}
