//! Seeded mini-batch optimisation with Adam or SGD, resumable checkpoints
//! and a metric log.
//!
//! Step `s` draws everything random (batch indices, interpolation times,
//! anchors, projections) from stream `s` of the run seed, and negatives from
//! stream `s` of the negative sampler's seed, so a run resumed from a
//! checkpoint replays exactly what an uninterrupted run would have done.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{ConditionalTask, Dataset, NegativeSampler, SyntheticDistribution};
use crate::error::{Error, Result};
use crate::eval::{score_field_mse, Grid};
use crate::losses::{self, draw_projections, LossBatch, LossKind, LossOptions};
use crate::models::{Checkpoint, Mlp, Network, ScoreSource, TrainState, Variant};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorePath {
    Analytic,
    Predictive,
}

impl ScorePath {
    pub fn variant(self) -> Variant {
        match self {
            ScorePath::Analytic => Variant::Energy,
            ScorePath::Predictive => Variant::Score,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub score_path: ScorePath,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Metric records are written every `eval_every` steps and at the end.
    pub eval_every: usize,
    /// 0 disables intermediate checkpoints. Must be a multiple of
    /// `eval_every`.
    pub checkpoint_every: usize,
    pub loss_options: LossOptions,
    /// Fills the `wall_ms` metric column. Off by default because wall time
    /// makes metric files differ between otherwise identical runs.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Ssm,
            score_path: ScorePath::Analytic,
            optimizer: Optimizer::Adam,
            lr: 1e-4,
            batch: 10,
            steps: 5000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 0,
            loss_options: LossOptions::default(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.batch == 0 {
            return bad("batch", "must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1");
        }
        if self.checkpoint_every % self.eval_every != 0 {
            return bad("checkpoint_every", "must be a multiple of eval_every");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1/beta2", "must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps", "must be positive");
        }
        if self.loss_options.projections == 0 {
            return bad("loss_options.projections", "must be at least 1");
        }
        if self.loss == LossKind::Nce && self.score_path != ScorePath::Analytic {
            return bad(
                "score_path",
                "nce contrasts energies and needs score_path = analytic",
            );
        }
        Ok(())
    }
}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// Completed updates.
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len(), state.v.len()],
        });
    }
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len()],
        });
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    /// Completed steps.
    pub step: usize,
    /// Mean batch loss since the previous record; absent at step 0.
    pub loss: Option<f64>,
    pub score_mse: Option<f64>,
    pub wall_ms: Option<u128>,
}

pub const METRICS_HEADER: &str = "step,loss,score_mse,wall_ms";

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl MetricRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.step,
            cell(&self.loss),
            cell(&self.score_mse),
            cell(&self.wall_ms)
        )
    }
}

/// Writes `step,loss,score_mse,wall_ms` with empty cells for absent values.
pub fn write_metrics(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(f, "{}", r.csv_line())?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub metrics: Vec<MetricRecord>,
    /// Optimiser state after the last step; store it to resume.
    pub state: TrainState,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_mlp(&self.model).with_train_state(self.state.clone())
    }
}

/// Everything a run needs besides the model.
#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub data: &'a Dataset,
    pub negatives: Option<&'a NegativeSampler>,
    pub task: Option<&'a ConditionalTask>,
    /// Enables the grid score-error metric for 2-D unconditional data.
    pub oracle: Option<&'a SyntheticDistribution>,
    pub grid: Grid,
    /// Where `checkpoint_every` checkpoints go.
    pub checkpoint_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Self {
        Trainer {
            cfg,
            data,
            negatives: None,
            task: None,
            oracle: None,
            grid: Grid::default(),
            checkpoint_dir: None,
        }
    }

    pub fn with_negatives(mut self, sampler: &'a NegativeSampler) -> Self {
        self.negatives = Some(sampler);
        self
    }

    pub fn with_task(mut self, task: &'a ConditionalTask) -> Self {
        self.task = Some(task);
        self
    }

    pub fn with_oracle(mut self, dist: &'a SyntheticDistribution) -> Self {
        self.oracle = Some(dist);
        self
    }

    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    /// Checks that the model, data and loss fit together. Runs before any
    /// step is taken.
    pub fn check(&self, model: &Mlp) -> Result<()> {
        let cfg = &self.cfg;
        cfg.validate()?;
        if model.spec().variant != cfg.score_path.variant() {
            return Err(Error::Config(format!(
                "score_path = {:?} needs a {:?} network, got {:?}",
                cfg.score_path,
                cfg.score_path.variant(),
                model.spec().variant
            )));
        }
        if model.dim_y() != self.data.dim_y() {
            return Err(Error::Config(format!(
                "model dim_y {} does not match data dim_y {}",
                model.dim_y(),
                self.data.dim_y()
            )));
        }
        let want_x = self.data.dim_x() + usize::from(cfg.loss == LossKind::Fm);
        if model.dim_x() != want_x {
            return Err(Error::Config(format!(
                "model dim_x {} does not match the {} condition inputs {} needs",
                model.dim_x(),
                want_x,
                cfg.loss.name()
            )));
        }
        if cfg.loss.needs_negatives() {
            let sampler = self.negatives.ok_or_else(|| {
                Error::Config(format!("{} needs a negative sampler", cfg.loss.name()))
            })?;
            if sampler.needs_task() && (self.task.is_none() || self.data.x.is_none()) {
                return Err(Error::Config(
                    "base-predictor negatives need a conditional task".into(),
                ));
            }
        }
        if cfg.loss == LossKind::Sm && self.data.dim_y() > cfg.loss_options.trace_limit {
            return Err(Error::TraceLimit {
                dim: self.data.dim_y(),
                limit: cfg.loss_options.trace_limit,
            });
        }
        Ok(())
    }

    /// The batch for step `step` (0-based).
    pub fn batch(&self, step: usize) -> Result<LossBatch> {
        let cfg = &self.cfg;
        let mut r = rng::stream(cfg.seed, step as u64);
        let n = self.data.len();
        let idx: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(0..n)).collect();
        let rows = self.data.select(&idx);
        let mut batch = LossBatch::new(rows.y.clone());
        if let Some(x) = &rows.x {
            batch = batch.with_x(x.clone());
        }
        let d = rows.dim_y();
        let negatives = || -> Result<Tensor> {
            let sampler = self.negatives.expect("checked");
            let mut nr = rng::stream(sampler.seed, step as u64);
            sampler.generate(self.task, rows.x.as_ref(), &rows.y, &mut nr)
        };
        match cfg.loss {
            LossKind::Nce | LossKind::Delta => {
                batch = batch.with_neg(negatives()?);
            }
            LossKind::Fm => {
                let t: Vec<f64> = (0..cfg.batch).map(|_| r.random::<f64>()).collect();
                let anchor = if self.negatives.is_some() {
                    negatives()?
                } else {
                    let z = (0..cfg.batch * d).map(|_| StandardNormal.sample(&mut r)).collect();
                    Tensor::matrix(cfg.batch, d, z)?
                };
                batch = batch.with_anchor(anchor, t);
            }
            LossKind::Ssm => {
                let o = &cfg.loss_options;
                batch = batch.with_projections(draw_projections(cfg.batch, d, o.projections, o.projection, &mut r));
            }
            LossKind::Sm => {}
        }
        Ok(batch)
    }

    fn score_mse(&self, src: &ScoreSource) -> Result<Option<f64>> {
        match self.oracle {
            Some(dist) if dist.dim() == 2 && src.dim_x() == 0 => {
                Ok(Some(score_field_mse(src, dist, &self.grid)?))
            }
            _ => Ok(None),
        }
    }

    /// Trains a freshly initialised model from step 0.
    pub fn train(&self, model: Mlp) -> Result<TrainOutcome> {
        let n = model.parameter_count();
        self.run(model, 0, AdamState::new(n))
    }

    /// Continues from a checkpoint carrying optimiser state up to
    /// `cfg.steps` total steps.
    pub fn resume(&self, ckpt: &Checkpoint) -> Result<TrainOutcome> {
        let model = ckpt.to_mlp()?;
        let st = ckpt
            .train_state
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no training state to resume from".into()))?;
        if st.optimizer != self.cfg.optimizer.name() {
            return Err(Error::Config(format!(
                "checkpoint optimizer {} differs from configured {}",
                st.optimizer,
                self.cfg.optimizer.name()
            )));
        }
        if st.m.len() != model.parameter_count() || st.v.len() != model.parameter_count() {
            return Err(Error::Checkpoint("optimizer state has the wrong length".into()));
        }
        let state = AdamState {
            t: st.step as u64,
            m: st.m.clone(),
            v: st.v.clone(),
        };
        self.run(model, st.step, state)
    }

    fn run(&self, model: Mlp, start: usize, mut adam: AdamState) -> Result<TrainOutcome> {
        self.check(&model)?;
        let cfg = &self.cfg;
        let clock = Instant::now();
        let wall = |clock: &Instant| cfg.record_wall_time.then(|| clock.elapsed().as_millis());
        let mut src = ScoreSource::from_mlp(model)?;
        let mut metrics = Vec::new();
        if start == 0 {
            metrics.push(MetricRecord {
                step: 0,
                loss: None,
                score_mse: self.score_mse(&src)?,
                wall_ms: wall(&clock),
            });
        }
        let mut window = (0.0, 0usize);
        let mut flat = src.network().as_mlp().expect("mlp").flat_parameters();
        for step in start..cfg.steps {
            let batch = self.batch(step)?;
            let eval = losses::evaluate(cfg.loss, &src, &batch, &cfg.loss_options, None, true)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss { step },
                    e => e,
                })?;
            let grads: Vec<f64> = eval
                .grads
                .expect("requested")
                .iter()
                .flat_map(|g| g.data().iter().copied())
                .collect();
            if !eval.value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { step });
            }
            window.0 += eval.value;
            window.1 += 1;
            match cfg.optimizer {
                Optimizer::Adam => adam_step(&mut flat, &grads, &mut adam, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)?,
                Optimizer::Sgd => {
                    sgd_step(&mut flat, &grads, cfg.lr)?;
                    adam.t += 1;
                }
            }
            load_flat(src.network_mut(), &flat);

            let done = step + 1;
            if done % cfg.eval_every == 0 || done == cfg.steps {
                metrics.push(MetricRecord {
                    step: done,
                    loss: Some(window.0 / window.1 as f64),
                    score_mse: self.score_mse(&src)?,
                    wall_ms: wall(&clock),
                });
                window = (0.0, 0);
            }
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                if let Some(dir) = &self.checkpoint_dir {
                    let ck = snapshot(&src, done, cfg.optimizer, &adam);
                    ck.checkpoint().save(dir.join(format!("checkpoint_{done:06}.json")))?;
                }
            }
        }
        Ok(snapshot_with(src, cfg.steps.max(start), cfg.optimizer, &adam, metrics))
    }
}

fn load_flat(net: &mut dyn Network, flat: &[f64]) {
    let mut off = 0;
    for p in net.parameters_mut() {
        let n = p.numel();
        p.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

fn train_state(step: usize, opt: Optimizer, adam: &AdamState) -> TrainState {
    TrainState {
        step,
        optimizer: opt.name().into(),
        m: adam.m.clone(),
        v: adam.v.clone(),
    }
}

fn snapshot(src: &ScoreSource, step: usize, opt: Optimizer, adam: &AdamState) -> TrainOutcome {
    snapshot_with(src.clone(), step, opt, adam, Vec::new())
}

fn snapshot_with(
    src: ScoreSource,
    step: usize,
    opt: Optimizer,
    adam: &AdamState,
    metrics: Vec<MetricRecord>,
) -> TrainOutcome {
    TrainOutcome {
        model: src.network().as_mlp().expect("mlp").clone(),
        metrics,
        state: train_state(step, opt, adam),
    }
}
