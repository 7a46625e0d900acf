use std::path::Path;

use ebmlab_core::data::write_csv;
use ebmlab_core::eval::{
    energy_distance, hutchinson_check, loss_grad_check, score_field_report, score_grad_check,
    step_sweep,
};
use ebmlab_core::inference;
use ebmlab_core::training::write_metrics;
use ebmlab_core::{
    Checkpoint, Dataset, EvalReport, LossKind, Mlp, NegativeSampler, ScoreSource,
    SyntheticDistribution, Tensor, Trainer,
};

use crate::config::{RunConfig, SampleInit, Splits, Suite, CONFIG_FILE};
use crate::error::{CliError, CliResult};

/// Creates the output directory and writes the resolved config into it.
fn prepare_out(cfg: &RunConfig) -> CliResult<&Path> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let p = out.join(CONFIG_FILE);
    std::fs::write(&p, cfg.to_json()).map_err(|e| CliError::io(format!("writing {}", p.display()), e))?;
    Ok(out)
}

fn required_checkpoint(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| CliError::usage("no checkpoint: pass --checkpoint or set the checkpoint key"))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::usage(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).map_err(|e| CliError::usage(format!("checkpoint {}: {e}", path.display())))
}

fn negatives(cfg: &RunConfig) -> CliResult<Option<NegativeSampler>> {
    Ok(cfg.negatives.clone().map(|s| NegativeSampler::new(s, cfg.seed)).transpose()?)
}

/// Condition columns the network reads: the data's own plus a time column
/// for flow matching.
fn model_dim_x(cfg: &RunConfig, data: &Dataset) -> usize {
    data.dim_x() + usize::from(cfg.train.loss == LossKind::Fm)
}

fn init_model(cfg: &RunConfig, data: &Dataset) -> CliResult<Mlp> {
    let dim_x = model_dim_x(cfg, data);
    let spec = cfg.model.spec(&cfg.train, dim_x, data.dim_y());
    Ok(Mlp::init(spec, dim_x, data.dim_y(), cfg.seed)?)
}

fn trainer<'a>(
    cfg: &'a RunConfig,
    data: &'a Dataset,
    neg: Option<&'a NegativeSampler>,
) -> Trainer<'a> {
    let mut t = Trainer::new(cfg.train.clone(), data);
    if let Some(n) = neg {
        t = t.with_negatives(n);
    }
    if let Some(task) = cfg.data.task() {
        t = t.with_task(task);
    }
    if let Some(dist) = cfg.data.oracle() {
        t = t.with_oracle(dist);
    }
    t
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let resume = cfg.resume.as_deref().map(load_checkpoint).transpose()?;
    let splits = cfg.data.load()?;
    let neg = negatives(cfg)?;
    let out = prepare_out(cfg)?;
    let mut t = trainer(cfg, &splits.train, neg.as_ref());
    if cfg.train.checkpoint_every > 0 {
        let dir = out.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        t = t.with_checkpoint_dir(dir);
    }
    let outcome = match resume {
        Some(ck) => t.resume(&ck)?,
        None => {
            let model = init_model(cfg, &splits.train)?;
            t.check(&model)?;
            Checkpoint::from_mlp(&model).save(out.join("init.json"))?;
            t.train(model)?
        }
    };
    write_metrics(out.join("metrics.csv"), &outcome.metrics)?;
    outcome.checkpoint().save(out.join("checkpoint.json"))?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "trained {} steps: loss {} score_mse {}",
            last.step,
            last.loss.map_or("-".into(), |v| v.to_string()),
            last.score_mse.map_or("-".into(), |v| v.to_string()),
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

/// Starting points and matching conditions for `n` chains.
fn sample_inputs(cfg: &RunConfig, src: &ScoreSource, splits: Option<&Splits>, n: usize) -> CliResult<(Option<Tensor>, Tensor)> {
    let s = &cfg.sample;
    if let Some(path) = &s.input {
        let d = ebmlab_core::data::load_csv(path, src.dim_y(), src.dim_x() > 0)?;
        return Ok((d.x, d.y));
    }
    let x = if src.dim_x() > 0 {
        let held = &splits.expect("conditional sampling loads data").heldout;
        let x = held
            .x
            .as_ref()
            .filter(|x| x.cols() == src.dim_x())
            .ok_or_else(|| CliError::usage(format!(
                "the model reads {} condition columns but the held-out data has {}; pass the training run's --config or sample.input",
                src.dim_x(),
                held.dim_x()
            )))?;
        let n = n.min(held.len());
        Some(x.select_rows(&(0..n).collect::<Vec<_>>()))
    } else {
        None
    };
    let rows = x.as_ref().map_or(n, Tensor::rows);
    let y = match s.init {
        SampleInit::Noise => SyntheticDistribution::gaussian(vec![0.0; src.dim_y()], s.init_std)?.sample(rows, cfg.seed)?,
        SampleInit::Base => {
            let task = cfg
                .data
                .task()
                .ok_or_else(|| CliError::usage("config key sample.init: base needs data.kind = conditional"))?;
            let x = x.as_ref().ok_or_else(|| CliError::usage("config key sample.init: base needs a conditional model"))?;
            task.base_predict(x)?
        }
    };
    Ok((x, y))
}

fn needs_data(cfg: &RunConfig, src: &ScoreSource) -> bool {
    src.dim_x() > 0 && cfg.sample.input.is_none()
}

pub fn sample(cfg: &RunConfig) -> CliResult<()> {
    let src = ScoreSource::from_mlp(load_checkpoint(required_checkpoint(cfg)?)?.to_mlp()?)?;
    let splits = if needs_data(cfg, &src) { Some(cfg.data.load()?) } else { None };
    let (x, init) = sample_inputs(cfg, &src, splits.as_ref(), cfg.sample.n)?;
    let out = prepare_out(cfg)?;
    let traj = inference::sample(&src, x.as_ref(), &init, &cfg.sampler)?;
    write_csv(out.join("samples.csv"), &Dataset::new(x, traj.final_y.clone())?)?;
    if cfg.sample.trajectory {
        traj.write_csv(out.join("trajectory.csv"))?;
    }
    println!("wrote {} samples to {}", traj.final_y.rows(), out.display());
    Ok(())
}

fn gradcheck_report(cfg: &RunConfig, model: &Mlp, splits: &Splits) -> CliResult<EvalReport> {
    let e = &cfg.eval;
    let seeds = [cfg.seed];
    let neg = negatives(cfg)?;
    let t = trainer(cfg, &splits.heldout, neg.as_ref());
    t.check(model)?;
    let src = ScoreSource::from_mlp(model.clone())?;
    let mut r = EvalReport::new("gradcheck");
    if src.is_analytic() && model_dim_x(cfg, &splits.heldout) == splits.heldout.dim_x() {
        let rows: Vec<usize> = (0..e.grad_rows.min(splits.heldout.len())).collect();
        let part = splits.heldout.select(&rows);
        let err = score_grad_check(&src, part.x.as_ref(), &part.y, e.h)?;
        r.gate("score_grad_rel_error", err, e.grad_tol, err <= e.grad_tol, &seeds);
    }
    let batch = t.batch(0)?;
    let c = loss_grad_check(
        cfg.train.loss,
        &src,
        &batch,
        &cfg.train.loss_options,
        e.h,
        Some((e.grad_coords, cfg.seed)),
    )?;
    r.gate("loss_grad_rel_error", c.max_rel_error, e.grad_tol, c.passes(e.grad_tol), &seeds);
    Ok(r)
}

fn suite_report(cfg: &RunConfig, suite: Suite, model: &Mlp, splits: &Splits, out: &Path) -> CliResult<EvalReport> {
    let e = &cfg.eval;
    let seeds = [cfg.seed];
    let src = ScoreSource::from_mlp(model.clone())?;
    let held = &splits.heldout;
    let x_for = |rows: &Dataset| rows.x.clone().filter(|_| src.dim_x() > 0);
    match suite {
        Suite::Gradcheck => gradcheck_report(cfg, model, splits),
        Suite::Hutchinson => {
            let first = held.select(&[0]);
            let h = hutchinson_check(&src, x_for(&first).as_ref(), &first.y, e.draws, cfg.seed)?;
            let mut r = EvalReport::new("hutchinson");
            r.info("hutchinson_mean", h.mean, &seeds);
            r.info("hutchinson_stderr", h.stderr, &seeds);
            r.info("exact_trace", h.exact, &seeds);
            r.gate("hutchinson_abs_z", h.z.abs(), 3.0, h.passes(), &seeds);
            Ok(r)
        }
        Suite::StepSweep => {
            let task = cfg
                .data
                .task()
                .ok_or_else(|| CliError::usage("step-sweep needs data.kind = conditional; pass the training run's --config"))?;
            let init = task.base_predict(held.x.as_ref().expect("conditional data has x"))?;
            Ok(step_sweep(&src, held, &init, &e.steps, e.sweep_rho)?.report(&seeds))
        }
        Suite::ScoreField => {
            let dist = cfg
                .data
                .oracle()
                .ok_or_else(|| CliError::usage("score-field needs data.kind = distribution"))?;
            let r = score_field_report(&src, dist, &e.grid, e.max_score_ratio)?;
            r.write_grid_csv(out.join("score_field.csv"))?;
            Ok(r)
        }
        Suite::Energy => {
            let (x, init) = sample_inputs(cfg, &src, Some(splits), e.n_samples)?;
            let ys = inference::sample(&src, x.as_ref(), &init, &cfg.sampler)?.final_y;
            let target = &held.y;
            let before = energy_distance(&init, target)?;
            let after = energy_distance(&ys, target)?;
            let ratio = after / before;
            let mut r = EvalReport::new("energy");
            r.info("energy_distance_init", before, &seeds);
            r.info("energy_distance_samples", after, &seeds);
            r.gate("energy_distance_ratio", ratio, e.max_energy_ratio, ratio <= e.max_energy_ratio, &seeds);
            Ok(r)
        }
    }
}

fn finish_report(report: &EvalReport, out: &Path) -> CliResult<()> {
    let p = out.join("report.json");
    std::fs::write(&p, report.to_json()? + "\n").map_err(|e| CliError::io(format!("writing {}", p.display()), e))?;
    for (k, m) in &report.metrics {
        let status = match m.passed {
            Some(true) => " PASS",
            Some(false) => " FAIL",
            None => "",
        };
        let tol = m.tolerance.map_or(String::new(), |t| format!(" (tolerance {t})"));
        println!("{k} = {}{tol}{status}", m.value);
    }
    let failures = report.failures();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(failures.into_iter().map(String::from).collect()))
    }
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    let checkpoint = required_checkpoint(cfg)?;
    if cfg.eval.suites.is_empty() {
        return Err(CliError::usage("config key eval.suites: choose at least one suite"));
    }
    let model = load_checkpoint(checkpoint)?.to_mlp()?;
    let splits = cfg.data.load()?;
    let out = prepare_out(cfg)?;
    let mut report = EvalReport::new("eval");
    for &suite in &cfg.eval.suites {
        report.merge(suite_report(cfg, suite, &model, &splits, out)?);
    }
    finish_report(&report, out)
}

/// Gradient checks on a checkpoint, or on a fresh initialisation from the
/// config when no checkpoint is given.
pub fn gradcheck(cfg: &RunConfig) -> CliResult<()> {
    let checkpoint = cfg.checkpoint.as_deref();
    let splits = cfg.data.load()?;
    let model = match checkpoint {
        Some(p) => load_checkpoint(p)?.to_mlp()?,
        None => init_model(cfg, &splits.train)?,
    };
    let out = prepare_out(cfg)?;
    let report = gradcheck_report(cfg, &model, &splits)?;
    finish_report(&report, out)
}
