//! Score-driven refinement of samples: plain gradient-ascent Langevin
//! updates, the scaled and noised denoising update, and the one-step jump.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::ScoreSource;
use crate::rng;

/// Iterates whose norm exceeds this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Langevin,
    Denoise,
    OneStep,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "langevin" => Ok(Method::Langevin),
            "denoise" => Ok(Method::Denoise),
            "one_step" | "one-step" => Ok(Method::OneStep),
            _ => Err(Error::invalid(format!("unknown sampling method {s:?}"))),
        }
    }
}

/// One denoising update: `Y <- (Y + beta S) / sqrt(alpha) + sigma Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl StepParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !self.beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant(StepParams),
    PerStep(Vec<StepParams>),
}

impl Schedule {
    /// Parameters for step `n`, or `None` past the end of the schedule.
    pub fn at(&self, n: usize) -> Option<StepParams> {
        match self {
            Schedule::Constant(p) => Some(*p),
            Schedule::PerStep(v) => v.get(n).copied(),
        }
    }

    /// `alpha = 1, beta = rho, sigma = sqrt(2 rho)`: classical unadjusted
    /// Langevin dynamics.
    pub fn noisy_langevin(rho: f64) -> Self {
        Schedule::Constant(StepParams {
            alpha: 1.0,
            beta: rho,
            sigma: (2.0 * rho).sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub method: Method,
    pub rho: f64,
    pub steps: usize,
    /// Denoise only.
    pub schedule: Option<Schedule>,
    /// Chain `i` draws its noise from `seed + i`.
    pub seed: u64,
    pub record_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: Method::Langevin,
            rho: 1e-2,
            steps: 100,
            schedule: None,
            seed: 0,
            record_every: 1,
        }
    }
}

impl SamplerConfig {
    pub fn langevin(rho: f64, steps: usize) -> Self {
        SamplerConfig {
            rho,
            steps,
            ..SamplerConfig::default()
        }
    }

    pub fn denoise(schedule: Schedule, steps: usize, seed: u64) -> Self {
        SamplerConfig {
            method: Method::Denoise,
            steps,
            schedule: Some(schedule),
            seed,
            ..SamplerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() {
            return Err(Error::invalid("rho must be finite"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        if self.method == Method::Denoise {
            let s = self
                .schedule
                .as_ref()
                .ok_or_else(|| Error::Config("denoise needs a schedule".into()))?;
            for n in 0..self.steps {
                s.at(n)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "schedule has {n} entries but {} steps were requested",
                            self.steps
                        ))
                    })?
                    .validate()?;
            }
        }
        Ok(())
    }
}

/// Recorded iterates of a sampling run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `(step, Y)`, starting with the initialisation.
    pub iterates: Vec<(usize, Tensor)>,
    /// Per-row score norms at each recorded iterate.
    pub iterate_score_norms: Vec<Vec<f64>>,
    /// Mean row score norm at every step's input.
    pub score_norms: Vec<f64>,
    pub final_y: Tensor,
}

impl Trajectory {
    /// Writes `step,dim_0,..,score_norm`, one line per chain per recorded
    /// iterate.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| Error::Csv {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let d = self.final_y.cols();
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|j| format!("dim_{j}")));
        header.push("score_norm".into());
        w.write_record(&header).map_err(err)?;
        for ((step, y), norms) in self.iterates.iter().zip(&self.iterate_score_norms) {
            for (row, norm) in y.iter_rows().zip(norms) {
                let mut rec = vec![step.to_string()];
                rec.extend(row.iter().map(f64::to_string));
                rec.push(norm.to_string());
                w.write_record(&rec).map_err(err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn row_norms(t: &Tensor) -> Vec<f64> {
    t.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

fn score_at(src: &ScoreSource, x: Option<&Tensor>, y: &Tensor, step: usize) -> Result<Tensor> {
    src.score(x, y).map_err(|e| match e {
        Error::NonFinite { op } => Error::Diverged {
            step,
            reason: format!("score evaluation produced a non-finite value in {op}"),
        },
        e => e,
    })
}

fn guard(y: &Tensor, step: usize) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::Diverged {
            step,
            reason: "non-finite iterate".into(),
        });
    }
    if let Some(n) = row_norms(y).into_iter().find(|n| *n > DIVERGENCE_NORM) {
        return Err(Error::Diverged {
            step,
            reason: format!("iterate norm {n:.3e} exceeds {DIVERGENCE_NORM:e}"),
        });
    }
    Ok(())
}

/// Shared driver: `update(n, Y, S)` produces iterate `n + 1`.
fn run(
    src: &ScoreSource,
    x: Option<&Tensor>,
    y_init: &Tensor,
    steps: usize,
    record_every: usize,
    mut update: impl FnMut(usize, &Tensor, &Tensor) -> Result<Tensor>,
) -> Result<Trajectory> {
    if record_every == 0 {
        return Err(Error::invalid("record_every must be at least 1"));
    }
    src.check_inputs(x, y_init)?;
    guard(y_init, 0)?;
    let mut y = y_init.clone();
    let mut traj = Trajectory {
        iterates: Vec::with_capacity(steps / record_every + 1),
        iterate_score_norms: Vec::new(),
        score_norms: Vec::with_capacity(steps),
        final_y: y_init.clone(),
    };
    for n in 0..steps {
        let s = score_at(src, x, &y, n)?;
        let norms = row_norms(&s);
        traj.score_norms.push(norms.iter().sum::<f64>() / norms.len() as f64);
        if n % record_every == 0 {
            traj.iterates.push((n, y.clone()));
            traj.iterate_score_norms.push(norms);
        }
        y = update(n, &y, &s)?;
        guard(&y, n + 1)?;
    }
    if steps % record_every == 0 {
        let s = score_at(src, x, &y, steps)?;
        traj.iterates.push((steps, y.clone()));
        traj.iterate_score_norms.push(row_norms(&s));
    }
    traj.final_y = y;
    Ok(traj)
}

/// `Y <- Y + rho S(x, Y)` for `cfg.steps` steps. Deterministic.
pub fn langevin_run(src: &ScoreSource, x: Option<&Tensor>, y_init: &Tensor, cfg: &SamplerConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let rho = cfg.rho;
    run(src, x, y_init, cfg.steps, cfg.record_every, |_, y, s| {
        y.zip_map(s, |y, s| y + rho * s)
    })
}

/// `Y <- (Y + beta_n S(x, Y)) / sqrt(alpha_n) + sigma_n Z` with `Z` standard
/// normal. Chain (row) `i` draws from its own generator seeded `seed + i`.
pub fn denoise_run(src: &ScoreSource, x: Option<&Tensor>, y_init: &Tensor, cfg: &SamplerConfig) -> Result<Trajectory> {
    let cfg = SamplerConfig {
        method: Method::Denoise,
        ..cfg.clone()
    };
    cfg.validate()?;
    let schedule = cfg.schedule.as_ref().expect("validated");
    let mut chains: Vec<rng::Rng> = (0..y_init.rows())
        .map(|i| rng::seeded(cfg.seed.wrapping_add(i as u64)))
        .collect();
    let d = y_init.cols();
    run(src, x, y_init, cfg.steps, cfg.record_every, |n, y, s| {
        let p = schedule.at(n).expect("validated");
        let scale = 1.0 / p.alpha.sqrt();
        let mut out = y.zip_map(s, |y, s| scale * (y + p.beta * s))?;
        if p.sigma != 0.0 {
            for (i, r) in chains.iter_mut().enumerate() {
                for v in &mut out.data_mut()[i * d..(i + 1) * d] {
                    let z: f64 = StandardNormal.sample(r);
                    *v += p.sigma * z;
                }
            }
        }
        Ok(out)
    })
}

/// `Y⁻ + S(x, Y⁻)`: a single unit step.
pub fn one_step(src: &ScoreSource, x: Option<&Tensor>, y_neg: &Tensor) -> Result<Tensor> {
    let s = src.score(x, y_neg)?;
    y_neg.zip_map(&s, |y, s| y + s)
}

/// Dispatches on `cfg.method`. One-step runs are reported as a two-iterate
/// trajectory.
pub fn sample(src: &ScoreSource, x: Option<&Tensor>, y_init: &Tensor, cfg: &SamplerConfig) -> Result<Trajectory> {
    match cfg.method {
        Method::Langevin => langevin_run(src, x, y_init, cfg),
        Method::Denoise => denoise_run(src, x, y_init, cfg),
        Method::OneStep => run(src, x, y_init, 1, 1, |_, y, s| y.zip_map(s, |y, s| y + s)),
    }
}

#[cfg(test)]
mod tests;
