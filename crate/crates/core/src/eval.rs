//! Verification harnesses: finite-difference gradient checks, the projection
//! trace estimator against the exact trace, score-field error on a grid,
//! two-sample distances and the inference step sweep.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Dataset, SyntheticDistribution};
use crate::error::{Error, Result};
use crate::inference::{langevin_run, SamplerConfig};
use crate::losses::{self, draw_projections, LossBatch, LossKind, LossOptions, Projection};
use crate::models::ScoreSource;
use crate::rng;

/// Square evaluation grid `[lo, hi]^2` with `resolution` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            lo: -4.0,
            hi: 4.0,
            resolution: 41,
        }
    }
}

impl Grid {
    pub fn axis(&self) -> Vec<f64> {
        let n = self.resolution;
        if n == 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        (0..n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// All grid points as rows `(a, b)`, `b` varying fastest.
    pub fn points(&self) -> Tensor {
        let axis = self.axis();
        let mut data = Vec::with_capacity(2 * axis.len() * axis.len());
        for a in &axis {
            for b in &axis {
                data.push(*a);
                data.push(*b);
            }
        }
        Tensor::matrix(axis.len() * axis.len(), 2, data).expect("sized by construction")
    }

    fn validate(&self) -> Result<()> {
        if self.resolution == 0 || !(self.hi > self.lo) {
            return Err(Error::invalid("grid needs resolution >= 1 and hi > lo"));
        }
        Ok(())
    }
}

/// `|S_model - S_true|^2` at every grid point, in [`Grid::points`] order.
pub fn score_field_errors(src: &ScoreSource, dist: &SyntheticDistribution, grid: &Grid) -> Result<Vec<f64>> {
    grid.validate()?;
    if dist.dim() != 2 || src.dim_y() != 2 {
        return Err(Error::invalid("score-field maps are defined for 2-D data"));
    }
    let pts = grid.points();
    let model = src.score(None, &pts)?;
    let truth = dist.analytic_score(&pts)?;
    Ok(model
        .iter_rows()
        .zip(truth.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect())
}

/// Grid mean of `|S_model - S_true|^2`.
pub fn score_field_mse(src: &ScoreSource, dist: &SyntheticDistribution, grid: &Grid) -> Result<f64> {
    let e = score_field_errors(src, dist, grid)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Error of the zero score: the grid mean of `|S_true|^2`.
pub fn zero_score_baseline(dist: &SyntheticDistribution, grid: &Grid) -> Result<f64> {
    let truth = dist.analytic_score(&grid.points())?;
    Ok(truth.sq_norm() / truth.rows() as f64)
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative-error floor for gradient comparisons.
pub const REL_FLOOR: f64 = 1e-8;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `f` at `point`,
/// coordinate by coordinate.
pub fn grad_check(
    f: impl Fn(&[f64]) -> Result<f64>,
    analytic: &[f64],
    point: &[f64],
    h: f64,
) -> Result<GradCheck> {
    grad_check_coords(f, analytic, point, h, &(0..point.len()).collect::<Vec<_>>())
}

/// [`grad_check`] restricted to `coords`; `analytic` is still the full
/// gradient.
pub fn grad_check_coords(
    f: impl Fn(&[f64]) -> Result<f64>,
    analytic: &[f64],
    point: &[f64],
    h: f64,
    coords: &[usize],
) -> Result<GradCheck> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::invalid(format!("step h = {h} outside [1e-7, 1e-3]")));
    }
    if analytic.len() != point.len() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            lhs: vec![point.len()],
            rhs: vec![analytic.len()],
        });
    }
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "grad_check analytic" });
    }
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: 0,
        analytic: Vec::with_capacity(coords.len()),
        numeric: Vec::with_capacity(coords.len()),
    };
    let mut p = point.to_vec();
    for &i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let fp = f(&p)?;
        p[i] = orig - h;
        let fm = f(&p)?;
        p[i] = orig;
        let num = (fp - fm) / (2.0 * h);
        if !num.is_finite() {
            return Err(Error::NonFinite { op: "grad_check numeric" });
        }
        let e = rel_error(analytic[i], num);
        if e > out.max_rel_error {
            out.max_rel_error = e;
            out.worst = i;
        }
        out.analytic.push(analytic[i]);
        out.numeric.push(num);
    }
    Ok(out)
}

/// Analytic score against central differences of `-E` for each row of `y`.
/// Analytic sources only.
pub fn score_grad_check(src: &ScoreSource, x: Option<&Tensor>, y: &Tensor, h: f64) -> Result<f64> {
    if !src.is_analytic() {
        return Err(Error::invalid("score_grad_check needs an energy (analytic) source"));
    }
    let s = src.score(x, y)?;
    let mut worst: f64 = 0.0;
    for i in 0..y.rows() {
        let xi = x.map(|x| x.select_rows(&[i]));
        let f = |p: &[f64]| -> Result<f64> {
            let yi = Tensor::matrix(1, p.len(), p.to_vec())?;
            Ok(-src.energies(xi.as_ref(), &yi)?[0])
        };
        let c = grad_check(f, s.row(i), y.row(i), h)?;
        worst = worst.max(c.max_rel_error);
    }
    Ok(worst)
}

/// Parameter gradient of a loss against central differences, over all
/// parameters or `sample` of them chosen with `seed`.
pub fn loss_grad_check(
    kind: LossKind,
    src: &ScoreSource,
    batch: &LossBatch,
    opts: &LossOptions,
    h: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradCheck> {
    use rand::seq::index;
    let eval = losses::evaluate(kind, src, batch, opts, None, true)?;
    let analytic: Vec<f64> = eval
        .grads
        .expect("requested")
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    let point: Vec<f64> = src
        .network()
        .parameters()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    let coords: Vec<usize> = match sample {
        Some((k, seed)) if k < point.len() => {
            let mut c = index::sample(&mut rng::seeded(seed), point.len(), k).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..point.len()).collect(),
    };
    let f = |p: &[f64]| -> Result<f64> {
        let mut s = src.clone();
        let mut off = 0;
        for t in s.network_mut().parameters_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&p[off..off + n]);
            off += n;
        }
        Ok(losses::evaluate(kind, &s, batch, opts, None, false)?.value)
    };
    grad_check_coords(f, &analytic, &point, h, &coords)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HutchinsonCheck {
    pub mean: f64,
    pub stderr: f64,
    pub exact: f64,
    pub z: f64,
    pub draws: usize,
    pub seed: u64,
}

impl HutchinsonCheck {
    /// Inside the 3-standard-error band.
    pub fn passes(&self) -> bool {
        self.z.abs() <= 3.0
    }
}

/// Mean of `vᵀ (∇_Y S) v` over `draws` Gaussian projections at the single
/// point `(x, y)`, compared with the exact trace.
pub fn hutchinson_check(
    src: &ScoreSource,
    x: Option<&Tensor>,
    y: &Tensor,
    draws: usize,
    seed: u64,
) -> Result<HutchinsonCheck> {
    hutchinson_check_with(src, x, y, draws, seed, Projection::Gaussian, 16)
}

pub fn hutchinson_check_with(
    src: &ScoreSource,
    x: Option<&Tensor>,
    y: &Tensor,
    draws: usize,
    seed: u64,
    projection: Projection,
    trace_limit: usize,
) -> Result<HutchinsonCheck> {
    if y.rank() != 2 || y.rows() != 1 {
        return Err(Error::invalid("hutchinson_check takes a single point (1 x d)"));
    }
    let d = y.cols();
    if d > trace_limit {
        return Err(Error::TraceLimit {
            dim: d,
            limit: trace_limit,
        });
    }
    if draws == 0 {
        return Err(Error::invalid("hutchinson_check needs at least one draw"));
    }
    let exact = losses::exact_trace(src, x, y)?[0];
    let repeat = |t: &Tensor| t.select_rows(&vec![0; draws]);
    let ys = repeat(y);
    let xs = x.map(repeat);
    let v = draw_projections(draws, d, 1, projection, &mut rng::seeded(seed)).remove(0);
    let terms = losses::projection_terms(src, xs.as_ref(), &ys, &v)?;
    let mean = terms.iter().sum::<f64>() / draws as f64;
    let stderr = if draws > 1 {
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        (var / draws as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let z = if stderr > 0.0 {
        (mean - exact) / stderr
    } else if mean == exact {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(HutchinsonCheck {
        mean,
        stderr,
        exact,
        z,
        draws,
        seed,
    })
}

fn check_samples(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != 2 || b.rank() != 2 || a.rows() == 0 || b.rows() == 0 {
        return Err(Error::invalid("two-sample statistics need non-empty n x d batches"));
    }
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "two-sample",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn mean_pairwise(a: &Tensor, b: &Tensor, k: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for ra in a.iter_rows() {
        let mut row = 0.0;
        for rb in b.iter_rows() {
            row += k(ra, rb);
        }
        total += row;
    }
    total / (a.rows() * b.rows()) as f64
}

/// `E|a - b| - E|a - a'|/2 - E|b - b'|/2` over all pairs (including
/// `a = a'`), so identical batches give exactly 0.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_samples(a, b)?;
    let ab = mean_pairwise(a, b, dist);
    let aa = mean_pairwise(a, a, dist);
    let bb = mean_pairwise(b, b, dist);
    Ok(ab - 0.5 * aa - 0.5 * bb)
}

/// Squared RBF-kernel MMD (biased form) with bandwidth set to the median
/// pairwise distance of the pooled sample.
pub fn mmd_rbf(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_samples(a, b)?;
    let pooled: Vec<&[f64]> = a.iter_rows().chain(b.iter_rows()).collect();
    let mut d2: Vec<f64> = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d2.push(dist(pooled[i], pooled[j]).powi(2));
        }
    }
    let bw2 = if d2.is_empty() {
        1.0
    } else {
        d2.sort_by(f64::total_cmp);
        let m = d2[d2.len() / 2];
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let k = |x: &[f64], y: &[f64]| (-dist(x, y).powi(2) / (2.0 * bw2)).exp();
    Ok(mean_pairwise(a, a, k) + mean_pairwise(b, b, k) - 2.0 * mean_pairwise(a, b, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    /// Threshold the value is compared against, if any.
    pub tolerance: Option<f64>,
    pub passed: Option<bool>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridValues {
    pub grid: Grid,
    /// Row-major over [`Grid::points`].
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub metrics: BTreeMap<String, Metric>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridValues>,
}

impl EvalReport {
    pub fn new(name: impl Into<String>) -> Self {
        EvalReport {
            name: name.into(),
            ..EvalReport::default()
        }
    }

    /// Records an informational value.
    pub fn info(&mut self, key: impl Into<String>, value: f64, seeds: &[u64]) {
        self.metrics.insert(
            key.into(),
            Metric {
                value,
                tolerance: None,
                passed: None,
                seeds: seeds.to_vec(),
            },
        );
    }

    /// Records a gated value.
    pub fn gate(&mut self, key: impl Into<String>, value: f64, tolerance: f64, passed: bool, seeds: &[u64]) {
        self.metrics.insert(
            key.into(),
            Metric {
                value,
                tolerance: Some(tolerance),
                passed: Some(passed),
                seeds: seeds.to_vec(),
            },
        );
    }

    pub fn passed(&self) -> bool {
        self.metrics.values().all(|m| m.passed != Some(false))
    }

    /// Names of the gated metrics that failed.
    pub fn failures(&self) -> Vec<&str> {
        self.metrics
            .iter()
            .filter(|(_, m)| m.passed == Some(false))
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.metrics.extend(other.metrics);
        if other.grid.is_some() {
            self.grid = other.grid;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes the grid as a heatmap table: a header of second-coordinate
    /// values, then one line per first-coordinate value.
    pub fn write_grid_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let Some(g) = &self.grid else {
            return Err(Error::invalid("report has no grid"));
        };
        let axis = g.grid.axis();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let head: Vec<String> = axis.iter().map(f64::to_string).collect();
        writeln!(f, "y0\\y1,{}", head.join(","))?;
        for (i, a) in axis.iter().enumerate() {
            let row: Vec<String> = g.values[i * axis.len()..(i + 1) * axis.len()]
                .iter()
                .map(f64::to_string)
                .collect();
            writeln!(f, "{a},{}", row.join(","))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Score-field report: grid MSE, zero-score baseline and their ratio.
pub fn score_field_report(src: &ScoreSource, dist: &SyntheticDistribution, grid: &Grid, max_ratio: f64) -> Result<EvalReport> {
    let errors = score_field_errors(src, dist, grid)?;
    let mse = errors.iter().sum::<f64>() / errors.len() as f64;
    let base = zero_score_baseline(dist, grid)?;
    let mut r = EvalReport::new("score_field");
    r.info("score_mse", mse, &[]);
    r.info("zero_score_mse", base, &[]);
    r.gate("score_mse_ratio", mse / base, max_ratio, mse / base < max_ratio, &[]);
    r.grid = Some(GridValues {
        grid: *grid,
        values: errors,
    });
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub steps: usize,
    /// Mean `|Y_N - Y⁺|^2`; infinite once the sampler has diverged.
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSweep {
    pub rows: Vec<SweepRow>,
    pub rho: f64,
}

impl StepSweep {
    pub fn mse_at(&self, steps: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.steps == steps).map(|r| r.mse)
    }

    pub fn best(&self) -> &SweepRow {
        self.rows
            .iter()
            .min_by(|a, b| a.mse.total_cmp(&b.mse))
            .expect("non-empty")
    }

    /// `(MSE(1) - best) / best`.
    pub fn one_step_gap(&self) -> Option<f64> {
        let one = self.mse_at(1)?;
        let best = self.best().mse;
        Some(if best > 0.0 { (one - best) / best } else { one - best })
    }

    pub fn report(&self, seeds: &[u64]) -> EvalReport {
        let mut r = EvalReport::new("step_sweep");
        for row in &self.rows {
            r.info(format!("mse_step_{:03}", row.steps), row.mse, seeds);
        }
        let best = self.best();
        r.info("best_steps", best.steps as f64, seeds);
        if let (Some(m0), Some(m1)) = (self.mse_at(0), self.mse_at(1)) {
            r.info("one_step_beats_initialisation", f64::from(u8::from(m1 < m0)), seeds);
        }
        if let (Some(m1), Some(last)) = (self.mse_at(1), self.rows.last()) {
            if last.steps > 1 {
                r.info("degrades_at_most_steps", f64::from(u8::from(last.mse >= m1)), seeds);
            }
        }
        if let Some(gap) = self.one_step_gap() {
            r.info("one_step_gap_to_best", gap, seeds);
        }
        r
    }
}

/// Runs Langevin refinement from `init` and reports the mean squared error
/// to the references after each step count in `steps_list`.
pub fn step_sweep(
    src: &ScoreSource,
    heldout: &Dataset,
    init: &Tensor,
    steps_list: &[usize],
    rho: f64,
) -> Result<StepSweep> {
    if steps_list.is_empty() {
        return Err(Error::invalid("step sweep needs at least one step count"));
    }
    if init.shape() != heldout.y.shape() {
        return Err(Error::ShapeMismatch {
            op: "step_sweep",
            lhs: heldout.y.shape().to_vec(),
            rhs: init.shape().to_vec(),
        });
    }
    let max = *steps_list.iter().max().expect("non-empty");
    let x = heldout.x.as_ref().filter(|_| src.dim_x() > 0);
    let mut cfg = SamplerConfig::langevin(rho, max);
    let traj = match langevin_run(src, x, init, &cfg) {
        Ok(t) => t,
        Err(Error::Diverged { step, .. }) => {
            cfg.steps = step.saturating_sub(1);
            langevin_run(src, x, init, &cfg)?
        }
        Err(e) => return Err(e),
    };
    let mse = |y: &Tensor| -> Result<f64> {
        Ok(y.zip_map(&heldout.y, |a, b| a - b)?.sq_norm() / y.rows() as f64)
    };
    let rows = steps_list
        .iter()
        .map(|&n| {
            let mse = match traj.iterates.get(n) {
                Some((_, y)) => mse(y)?,
                None => f64::INFINITY,
            };
            Ok(SweepRow { steps: n, mse })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StepSweep { rows, rho })
}

#[cfg(test)]
mod tests;
