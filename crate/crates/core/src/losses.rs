//! Training objectives. Every loss is the batch mean of a per-item loss and
//! is built as a graph node so parameter gradients come from one backward
//! pass; the score-matching losses differentiate through a taped score.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{bind, ScoreSource};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Nce,
    Sm,
    Ssm,
    Delta,
    Fm,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Nce => "nce",
            LossKind::Sm => "sm",
            LossKind::Ssm => "ssm",
            LossKind::Delta => "delta",
            LossKind::Fm => "fm",
        }
    }

    pub fn needs_negatives(self) -> bool {
        matches!(self, LossKind::Nce | LossKind::Delta)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nce" => LossKind::Nce,
            "sm" => LossKind::Sm,
            "ssm" => LossKind::Ssm,
            "delta" => LossKind::Delta,
            "fm" => LossKind::Fm,
            _ => return Err(Error::invalid(format!("unknown loss {s:?}"))),
        })
    }
}

/// Distribution of the SSM projection vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossOptions {
    /// Largest `dim(Y)` for which the exact Hessian trace is computed.
    pub trace_limit: usize,
    pub projection: Projection,
    /// Projections per item for SSM.
    pub projections: usize,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            trace_limit: 16,
            projection: Projection::Gaussian,
            projections: 1,
        }
    }
}

/// Inputs to a loss. Only the fields a given loss uses need to be set.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBatch {
    pub x: Option<Tensor>,
    /// Reference samples `Y⁺`, `n x d`.
    pub y_pos: Tensor,
    /// Noisy samples `Y⁻` (NCE, delta).
    pub y_neg: Option<Tensor>,
    /// Source samples `Y⁰` (FM).
    pub y_anchor: Option<Tensor>,
    /// Interpolation times in `[0, 1]`, one per row (FM).
    pub t: Option<Vec<f64>>,
    /// Projection matrices, each `n x d` (SSM). One per projection draw.
    pub v: Option<Vec<Tensor>>,
}

impl LossBatch {
    pub fn new(y_pos: Tensor) -> Self {
        LossBatch {
            x: None,
            y_pos,
            y_neg: None,
            y_anchor: None,
            t: None,
            v: None,
        }
    }

    pub fn with_x(mut self, x: Tensor) -> Self {
        self.x = Some(x);
        self
    }

    pub fn with_neg(mut self, y_neg: Tensor) -> Self {
        self.y_neg = Some(y_neg);
        self
    }

    pub fn with_anchor(mut self, y_anchor: Tensor, t: Vec<f64>) -> Self {
        self.y_anchor = Some(y_anchor);
        self.t = Some(t);
        self
    }

    pub fn with_projections(mut self, v: Vec<Tensor>) -> Self {
        self.v = Some(v);
        self
    }

    pub fn len(&self) -> usize {
        self.y_pos.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.y_pos.cols()
    }

    /// The `i`-th item as a batch of one.
    pub fn item(&self, i: usize) -> LossBatch {
        let pick = |t: &Tensor| t.select_rows(&[i]);
        LossBatch {
            x: self.x.as_ref().map(pick),
            y_pos: pick(&self.y_pos),
            y_neg: self.y_neg.as_ref().map(pick),
            y_anchor: self.y_anchor.as_ref().map(pick),
            t: self.t.as_ref().map(|t| vec![t[i]]),
            v: self.v.as_ref().map(|vs| vs.iter().map(pick).collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.y_pos.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::invalid("y_pos must be a non-empty n x d matrix"));
        }
        let check = |name: &'static str, t: &Tensor| {
            if t.shape() != shape {
                Err(Error::ShapeMismatch {
                    op: name,
                    lhs: shape.to_vec(),
                    rhs: t.shape().to_vec(),
                })
            } else {
                Ok(())
            }
        };
        if let Some(t) = &self.y_neg {
            check("y_neg", t)?;
        }
        if let Some(t) = &self.y_anchor {
            check("y_anchor", t)?;
        }
        if let Some(vs) = &self.v {
            for v in vs {
                check("projection", v)?;
            }
        }
        if let Some(x) = &self.x {
            if x.rank() != 2 || x.rows() != shape[0] {
                return Err(Error::ShapeMismatch {
                    op: "x",
                    lhs: vec![shape[0]],
                    rhs: x.shape().to_vec(),
                });
            }
        }
        if let Some(t) = &self.t {
            if t.len() != shape[0] {
                return Err(Error::invalid("t must have one entry per row"));
            }
            if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::invalid(format!("t = {bad} lies outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `k` projection matrices of shape `n x d`.
pub fn draw_projections(n: usize, d: usize, k: usize, kind: Projection, rng: &mut Rng) -> Vec<Tensor> {
    (0..k)
        .map(|_| {
            let data = (0..n * d)
                .map(|_| match kind {
                    Projection::Gaussian => StandardNormal.sample(rng),
                    Projection::Rademacher => {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                })
                .collect();
            Tensor::matrix(n, d, data).expect("sized by construction")
        })
        .collect()
}

fn mean_over_rows(g: &mut Graph, total: Var, n: usize) -> Result<Var> {
    g.scale(total, 1.0 / n as f64)
}

/// `1/2 Σ |a|^2`.
fn half_sq_norm(g: &mut Graph, a: Var) -> Result<Var> {
    let sq = g.square(a)?;
    let s = g.sum(sq)?;
    g.scale(s, 0.5)
}

/// NCE: `mean softplus(E(Y⁺)) + softplus(-E(Y⁻))`.
pub fn nce_node(g: &mut Graph, src: &ScoreSource, params: &[Var], batch: &LossBatch) -> Result<Var> {
    if !src.is_analytic() {
        return Err(Error::Config(
            "nce needs an energy network (analytic score path)".into(),
        ));
    }
    let y_neg = batch.y_neg.as_ref().ok_or(Error::MissingInput {
        loss: "nce",
        what: "negative samples y_neg",
    })?;
    let x = src.bind_x(g, batch.x.as_ref());
    let yp = g.constant(batch.y_pos.clone());
    let yn = g.constant(y_neg.clone());
    let ep = src.energy_node(g, params, x, yp)?;
    let en = src.energy_node(g, params, x, yn)?;
    let sp = g.softplus(ep)?;
    let neg_en = g.neg(en)?;
    let sn = g.softplus(neg_en)?;
    let a = g.sum(sp)?;
    let b = g.sum(sn)?;
    let total = g.add(a, b)?;
    mean_over_rows(g, total, batch.len())
}

/// Σ_rows v . ∇_Y (v . S): the projected Jacobian term for every row at once.
fn projected_jacobian(g: &mut Graph, s: Var, y: Var, v: &Tensor) -> Result<Var> {
    let vv = g.constant(v.clone());
    let jv = g.hvp_node(s, y, vv)?;
    g.dot(jv, vv)
}

/// Exact score matching: `mean tr(∇_Y S) + 1/2 |S|^2`, the trace from one
/// basis-vector product per dimension.
pub fn sm_node(
    g: &mut Graph,
    src: &ScoreSource,
    params: &[Var],
    batch: &LossBatch,
    trace_limit: usize,
) -> Result<Var> {
    let (n, d) = (batch.len(), batch.dim());
    if d > trace_limit {
        return Err(Error::TraceLimit {
            dim: d,
            limit: trace_limit,
        });
    }
    let x = src.bind_x(g, batch.x.as_ref());
    let y = g.leaf(batch.y_pos.clone());
    let s = src.score_node(g, params, x, y, true)?;
    let mut trace: Option<Var> = None;
    for j in 0..d {
        let mut e = Tensor::zeros(vec![n, d]);
        for i in 0..n {
            e.data_mut()[i * d + j] = 1.0;
        }
        let term = projected_jacobian(g, s, y, &e)?;
        trace = Some(match trace {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let norm = half_sq_norm(g, s)?;
    let total = g.add(trace.expect("d >= 1"), norm)?;
    mean_over_rows(g, total, n)
}

/// Sliced score matching: `mean vᵀ(∇_Y S)v + 1/2 |S|^2`, averaged over the
/// supplied projection draws.
pub fn ssm_node(
    g: &mut Graph,
    src: &ScoreSource,
    params: &[Var],
    batch: &LossBatch,
    v: &[Tensor],
) -> Result<Var> {
    if v.is_empty() {
        return Err(Error::invalid("ssm needs at least one projection (K >= 1)"));
    }
    let n = batch.len();
    let x = src.bind_x(g, batch.x.as_ref());
    let y = g.leaf(batch.y_pos.clone());
    let s = src.score_node(g, params, x, y, true)?;
    let mut proj: Option<Var> = None;
    for vk in v {
        if vk.shape() != batch.y_pos.shape() {
            return Err(Error::ShapeMismatch {
                op: "ssm projection",
                lhs: batch.y_pos.shape().to_vec(),
                rhs: vk.shape().to_vec(),
            });
        }
        let term = projected_jacobian(g, s, y, vk)?;
        proj = Some(match proj {
            Some(p) => g.add(p, term)?,
            None => term,
        });
    }
    let proj = g.scale(proj.expect("non-empty"), 1.0 / v.len() as f64)?;
    let norm = half_sq_norm(g, s)?;
    let total = g.add(proj, norm)?;
    mean_over_rows(g, total, n)
}

/// Delta loss: `mean 1/2 |S(x, Y⁻) - (Y⁺ - Y⁻)|^2`.
pub fn delta_node(g: &mut Graph, src: &ScoreSource, params: &[Var], batch: &LossBatch) -> Result<Var> {
    let y_neg = batch.y_neg.as_ref().ok_or(Error::MissingInput {
        loss: "delta",
        what: "negative samples y_neg",
    })?;
    let target = batch.y_pos.zip_map(y_neg, |p, q| p - q)?;
    let x = src.bind_x(g, batch.x.as_ref());
    let y = g.leaf(y_neg.clone());
    let s = src.score_node(g, params, x, y, true)?;
    let t = g.constant(target);
    let diff = g.sub(s, t)?;
    let total = half_sq_norm(g, diff)?;
    mean_over_rows(g, total, batch.len())
}

/// Flow matching: `mean 1/2 |V(x, Y_t, t) - (Y⁺ - Y⁰)|^2` with
/// `Y_t = t Y⁺ + (1 - t) Y⁰` and `t` appended to the condition columns.
pub fn fm_node(g: &mut Graph, src: &ScoreSource, params: &[Var], batch: &LossBatch) -> Result<Var> {
    let anchor = batch.y_anchor.as_ref().ok_or(Error::MissingInput {
        loss: "fm",
        what: "anchor samples y_anchor",
    })?;
    let t = batch.t.as_ref().ok_or(Error::MissingInput {
        loss: "fm",
        what: "interpolation times t",
    })?;
    if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("t = {bad} lies outside [0, 1]")));
    }
    let (n, d) = (batch.len(), batch.dim());
    let yt = interpolate(&batch.y_pos, anchor, t)?;
    let target = batch.y_pos.zip_map(anchor, |p, q| p - q)?;
    let t_col = Tensor::matrix(n, 1, t.clone())?;
    let cond = match &batch.x {
        Some(x) if x.cols() > 0 => x.hcat(&t_col)?,
        _ => t_col,
    };
    if src.dim_x() != cond.cols() {
        return Err(Error::invalid(format!(
            "velocity network must take dim_x = {} (condition plus time), has {}",
            cond.cols(),
            src.dim_x()
        )));
    }
    debug_assert_eq!(yt.cols(), d);
    let x = src.bind_x(g, Some(&cond));
    let y = g.leaf(yt);
    let v = src.score_node(g, params, x, y, true)?;
    let tv = g.constant(target);
    let diff = g.sub(v, tv)?;
    let total = half_sq_norm(g, diff)?;
    mean_over_rows(g, total, n)
}

/// `t Y⁺ + (1 - t) Y⁰`, row-wise.
pub fn interpolate(y_pos: &Tensor, anchor: &Tensor, t: &[f64]) -> Result<Tensor> {
    let mut out = y_pos.zip_map(anchor, |_, _| 0.0)?;
    let d = y_pos.cols();
    for (i, ti) in t.iter().enumerate() {
        for j in 0..d {
            out.data_mut()[i * d + j] = ti * y_pos.at(i, j) + (1.0 - ti) * anchor.at(i, j);
        }
    }
    Ok(out)
}

/// Per-row `vᵀ (∇_Y S) v`, the projection term of sliced score matching.
pub fn projection_terms(src: &ScoreSource, x: Option<&Tensor>, y: &Tensor, v: &Tensor) -> Result<Vec<f64>> {
    src.check_inputs(x, y)?;
    if v.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "projection",
            lhs: y.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let params = bind(&mut g, src.network());
    let xv = src.bind_x(&mut g, x);
    let yv = g.leaf(y.clone());
    let s = src.score_node(&mut g, &params, xv, yv, true)?;
    let vc = g.constant(v.clone());
    let sv = g.dot(s, vc)?;
    let jv = g.gradient_values(sv, &[yv])?.pop().expect("one gradient");
    Ok(jv.iter_rows().zip(v.iter_rows()).map(|(a, b)| dot(a, b)).collect())
}

/// Per-row exact `tr(∇_Y S)` from one basis-vector product per dimension.
pub fn exact_trace(src: &ScoreSource, x: Option<&Tensor>, y: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = (y.rows(), y.cols());
    let mut total = vec![0.0; n];
    for j in 0..d {
        let mut e = Tensor::zeros(vec![n, d]);
        for i in 0..n {
            e.data_mut()[i * d + j] = 1.0;
        }
        for (t, p) in total.iter_mut().zip(projection_terms(src, x, y, &e)?) {
            *t += p;
        }
    }
    Ok(total)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Value and, optionally, parameter gradients of a loss.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    /// One tensor per network parameter, zero where the loss does not
    /// depend on it.
    pub grads: Option<Vec<Tensor>>,
}

/// Builds the loss graph for `kind`. SSM uses `batch.v` when present and
/// otherwise draws projections from `rng`.
pub fn build(
    kind: LossKind,
    g: &mut Graph,
    src: &ScoreSource,
    params: &[Var],
    batch: &LossBatch,
    opts: &LossOptions,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    batch.validate()?;
    match kind {
        LossKind::Nce => nce_node(g, src, params, batch),
        LossKind::Sm => sm_node(g, src, params, batch, opts.trace_limit),
        LossKind::Ssm => {
            let drawn;
            let v = match (&batch.v, rng) {
                (Some(v), _) => v.as_slice(),
                (None, Some(r)) => {
                    drawn = draw_projections(
                        batch.len(),
                        batch.dim(),
                        opts.projections.max(1),
                        opts.projection,
                        r,
                    );
                    drawn.as_slice()
                }
                (None, None) => {
                    return Err(Error::MissingInput {
                        loss: "ssm",
                        what: "projection vectors v or a seeded generator",
                    })
                }
            };
            ssm_node(g, src, params, batch, v)
        }
        LossKind::Delta => delta_node(g, src, params, batch),
        LossKind::Fm => fm_node(g, src, params, batch),
    }
}

pub fn evaluate(
    kind: LossKind,
    src: &ScoreSource,
    batch: &LossBatch,
    opts: &LossOptions,
    rng: Option<&mut Rng>,
    with_grad: bool,
) -> Result<LossEval> {
    let mut g = Graph::new();
    let params = bind(&mut g, src.network());
    let loss = build(kind, &mut g, src, &params, batch, opts, rng)?;
    let value = g.item(loss);
    let grads = if with_grad {
        Some(g.gradient_values(loss, &params)?)
    } else {
        None
    };
    Ok(LossEval { value, grads })
}

fn value(kind: LossKind, src: &ScoreSource, batch: &LossBatch, opts: &LossOptions, rng: Option<&mut Rng>) -> Result<f64> {
    Ok(evaluate(kind, src, batch, opts, rng, false)?.value)
}

pub fn nce_loss(src: &ScoreSource, batch: &LossBatch) -> Result<f64> {
    value(LossKind::Nce, src, batch, &LossOptions::default(), None)
}

pub fn sm_loss(src: &ScoreSource, batch: &LossBatch, trace_limit: usize) -> Result<f64> {
    let opts = LossOptions {
        trace_limit,
        ..LossOptions::default()
    };
    value(LossKind::Sm, src, batch, &opts, None)
}

pub fn ssm_loss(src: &ScoreSource, batch: &LossBatch, rng: Option<&mut Rng>, opts: &LossOptions) -> Result<f64> {
    value(LossKind::Ssm, src, batch, opts, rng)
}

pub fn delta_loss(src: &ScoreSource, batch: &LossBatch) -> Result<f64> {
    value(LossKind::Delta, src, batch, &LossOptions::default(), None)
}

pub fn fm_loss(src: &ScoreSource, batch: &LossBatch) -> Result<f64> {
    value(LossKind::Fm, src, batch, &LossOptions::default(), None)
}

#[cfg(test)]
mod tests;
