//! Energy and score networks, and the two ways of turning them into scores.

mod checkpoint;
pub mod closed_form;
mod mlp;

pub use checkpoint::{Checkpoint, TrainState, FORMAT_VERSION};
pub use closed_form::{AffineScore, LinearEnergy, QuadraticEnergy};
pub use mlp::{Activation, Mlp, MlpSpec, Variant};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// A network evaluated row-wise on a batch: `x` is `n x dim_x` (absent when
/// `dim_x == 0`), `y` is `n x dim_y`, and the output is `n x out_dim`.
pub trait Network: Send + Sync + std::fmt::Debug {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn parameters(&self) -> &[Tensor];
    fn parameters_mut(&mut self) -> &mut [Tensor];
    fn forward(&self, g: &mut Graph, params: &[Var], x: Option<Var>, y: Var) -> Result<Var>;
    fn box_clone(&self) -> Box<dyn Network>;

    fn as_mlp(&self) -> Option<&Mlp> {
        None
    }
}

impl Clone for Box<dyn Network> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Adds the network's parameters to `g` as leaves.
pub fn bind(g: &mut Graph, net: &dyn Network) -> Vec<Var> {
    net.parameters().iter().map(|p| g.leaf(p.clone())).collect()
}

/// Where a score comes from: the negative gradient of an energy network
/// (analytic) or the output of a score network (predictive).
#[derive(Clone, Debug)]
pub enum ScoreSource {
    Analytic(Box<dyn Network>),
    Predictive(Box<dyn Network>),
}

impl ScoreSource {
    pub fn analytic(net: impl Network + 'static) -> Result<Self> {
        if net.out_dim() != 1 {
            return Err(Error::invalid(format!(
                "an energy network must output one value per row, got {}",
                net.out_dim()
            )));
        }
        Ok(ScoreSource::Analytic(Box::new(net)))
    }

    pub fn predictive(net: impl Network + 'static) -> Result<Self> {
        if net.out_dim() != net.dim_y() {
            return Err(Error::invalid(format!(
                "a score network must output dim_y = {} values per row, got {}",
                net.dim_y(),
                net.out_dim()
            )));
        }
        Ok(ScoreSource::Predictive(Box::new(net)))
    }

    /// Wraps a checkpointed MLP according to its variant.
    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        match mlp.spec().variant {
            Variant::Energy => ScoreSource::analytic(mlp),
            Variant::Score => ScoreSource::predictive(mlp),
        }
    }

    pub fn network(&self) -> &dyn Network {
        match self {
            ScoreSource::Analytic(n) | ScoreSource::Predictive(n) => n.as_ref(),
        }
    }

    pub fn network_mut(&mut self) -> &mut dyn Network {
        match self {
            ScoreSource::Analytic(n) | ScoreSource::Predictive(n) => n.as_mut(),
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, ScoreSource::Analytic(_))
    }

    pub fn dim_x(&self) -> usize {
        self.network().dim_x()
    }

    pub fn dim_y(&self) -> usize {
        self.network().dim_y()
    }

    pub(crate) fn check_inputs(&self, x: Option<&Tensor>, y: &Tensor) -> Result<()> {
        let net = self.network();
        if y.rank() != 2 || y.cols() != net.dim_y() {
            return Err(Error::ShapeMismatch {
                op: "score input",
                lhs: vec![y.rows(), net.dim_y()],
                rhs: y.shape().to_vec(),
            });
        }
        match (net.dim_x(), x) {
            (0, None) => Ok(()),
            (0, Some(x)) if x.cols() == 0 => Ok(()),
            (k, Some(x)) if x.rank() == 2 && x.cols() == k && x.rows() == y.rows() => Ok(()),
            (k, x) => Err(Error::ShapeMismatch {
                op: "condition input",
                lhs: vec![y.rows(), k],
                rhs: x.map(|x| x.shape().to_vec()).unwrap_or_default(),
            }),
        }
    }

    /// Adds `x` to the graph as a constant, or `None` for unconditional
    /// networks.
    pub(crate) fn bind_x(&self, g: &mut Graph, x: Option<&Tensor>) -> Option<Var> {
        if self.dim_x() == 0 {
            None
        } else {
            x.map(|x| g.constant(x.clone()))
        }
    }

    /// Per-row energies as an `n x 1` node. Analytic sources only.
    pub fn energy_node(
        &self,
        g: &mut Graph,
        params: &[Var],
        x: Option<Var>,
        y: Var,
    ) -> Result<Var> {
        match self {
            ScoreSource::Analytic(net) => net.forward(g, params, x, y),
            ScoreSource::Predictive(_) => Err(Error::Config(
                "energy requested from a predictive score source".into(),
            )),
        }
    }

    /// Score of every row of `y` as a graph node.
    ///
    /// For the analytic path the score is `-∇_Y E` taken with a taped backward
    /// pass when `retain` is set, so the result can be differentiated again
    /// (with respect to `y` or the parameters). Without `retain` the score is
    /// a constant leaf holding the numeric gradient.
    pub fn score_node(
        &self,
        g: &mut Graph,
        params: &[Var],
        x: Option<Var>,
        y: Var,
        retain: bool,
    ) -> Result<Var> {
        match self {
            ScoreSource::Analytic(net) => {
                let e = net.forward(g, params, x, y)?;
                let total = g.sum(e)?;
                if retain {
                    let grad = g.grad(total, &[y])?[0];
                    g.neg(grad)
                } else {
                    let grad = g.gradient(total, y, false)?.value;
                    Ok(g.constant(grad.map(|v| -v)))
                }
            }
            ScoreSource::Predictive(net) => net.forward(g, params, x, y),
        }
    }

    /// Numeric scores for a batch.
    pub fn score(&self, x: Option<&Tensor>, y: &Tensor) -> Result<Tensor> {
        self.check_inputs(x, y)?;
        let mut g = Graph::new();
        let params = bind(&mut g, self.network());
        let xv = self.bind_x(&mut g, x);
        let yv = g.leaf(y.clone());
        let s = self.score_node(&mut g, &params, xv, yv, false)?;
        Ok(g.value(s).clone())
    }

    /// Numeric per-row energies. Analytic sources only.
    pub fn energies(&self, x: Option<&Tensor>, y: &Tensor) -> Result<Vec<f64>> {
        self.check_inputs(x, y)?;
        let mut g = Graph::new();
        let params = bind(&mut g, self.network());
        let xv = self.bind_x(&mut g, x);
        let yv = g.leaf(y.clone());
        let e = self.energy_node(&mut g, &params, xv, yv)?;
        Ok(g.value(e).data().to_vec())
    }
}
