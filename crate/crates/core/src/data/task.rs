use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Linear-Gaussian conditional task `Y = A x + σ ε` with `x ~ N(0, I_k)`.
///
/// `lambda` scales `A` into a deliberately biased base predictor
/// `Â = λ A`, whose outputs play the role of a pretrained model's hypotheses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTask {
    /// `d x k`, row-major.
    pub a: Vec<Vec<f64>>,
    pub sigma: f64,
    pub lambda: f64,
}

impl Default for ConditionalTask {
    fn default() -> Self {
        ConditionalTask {
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            sigma: 0.3,
            lambda: 0.8,
        }
    }
}

impl ConditionalTask {
    pub fn validate(&self) -> Result<()> {
        let k = self.a.first().map_or(0, Vec::len);
        if self.a.is_empty() || k == 0 || self.a.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("task matrix A must be a non-empty d x k matrix"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::invalid("task sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn dim_y(&self) -> usize {
        self.a.len()
    }

    pub fn dim_x(&self) -> usize {
        self.a[0].len()
    }

    fn apply(&self, x: &Tensor, scale: f64) -> Result<Tensor> {
        let (d, k) = (self.dim_y(), self.dim_x());
        if x.rank() != 2 || x.cols() != k {
            return Err(Error::ShapeMismatch {
                op: "conditional task",
                lhs: vec![x.rows(), k],
                rhs: x.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(x.rows() * d);
        for row in x.iter_rows() {
            for a_row in &self.a {
                data.push(scale * a_row.iter().zip(row).map(|(a, v)| a * v).sum::<f64>());
            }
        }
        Tensor::matrix(x.rows(), d, data)
    }

    /// Conditional mean `A x` for every row of `x`.
    pub fn mean(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, 1.0)
    }

    /// Biased hypotheses `λ A x`.
    pub fn base_predict(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, self.lambda)
    }

    /// `∇_Y log p(Y | x) = -(Y - A x) / σ^2`.
    pub fn score(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        let m = self.mean(x)?;
        let v = self.sigma * self.sigma;
        y.zip_map(&m, |a, b| -(a - b) / v)
    }

    /// `n` seeded pairs `(x, Y)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let mut r = rng::seeded(seed);
        let k = self.dim_x();
        let xs: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = Tensor::matrix(n, k, xs)?;
        let mut y = self.mean(&x)?;
        for v in y.data_mut() {
            let e: f64 = StandardNormal.sample(&mut r);
            *v += self.sigma * e;
        }
        Dataset::new(Some(x), y)
    }
}

/// How negative (noisy) samples are produced from references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// `Y⁻ = Y⁺ + σ ε`.
    GaussianJitter { sigma: f64 },
    /// `Y⁻ = Â x`.
    BasePredictor,
    /// `Y⁻ = Â x + σ ε`.
    BasePredictorPlusJitter { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeSampler {
    #[serde(flatten)]
    pub strategy: NegativeStrategy,
    pub seed: u64,
}

impl NegativeSampler {
    pub fn new(strategy: NegativeStrategy, seed: u64) -> Result<Self> {
        match strategy {
            NegativeStrategy::GaussianJitter { sigma }
            | NegativeStrategy::BasePredictorPlusJitter { sigma }
                if !(sigma >= 0.0) =>
            {
                return Err(Error::invalid("negative-sample jitter must be non-negative"));
            }
            _ => {}
        }
        Ok(NegativeSampler { strategy, seed })
    }

    pub fn needs_task(&self) -> bool {
        !matches!(self.strategy, NegativeStrategy::GaussianJitter { .. })
    }

    /// Negatives for a batch, drawing noise from `r`.
    pub fn generate(
        &self,
        task: Option<&ConditionalTask>,
        x: Option<&Tensor>,
        y_pos: &Tensor,
        r: &mut rng::Rng,
    ) -> Result<Tensor> {
        let base = |need: &str| -> Result<Tensor> {
            let task = task.ok_or_else(|| {
                Error::Config(format!("{need} negatives require a conditional task"))
            })?;
            let x = x.ok_or_else(|| Error::Config(format!("{need} negatives require x")))?;
            task.base_predict(x)
        };
        let jitter = |mut t: Tensor, sigma: f64, r: &mut rng::Rng| {
            for v in t.data_mut() {
                let e: f64 = StandardNormal.sample(r);
                *v += sigma * e;
            }
            t
        };
        let out = match self.strategy {
            NegativeStrategy::GaussianJitter { sigma } => jitter(y_pos.clone(), sigma, r),
            NegativeStrategy::BasePredictor => base("base_predictor")?,
            NegativeStrategy::BasePredictorPlusJitter { sigma } => {
                jitter(base("base_predictor_plus_jitter")?, sigma, r)
            }
        };
        if out.shape() != y_pos.shape() {
            return Err(Error::ShapeMismatch {
                op: "make_negatives",
                lhs: y_pos.shape().to_vec(),
                rhs: out.shape().to_vec(),
            });
        }
        Ok(out)
    }

    /// Negatives drawn from this sampler's own seed.
    pub fn make_negatives(
        &self,
        task: Option<&ConditionalTask>,
        x: Option<&Tensor>,
        y_pos: &Tensor,
    ) -> Result<Tensor> {
        self.generate(task, x, y_pos, &mut rng::seeded(self.seed))
    }
}
