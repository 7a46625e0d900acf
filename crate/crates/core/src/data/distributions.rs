use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Toy densities with closed-form scores.
///
/// Gaussian and mixture densities are normalised; the ring density is only
/// known up to a constant, `log p(Y) = -(|Y| - r)^2 / (2 w^2) + const`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticDistribution {
    /// Isotropic Gaussian.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Mixture of diagonal Gaussians.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stds: Vec<Vec<f64>>,
    },
    Ring { radius: f64, width: f64, dim: usize },
}

const LN_2PI: f64 = 1.8378770664093453;

impl SyntheticDistribution {
    pub fn gaussian(mean: Vec<f64>, std: f64) -> Result<Self> {
        let d = SyntheticDistribution::Gaussian { mean, std };
        d.validate()?;
        Ok(d)
    }

    pub fn mixture(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>) -> Result<Self> {
        let d = SyntheticDistribution::GaussianMixture {
            weights,
            means,
            stds,
        };
        d.validate()?;
        Ok(d)
    }

    /// Equal-weight mixture of two unit Gaussians centred at `-centre` and
    /// `+centre`.
    pub fn bimodal(centre: Vec<f64>) -> Self {
        let d = centre.len();
        SyntheticDistribution::GaussianMixture {
            weights: vec![0.5, 0.5],
            means: vec![centre.iter().map(|c| -c).collect(), centre],
            stds: vec![vec![1.0; d], vec![1.0; d]],
        }
    }

    pub fn ring(radius: f64, width: f64, dim: usize) -> Result<Self> {
        let d = SyntheticDistribution::Ring { radius, width, dim };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SyntheticDistribution::Gaussian { mean, std } => {
                if mean.is_empty() {
                    return Err(Error::invalid("gaussian mean is empty"));
                }
                if !(*std > 0.0) {
                    return Err(Error::invalid("gaussian std must be positive"));
                }
            }
            SyntheticDistribution::GaussianMixture {
                weights,
                means,
                stds,
            } => {
                if weights.is_empty() || weights.len() != means.len() || means.len() != stds.len() {
                    return Err(Error::invalid(
                        "mixture needs equally many weights, means and stds",
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
                    return Err(Error::invalid(format!(
                        "mixture weights must be non-negative and sum to 1, got sum {total}"
                    )));
                }
                let d = means[0].len();
                if d == 0
                    || means.iter().any(|m| m.len() != d)
                    || stds.iter().any(|s| s.len() != d)
                {
                    return Err(Error::invalid("mixture components disagree on dimension"));
                }
                if stds.iter().flatten().any(|s| !(*s > 0.0)) {
                    return Err(Error::invalid("mixture stds must be positive"));
                }
            }
            SyntheticDistribution::Ring { radius, width, dim } => {
                if *dim < 2 {
                    return Err(Error::invalid("ring needs dim >= 2"));
                }
                if !(*width > 0.0) || !(*radius >= 0.0) {
                    return Err(Error::invalid("ring width must be positive, radius non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            SyntheticDistribution::Gaussian { mean, .. } => mean.len(),
            SyntheticDistribution::GaussianMixture { means, .. } => means[0].len(),
            SyntheticDistribution::Ring { dim, .. } => *dim,
        }
    }

    /// `n` seeded draws as an `n x d` matrix.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let d = self.dim();
        let mut r = rng::seeded(seed);
        let mut data = Vec::with_capacity(n * d);
        let normal = |r: &mut rng::Rng| -> f64 { StandardNormal.sample(r) };
        for _ in 0..n {
            match self {
                SyntheticDistribution::Gaussian { mean, std } => {
                    data.extend(mean.iter().map(|m| m + std * normal(&mut r)));
                }
                SyntheticDistribution::GaussianMixture {
                    weights,
                    means,
                    stds,
                } => {
                    let u: f64 = r.random();
                    let mut acc = 0.0;
                    let mut k = weights.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            k = i;
                            break;
                        }
                    }
                    // guard against rounding leaving u >= total weight
                    while weights[k] == 0.0 && k > 0 {
                        k -= 1;
                    }
                    data.extend(
                        means[k]
                            .iter()
                            .zip(&stds[k])
                            .map(|(m, s)| m + s * normal(&mut r)),
                    );
                }
                SyntheticDistribution::Ring { radius, width, dim } => {
                    let rho = sample_ring_radius(&mut r, *radius, *width, *dim);
                    let dir: Vec<f64> = (0..*dim).map(|_| normal(&mut r)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    data.extend(dir.iter().map(|v| rho * v / norm));
                }
            }
        }
        Tensor::matrix(n, d, data)
    }

    /// Log-density of one point. Normalised except for the ring.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        match self {
            SyntheticDistribution::Gaussian { mean, std } => {
                let d = mean.len() as f64;
                let sq: f64 = y.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
                -0.5 * sq / (std * std) - d * std.ln() - 0.5 * d * LN_2PI
            }
            SyntheticDistribution::GaussianMixture { .. } => {
                let terms = self.component_log_terms(y);
                log_sum_exp(&terms)
            }
            SyntheticDistribution::Ring { radius, width, .. } => {
                let r = norm(y);
                -(r - radius) * (r - radius) / (2.0 * width * width)
            }
        }
    }

    /// `log w_k + log N(y; μ_k, σ_k)` for every component; `-inf` for empty
    /// components.
    fn component_log_terms(&self, y: &[f64]) -> Vec<f64> {
        let SyntheticDistribution::GaussianMixture {
            weights,
            means,
            stds,
        } = self
        else {
            unreachable!("mixture only")
        };
        weights
            .iter()
            .zip(means.iter().zip(stds))
            .map(|(w, (m, s))| {
                if *w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut lp = w.ln();
                for ((yi, mi), si) in y.iter().zip(m).zip(s) {
                    let z = (yi - mi) / si;
                    lp += -0.5 * z * z - si.ln() - 0.5 * LN_2PI;
                }
                lp
            })
            .collect()
    }

    /// `∇_Y log p(Y)` at one point.
    ///
    /// The ring score is undefined at the origin; zero is returned there.
    pub fn score_at(&self, y: &[f64]) -> Vec<f64> {
        match self {
            SyntheticDistribution::Gaussian { mean, std } => {
                let v = std * std;
                y.iter().zip(mean).map(|(a, m)| -(a - m) / v).collect()
            }
            SyntheticDistribution::GaussianMixture { means, stds, .. } => {
                let terms = self.component_log_terms(y);
                let lse = log_sum_exp(&terms);
                let mut out = vec![0.0; y.len()];
                for (k, t) in terms.iter().enumerate() {
                    let resp = (t - lse).exp();
                    if resp == 0.0 {
                        continue;
                    }
                    for (i, o) in out.iter_mut().enumerate() {
                        let s2 = stds[k][i] * stds[k][i];
                        *o += resp * (-(y[i] - means[k][i]) / s2);
                    }
                }
                out
            }
            SyntheticDistribution::Ring { radius, width, .. } => {
                let r = norm(y);
                if r == 0.0 {
                    return vec![0.0; y.len()];
                }
                let f = -(r - radius) / (width * width * r);
                y.iter().map(|v| f * v).collect()
            }
        }
    }

    /// Row-wise analytic score of a batch.
    pub fn analytic_score(&self, y: &Tensor) -> Result<Tensor> {
        if y.rank() != 2 || y.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "analytic_score",
                lhs: vec![y.rows(), self.dim()],
                rhs: y.shape().to_vec(),
            });
        }
        let data = y.iter_rows().flat_map(|r| self.score_at(r)).collect();
        Tensor::matrix(y.rows(), y.cols(), data)
    }
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Radius with density `∝ ρ^(d-1) exp(-(ρ - r)^2 / 2w^2)` on `ρ > 0`, by
/// rejection from a Gaussian proposal truncated at `r + 12 w`.
fn sample_ring_radius(r: &mut rng::Rng, radius: f64, width: f64, dim: usize) -> f64 {
    let cap = radius + 12.0 * width;
    loop {
        let z: f64 = StandardNormal.sample(r);
        let rho = radius + width * z;
        if rho <= 0.0 || rho > cap {
            continue;
        }
        let accept = (rho / cap).powi(dim as i32 - 1);
        if r.random::<f64>() < accept {
            return rho;
        }
    }
}
