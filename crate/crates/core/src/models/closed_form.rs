//! Parameter-free reference networks with closed-form energies and scores.
//! Used as oracles and as stand-ins for trained models in tests.

use super::Network;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

fn rows_of(g: &Graph, y: Var) -> usize {
    g.shape(y)[0]
}

fn repeat_row(row: &[f64], n: usize) -> Tensor {
    let data = row.iter().copied().cycle().take(n * row.len()).collect();
    Tensor::matrix(n, row.len(), data).expect("sized by construction")
}

/// `E(Y) = 1/2 Σ_i h_i (Y_i - μ_i)^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticEnergy {
    pub curvature: Vec<f64>,
    pub center: Vec<f64>,
}

impl QuadraticEnergy {
    /// `1/2 |Y|^2`.
    pub fn standard(d: usize) -> Self {
        QuadraticEnergy {
            curvature: vec![1.0; d],
            center: vec![0.0; d],
        }
    }

    pub fn diagonal(curvature: Vec<f64>) -> Self {
        let d = curvature.len();
        QuadraticEnergy {
            curvature,
            center: vec![0.0; d],
        }
    }

    pub fn centered(mut self, center: Vec<f64>) -> Self {
        self.center = center;
        self
    }
}

impl Network for QuadraticEnergy {
    fn dim_x(&self) -> usize {
        0
    }

    fn dim_y(&self) -> usize {
        self.curvature.len()
    }

    fn out_dim(&self) -> usize {
        1
    }

    fn parameters(&self) -> &[Tensor] {
        &[]
    }

    fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut []
    }

    fn forward(&self, g: &mut Graph, _params: &[Var], _x: Option<Var>, y: Var) -> Result<Var> {
        let n = rows_of(g, y);
        let d = self.dim_y();
        let neg_mu: Vec<f64> = self.center.iter().map(|m| -m).collect();
        let shift = g.constant(repeat_row(&neg_mu, n));
        let diff = g.add(y, shift)?;
        let sq = g.square(diff)?;
        let half_h: Vec<f64> = self.curvature.iter().map(|h| 0.5 * h).collect();
        let weights = g.constant(Tensor::matrix(d, 1, half_h)?);
        g.matmul(sq, weights)
    }

    fn box_clone(&self) -> Box<dyn Network> {
        Box::new(self.clone())
    }
}

/// `E(Y) = c . Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEnergy {
    pub c: Vec<f64>,
}

impl Network for LinearEnergy {
    fn dim_x(&self) -> usize {
        0
    }

    fn dim_y(&self) -> usize {
        self.c.len()
    }

    fn out_dim(&self) -> usize {
        1
    }

    fn parameters(&self) -> &[Tensor] {
        &[]
    }

    fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut []
    }

    fn forward(&self, g: &mut Graph, _params: &[Var], _x: Option<Var>, y: Var) -> Result<Var> {
        let c = g.constant(Tensor::matrix(self.c.len(), 1, self.c.clone())?);
        g.matmul(y, c)
    }

    fn box_clone(&self) -> Box<dyn Network> {
        Box::new(self.clone())
    }
}

/// `S(x, Y) = Y B_y + x B_x + c`, acting on row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineScore {
    by: Tensor,
    bx: Option<Tensor>,
    bias: Vec<f64>,
}

impl AffineScore {
    pub fn new(by: Tensor, bx: Option<Tensor>, bias: Vec<f64>) -> Result<Self> {
        let d = bias.len();
        if by.shape() != [d, d] {
            return Err(Error::invalid("B_y must be d x d"));
        }
        if let Some(bx) = &bx {
            if bx.rank() != 2 || bx.cols() != d {
                return Err(Error::invalid("B_x must be k x d"));
            }
        }
        Ok(AffineScore { by, bx, bias })
    }

    /// `S ≡ 0`.
    pub fn zero(d: usize) -> Self {
        AffineScore::constant(vec![0.0; d])
    }

    /// `S ≡ c`.
    pub fn constant(c: Vec<f64>) -> Self {
        let d = c.len();
        AffineScore {
            by: Tensor::zeros(vec![d, d]),
            bx: None,
            bias: c,
        }
    }

    /// `S(Y) = Y B` for a `d x d` matrix `B` applied to row vectors.
    pub fn linear(b: Tensor) -> Result<Self> {
        let d = b.cols();
        AffineScore::new(b, None, vec![0.0; d])
    }

    /// `S(Y) = target - Y`: points every row straight at `target`.
    pub fn toward(target: Vec<f64>) -> Self {
        let d = target.len();
        let mut by = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            by.data_mut()[i * d + i] = -1.0;
        }
        AffineScore {
            by,
            bx: None,
            bias: target,
        }
    }

    /// `S(x, Y) = x - Y` with `dim_x == dim_y`: when the reference sample is
    /// passed as the condition this is the perfect delta score.
    pub fn displacement(d: usize) -> Self {
        let mut s = AffineScore::toward(vec![0.0; d]);
        let mut bx = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            bx.data_mut()[i * d + i] = 1.0;
        }
        s.bx = Some(bx);
        s
    }
}

impl Network for AffineScore {
    fn dim_x(&self) -> usize {
        self.bx.as_ref().map_or(0, |b| b.rows())
    }

    fn dim_y(&self) -> usize {
        self.bias.len()
    }

    fn out_dim(&self) -> usize {
        self.bias.len()
    }

    fn parameters(&self) -> &[Tensor] {
        &[]
    }

    fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut []
    }

    fn forward(&self, g: &mut Graph, _params: &[Var], x: Option<Var>, y: Var) -> Result<Var> {
        let by = g.constant(self.by.clone());
        let b = g.constant(Tensor::vector(self.bias.clone()));
        let mut s = g.affine(y, by, b)?;
        if let Some(bx) = &self.bx {
            let x = x.ok_or_else(|| Error::invalid("conditional score needs x"))?;
            let bxv = g.constant(bx.clone());
            let xb = g.matmul(x, bxv)?;
            s = g.add(s, xb)?;
        }
        Ok(s)
    }

    fn box_clone(&self) -> Box<dyn Network> {
        Box::new(self.clone())
    }
}
