use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

/// Whether the network outputs an energy (one value per row) or a score
/// (one vector per row, same width as `Y`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Energy,
    Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths including input and output.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub variant: Variant,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, variant: Variant) -> Self {
        MlpSpec {
            widths,
            activation,
            variant,
        }
    }

    /// `[dim_x + dim_y, 64, 64, out]` with tanh.
    pub fn toy(variant: Variant, dim_x: usize, dim_y: usize) -> Self {
        let out = match variant {
            Variant::Energy => 1,
            Variant::Score => dim_y,
        };
        MlpSpec::new(vec![dim_x + dim_y, 64, 64, out], Activation::Tanh, variant)
    }

    pub fn parameter_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn validate(&self, dim_x: usize, dim_y: usize) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::invalid("layer width list is empty"));
        }
        if self.widths.len() < 2 {
            return Err(Error::invalid(
                "layer width list needs at least an input and an output width",
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if dim_y == 0 {
            return Err(Error::invalid("dim_y must be positive"));
        }
        if self.widths[0] != dim_x + dim_y {
            return Err(Error::invalid(format!(
                "input width {} does not equal dim_x + dim_y = {}",
                self.widths[0],
                dim_x + dim_y
            )));
        }
        let out = *self.widths.last().unwrap();
        let want = match self.variant {
            Variant::Energy => 1,
            Variant::Score => dim_y,
        };
        if out != want {
            return Err(Error::invalid(format!(
                "{:?} network must have output width {want}, got {out}",
                self.variant
            )));
        }
        Ok(())
    }
}

/// Fully connected network on the concatenation `[x, Y]`.
///
/// The first layer's weight matrix is stored as two tensors, the rows that
/// multiply `x` followed by the rows that multiply `Y`, so conditioning never
/// needs a concatenation inside the graph. Flattened, the parameters are laid
/// out layer by layer as `W` (row-major, `in x out`) then `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    dim_x: usize,
    dim_y: usize,
    seed: u64,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero,
    /// drawn from ChaCha8 seeded with `seed` in flat parameter order.
    pub fn init(spec: MlpSpec, dim_x: usize, dim_y: usize, seed: u64) -> Result<Self> {
        spec.validate(dim_x, dim_y)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = Vec::with_capacity(spec.parameter_count());
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            flat.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
            flat.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp::from_flat(spec, dim_x, dim_y, seed, &flat)
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_flat(
        spec: MlpSpec,
        dim_x: usize,
        dim_y: usize,
        seed: u64,
        flat: &[f64],
    ) -> Result<Self> {
        spec.validate(dim_x, dim_y)?;
        if flat.len() != spec.parameter_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                spec.parameter_count(),
                flat.len()
            )));
        }
        let mut params = Vec::new();
        let mut off = 0;
        for (l, w) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut take = |rows: usize| {
                let t = Tensor::matrix(rows, fan_out, flat[off..off + rows * fan_out].to_vec());
                off += rows * fan_out;
                t
            };
            if l == 0 {
                if dim_x > 0 {
                    params.push(take(dim_x)?);
                }
                params.push(take(dim_y)?);
            } else {
                params.push(take(fan_in)?);
            }
            params.push(Tensor::vector(flat[off..off + fan_out].to_vec()));
            off += fan_out;
        }
        Ok(Mlp {
            spec,
            dim_x,
            dim_y,
            seed,
            params,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    fn activate(&self, g: &mut Graph, h: Var) -> Result<Var> {
        match self.spec.activation {
            Activation::Tanh => g.tanh(h),
            Activation::Softplus => g.softplus(h),
        }
    }
}

impl Network for Mlp {
    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_y(&self) -> usize {
        self.dim_y
    }

    fn out_dim(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, params: &[Var], x: Option<Var>, y: Var) -> Result<Var> {
        let mut p = params.iter().copied();
        let mut next = || p.next().expect("parameter list matches layer layout");
        let layers = self.spec.widths.len() - 1;

        let (wx, wy) = if self.dim_x > 0 {
            (Some(next()), next())
        } else {
            (None, next())
        };
        let b = next();
        let mut h = g.affine(y, wy, b)?;
        if let Some(wx) = wx {
            let x = x.ok_or_else(|| Error::invalid("conditional network needs x"))?;
            let xw = g.matmul(x, wx)?;
            h = g.add(h, xw)?;
        }
        for _ in 1..layers {
            h = self.activate(g, h)?;
            let (w, b) = (next(), next());
            h = g.affine(h, w, b)?;
        }
        Ok(h)
    }

    fn box_clone(&self) -> Box<dyn Network> {
        Box::new(self.clone())
    }

    fn as_mlp(&self) -> Option<&Mlp> {
        Some(self)
    }
}
