//! Tape-based reverse-mode automatic differentiation with support for
//! differentiating through the backward pass.
//!
//! A backward pass can run in two modes. With `retain = false` the adjoints
//! are computed numerically and the graph is not modified. With
//! `retain = true` every adjoint is itself recorded as graph nodes built from
//! the same primitives as the forward pass, so gradients of gradients
//! (Hessian-vector products, and parameter gradients of score-matching
//! losses) fall out of a second call.

mod backward;
mod graph;
pub mod kernel;
mod tensor;

pub use graph::{Graph, Var};
pub use kernel::Op;
pub use tensor::Tensor;

use backward::{backward, Numeric, Taped};

use crate::error::{Error, Result};

/// Result of [`Graph::gradient`].
///
/// `node` is set only when the gradient was taped (`retain = true`) and can
/// therefore be differentiated again.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub value: Tensor,
    pub node: Option<Var>,
}

impl Graph {
    /// Gradient of the scalar `output` with respect to `wrt`.
    ///
    /// Fails if `output` is not a single value or does not depend on `wrt`.
    pub fn gradient(&mut self, output: Var, wrt: Var, retain: bool) -> Result<Gradient> {
        let mut g = self.gradients(output, &[wrt], retain)?;
        Ok(g.pop().expect("one gradient per wrt"))
    }

    /// Gradients with respect to several nodes in one sweep. Every node in
    /// `wrt` must be reachable.
    pub fn gradients(&mut self, output: Var, wrt: &[Var], retain: bool) -> Result<Vec<Gradient>> {
        if retain {
            let vars = self.grad(output, wrt)?;
            Ok(vars
                .into_iter()
                .map(|v| Gradient {
                    value: self.value(v).clone(),
                    node: Some(v),
                })
                .collect())
        } else {
            let found = backward(&mut Numeric { graph: self }, output, wrt)?;
            found
                .into_iter()
                .zip(wrt)
                .map(|(g, w)| {
                    g.map(|value| Gradient { value, node: None })
                        .ok_or(Error::Unreachable {
                            output: output.0,
                            wrt: w.0,
                        })
                })
                .collect()
        }
    }

    /// Taped gradients, returned as graph nodes. Every node in `wrt` must be
    /// reachable.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let found = backward(&mut Taped { graph: self }, output, wrt)?;
        found
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| {
                g.ok_or(Error::Unreachable {
                    output: output.0,
                    wrt: w.0,
                })
            })
            .collect()
    }

    /// Taped gradients where an unreachable node gets an explicit zero
    /// constant. Used when a derivative is legitimately identically zero,
    /// e.g. the Hessian of a function linear in `wrt`.
    pub fn grad_or_zero(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let found = backward(&mut Taped { graph: self }, output, wrt)?;
        Ok(found
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| match g {
                Some(v) => v,
                None => {
                    let z = Tensor::zeros_like(self.value(*w));
                    self.constant(z)
                }
            })
            .collect())
    }

    /// Numeric gradients with zeros for nodes the output does not depend on.
    /// Never modifies the graph.
    pub fn gradient_values(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let found = backward(&mut Numeric { graph: self }, output, wrt)?;
        Ok(found
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| g.unwrap_or_else(|| Tensor::zeros_like(self.value(*w))))
            .collect())
    }

    /// Hessian-vector product `H v` where `grad` is the taped gradient of a
    /// scalar `f` with respect to `y`.
    ///
    /// Computed as the gradient of `v . grad f`. A gradient that does not
    /// depend on `y` (f linear in y) yields zeros.
    pub fn hvp(&mut self, grad: &Gradient, y: Var, v: &Tensor) -> Result<Tensor> {
        let Some(gnode) = grad.node else {
            return Err(Error::NotRetained);
        };
        if v.shape() != self.shape(y) {
            return Err(Error::ShapeMismatch {
                op: "hvp",
                lhs: self.shape(y).to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let vc = self.constant(v.clone());
        let gv = self.dot(gnode, vc)?;
        let mut out = self.gradient_values(gv, &[y])?;
        Ok(out.pop().expect("one gradient"))
    }

    /// Taped `∇_y (v . grad)`; differentiable in everything `grad` and `v`
    /// depend on.
    pub fn hvp_node(&mut self, grad: Var, y: Var, v: Var) -> Result<Var> {
        let gv = self.dot(grad, v)?;
        let mut out = self.grad_or_zero(gv, &[y])?;
        Ok(out.pop().expect("one gradient"))
    }
}
