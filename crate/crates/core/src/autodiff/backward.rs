//! Reverse-mode differentiation.
//!
//! Every vector-Jacobian product is written once against [`Emitter`] and run
//! by two back ends: [`Numeric`] evaluates the adjoints directly and leaves
//! the graph untouched, [`Taped`] records them as new graph nodes so the
//! result can be differentiated again.

use super::graph::{Graph, Var};
use super::kernel::{self, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) trait Emitter {
    type H: Clone;

    fn graph(&self) -> &Graph;
    /// Forward value of an existing node.
    fn node(&mut self, v: Var) -> Self::H;
    fn constant(&mut self, t: Tensor) -> Self::H;
    fn apply(&mut self, op: Op, inputs: &[Self::H]) -> Result<Self::H>;
}

pub(crate) struct Numeric<'g> {
    pub(crate) graph: &'g Graph,
}

impl Emitter for Numeric<'_> {
    type H = Tensor;

    fn graph(&self) -> &Graph {
        self.graph
    }

    fn node(&mut self, v: Var) -> Tensor {
        self.graph.value(v).clone()
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn apply(&mut self, op: Op, inputs: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = inputs.iter().collect();
        kernel::eval(&op, &refs)
    }
}

pub(crate) struct Taped<'g> {
    pub(crate) graph: &'g mut Graph,
}

impl Emitter for Taped<'_> {
    type H = Var;

    fn graph(&self) -> &Graph {
        self.graph
    }

    fn node(&mut self, v: Var) -> Var {
        v
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        self.graph.apply(op, inputs)
    }
}

/// `1 - t`, elementwise.
fn one_minus<E: Emitter>(em: &mut E, t: E::H) -> Result<E::H> {
    let neg = em.apply(Op::Neg, &[t])?;
    let one = em.constant(Tensor::scalar(1.0));
    em.apply(Op::Add, &[neg, one])
}

/// Structure of a node, detached from the graph borrow.
struct NodeInfo {
    op: Op,
    inputs: Vec<Var>,
    in_shapes: Vec<Vec<usize>>,
    out_shape: Vec<usize>,
}

/// Adjoint contribution of node `id` to its `k`-th input.
fn vjp<E: Emitter>(em: &mut E, node: &NodeInfo, id: Var, k: usize, g: &E::H) -> Result<E::H> {
    let in_shape = |j: usize| node.in_shapes[j].clone();
    let out_shape = &node.out_shape;
    let g = g.clone();
    match &node.op {
        Op::Leaf => unreachable!("leaves have no inputs"),
        Op::Add => {
            if &in_shape(k) == out_shape {
                Ok(g)
            } else {
                em.apply(Op::Sum, &[g])
            }
        }
        Op::Mul => {
            let own = in_shape(k);
            let other = em.node(node.inputs[1 - k]);
            if &own == out_shape {
                em.apply(Op::Mul, &[g, other])
            } else {
                // this input was the broadcast scalar
                em.apply(Op::Dot, &[g, other])
            }
        }
        Op::MatMul => {
            if k == 0 {
                let b = em.node(node.inputs[1]);
                let bt = em.apply(Op::Transpose, &[b])?;
                em.apply(Op::MatMul, &[g, bt])
            } else {
                let a = em.node(node.inputs[0]);
                let at = em.apply(Op::Transpose, &[a])?;
                em.apply(Op::MatMul, &[at, g])
            }
        }
        Op::Sum => em.apply(Op::Expand(in_shape(0)), &[g]),
        Op::Mean => {
            let shape = in_shape(0);
            let n: usize = shape.iter().product();
            let scaled = em.apply(Op::Scale(1.0 / n as f64), &[g])?;
            em.apply(Op::Expand(shape), &[scaled])
        }
        Op::Tanh => {
            let y = em.node(id);
            let sq = em.apply(Op::Square, &[y])?;
            let d = one_minus(em, sq)?;
            em.apply(Op::Mul, &[g, d])
        }
        Op::Softplus => {
            let x = em.node(node.inputs[0]);
            let s = em.apply(Op::Sigmoid, &[x])?;
            em.apply(Op::Mul, &[g, s])
        }
        Op::Square => {
            let x = em.node(node.inputs[0]);
            let two_x = em.apply(Op::Scale(2.0), &[x])?;
            em.apply(Op::Mul, &[g, two_x])
        }
        Op::Norm2 => {
            let x = em.node(node.inputs[0]);
            let n = em.node(id);
            let r = em.apply(Op::Recip, &[n])?;
            let f = em.apply(Op::Mul, &[g, r])?;
            em.apply(Op::Mul, &[f, x])
        }
        Op::Dot => {
            let other = em.node(node.inputs[1 - k]);
            em.apply(Op::Mul, &[g, other])
        }
        Op::Affine => match k {
            0 => {
                let w = em.node(node.inputs[1]);
                let wt = em.apply(Op::Transpose, &[w])?;
                em.apply(Op::MatMul, &[g, wt])
            }
            1 => {
                let x = em.node(node.inputs[0]);
                let xt = em.apply(Op::Transpose, &[x])?;
                em.apply(Op::MatMul, &[xt, g])
            }
            _ => em.apply(Op::SumRows, &[g]),
        },
        Op::Neg => em.apply(Op::Neg, &[g]),
        Op::Scale(c) => em.apply(Op::Scale(*c), &[g]),
        Op::Transpose => em.apply(Op::Transpose, &[g]),
        Op::Sigmoid => {
            let s = em.node(id);
            let oms = one_minus(em, s.clone())?;
            let d = em.apply(Op::Mul, &[s, oms])?;
            em.apply(Op::Mul, &[g, d])
        }
        Op::Recip => {
            let r = em.node(id);
            let r2 = em.apply(Op::Square, &[r])?;
            let p = em.apply(Op::Mul, &[g, r2])?;
            em.apply(Op::Neg, &[p])
        }
        Op::Expand(_) => em.apply(Op::Sum, &[g]),
        Op::SumRows => {
            let n = in_shape(0)[0];
            em.apply(Op::BroadcastRows(n), &[g])
        }
        Op::BroadcastRows(_) => em.apply(Op::SumRows, &[g]),
    }
}

/// Reverse sweep from `output`. Returns one adjoint per entry of `wrt`, or
/// `None` where the output does not depend on that node.
pub(crate) fn backward<E: Emitter>(
    em: &mut E,
    output: Var,
    wrt: &[Var],
) -> Result<Vec<Option<E::H>>> {
    let graph = em.graph();
    let out_shape = graph.shape(output).to_vec();
    if graph.value(output).numel() != 1 {
        return Err(Error::NonScalarOutput(out_shape));
    }
    let n = output.0 + 1;

    // nodes that lie downstream of at least one `wrt`
    let mut needs = vec![false; n];
    let mut is_wrt = vec![false; n];
    for w in wrt {
        if w.0 < n {
            needs[w.0] = true;
            is_wrt[w.0] = true;
        }
    }
    for i in 0..n {
        if !needs[i] {
            needs[i] = graph.nodes[i].inputs.iter().any(|v| needs[v.0]);
        }
    }

    let mut adj: Vec<Option<E::H>> = vec![None; n];
    let mut found: Vec<Option<E::H>> = vec![None; n];
    if needs[output.0] {
        let seed = Tensor::ones(out_shape);
        adj[output.0] = Some(em.constant(seed));
    }

    for i in (0..n).rev() {
        if !needs[i] {
            continue;
        }
        let Some(g) = adj[i].take() else { continue };
        if is_wrt[i] {
            found[i] = Some(g.clone());
        }
        let node = {
            let graph = em.graph();
            let nd = &graph.nodes[i];
            NodeInfo {
                op: nd.op.clone(),
                inputs: nd.inputs.clone(),
                in_shapes: nd.inputs.iter().map(|v| graph.shape(*v).to_vec()).collect(),
                out_shape: nd.value.shape().to_vec(),
            }
        };
        for (k, input) in node.inputs.iter().enumerate() {
            if !needs[input.0] {
                continue;
            }
            let contrib = vjp(em, &node, Var(i), k, &g)?;
            adj[input.0] = Some(match adj[input.0].take() {
                Some(acc) => em.apply(Op::Add, &[acc, contrib])?,
                None => contrib,
            });
        }
    }

    Ok(wrt
        .iter()
        .map(|w| if w.0 < n { found[w.0].clone() } else { None })
        .collect())
}
