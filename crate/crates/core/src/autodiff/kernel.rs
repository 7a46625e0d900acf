//! Forward kernels for every primitive the graph can record.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Operation recorded on a graph node.
///
/// The first block is the public primitive set. The second block only exists
/// so that backward passes can be written in terms of recorded, and hence
/// differentiable, operations.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,

    Add,
    Mul,
    MatMul,
    Sum,
    Mean,
    Tanh,
    Softplus,
    Square,
    /// Euclidean norm of all elements.
    Norm2,
    Dot,
    /// `x W + b` with `b` broadcast along rows.
    Affine,

    Neg,
    Scale(f64),
    Transpose,
    Sigmoid,
    Recip,
    /// Scalar broadcast to the given shape.
    Expand(Vec<usize>),
    /// Column sums of a matrix, `n x m -> m`.
    SumRows,
    /// Vector repeated as `n` rows, `m -> n x m`.
    BroadcastRows(usize),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Tanh => "tanh",
            Op::Softplus => "softplus",
            Op::Square => "square",
            Op::Norm2 => "norm2",
            Op::Dot => "dot",
            Op::Affine => "affine",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Transpose => "transpose",
            Op::Sigmoid => "sigmoid",
            Op::Recip => "recip",
            Op::Expand(_) => "expand",
            Op::SumRows => "sum_rows",
            Op::BroadcastRows(_) => "broadcast_rows",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::Add | Op::Mul | Op::MatMul | Op::Dot => 2,
            Op::Affine => 3,
            _ => 1,
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &Op, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn elementwise(op: &Op, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    if a.is_scalar() {
        let s = a.data()[0];
        return Ok(b.map(|v| f(s, v)));
    }
    if b.is_scalar() {
        let s = b.data()[0];
        return Ok(a.map(|v| f(v, s)));
    }
    Err(mismatch(op, a, b))
}

fn require_rank(op: &Op, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::ShapeMismatch {
            op: op.name(),
            lhs: t.shape().to_vec(),
            rhs: vec![rank],
        });
    }
    Ok(())
}

/// `a (n x k) * b (k x m)`, i-k-j loop order.
fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += s * bv;
            }
        }
    }
    out
}

fn transpose(t: &Tensor) -> Tensor {
    let (n, m) = (t.rows(), t.cols());
    let src = t.data();
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            data[j * n + i] = src[i * m + j];
        }
    }
    Tensor::matrix(m, n, data).expect("transpose preserves element count")
}

/// Evaluates `op` on concrete inputs. Fails on shape errors and on any
/// non-finite result.
pub fn eval(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() != op.arity() {
        return Err(Error::invalid(format!(
            "{} expects {} inputs, got {}",
            op.name(),
            op.arity(),
            inputs.len()
        )));
    }
    let out = match op {
        Op::Leaf => unreachable!("leaves are never evaluated"),
        Op::Add => elementwise(op, inputs[0], inputs[1], |a, b| a + b)?,
        Op::Mul => elementwise(op, inputs[0], inputs[1], |a, b| a * b)?,
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
                return Err(mismatch(op, a, b));
            }
            let (n, k, m) = (a.rows(), a.cols(), b.cols());
            Tensor::matrix(n, m, matmul_raw(a.data(), b.data(), n, k, m))?
        }
        Op::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
        Op::Mean => {
            let t = inputs[0];
            if t.numel() == 0 {
                return Err(Error::invalid("mean of an empty tensor"));
            }
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
        }
        Op::Tanh => inputs[0].map(f64::tanh),
        Op::Softplus => inputs[0].map(softplus),
        Op::Square => inputs[0].map(|v| v * v),
        Op::Norm2 => Tensor::scalar(inputs[0].sq_norm().sqrt()),
        Op::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            Tensor::scalar(a.dot(b))
        }
        Op::Affine => {
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            if x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows() {
                return Err(mismatch(op, x, w));
            }
            if b.rank() != 1 || b.cols() != w.cols() {
                return Err(mismatch(op, w, b));
            }
            let (n, k, m) = (x.rows(), x.cols(), w.cols());
            let mut data = matmul_raw(x.data(), w.data(), n, k, m);
            for row in data.chunks_mut(m.max(1)) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            Tensor::matrix(n, m, data)?
        }
        Op::Neg => inputs[0].map(|v| -v),
        Op::Scale(c) => {
            let c = *c;
            inputs[0].map(|v| c * v)
        }
        Op::Transpose => {
            require_rank(op, inputs[0], 2)?;
            transpose(inputs[0])
        }
        Op::Sigmoid => inputs[0].map(sigmoid),
        Op::Recip => inputs[0].map(|v| 1.0 / v),
        Op::Expand(shape) => {
            let t = inputs[0];
            if t.numel() != 1 {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    lhs: t.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            Tensor::filled(shape.clone(), t.data()[0])
        }
        Op::SumRows => {
            let t = inputs[0];
            require_rank(op, t, 2)?;
            let m = t.cols();
            let mut data = vec![0.0; m];
            for row in t.iter_rows() {
                for (o, &v) in data.iter_mut().zip(row) {
                    *o += v;
                }
            }
            Tensor::vector(data)
        }
        Op::BroadcastRows(n) => {
            let t = inputs[0];
            require_rank(op, t, 1)?;
            let mut data = Vec::with_capacity(n * t.numel());
            for _ in 0..*n {
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(*n, t.numel(), data)?
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    Ok(out)
}
