//! Synthetic oracle distributions, the conditional toy task, negative
//! sampling and CSV datasets.

mod csv_io;
mod distributions;
mod task;

pub use csv_io::{load_csv, write_csv};
pub use distributions::SyntheticDistribution;
pub use task::{ConditionalTask, NegativeSampler, NegativeStrategy};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Rows of `(x, Y)` pairs. `x` is absent for unconditional data.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Option<Tensor>,
    pub y: Tensor,
}

impl Dataset {
    pub fn new(x: Option<Tensor>, y: Tensor) -> Result<Self> {
        if y.rank() != 2 || y.rows() == 0 {
            return Err(Error::invalid("dataset needs a non-empty n x d matrix"));
        }
        if let Some(x) = &x {
            if x.rank() != 2 || x.rows() != y.rows() {
                return Err(Error::ShapeMismatch {
                    op: "dataset",
                    lhs: y.shape().to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
        }
        Ok(Dataset { x, y })
    }

    pub fn unconditional(y: Tensor) -> Result<Self> {
        Dataset::new(None, y)
    }

    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim_y(&self) -> usize {
        self.y.cols()
    }

    pub fn dim_x(&self) -> usize {
        self.x.as_ref().map_or(0, Tensor::cols)
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.as_ref().map(|x| x.select_rows(idx)),
            y: self.y.select_rows(idx),
        }
    }

    /// Splits off the last `n` rows.
    pub fn split_tail(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::invalid("split must leave both parts non-empty"));
        }
        let head: Vec<usize> = (0..self.len() - n).collect();
        let tail: Vec<usize> = (self.len() - n..self.len()).collect();
        Ok((self.select(&head), self.select(&tail)))
    }
}
