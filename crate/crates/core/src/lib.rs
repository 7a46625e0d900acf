pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod losses;
pub mod models;
pub mod rng;
pub mod training;

pub use autodiff::{Gradient, Graph, Tensor, Var};
pub use data::{ConditionalTask, Dataset, NegativeSampler, NegativeStrategy, SyntheticDistribution};
pub use error::{Error, Result};
pub use eval::{EvalReport, Grid};
pub use inference::{Method, SamplerConfig, Schedule, StepParams, Trajectory};
pub use losses::{LossBatch, LossKind, LossOptions, Projection};
pub use models::{Activation, Checkpoint, Mlp, MlpSpec, Network, ScoreSource, Variant};
pub use training::{Optimizer, ScorePath, TrainConfig, TrainOutcome, Trainer};
