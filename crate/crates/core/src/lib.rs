//! Novel category discovery by joint optimization of supervised,
//! negative-learning, entropy, variance, contrastive and view-adversarial
//! losses on a small dense network.

pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod objective;
pub mod optim;
pub mod sampler;
pub mod synthdata;
pub mod trainer;
pub mod types;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use losses::{
    AdversarialMode, LossBreakdown, LossToggles, LossWeights, ScheduleMode, VarianceMode,
};
pub use model::{Architecture, Checkpoint, GradientBundle, ModelParams};
pub use sampler::{JointBatch, SamplerConfig};
pub use synthdata::{Dataset, GeneratorConfig};
pub use trainer::{TrainConfig, TrainLog};
pub use types::{DatasetSpec, Example, ForwardOutput, Hyperparams, SharpenMode, Status};
