//! Rectified flow with condition switching between text-only (T2P) and
//! clean-first-face (V2P) generation.

pub mod dataset;
pub mod path;
pub mod sample;
pub mod train;

pub use dataset::{make_toy_dataset, ToyDataset, ToyScene, TOY_CHANNELS, TOY_THEMES};
pub use path::{flow_loss, flow_loss_grad, noisify, sample_switch, target_velocity, FlowBatch};
pub use sample::{euler_sample, SampleMode, SamplerConfig, VelocityModel};
pub use train::{train_step, OptimizerState, TrainOptions, TrainReport, Trainer};
