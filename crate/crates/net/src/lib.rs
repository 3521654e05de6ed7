//! Accessible-depth network over polar pillars: per-frame point encoder,
//! stability-attention fusion of historical frames, circular UNet backbone
//! and a per-direction depth distribution head, with its loss stack and
//! semi-supervised trainer.

pub mod config;
pub mod encoder;
mod error;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{BackboneCfg, FeatureMode, Fusion, NetConfig, PillarEncoderCfg, SamCfg};
pub use encoder::{prepare_input, FrameRows, PreparedInput};
pub use error::NetError;
pub use loss::LossConfig;
pub use model::{profile_from_distribution, CadNet, Forward};
pub use train::{evaluate, fit, fit_dataset, EpochLog, OptimizerKind, TrainConfig, TrainSample};
