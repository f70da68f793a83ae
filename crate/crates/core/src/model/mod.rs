//! Network definition, layer engine, optimizer and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod optim;
pub mod predict;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{Mode, Param, Visit};
pub use network::{aggregate, Aggregation, DecoderOutputs, ModelSpec, Network, Upsample};
pub use optim::Adam;
pub use predict::{predict_mask, predict_mask_at};
pub use tensor::Tensor;
