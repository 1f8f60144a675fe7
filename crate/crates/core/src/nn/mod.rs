//! Dense tensors, MLPs with reverse-mode adjoints, Adam, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use mlp::{elu, Mlp, MlpSpec, MlpTape};
pub use params::{param_count, Gradients, MessagePassingParams, ModelLayout, ModelParams};
pub use tensor::Tensor2D;
