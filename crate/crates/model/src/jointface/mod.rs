//! Joint-face attention adapter inside a small frozen transformer.

pub mod adapter;
pub mod backbone;
pub mod checkpoint;
pub mod network;
pub mod ops;
pub mod tokens;

pub use adapter::{adapter_forward, shared_layer_norm, AdapterParams};
pub use backbone::ToyBackboneParams;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use network::{JointFaceNet, NetConfig};
pub use ops::{full_attention, spherical_rope};
pub use tokens::{joint_reshape, joint_unreshape, FaceLatents, TokenGrid};
