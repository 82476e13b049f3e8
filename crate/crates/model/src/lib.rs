//! Joint-face adapter attention over the six cubemap faces and the
//! condition-switching rectified-flow trainer/sampler built on it.
//!
//! The "backbone" here is a small randomly initialized transformer that is
//! frozen after construction; only the adapters inserted into each block
//! are trained.

mod error;
pub mod flow;
pub mod jointface;

pub use error::{ModelError, Result};
