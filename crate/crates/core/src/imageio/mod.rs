//! PNG rasters, cubemap directories, run configuration and dataset manifests.

mod config;
mod manifest;
mod png;

pub use config::{read_config, Optimizer, RunConfig, CONFIG_KEYS};
pub use manifest::{read_manifest, write_manifest, DatasetManifest, ManifestEntry};
pub use png::{load_cubemap, load_image, save_cubemap, save_image, BitDepth};
