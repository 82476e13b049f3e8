//! Cubemap panorama toolkit: equirectangular/cubemap projection, cube-edge
//! topology, Poisson cross-face blending, seam-consistency metrics and the
//! PNG/config I/O shared by the command line tool.

pub mod blend;
mod error;
pub mod geometry;
pub mod imageio;
mod raster;
pub mod seams;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{Cubemap, Direction3, EdgeSpec, ErpImage, FaceId, Side};
pub use raster::Raster;
