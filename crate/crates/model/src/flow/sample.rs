//! Euler integration of the learned velocity from noise (`t = 1`) to
//! data (`t = 0`).

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ModelError, Result};
use crate::jointface::{FaceLatents, JointFaceNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// All six faces generated from noise.
    T2p,
    /// Face 0 pinned to a given view.
    V2p,
}

impl FromStr for SampleMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2p" => Ok(SampleMode::T2p),
            "v2p" => Ok(SampleMode::V2p),
            other => Err(ModelError::Usage(format!("mode '{other}' is not t2p or v2p"))),
        }
    }
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMode::T2p => "t2p",
            SampleMode::V2p => "v2p",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
    pub mode: SampleMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 50, seed: 7, mode: SampleMode::T2p }
    }
}

/// Anything that predicts a velocity for six faces.
pub trait VelocityModel {
    /// `(face_size, face_size, channels)` of one face.
    fn face_shape(&self) -> (usize, usize, usize);

    fn velocity(&self, x: &FaceLatents, t: f64, cond: usize) -> Result<FaceLatents>;
}

impl VelocityModel for JointFaceNet {
    fn face_shape(&self) -> (usize, usize, usize) {
        let c = self.config();
        (c.face_size, c.face_size, c.latent_channels)
    }

    fn velocity(&self, x: &FaceLatents, t: f64, cond: usize) -> Result<FaceLatents> {
        self.forward(x, t, cond)
    }
}

/// Integrates `x <- x - dt * v(x, t)` over `cfg.steps` uniform steps from
/// `t = 1`. In V2P mode face 0 is reset to `view_face` before every call
/// and never integrated.
pub fn euler_sample(
    model: &impl VelocityModel,
    cond: usize,
    cfg: &SamplerConfig,
    view_face: Option<&Array3<f64>>,
) -> Result<FaceLatents> {
    if cfg.steps == 0 {
        return Err(ModelError::Config("sampler steps must be at least 1".into()));
    }
    let (h, w, c) = model.face_shape();
    let view = match (cfg.mode, view_face) {
        (SampleMode::V2p, None) => return Err(ModelError::Usage("v2p sampling needs a view face".into())),
        (SampleMode::V2p, Some(v)) if v.dim() != (h, w, c) => {
            return Err(ModelError::domain(format!("view face {:?}, expected {:?}", v.dim(), (h, w, c))))
        }
        (SampleMode::V2p, Some(v)) => Some(v),
        (SampleMode::T2p, Some(_)) => return Err(ModelError::Usage("t2p sampling takes no view face".into())),
        (SampleMode::T2p, None) => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: FaceLatents = Array4::from_shape_simple_fn((6, h, w, c), || StandardNormal.sample(&mut rng));
    let first = usize::from(view.is_some());
    let dt = 1.0 / cfg.steps as f64;
    for k in 0..cfg.steps {
        if let Some(v) = view {
            x.slice_mut(s![0, .., .., ..]).assign(v);
        }
        let t = 1.0 - k as f64 * dt;
        let vel = model.velocity(&x, t, cond)?;
        let mut moving = x.slice_mut(s![first.., .., .., ..]);
        moving.scaled_add(-dt, &vel.slice(s![first.., .., .., ..]));
    }
    if let Some(v) = view {
        x.slice_mut(s![0, .., .., ..]).assign(v);
    }
    Ok(x)
}
