//! Synthetic seamless panoramas with balanced condition ids.
//!
//! Each scene is a convex mixture of [`TOY_THEMES`] fixed smooth sphere
//! functions. The largest mixture weight always belongs to the scene's
//! condition id, and ids cycle through the themes, so every id is equally
//! frequent.

use cubepano::synthetic::SmoothSphereFn;
use cubepano::{Cubemap, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::jointface::tokens::cubemap_to_latents;
use crate::jointface::FaceLatents;

pub const TOY_THEMES: usize = 4;
pub const TOY_CHANNELS: usize = 3;
const THEME_SEED: u64 = 0x7e4e;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyScene {
    /// Image-domain faces in `[0, 1]`.
    pub cubemap: Cubemap,
    pub cond: usize,
    pub weights: [f64; TOY_THEMES],
}

impl ToyScene {
    /// Latent view, `2 * image - 1`.
    pub fn latents(&self) -> FaceLatents {
        cubemap_to_latents(&self.cubemap)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub face_size: usize,
    pub seed: u64,
    pub scenes: Vec<ToyScene>,
}

/// The fixed theme functions shared by every dataset.
pub fn toy_themes() -> Vec<SmoothSphereFn> {
    let mut rng = ChaCha8Rng::seed_from_u64(THEME_SEED);
    (0..TOY_THEMES).map(|_| SmoothSphereFn::random(&mut rng, TOY_CHANNELS, 4, 2.0)).collect()
}

pub fn make_toy_dataset(n_scenes: usize, face_size: usize, seed: u64) -> Result<ToyDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<(usize, [f64; TOY_THEMES])> = (0..n_scenes)
        .map(|i| {
            let cond = i % TOY_THEMES;
            let mut w: [f64; TOY_THEMES] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let top = (0..TOY_THEMES).fold(0, |best, k| if w[k] > w[best] { k } else { best });
            w.swap(top, cond);
            let total: f64 = w.iter().sum();
            (cond, w.map(|v| v / total))
        })
        .collect();
    let themes: Vec<Cubemap> = toy_themes().iter().map(|f| f.cubemap(face_size)).collect();
    let scenes = plans
        .into_par_iter()
        .map(|(cond, weights)| {
            let faces = std::array::from_fn(|f| {
                Raster::from_fn(face_size, face_size, TOY_CHANNELS, |u, v, c| {
                    themes.iter().zip(&weights).map(|(th, w)| w * th.faces()[f].get(u, v, c)).sum()
                })
            });
            Ok(ToyScene { cubemap: Cubemap::new(faces)?, cond, weights })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyDataset { face_size, seed, scenes })
}
