//! Deterministic synthetic panoramas: analytic test signals, smooth random
//! sphere functions and independent noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Cubemap, Direction3};

/// `0.5 + 0.5 sin(3 lon) cos(2 lat)`.
pub fn analytic_signal(d: Direction3) -> f64 {
    let (lon, lat) = d.lon_lat();
    0.5 + 0.5 * (3.0 * lon).sin() * (2.0 * lat).cos()
}

/// A sum of low-frequency plane waves restricted to the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothSphereFn {
    /// Per channel: (wave vector, phase, amplitude).
    waves: Vec<Vec<([f64; 3], f64, f64)>>,
}

impl SmoothSphereFn {
    /// `waves` plane waves per channel with frequency at most `max_freq`
    /// and total amplitude 0.45, so values stay inside (0.05, 0.95).
    pub fn random(rng: &mut impl Rng, channels: usize, waves: usize, max_freq: f64) -> Self {
        let per_channel = (0..channels)
            .map(|_| {
                let amps: Vec<f64> = (0..waves).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = amps.iter().sum();
                amps.into_iter()
                    .map(|a| {
                        let dir = random_unit(rng);
                        let freq = rng.random_range(0.5..=max_freq);
                        let phase = rng.random_range(0.0..2.0 * PI);
                        ([dir[0] * freq, dir[1] * freq, dir[2] * freq], phase, 0.45 * a / total)
                    })
                    .collect()
            })
            .collect();
        SmoothSphereFn { waves: per_channel }
    }

    pub fn channels(&self) -> usize {
        self.waves.len()
    }

    pub fn eval(&self, d: Direction3, channel: usize) -> f64 {
        0.5 + self.waves[channel]
            .iter()
            .map(|(k, phase, amp)| amp * (k[0] * d.x + k[1] * d.y + k[2] * d.z + phase).sin())
            .sum::<f64>()
    }

    pub fn cubemap(&self, face_size: usize) -> Cubemap {
        Cubemap::from_fn(face_size, self.channels(), |d, c| self.eval(d, c))
    }
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let theta: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * theta.cos(), r * theta.sin(), z]
}

/// Seamless cubemap of a random smooth sphere function.
pub fn smooth_cubemap(face_size: usize, channels: usize, seed: u64) -> Cubemap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SmoothSphereFn::random(&mut rng, channels, 4, 2.0).cubemap(face_size)
}

/// Cubemap of independent uniform [0, 1) samples.
pub fn noise_cubemap(face_size: usize, channels: usize, seed: u64) -> Cubemap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let faces = std::array::from_fn(|_| {
        crate::Raster::from_fn(face_size, face_size, channels, |_, _, _| rng.random::<f64>())
    });
    Cubemap::new(faces).expect("uniform faces")
}
