//! Face tokens, their sphere directions and the joint cross-face layout.

use cubepano::geometry::dir_from_face_pixel;
use cubepano::{Cubemap, Direction3, FaceId, Raster};
use ndarray::{Array2, Array3, Array4};

use crate::error::{ModelError, Result};

/// Six face latents of one panorama, indexed `[face, y, x, channel]`.
pub type FaceLatents = Array4<f64>;

/// Per-face patch tokens of a batch of panoramas.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    /// `(batch * 6, tokens_per_face, channels)`, faces in [`FaceId`] order.
    pub data: Array3<f64>,
    /// `6 * tokens_per_face` directions, face-major.
    pub dirs: Vec<Direction3>,
}

impl TokenGrid {
    pub fn new(data: Array3<f64>, dirs: Vec<Direction3>) -> Result<Self> {
        let (rows, n, _) = data.dim();
        if rows == 0 || rows % 6 != 0 {
            return Err(ModelError::domain(format!("{rows} face rows is not a multiple of 6")));
        }
        if dirs.len() != 6 * n {
            return Err(ModelError::domain(format!(
                "{} directions for {} tokens per panorama",
                dirs.len(),
                6 * n
            )));
        }
        Ok(TokenGrid { data, dirs })
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0 / 6
    }

    pub fn tokens_per_face(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }
}

/// `(B*6, N, C)` to `(B, 6N, C)`: face `f` fills slots `[f*N, (f+1)*N)`.
pub fn joint_reshape(z: &Array3<f64>) -> Result<Array3<f64>> {
    let (rows, n, c) = z.dim();
    if rows == 0 || rows % 6 != 0 {
        return Err(ModelError::domain(format!("{rows} face rows is not a multiple of 6")));
    }
    let flat = z.as_standard_layout().iter().cloned().collect();
    Array3::from_shape_vec((rows / 6, 6 * n, c), flat).map_err(|e| ModelError::domain(e.to_string()))
}

/// Inverse of [`joint_reshape`].
pub fn joint_unreshape(z: &Array3<f64>) -> Result<Array3<f64>> {
    let (b, seq, c) = z.dim();
    if seq == 0 || seq % 6 != 0 {
        return Err(ModelError::domain(format!("sequence length {seq} is not a multiple of 6")));
    }
    let flat = z.as_standard_layout().iter().cloned().collect();
    Array3::from_shape_vec((b * 6, seq / 6, c), flat).map_err(|e| ModelError::domain(e.to_string()))
}

/// Unit directions through the centers of a `grid x grid` token layout on
/// every face, face-major then row-major.
pub fn token_dirs(grid: usize) -> Result<Vec<Direction3>> {
    let mut dirs = Vec::with_capacity(6 * grid * grid);
    for face in FaceId::ALL {
        for gy in 0..grid {
            for gx in 0..grid {
                dirs.push(dir_from_face_pixel(face, gx, gy, grid)?);
            }
        }
    }
    Ok(dirs)
}

/// `(6, S, S, Cl)` latents to `(6*N, p*p*Cl)` token features.
pub fn patchify(x: &FaceLatents, patch: usize) -> Array2<f64> {
    let (faces, s, _, cl) = x.dim();
    let g = s / patch;
    let feat = patch * patch * cl;
    let mut out = Array2::zeros((faces * g * g, feat));
    for f in 0..faces {
        for gy in 0..g {
            for gx in 0..g {
                let mut row = out.row_mut((f * g + gy) * g + gx);
                for py in 0..patch {
                    for px in 0..patch {
                        for c in 0..cl {
                            row[(py * patch + px) * cl + c] = x[[f, gy * patch + py, gx * patch + px, c]];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Array2<f64>, face_size: usize, patch: usize, channels: usize) -> FaceLatents {
    let g = face_size / patch;
    let mut out = Array4::zeros((6, face_size, face_size, channels));
    for f in 0..6 {
        for gy in 0..g {
            for gx in 0..g {
                let row = tokens.row((f * g + gy) * g + gx);
                for py in 0..patch {
                    for px in 0..patch {
                        for c in 0..channels {
                            out[[f, gy * patch + py, gx * patch + px, c]] = row[(py * patch + px) * channels + c];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Latents `x` shown as an image cubemap: `(x + 1) / 2` per value.
pub fn latents_to_cubemap(x: &FaceLatents) -> Result<Cubemap> {
    let (_, s, _, c) = x.dim();
    let faces = std::array::from_fn(|f| Raster::from_fn(s, s, c, |u, v, ch| 0.5 * (x[[f, v, u, ch]] + 1.0)));
    Ok(Cubemap::new(faces)?)
}

/// Image cubemap to latents: `2 * value - 1`.
pub fn cubemap_to_latents(cube: &Cubemap) -> FaceLatents {
    let (s, c) = (cube.face_size(), cube.channels());
    Array4::from_shape_fn((6, s, s, c), |(f, v, u, ch)| 2.0 * cube.faces()[f].get(u, v, ch) - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_sequence() {
        let z = Array3::from_shape_fn((6, 1, 1), |(f, _, _)| f as f64);
        let j = joint_reshape(&z).unwrap();
        assert_eq!(j.dim(), (1, 6, 1));
        assert_eq!(j.iter().cloned().collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn batches_stay_apart() {
        // Value encodes (row, token, channel).
        let z = Array3::from_shape_fn((12, 3, 2), |(r, k, c)| (r * 100 + k * 10 + c) as f64);
        let j = joint_reshape(&z).unwrap();
        for b in 0..2 {
            for f in 0..6 {
                for k in 0..3 {
                    for c in 0..2 {
                        assert_eq!(j[[b, f * 3 + k, c]], z[[b * 6 + f, k, c]]);
                    }
                }
            }
        }
        assert_eq!(j[[1, 0, 0]], 600.0);
        assert_eq!(joint_unreshape(&j).unwrap(), z);
    }

    #[test]
    fn reshape_rejects_partial_panorama() {
        assert!(joint_reshape(&Array3::zeros((5, 2, 2))).is_err());
        assert!(joint_unreshape(&Array3::zeros((1, 5, 2))).is_err());
    }

    #[test]
    fn dirs_are_unit_and_match_geometry() {
        let dirs = token_dirs(4).unwrap();
        assert_eq!(dirs.len(), 96);
        for d in &dirs {
            assert!((d.norm() - 1.0).abs() < 1e-9);
        }
        let expect = dir_from_face_pixel(FaceId::Back, 3, 1, 4).unwrap();
        assert_eq!(dirs[2 * 16 + 4 + 3], expect);
    }

    #[test]
    fn patchify_inverts() {
        let x = Array4::from_shape_fn((6, 8, 8, 3), |(f, y, u, c)| (f * 1000 + y * 100 + u * 10 + c) as f64);
        let t = patchify(&x, 2);
        assert_eq!(t.dim(), (6 * 16, 12));
        // Token (face 1, gy 2, gx 3) starts at pixel (6, 4).
        assert_eq!(t[[16 + 2 * 4 + 3, 0]], x[[1, 4, 6, 0]]);
        assert_eq!(unpatchify(&t, 8, 2, 3), x);
    }

    #[test]
    fn latent_cubemap_conversion_inverts() {
        let x = Array4::from_shape_fn((6, 4, 4, 2), |(f, y, u, c)| (f + y + u + c) as f64 / 20.0 - 0.5);
        let back = cubemap_to_latents(&latents_to_cubemap(&x).unwrap());
        assert!((&back - &x).iter().all(|d| d.abs() < 1e-15));
    }
}
