use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::{Cubemap, FaceId};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads an 8- or 16-bit grayscale or RGB PNG into [0, 1] floats.
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel format {:?} (need 8/16-bit gray or RGB)", other.color()),
            ))
        }
    };
    Raster::from_vec(w, h, channels, data)
}

fn quantize(v: f64, max: f64) -> f64 {
    // f64::round rounds halves away from zero, i.e. up for non-negative input.
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes a 1- or 3-channel raster as PNG; values are clamped to [0, 1]
/// and quantized with `round(v * max)`.
pub fn save_image(raster: &Raster, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    if raster.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("refusing to save non-finite pixels to {}", path.display())));
    }
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    let img = match (raster.channels(), depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raster.data().iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .expect("buffer size"),
        ),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raster.data().iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .expect("buffer size"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raster.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect())
                .expect("buffer size"),
        ),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raster.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect())
                .expect("buffer size"),
        ),
        (c, _) => return Err(image_err(path, format!("cannot save {c}-channel raster as PNG"))),
    };
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => image_err(path, other.to_string()),
        })
}

/// Loads `front.png` … `down.png` from `dir`.
pub fn load_cubemap(dir: impl AsRef<Path>) -> Result<Cubemap> {
    let dir = dir.as_ref();
    let mut faces = Vec::with_capacity(6);
    for face in FaceId::ALL {
        let path = dir.join(format!("{}.png", face.name()));
        if !path.is_file() {
            return Err(image_err(&path, format!("missing {face} face")));
        }
        faces.push(load_image(&path)?);
    }
    Cubemap::new(faces.try_into().expect("six faces"))
}

pub fn save_cubemap(cube: &Cubemap, dir: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for face in FaceId::ALL {
        save_image(cube.face(face), dir.join(format!("{}.png", face.name())), depth)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(1.0, 255.0), 255.0);
        assert_eq!(quantize(0.5, 255.0), 128.0);
        assert_eq!(quantize(-0.2, 255.0), 0.0);
        assert_eq!(quantize(1.7, 65535.0), 65535.0);
    }

    #[test]
    fn eight_bit_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let r = Raster::from_fn(7, 5, 3, |x, y, c| ((x * 37 + y * 11 + c * 5) % 256) as f64 / 255.0);
        save_image(&r, &path, BitDepth::Eight).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn sixteen_bit_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let r = Raster::from_vec(2, 1, 1, vec![1.0, 0.0]).unwrap();
        save_image(&r, &path, BitDepth::Sixteen).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.data(), &[1.0, 0.0]);
    }

    #[test]
    fn half_saves_as_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        save_image(&Raster::filled(1, 1, 1, 0.5), &path, BitDepth::Eight).unwrap();
        assert_eq!(load_image(&path).unwrap().get(0, 0, 0), 128.0 / 255.0);
    }

    #[test]
    fn unreadable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.png");
        let err = load_image(&path).unwrap_err();
        assert!(err.is_io());
        assert!(err.to_string().contains("nope.png"));

        fs::write(&path, b"not a png").unwrap();
        assert!(load_image(&path).unwrap_err().is_io());
    }

    #[test]
    fn two_channel_raster_cannot_be_saved() {
        let dir = tempfile::tempdir().unwrap();
        assert!(save_image(&Raster::new(2, 2, 2), dir.path().join("x.png"), BitDepth::Eight).is_err());
    }
}
