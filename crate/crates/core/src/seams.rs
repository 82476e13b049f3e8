//! Seam-consistency metrics over the twelve cube edges.
//!
//! Seam-SSIM compares the narrow bands on both sides of each edge (higher is
//! better). Seam-Sobel measures horizontal Sobel responses in the pixel
//! column touching each edge once the face is turned so the edge is its
//! East side (lower is better).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{edge_table, extract_edge_band, BandSide, Cubemap, EdgeSpec};
use crate::raster::Raster;

/// Largest SSIM window side used on narrow bands.
pub const MAX_SSIM_WINDOW: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueScale {
    /// Intensities in [0, 1].
    Unit,
    /// Intensities multiplied by 255.
    Byte,
}

impl ValueScale {
    pub fn factor(self) -> f64 {
        match self {
            ValueScale::Unit => 1.0,
            ValueScale::Byte => 255.0,
        }
    }
}

impl std::str::FromStr for ValueScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(ValueScale::Unit),
            "byte" => Ok(ValueScale::Byte),
            other => Err(Error::Config(format!("value scale must be unit or byte, got {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamParams {
    /// SSIM band width as a fraction of the face size.
    pub band_frac: f64,
    pub value_scale: ValueScale,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for SeamParams {
    fn default() -> Self {
        SeamParams {
            band_frac: 0.01,
            value_scale: ValueScale::Byte,
            // (0.01 L)^2 and (0.03 L)^2 for data in [0, 1].
            ssim_c1: 1e-4,
            ssim_c2: 9e-4,
        }
    }
}

impl SeamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.band_frac > 0.0 && self.band_frac <= 0.5) {
            return Err(Error::Config(format!("band_frac {} outside (0, 0.5]", self.band_frac)));
        }
        if !(self.ssim_c1 >= 0.0 && self.ssim_c2 >= 0.0) {
            return Err(Error::Config("ssim constants must be non-negative".into()));
        }
        Ok(())
    }

    /// Band width in pixels for a face of `face_size`.
    pub fn band_width(&self, face_size: usize) -> usize {
        ((self.band_frac * face_size as f64).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeamReport {
    pub per_edge_ssim: Vec<f64>,
    pub per_edge_sobel: Vec<f64>,
    pub seam_ssim: f64,
    pub seam_sobel: f64,
    pub params: SeamParams,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    index: usize,
    ssim: f64,
    sobel: f64,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    seam_ssim: f64,
    seam_sobel: f64,
    edges: Vec<EdgeJson>,
    params: SeamParams,
}

impl SeamReport {
    pub fn to_json(&self) -> String {
        let report = ReportJson {
            seam_ssim: self.seam_ssim,
            seam_sobel: self.seam_sobel,
            edges: (0..self.per_edge_ssim.len())
                .map(|i| EdgeJson {
                    index: i,
                    ssim: self.per_edge_ssim[i],
                    sobel: self.per_edge_sobel[i],
                })
                .collect(),
            params: self.params,
        };
        serde_json::to_string_pretty(&report).expect("report serializes")
    }
}

fn ssim_window_side(band_width: usize) -> usize {
    let w = band_width.clamp(1, MAX_SSIM_WINDOW);
    if w.is_multiple_of(2) {
        w - 1
    } else {
        w
    }
}

/// Mean local SSIM of two equally shaped bands, using a uniform square
/// window of side `min(width, 7)` (made odd) at every valid position,
/// computed per channel and then averaged over channels.
pub fn ssim_band(a: &Raster, b: &Raster, params: &SeamParams) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::domain(format!(
            "band shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let k = ssim_window_side(a.width());
    if a.height() < k {
        return Err(Error::domain("band shorter than the SSIM window"));
    }
    let (c1, c2) = (params.ssim_c1, params.ssim_c2);
    let count = (k * k) as f64;
    let mut total = 0.0;
    let mut wa = vec![0.0; k * k];
    let mut wb = vec![0.0; k * k];
    for c in 0..a.channels() {
        let mut channel_sum = 0.0;
        let mut windows = 0usize;
        for y0 in 0..=a.height() - k {
            for x0 in 0..=a.width() - k {
                for dy in 0..k {
                    for dx in 0..k {
                        wa[dy * k + dx] = a.get(x0 + dx, y0 + dy, c);
                        wb[dy * k + dx] = b.get(x0 + dx, y0 + dy, c);
                    }
                }
                let mu_a = wa.iter().sum::<f64>() / count;
                let mu_b = wb.iter().sum::<f64>() / count;
                let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
                for (x, y) in wa.iter().zip(&wb) {
                    let (da, db) = (x - mu_a, y - mu_b);
                    var_a += da * da;
                    var_b += db * db;
                    cov += da * db;
                }
                var_a /= count;
                var_b /= count;
                cov /= count;
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                channel_sum += num / den;
                windows += 1;
            }
        }
        total += channel_sum / windows as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Per-edge band SSIM and its mean over the twelve edges.
pub fn seam_ssim(cube: &Cubemap, params: &SeamParams) -> Result<(Vec<f64>, f64)> {
    params.validate()?;
    let width = params.band_width(cube.face_size());
    let per_edge = edge_table()
        .iter()
        .map(|e| {
            let left = extract_edge_band(cube, e, width, BandSide::Left)?;
            let right = extract_edge_band(cube, e, width, BandSide::Right)?;
            ssim_band(&left, &right, params)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_edge.iter().sum::<f64>() / per_edge.len() as f64;
    Ok((per_edge, mean))
}

/// Horizontal Sobel response with kernel `[[-1,0,1],[-2,0,2],[-1,0,1]]` and
/// replicated borders, per channel.
pub fn sobel_x(face: &Raster) -> Raster {
    let (w, h) = (face.width() as isize, face.height() as isize);
    let at = |x: isize, y: isize, c: usize| face.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize, c);
    Raster::from_fn(face.width(), face.height(), face.channels(), |x, y, c| {
        let (x, y) = (x as isize, y as isize);
        (at(x + 1, y - 1, c) - at(x - 1, y - 1, c))
            + 2.0 * (at(x + 1, y, c) - at(x - 1, y, c))
            + (at(x + 1, y + 1, c) - at(x - 1, y + 1, c))
    })
}

/// Mean |Sobel-x| of the column touching `edge` on `side`, in unit scale.
///
/// The face is laid out with the edge on its East side (rows follow the
/// along-edge order, column `S-1` touches the edge) and the neighbour's
/// aligned edge pixels are appended as one extra column, so the stencil
/// at the edge column straddles the seam.
fn edge_column_sobel(cube: &Cubemap, edge: &EdgeSpec, side: BandSide) -> f64 {
    let n = cube.face_size();
    let other = match side {
        BandSide::Left => BandSide::Right,
        BandSide::Right => BandSide::Left,
    };
    let (face, face_side) = edge.face(side);
    let (nbr, nbr_side) = edge.face(other);
    let (own, nbr) = (cube.face(face), cube.face(nbr));
    // Columns: depth 1, depth 0, neighbour depth 0. Only the middle column
    // is read, and replicate padding never reaches it horizontally.
    let strip = Raster::from_fn(3, n, cube.channels(), |col, along, c| match col {
        0 | 1 => {
            let (u, v) = face_side.pixel(n, along, 1 - col);
            own.get(u, v, c)
        }
        _ => {
            let (u, v) = nbr_side.pixel(n, edge.map_along(along, n), 0);
            nbr.get(u, v, c)
        }
    });
    let grad = sobel_x(&strip);
    let mut sum = 0.0;
    for along in 0..n {
        for c in 0..cube.channels() {
            sum += grad.get(1, along, c).abs();
        }
    }
    sum / (n * cube.channels()) as f64
}

/// Per-edge Sobel scores on `params.value_scale` and their mean.
pub fn seam_sobel(cube: &Cubemap, params: &SeamParams) -> Result<(Vec<f64>, f64)> {
    params.validate()?;
    if cube.face_size() < 2 {
        return Err(Error::domain("seam sobel needs faces of at least 2x2 pixels"));
    }
    let scale = params.value_scale.factor();
    let per_edge: Vec<f64> = edge_table()
        .iter()
        .map(|e| {
            let l = edge_column_sobel(cube, e, BandSide::Left);
            let r = edge_column_sobel(cube, e, BandSide::Right);
            scale * (l + r) / 2.0
        })
        .collect();
    let mean = per_edge.iter().sum::<f64>() / per_edge.len() as f64;
    Ok((per_edge, mean))
}

/// Both metrics in one report.
pub fn seam_report(cube: &Cubemap, params: &SeamParams) -> Result<SeamReport> {
    let (per_edge_ssim, seam_ssim) = seam_ssim(cube, params)?;
    let (per_edge_sobel, seam_sobel) = seam_sobel(cube, params)?;
    Ok(SeamReport {
        per_edge_ssim,
        per_edge_sobel,
        seam_ssim,
        seam_sobel,
        params: *params,
    })
}
