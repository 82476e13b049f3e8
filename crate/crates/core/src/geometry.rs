//! Equirectangular and cubemap projections, face/edge topology and band
//! extraction.
//!
//! World frame: x right, y up, z forward. A face pixel `(u, v)` has local
//! coordinates `a = 2(u + 0.5)/S - 1` (rightward) and `b = 2(v + 0.5)/S - 1`
//! (downward); the direction through it is read from [`FaceId::local_to_cube`]
//! and normalized.
//!
//! Longitude and latitude follow `lambda = atan2(x, z)` and `phi = asin(y)`,
//! so the Front face sits at the center of the equirectangular image.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FaceId {
    Front = 0,
    Right = 1,
    Back = 2,
    Left = 3,
    Up = 4,
    Down = 5,
}

impl FaceId {
    /// All faces in storage order, which is also the tie-break priority of
    /// [`face_pixel_from_dir`].
    pub const ALL: [FaceId; 6] = [
        FaceId::Front,
        FaceId::Right,
        FaceId::Back,
        FaceId::Left,
        FaceId::Up,
        FaceId::Down,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FaceId> {
        FaceId::ALL.get(i).copied()
    }

    /// Lowercase name used for on-disk face files.
    pub fn name(self) -> &'static str {
        match self {
            FaceId::Front => "front",
            FaceId::Right => "right",
            FaceId::Back => "back",
            FaceId::Left => "left",
            FaceId::Up => "up",
            FaceId::Down => "down",
        }
    }

    /// Unnormalized cube point for face-local coordinates `(a, b)` in [-1, 1]².
    #[inline]
    pub fn local_to_cube(self, a: f64, b: f64) -> [f64; 3] {
        match self {
            FaceId::Front => [a, -b, 1.0],
            FaceId::Right => [1.0, -b, -a],
            FaceId::Back => [-a, -b, -1.0],
            FaceId::Left => [-1.0, -b, a],
            FaceId::Up => [a, 1.0, b],
            FaceId::Down => [a, -1.0, -b],
        }
    }

    /// Inverse of [`FaceId::local_to_cube`] for a direction known to hit this face.
    #[inline]
    fn cube_to_local(self, [x, y, z]: [f64; 3]) -> (f64, f64) {
        match self {
            FaceId::Front => (x / z, -y / z),
            FaceId::Right => (-z / x, -y / x),
            FaceId::Back => (x / z, y / z),
            FaceId::Left => (-z / x, y / x),
            FaceId::Up => (x / y, z / y),
            FaceId::Down => (-x / y, z / y),
        }
    }

    /// The axis component (0 = x, 1 = y, 2 = z) and sign of the outward normal.
    fn axis(self) -> (usize, f64) {
        match self {
            FaceId::Front => (2, 1.0),
            FaceId::Right => (0, 1.0),
            FaceId::Back => (2, -1.0),
            FaceId::Left => (0, -1.0),
            FaceId::Up => (1, 1.0),
            FaceId::Down => (1, -1.0),
        }
    }
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Side of a face in its local raster frame: North is row 0, West is column 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    North,
    South,
    East,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::North, Side::South, Side::East, Side::West];

    /// Pixel `(u, v)` at position `along` on this side, `depth` pixels inward.
    ///
    /// `along` follows the increasing column for North/South and the
    /// increasing row for East/West.
    #[inline]
    pub fn pixel(self, face_size: usize, along: usize, depth: usize) -> (usize, usize) {
        let last = face_size - 1;
        match self {
            Side::North => (along, depth),
            Side::South => (along, last - depth),
            Side::West => (depth, along),
            Side::East => (last - depth, along),
        }
    }

    /// Face-local `(a, b)` of a point on this side at edge parameter `s` in [-1, 1].
    #[inline]
    pub fn boundary_local(self, s: f64) -> (f64, f64) {
        match self {
            Side::North => (s, -1.0),
            Side::South => (s, 1.0),
            Side::West => (-1.0, s),
            Side::East => (1.0, s),
        }
    }

    /// Clockwise quarter turns that carry this side onto the East side.
    pub fn turns_to_east(self) -> usize {
        match self {
            Side::East => 0,
            Side::North => 1,
            Side::West => 2,
            Side::South => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Direction3 { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Direction3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &Direction3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Longitude in [-pi, pi] and latitude in [-pi/2, pi/2] of a unit direction.
    pub fn lon_lat(&self) -> (f64, f64) {
        (self.x.atan2(self.z), self.y.clamp(-1.0, 1.0).asin())
    }

    pub fn from_lon_lat(lon: f64, lat: f64) -> Self {
        Direction3::new(lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos())
    }
}

impl From<[f64; 3]> for Direction3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Direction3::new(x, y, z)
    }
}

/// Equirectangular panorama with a 2:1 aspect ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct ErpImage {
    raster: Raster,
}

impl ErpImage {
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.height() == 0 || raster.width() != 2 * raster.height() {
            return Err(Error::domain(format!(
                "equirectangular image must be 2:1, got {}x{}",
                raster.width(),
                raster.height()
            )));
        }
        if raster.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("equirectangular image has non-finite values"));
        }
        Ok(ErpImage { raster })
    }

    /// Samples `f(direction, channel)` at every pixel center.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(Direction3, usize) -> f64,
    ) -> Result<Self> {
        let raster = Raster::from_fn(width, height, channels, |i, j, c| {
            let (lon, lat) = erp_pixel_lon_lat(i, j, width, height);
            f(Direction3::from_lon_lat(lon, lat), c)
        });
        ErpImage::new(raster)
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn channels(&self) -> usize {
        self.raster.channels()
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    /// Bilinear sample at continuous pixel coordinates (pixel `i` spans
    /// `[i, i+1)`), wrapping in longitude and clamping in latitude.
    pub fn sample(&self, u: f64, v: f64, c: usize) -> f64 {
        let (w, h) = (self.width() as isize, self.height() as isize);
        let x = u - 0.5;
        let y = (v - 0.5).clamp(0.0, (h - 1) as f64);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi0 = (x0 as isize).rem_euclid(w) as usize;
        let xi1 = (x0 as isize + 1).rem_euclid(w) as usize;
        let yi0 = y0 as usize;
        let yi1 = (yi0 + 1).min(h as usize - 1);
        let r = &self.raster;
        let top = r.get(xi0, yi0, c) * (1.0 - fx) + r.get(xi1, yi0, c) * fx;
        let bottom = r.get(xi0, yi1, c) * (1.0 - fx) + r.get(xi1, yi1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Longitude/latitude of the center of equirectangular pixel `(i, j)`.
pub fn erp_pixel_lon_lat(i: usize, j: usize, width: usize, height: usize) -> (f64, f64) {
    let lon = ((i as f64 + 0.5) / width as f64 - 0.5) * 2.0 * PI;
    let lat = (0.5 - (j as f64 + 0.5) / height as f64) * PI;
    (lon, lat)
}

/// Six square faces indexed by [`FaceId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Cubemap {
    face_size: usize,
    channels: usize,
    faces: [Raster; 6],
}

impl Cubemap {
    pub fn new(faces: [Raster; 6]) -> Result<Self> {
        let face_size = faces[0].width();
        let channels = faces[0].channels();
        if face_size == 0 || channels == 0 {
            return Err(Error::domain("cubemap faces must be non-empty"));
        }
        for (id, f) in FaceId::ALL.iter().zip(&faces) {
            if f.width() != face_size || f.height() != face_size || f.channels() != channels {
                return Err(Error::domain(format!(
                    "face {id} is {}x{}x{}, expected {face_size}x{face_size}x{channels}",
                    f.width(),
                    f.height(),
                    f.channels()
                )));
            }
        }
        Ok(Cubemap {
            face_size,
            channels,
            faces,
        })
    }

    pub fn filled(face_size: usize, channels: usize, value: f64) -> Self {
        let face = Raster::filled(face_size, face_size, channels, value);
        Cubemap {
            face_size,
            channels,
            faces: std::array::from_fn(|_| face.clone()),
        }
    }

    /// Samples `f(direction, channel)` at every face pixel center.
    pub fn from_fn(
        face_size: usize,
        channels: usize,
        f: impl Fn(Direction3, usize) -> f64 + Sync,
    ) -> Self {
        let faces: Vec<Raster> = FaceId::ALL
            .par_iter()
            .map(|&face| {
                Raster::from_fn(face_size, face_size, channels, |u, v, c| {
                    f(pixel_center_dir(face, u, v, face_size), c)
                })
            })
            .collect();
        Cubemap {
            face_size,
            channels,
            faces: faces.try_into().expect("six faces"),
        }
    }

    #[inline]
    pub fn face_size(&self) -> usize {
        self.face_size
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn face(&self, id: FaceId) -> &Raster {
        &self.faces[id.index()]
    }

    pub fn faces(&self) -> &[Raster; 6] {
        &self.faces
    }

    pub fn into_faces(self) -> [Raster; 6] {
        self.faces
    }

    /// Replaces one face; the replacement must keep the shared shape.
    pub fn set_face(&mut self, id: FaceId, face: Raster) -> Result<()> {
        if face.width() != self.face_size
            || face.height() != self.face_size
            || face.channels() != self.channels
        {
            return Err(Error::domain(format!("replacement for face {id} has the wrong shape")));
        }
        self.faces[id.index()] = face;
        Ok(())
    }

    pub fn map_faces(&self, f: impl Fn(FaceId, &Raster) -> Raster) -> Result<Cubemap> {
        Cubemap::new(std::array::from_fn(|i| f(FaceId::ALL[i], &self.faces[i])))
    }
}

/// Direction through the center of pixel `(u, v)`; callers guarantee bounds.
#[inline]
fn pixel_center_dir(face: FaceId, u: usize, v: usize, face_size: usize) -> Direction3 {
    let s = face_size as f64;
    let a = 2.0 * (u as f64 + 0.5) / s - 1.0;
    let b = 2.0 * (v as f64 + 0.5) / s - 1.0;
    Direction3::from(face.local_to_cube(a, b)).normalized()
}

/// Unit direction from the cube center through the center of pixel `(u, v)`.
pub fn dir_from_face_pixel(face: FaceId, u: usize, v: usize, face_size: usize) -> Result<Direction3> {
    if u >= face_size || v >= face_size {
        return Err(Error::domain(format!(
            "pixel ({u}, {v}) outside a {face_size}x{face_size} face"
        )));
    }
    Ok(pixel_center_dir(face, u, v, face_size))
}

/// Face hit by `d` and its continuous pixel coordinates (pixel `k` spans
/// `[k, k+1)`, so a pixel center maps back to `k + 0.5`).
///
/// Exact ties on cube edges and corners go to the first face in
/// [`FaceId::ALL`] order.
pub fn face_pixel_from_dir(d: Direction3, face_size: usize) -> Result<(FaceId, f64, f64)> {
    let comps = d.to_array();
    if !comps.iter().all(|c| c.is_finite()) || comps.iter().all(|&c| c == 0.0) {
        return Err(Error::domain("direction must be finite and non-zero"));
    }
    let m = comps.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let face = FaceId::ALL
        .into_iter()
        .find(|f| {
            let (axis, sign) = f.axis();
            comps[axis] * sign == m
        })
        .expect("some axis attains the maximum");
    let (a, b) = face.cube_to_local(comps);
    let s = face_size as f64;
    Ok((face, (a + 1.0) * 0.5 * s, (b + 1.0) * 0.5 * s))
}

/// Bilinear face sample at continuous pixel coordinates, clamped to the face.
pub fn sample_face(face: &Raster, u: f64, v: f64, c: usize) -> f64 {
    let last = (face.width() - 1) as f64;
    let x = (u - 0.5).clamp(0.0, last);
    let y = (v - 0.5).clamp(0.0, last);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(face.width() - 1);
    let y1 = (y0 + 1).min(face.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = face.get(x0, y0, c) * (1.0 - fx) + face.get(x1, y0, c) * fx;
    let bottom = face.get(x0, y1, c) * (1.0 - fx) + face.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn erp_to_cubemap(erp: &ErpImage, face_size: usize) -> Result<Cubemap> {
    if face_size == 0 {
        return Err(Error::domain("face size must be positive"));
    }
    let (w, h) = (erp.width() as f64, erp.height() as f64);
    Ok(Cubemap::from_fn(face_size, erp.channels(), |d, c| {
        let (lon, lat) = d.lon_lat();
        let u = (lon / (2.0 * PI) + 0.5) * w;
        let v = (0.5 - lat / PI) * h;
        erp.sample(u, v, c)
    }))
}

pub fn cubemap_to_erp(cube: &Cubemap, width: usize, height: usize) -> Result<ErpImage> {
    if height == 0 || width != 2 * height {
        return Err(Error::domain(format!(
            "equirectangular output must be 2:1, got {width}x{height}"
        )));
    }
    let channels = cube.channels();
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::with_capacity(width * channels);
            for i in 0..width {
                let (lon, lat) = erp_pixel_lon_lat(i, j, width, height);
                let (face, u, v) = face_pixel_from_dir(Direction3::from_lon_lat(lon, lat), cube.face_size())
                    .expect("unit direction");
                for c in 0..channels {
                    row.push(sample_face(cube.face(face), u, v, c));
                }
            }
            row
        })
        .collect();
    ErpImage::new(Raster::from_vec(width, height, channels, rows.concat())?)
}

/// One of the twelve cube edges, seen from the two faces that share it.
///
/// Band position `k` along `left_side` meets position `k` along `right_side`,
/// or position `face_size - 1 - k` when `reversed` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeSpec {
    pub index: usize,
    pub left_face: FaceId,
    pub left_side: Side,
    pub right_face: FaceId,
    pub right_side: Side,
    pub reversed: bool,
}

/// Which of the two faces of an edge a band is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandSide {
    Left,
    Right,
}

impl EdgeSpec {
    pub fn face(&self, side: BandSide) -> (FaceId, Side) {
        match side {
            BandSide::Left => (self.left_face, self.left_side),
            BandSide::Right => (self.right_face, self.right_side),
        }
    }

    /// Maps an along-edge position on the left face to the right face (and back).
    #[inline]
    pub fn map_along(&self, along: usize, face_size: usize) -> usize {
        if self.reversed {
            face_size - 1 - along
        } else {
            along
        }
    }
}

const fn edge(
    index: usize,
    left_face: FaceId,
    left_side: Side,
    right_face: FaceId,
    right_side: Side,
    reversed: bool,
) -> EdgeSpec {
    EdgeSpec {
        index,
        left_face,
        left_side,
        right_face,
        right_side,
        reversed,
    }
}

static EDGES: [EdgeSpec; 12] = {
    use FaceId::*;
    use Side::*;
    [
        edge(0, Front, North, Up, South, false),
        edge(1, Front, South, Down, North, false),
        edge(2, Front, East, Right, West, false),
        edge(3, Front, West, Left, East, false),
        edge(4, Right, East, Back, West, false),
        edge(5, Back, East, Left, West, false),
        edge(6, Right, North, Up, East, true),
        edge(7, Right, South, Down, East, false),
        edge(8, Back, North, Up, North, true),
        edge(9, Back, South, Down, South, true),
        edge(10, Left, North, Up, West, false),
        edge(11, Left, South, Down, West, true),
    ]
};

/// The twelve cube edges.
pub fn edge_table() -> &'static [EdgeSpec; 12] {
    &EDGES
}

/// The edge on `side` of `face`, and which end of it `face` is.
pub fn edge_at(face: FaceId, side: Side) -> (&'static EdgeSpec, BandSide) {
    EDGES
        .iter()
        .find_map(|e| {
            if e.left_face == face && e.left_side == side {
                Some((e, BandSide::Left))
            } else if e.right_face == face && e.right_side == side {
                Some((e, BandSide::Right))
            } else {
                None
            }
        })
        .expect("every (face, side) pair belongs to one edge")
}

/// Band of `width_px` columns next to an edge: row `k` is along-edge position
/// `k` in the left face's ordering and column 0 touches the edge.
pub fn extract_edge_band(cube: &Cubemap, edge: &EdgeSpec, width_px: usize, side: BandSide) -> Result<Raster> {
    let n = cube.face_size();
    if width_px == 0 || width_px > n / 2 {
        return Err(Error::domain(format!(
            "band width {width_px} outside [1, {}]",
            n / 2
        )));
    }
    let (face, face_side) = edge.face(side);
    let raster = cube.face(face);
    Ok(Raster::from_fn(width_px, n, cube.channels(), |depth, k, c| {
        let along = match side {
            BandSide::Left => k,
            BandSide::Right => edge.map_along(k, n),
        };
        let (u, v) = face_side.pixel(n, along, depth);
        raster.get(u, v, c)
    }))
}
