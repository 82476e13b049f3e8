//! Cross-face blending: every face is re-solved as a Poisson problem whose
//! guidance field is its own 5-point Laplacian and whose Dirichlet frame is
//! the pixelwise average of the one-pixel bands on both sides of each edge.
//!
//! The solver is plain Gauss-Seidel in row-major order starting from the
//! original face, so a face that already agrees with its neighbours is a
//! fixed point.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{edge_at, BandSide, Cubemap, FaceId, Side};
use crate::raster::Raster;

/// Largest face the dense oracle accepts.
pub const DENSE_ORACLE_MAX_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendConfig {
    /// Gauss-Seidel sweeps per face.
    pub iterations: usize,
    /// Stop early once the interior max-residual drops to this value.
    pub residual_stop: Option<f64>,
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig {
            iterations: 200,
            residual_stop: None,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("blend iterations must be at least 1".into()));
        }
        if let Some(eps) = self.residual_stop {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(Error::Config(format!("residual stop {eps} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Discrete Poisson problem on one square single-channel face.
///
/// `boundary` is only read on the outermost ring; `divergence` only in the
/// interior.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonProblem {
    divergence: Raster,
    boundary: Raster,
}

impl PoissonProblem {
    pub fn new(divergence: Raster, boundary: Raster) -> Result<Self> {
        let n = divergence.width();
        if divergence.height() != n || divergence.channels() != 1 || !divergence.same_shape(&boundary) {
            return Err(Error::domain(
                "poisson problem needs square single-channel divergence and boundary of equal shape",
            ));
        }
        if n < 3 {
            return Err(Error::domain(format!("face size {n} < 3 has no interior")));
        }
        Ok(PoissonProblem { divergence, boundary })
    }

    pub fn size(&self) -> usize {
        self.divergence.width()
    }

    pub fn divergence(&self) -> &Raster {
        &self.divergence
    }

    pub fn boundary(&self) -> &Raster {
        &self.boundary
    }

    /// `max |Δf - div|` over interior pixels.
    pub fn residual(&self, f: &Raster) -> f64 {
        let n = self.size();
        let mut worst = 0.0f64;
        for v in 1..n - 1 {
            for u in 1..n - 1 {
                let lap = f.get(u + 1, v, 0) + f.get(u - 1, v, 0) + f.get(u, v + 1, 0) + f.get(u, v - 1, 0)
                    - 4.0 * f.get(u, v, 0);
                worst = worst.max((lap - self.divergence.get(u, v, 0)).abs());
            }
        }
        worst
    }
}

#[inline]
fn on_ring(u: usize, v: usize, n: usize) -> bool {
    u == 0 || v == 0 || u == n - 1 || v == n - 1
}

/// 5-point Laplacian at interior pixels, zero on the border, per channel.
pub fn laplacian5(face: &Raster) -> Result<Raster> {
    let (w, h) = (face.width(), face.height());
    if w < 3 || h < 3 {
        return Err(Error::domain(format!("{w}x{h} face is too small for a 5-point stencil")));
    }
    Ok(Raster::from_fn(w, h, face.channels(), |u, v, c| {
        if u == 0 || v == 0 || u == w - 1 || v == h - 1 {
            0.0
        } else {
            face.get(u + 1, v, c) + face.get(u - 1, v, c) + face.get(u, v + 1, c) + face.get(u, v - 1, c)
                - 4.0 * face.get(u, v, c)
        }
    }))
}

/// Dirichlet frame of `face`: on each side, the average of the face's own
/// outer pixel and the neighbouring face's aligned outer pixel. Corners take
/// the mean of the two sides meeting there. Interior samples are zero.
pub fn dirichlet_boundary(cube: &Cubemap, face: FaceId) -> Raster {
    let n = cube.face_size();
    let channels = cube.channels();
    let own = cube.face(face);
    let mut sum = Raster::new(n, n, channels);
    let mut count = vec![0u8; n * n];

    for side in Side::ALL {
        let (edge, which) = edge_at(face, side);
        let (nbr_face, nbr_side) = edge.face(match which {
            BandSide::Left => BandSide::Right,
            BandSide::Right => BandSide::Left,
        });
        let nbr = cube.face(nbr_face);
        for k in 0..n {
            let (u, v) = side.pixel(n, k, 0);
            let (nu, nv) = nbr_side.pixel(n, edge.map_along(k, n), 0);
            for c in 0..channels {
                let value = 0.5 * (own.get(u, v, c) + nbr.get(nu, nv, c));
                sum.set(u, v, c, sum.get(u, v, c) + value);
            }
            count[v * n + u] += 1;
        }
    }

    for v in 0..n {
        for u in 0..n {
            let k = count[v * n + u];
            if k > 1 {
                for c in 0..channels {
                    sum.set(u, v, c, sum.get(u, v, c) / f64::from(k));
                }
            }
        }
    }
    sum
}

/// In-place Gauss-Seidel iteration for a [`PoissonProblem`].
pub struct GaussSeidel<'a> {
    problem: &'a PoissonProblem,
    f: Raster,
}

impl<'a> GaussSeidel<'a> {
    /// Starts from `initial` with its outer ring overwritten by the frame.
    pub fn new(problem: &'a PoissonProblem, initial: &Raster) -> Result<Self> {
        if !initial.same_shape(&problem.divergence) {
            return Err(Error::domain("initial guess does not match the problem shape"));
        }
        let n = problem.size();
        let mut f = initial.clone();
        for v in 0..n {
            for u in 0..n {
                if on_ring(u, v, n) {
                    f.set(u, v, 0, problem.boundary.get(u, v, 0));
                }
            }
        }
        Ok(GaussSeidel { problem, f })
    }

    /// One row-major sweep: left/top neighbours are already updated.
    pub fn sweep(&mut self) {
        let n = self.problem.size();
        let div = self.problem.divergence.data();
        let f = self.f.data_mut();
        for v in 1..n - 1 {
            let (above, rest) = f.split_at_mut(v * n);
            let (row, below) = rest.split_at_mut(n);
            let above = &above[(v - 1) * n..];
            let below = &below[..n];
            let div = &div[v * n..(v + 1) * n];
            let mut left = row[0];
            for u in 1..n - 1 {
                let partial = row[u + 1] + above[u] + below[u] - div[u];
                left = 0.25 * (partial + left);
                row[u] = left;
            }
        }
    }

    pub fn residual(&self) -> f64 {
        self.problem.residual(&self.f)
    }

    pub fn solution(&self) -> &Raster {
        &self.f
    }

    pub fn into_solution(self) -> Raster {
        self.f
    }
}

/// Runs `cfg.iterations` sweeps from the initial guess `g`.
pub fn gauss_seidel_solve(problem: &PoissonProblem, g: &Raster, cfg: &BlendConfig) -> Result<Raster> {
    cfg.validate()?;
    let mut gs = GaussSeidel::new(problem, g)?;
    for _ in 0..cfg.iterations {
        gs.sweep();
        if let Some(eps) = cfg.residual_stop {
            if gs.residual() <= eps {
                break;
            }
        }
    }
    Ok(gs.into_solution())
}

/// Exact solution of the discretized system by dense LU.
pub fn dense_poisson_oracle(problem: &PoissonProblem) -> Result<Raster> {
    let n = problem.size();
    if n > DENSE_ORACLE_MAX_SIZE {
        return Err(Error::domain(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_SIZE}x{DENSE_ORACLE_MAX_SIZE}, got {n}x{n}"
        )));
    }
    let m = n - 2;
    let idx = |u: usize, v: usize| (v - 1) * m + (u - 1);
    let mut a = DMatrix::<f64>::zeros(m * m, m * m);
    let mut rhs = DVector::<f64>::zeros(m * m);
    for v in 1..n - 1 {
        for u in 1..n - 1 {
            let row = idx(u, v);
            a[(row, row)] = -4.0;
            rhs[row] = problem.divergence.get(u, v, 0);
            for (nu, nv) in [(u + 1, v), (u - 1, v), (u, v + 1), (u, v - 1)] {
                if on_ring(nu, nv, n) {
                    rhs[row] -= problem.boundary.get(nu, nv, 0);
                } else {
                    a[(row, idx(nu, nv))] = 1.0;
                }
            }
        }
    }
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::domain("singular poisson system"))?;
    Ok(Raster::from_fn(n, n, 1, |u, v, _| {
        if on_ring(u, v, n) {
            problem.boundary.get(u, v, 0)
        } else {
            x[idx(u, v)]
        }
    }))
}

/// Blends one face of `cube`, reading only the original faces.
pub fn blend_face(cube: &Cubemap, face: FaceId, cfg: &BlendConfig) -> Result<Raster> {
    let n = cube.face_size();
    let g = cube.face(face);
    let lap = laplacian5(g)?;
    let frame = dirichlet_boundary(cube, face);
    let mut out = Raster::new(n, n, cube.channels());
    for c in 0..cube.channels() {
        let problem = PoissonProblem::new(lap.channel(c), frame.channel(c))?;
        let solved = gauss_seidel_solve(&problem, &g.channel(c), cfg)?;
        for v in 0..n {
            for u in 0..n {
                out.set(u, v, c, solved.get(u, v, 0));
            }
        }
    }
    Ok(out)
}

/// Replaces every face by its Poisson solution; faces are solved in parallel.
pub fn cross_face_blend(cube: &Cubemap, cfg: &BlendConfig) -> Result<Cubemap> {
    cfg.validate()?;
    if cube.face_size() < 3 {
        return Err(Error::domain("blending needs faces of at least 3x3 pixels"));
    }
    let faces = FaceId::ALL
        .par_iter()
        .map(|&f| blend_face(cube, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    Cubemap::new(faces.try_into().expect("six faces"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_of(g: &Raster) -> Raster {
        let n = g.width();
        Raster::from_fn(n, n, 1, |u, v, _| if on_ring(u, v, n) { g.get(u, v, 0) } else { 0.0 })
    }

    #[test]
    fn laplacian_of_simple_functions() {
        let c = Raster::filled(6, 6, 2, 0.7);
        assert!(laplacian5(&c).unwrap().data().iter().all(|&v| v == 0.0));

        let ramp = Raster::from_fn(6, 6, 1, |u, _, _| u as f64);
        assert!(laplacian5(&ramp).unwrap().data().iter().all(|&v| v == 0.0));

        let quad = Raster::from_fn(6, 6, 1, |u, _, _| (u * u) as f64);
        let lap = laplacian5(&quad).unwrap();
        for v in 0..6 {
            for u in 0..6 {
                let expect = if on_ring(u, v, 6) { 0.0 } else { 2.0 };
                assert_eq!(lap.get(u, v, 0), expect);
            }
        }
        assert!(laplacian5(&Raster::new(2, 2, 1)).is_err());
    }

    #[test]
    fn original_face_is_a_fixed_point() {
        let g = Raster::from_fn(9, 9, 1, |u, v, _| ((u * 7 + v * 13) % 11) as f64 / 11.0);
        let problem = PoissonProblem::new(laplacian5(&g).unwrap(), ring_of(&g)).unwrap();
        for iterations in [1, 5, 50] {
            let f = gauss_seidel_solve(&problem, &g, &BlendConfig { iterations, residual_stop: None }).unwrap();
            assert!(f.max_abs_diff(&g) < 1e-12);
        }
    }

    #[test]
    fn frame_of_constant_cubemap() {
        let cube = Cubemap::filled(5, 3, 0.25);
        let frame = dirichlet_boundary(&cube, FaceId::Down);
        for v in 0..5 {
            for u in 0..5 {
                for c in 0..3 {
                    let expect = if on_ring(u, v, 5) { 0.25 } else { 0.0 };
                    assert_eq!(frame.get(u, v, c), expect);
                }
            }
        }
    }

    #[test]
    fn frame_averages_with_neighbours() {
        let mut faces: [Raster; 6] = std::array::from_fn(|_| Raster::filled(4, 4, 1, 1.0));
        faces[FaceId::Right.index()] = Raster::filled(4, 4, 1, 0.0);
        let cube = Cubemap::new(faces).unwrap();
        let frame = dirichlet_boundary(&cube, FaceId::Right);
        for v in 0..4 {
            for u in 0..4 {
                if on_ring(u, v, 4) {
                    assert_eq!(frame.get(u, v, 0), 0.5);
                }
            }
        }
    }

    #[test]
    fn corners_average_the_two_sides() {
        // Front is 0, Up (north neighbour) is 1, Left (west neighbour) is 0.6.
        let mut faces: [Raster; 6] = std::array::from_fn(|_| Raster::filled(4, 4, 1, 0.0));
        faces[FaceId::Up.index()] = Raster::filled(4, 4, 1, 1.0);
        faces[FaceId::Left.index()] = Raster::filled(4, 4, 1, 0.6);
        let cube = Cubemap::new(faces).unwrap();
        let frame = dirichlet_boundary(&cube, FaceId::Front);
        assert_eq!(frame.get(1, 0, 0), 0.5);
        assert_eq!(frame.get(0, 1, 0), 0.3);
        assert!((frame.get(0, 0, 0) - 0.4).abs() < 1e-15);
        assert_eq!(frame.get(3, 3, 0), 0.0);
    }

    #[test]
    fn oracle_rejects_large_faces() {
        let n = DENSE_ORACLE_MAX_SIZE + 1;
        let p = PoissonProblem::new(Raster::new(n, n, 1), Raster::new(n, n, 1)).unwrap();
        assert!(dense_poisson_oracle(&p).is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = BlendConfig { iterations: 0, residual_stop: None };
        assert!(cross_face_blend(&Cubemap::filled(4, 1, 0.0), &cfg).is_err());
    }

    #[test]
    fn residual_stop_ends_early() {
        let n = 8;
        let boundary = Raster::from_fn(n, n, 1, |u, _, _| u as f64 / 7.0);
        let problem = PoissonProblem::new(Raster::new(n, n, 1), boundary).unwrap();
        let start = Raster::new(n, n, 1);
        let cfg = BlendConfig { iterations: 10_000, residual_stop: Some(1e-3) };
        let f = gauss_seidel_solve(&problem, &start, &cfg).unwrap();
        assert!(problem.residual(&f) <= 1e-3);
    }
}
