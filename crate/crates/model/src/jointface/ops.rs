//! Dense building blocks with hand-written backward passes.
//!
//! Token matrices are `(tokens, channels)`; projection weights are stored
//! `(in, out)` so a layer is `x.dot(w)`.

use cubepano::Direction3;
use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis, Zip};

use crate::error::{ModelError, Result};

pub const LN_EPS: f64 = 1e-5;

/// Normalized activations and per-row inverse deviations of one LayerNorm.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Per-row LayerNorm without affine terms.
pub fn layer_norm(x: ArrayView2<f64>) -> LayerNormCache {
    let c = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / c;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / c;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * *inv);
    }
    LayerNormCache { xhat, inv_std }
}

/// Gradient w.r.t. the LayerNorm input given the gradient w.r.t. `xhat`.
pub fn layer_norm_backward(cache: &LayerNormCache, dxhat: ArrayView2<f64>) -> Array2<f64> {
    let c = dxhat.ncols() as f64;
    let mut dx = dxhat.to_owned();
    Zip::from(dx.rows_mut())
        .and(cache.xhat.rows())
        .and(&cache.inv_std)
        .for_each(|mut row, xhat, &inv| {
            let mean_d = row.sum() / c;
            let mean_dx = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / c;
            Zip::from(&mut row).and(&xhat).for_each(|d, &xh| {
                *d = inv * (*d - mean_d - xh * mean_dx);
            });
        });
    dx
}

/// In-place row softmax.
pub fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Attention probabilities kept for the backward pass, indexed
/// `group * heads + head`.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub probs: Vec<Array2<f64>>,
    heads: usize,
    groups: usize,
}

/// Multi-head scaled dot-product attention.
///
/// Query and key/value rows are split into `groups` equal contiguous
/// chunks; chunk `g` of the queries attends only to chunk `g` of the keys.
/// Channels are split into `heads` equal slices.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
    groups: usize,
) -> (Array2<f64>, AttentionCache) {
    let (tq, c) = q.dim();
    let tk = k.nrows();
    let d = c / heads;
    let (gq, gk) = (tq / groups, tk / groups);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array2::zeros((tq, c));
    let mut probs = Vec::with_capacity(groups * heads);
    for g in 0..groups {
        let (rq, rk) = (g * gq..(g + 1) * gq, g * gk..(g + 1) * gk);
        for h in 0..heads {
            let cols = h * d..(h + 1) * d;
            let qh = q.slice(s![rq.clone(), cols.clone()]);
            let kh = k.slice(s![rk.clone(), cols.clone()]);
            let vh = v.slice(s![rk.clone(), cols.clone()]);
            let mut p = qh.dot(&kh.t());
            p.mapv_inplace(|x| x * scale);
            softmax_rows(&mut p);
            out.slice_mut(s![rq.clone(), cols]).assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    (out, AttentionCache { probs, heads, groups })
}

/// Gradients of [`attention`] w.r.t. `(q, k, v)`.
pub fn attention_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    cache: &AttentionCache,
    dout: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (tq, c) = q.dim();
    let tk = k.nrows();
    let (heads, groups) = (cache.heads, cache.groups);
    let d = c / heads;
    let (gq, gk) = (tq / groups, tk / groups);
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = Array2::zeros((tq, c));
    let mut dk = Array2::zeros((tk, c));
    let mut dv = Array2::zeros((tk, c));
    for g in 0..groups {
        let (rq, rk) = (g * gq..(g + 1) * gq, g * gk..(g + 1) * gk);
        for h in 0..heads {
            let cols = h * d..(h + 1) * d;
            let p = &cache.probs[g * heads + h];
            let qh = q.slice(s![rq.clone(), cols.clone()]);
            let kh = k.slice(s![rk.clone(), cols.clone()]);
            let vh = v.slice(s![rk.clone(), cols.clone()]);
            let doh = dout.slice(s![rq.clone(), cols.clone()]);
            dv.slice_mut(s![rk.clone(), cols.clone()]).assign(&p.t().dot(&doh));
            let mut ds = doh.dot(&vh.t());
            Zip::from(ds.rows_mut()).and(p.rows()).for_each(|mut drow, prow| {
                let dot = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum::<f64>();
                Zip::from(&mut drow).and(&prow).for_each(|x, &pv| *x = pv * (*x - dot));
            });
            ds.mapv_inplace(|x| x * scale);
            dq.slice_mut(s![rq.clone(), cols.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![rk.clone(), cols]).assign(&ds.t().dot(&qh));
        }
    }
    (dq, dk, dv)
}

/// Softmax attention over every position of every head; inputs are
/// `(B, H, T, d)`.
pub fn full_attention(q: &Array4<f64>, k: &Array4<f64>, v: &Array4<f64>) -> Result<Array4<f64>> {
    if q.dim() != k.dim() || q.dim() != v.dim() {
        return Err(ModelError::domain(format!(
            "query {:?}, key {:?} and value {:?} shapes differ",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let mut out = Array4::zeros(q.dim());
    for b in 0..q.dim().0 {
        for h in 0..q.dim().1 {
            let (o, _) = attention(
                q.slice(s![b, h, .., ..]),
                k.slice(s![b, h, .., ..]),
                v.slice(s![b, h, .., ..]),
                1,
                1,
            );
            out.slice_mut(s![b, h, .., ..]).assign(&o);
        }
    }
    Ok(out)
}

const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_A * x * x)
}

/// Sinusoidal features of a scalar, `dim` channels: sines then cosines.
pub fn sinusoidal_embedding(value: f64, dim: usize, max_period: f64) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = max_period.powf(-(i as f64) / half as f64);
        out[i] = (value * freq).sin();
        out[half + i] = (value * freq).cos();
    }
    out
}

/// Per-token rotation angles for spherical rotary embedding.
///
/// A head of dimension `d` is split into three groups of `d/3` channels
/// for the x, y and z axes; inside a group, pair `m` (channels `2m`,
/// `2m+1`) turns by `base^(-2m/(d/3)) * coord`.
#[derive(Clone, Debug, PartialEq)]
pub struct RopeTable {
    cos: Array2<f64>,
    sin: Array2<f64>,
    head_dim: usize,
}

impl RopeTable {
    pub fn new(dirs: &[Direction3], head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(6) {
            return Err(ModelError::Config(format!(
                "head dimension {head_dim} is not a positive multiple of 6"
            )));
        }
        let pairs_per_axis = head_dim / 6;
        let group = (head_dim / 3) as f64;
        let mut cos = Array2::zeros((dirs.len(), head_dim / 2));
        let mut sin = Array2::zeros((dirs.len(), head_dim / 2));
        for (t, dir) in dirs.iter().enumerate() {
            for (axis, coord) in dir.to_array().into_iter().enumerate() {
                for m in 0..pairs_per_axis {
                    let theta = base.powf(-2.0 * m as f64 / group);
                    let j = axis * pairs_per_axis + m;
                    cos[[t, j]] = (theta * coord).cos();
                    sin[[t, j]] = (theta * coord).sin();
                }
            }
        }
        Ok(RopeTable { cos, sin, head_dim })
    }

    pub fn len(&self) -> usize {
        self.cos.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rotates every head of every row of `x` in place; `inverse` applies
    /// the transpose rotation (the backward pass).
    pub fn apply(&self, x: &mut Array2<f64>, inverse: bool) {
        let sign = if inverse { -1.0 } else { 1.0 };
        let d = self.head_dim;
        let pairs = d / 2;
        for (t, mut row) in x.rows_mut().into_iter().enumerate() {
            for head in row.exact_chunks_mut(d) {
                let mut head = head;
                for j in 0..pairs {
                    let (c, sn) = (self.cos[[t, j]], sign * self.sin[[t, j]]);
                    let (a, b) = (head[2 * j], head[2 * j + 1]);
                    head[2 * j] = a * c - b * sn;
                    head[2 * j + 1] = a * sn + b * c;
                }
            }
        }
    }
}

/// Rotates one head vector by the spherical rotary embedding of `dir`.
pub fn spherical_rope(x: &[f64], dir: Direction3, base: f64) -> Result<Vec<f64>> {
    let table = RopeTable::new(&[dir], x.len(), base)?;
    let mut m = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|e| ModelError::domain(e.to_string()))?;
    table.apply(&mut m, false);
    Ok(m.into_raw_vec_and_offset().0)
}

/// Column sums, used for bias gradients.
pub fn col_sum(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Array2::from_elem((1, 6), 3.5);
        assert!(layer_norm(x.view()).xhat.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_unit_pair() {
        let x = array![[-1.0, 1.0]];
        let y = layer_norm(x.view()).xhat;
        let expect = 1.0 / (1.0 + LN_EPS).sqrt();
        assert!((y[[0, 0]] + expect).abs() < 1e-15 && (y[[0, 1]] - expect).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_moments() {
        let x = random(20, 24, 1).mapv(|v| 3.0 * v + 2.0);
        for row in layer_norm(x.view()).xhat.rows() {
            let mean = row.sum() / 24.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 24.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let x = random(3, 8, 2);
        let w = random(3, 8, 3);
        let loss = |x: &Array2<f64>| (&layer_norm(x.view()).xhat * &w).sum();
        let dx = layer_norm_backward(&layer_norm(x.view()), w.view());
        let h = 1e-6;
        for idx in [(0, 0), (1, 5), (2, 7)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-7, "{fd} vs {}", dx[idx]);
        }
    }

    #[test]
    fn single_key_returns_value() {
        let q = random(1, 6, 4);
        let k = random(1, 6, 5);
        let v = random(1, 6, 6);
        let (out, _) = attention(q.view(), k.view(), v.view(), 2, 1);
        assert!((&out - &v).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn zero_queries_average_values() {
        let q = Array2::zeros((4, 6));
        let k = random(5, 6, 7);
        let v = random(5, 6, 8);
        let (out, cache) = attention(q.view(), k.view(), v.view(), 3, 1);
        let mean = v.mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            assert!((&row - &mean).iter().all(|d| d.abs() < 1e-12));
        }
        for p in &cache.probs {
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_set_logits() {
        // d = 1, so logits are q*k: 0 and ln 3.
        let q = array![[1.0]];
        let k = array![[0.0], [3f64.ln()]];
        let v = array![[2.0], [10.0]];
        let (out, cache) = attention(q.view(), k.view(), v.view(), 1, 1);
        assert!((cache.probs[0][[0, 0]] - 0.25).abs() < 1e-12);
        assert!((cache.probs[0][[0, 1]] - 0.75).abs() < 1e-12);
        assert!((out[[0, 0]] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn groups_do_not_mix() {
        let q = random(6, 4, 9);
        let k = random(6, 4, 10);
        let mut v = random(6, 4, 11);
        let (a, _) = attention(q.view(), k.view(), v.view(), 2, 2);
        v.slice_mut(s![3.., ..]).fill(100.0);
        let (b, _) = attention(q.view(), k.view(), v.view(), 2, 2);
        assert_eq!(a.slice(s![..3, ..]), b.slice(s![..3, ..]));
    }

    #[test]
    fn attention_backward_matches_differences() {
        let (q, k, v) = (random(6, 4, 12), random(6, 4, 13), random(6, 4, 14));
        let w = random(6, 4, 15);
        let loss = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>| {
            (&attention(q.view(), k.view(), v.view(), 2, 2).0 * &w).sum()
        };
        let (_, cache) = attention(q.view(), k.view(), v.view(), 2, 2);
        let (dq, dk, dv) = attention_backward(q.view(), k.view(), v.view(), &cache, w.view());
        let h = 1e-6;
        for which in 0..3 {
            for idx in [(0, 0), (2, 3), (4, 1)] {
                let mut args = [q.clone(), k.clone(), v.clone()];
                args[which][idx] += h;
                let lp = loss(&args[0], &args[1], &args[2]);
                args[which][idx] -= 2.0 * h;
                let lm = loss(&args[0], &args[1], &args[2]);
                let fd = (lp - lm) / (2.0 * h);
                let an = [&dq, &dk, &dv][which][idx];
                assert!((fd - an).abs() < 1e-7, "{which} {idx:?}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn batched_attention_rows() {
        let q = Array4::from_shape_fn((2, 2, 5, 6), |(b, h, t, c)| ((b + 2 * h + 3 * t + c) as f64).sin());
        let v = Array4::from_shape_fn((2, 2, 5, 6), |(b, h, t, c)| ((b * h + t * c) as f64).cos());
        let out = full_attention(&q, &q, &v).unwrap();
        let (single, _) = attention(q.slice(s![1, 0, .., ..]), q.slice(s![1, 0, .., ..]), v.slice(s![1, 0, .., ..]), 1, 1);
        assert_eq!(out.slice(s![1, 0, .., ..]), single);
        assert!(full_attention(&q, &q, &Array4::zeros((2, 2, 4, 6))).is_err());
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn rope_zero_direction_is_identity() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 - 5.0).collect();
        let y = spherical_rope(&x, Direction3::new(0.0, 0.0, 0.0), 1e4).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rope_preserves_norm_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let dirs: Vec<Direction3> = (0..10)
            .map(|_| {
                Direction3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3).normalized()
            })
            .collect();
        let table = RopeTable::new(&dirs, 12, 1e4).unwrap();
        let x = random(10, 24, 17);
        let mut y = x.clone();
        table.apply(&mut y, false);
        for (a, b) in x.rows().into_iter().zip(y.rows()) {
            let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
            assert!((na - nb).abs() < 1e-9);
        }
        table.apply(&mut y, true);
        assert!((&y - &x).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn rope_shared_axis_gives_equal_blocks() {
        let a = RopeTable::new(&[Direction3::new(0.6, 0.0, 0.8)], 12, 1e4).unwrap();
        let b = RopeTable::new(&[Direction3::new(0.6, 0.8, 0.0)], 12, 1e4).unwrap();
        // Pairs 0 and 1 belong to the x axis.
        for j in 0..2 {
            assert_eq!(a.cos[[0, j]], b.cos[[0, j]]);
            assert_eq!(a.sin[[0, j]], b.sin[[0, j]]);
        }
        assert_ne!(a.sin[[0, 2]], b.sin[[0, 2]]);
    }

    #[test]
    fn rope_rejects_bad_dim() {
        assert!(matches!(
            spherical_rope(&[0.0; 8], Direction3::new(0.0, 0.0, 1.0), 1e4),
            Err(ModelError::Config(_))
        ));
    }
}
