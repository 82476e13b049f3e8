//! The joint-face adapter: shared LayerNorm, full attention over all six
//! faces with spherical rotary embedding, and a zero-initialized output
//! projection on a residual branch.

use cubepano::Direction3;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{attention, attention_backward, layer_norm, layer_norm_backward, AttentionCache, LayerNormCache, RopeTable};
use super::tokens::{joint_reshape, joint_unreshape};
use crate::error::{ModelError, Result};

/// Trainable tensors of one adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    pub ln_scale: Array1<f64>,
    pub ln_shift: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub heads: usize,
    pub rope_base: f64,
}

/// Tensor names in [`AdapterParams::tensors`] order.
pub const ADAPTER_TENSORS: [&str; 6] = ["ln_scale", "ln_shift", "w_q", "w_k", "w_v", "w_o"];

impl AdapterParams {
    /// Unit scale, zero shift, `N(0, 1/C)` projections and a zero output
    /// projection.
    pub fn init(channels: usize, heads: usize, rope_base: f64, rng: &mut impl Rng) -> Result<Self> {
        check_heads(channels, heads)?;
        let normal = Normal::new(0.0, 1.0 / (channels as f64).sqrt()).expect("finite std");
        let mut proj = || Array2::from_shape_simple_fn((channels, channels), || normal.sample(rng));
        Ok(AdapterParams {
            ln_scale: Array1::ones(channels),
            ln_shift: Array1::zeros(channels),
            w_q: proj(),
            w_k: proj(),
            w_v: proj(),
            w_o: Array2::zeros((channels, channels)),
            heads,
            rope_base,
        })
    }

    /// Same shapes with every tensor zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let c = self.channels();
        AdapterParams {
            ln_scale: Array1::zeros(c),
            ln_shift: Array1::zeros(c),
            w_q: Array2::zeros((c, c)),
            w_k: Array2::zeros((c, c)),
            w_v: Array2::zeros((c, c)),
            w_o: Array2::zeros((c, c)),
            heads: self.heads,
            rope_base: self.rope_base,
        }
    }

    pub fn channels(&self) -> usize {
        self.ln_scale.len()
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    /// Flat views in [`ADAPTER_TENSORS`] order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.ln_scale.as_slice().expect("standard layout"),
            self.ln_shift.as_slice().expect("standard layout"),
            self.w_q.as_slice().expect("standard layout"),
            self.w_k.as_slice().expect("standard layout"),
            self.w_v.as_slice().expect("standard layout"),
            self.w_o.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.ln_scale.as_slice_mut().expect("standard layout"),
            self.ln_shift.as_slice_mut().expect("standard layout"),
            self.w_q.as_slice_mut().expect("standard layout"),
            self.w_k.as_slice_mut().expect("standard layout"),
            self.w_v.as_slice_mut().expect("standard layout"),
            self.w_o.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn shapes(&self) -> [Vec<usize>; 6] {
        let c = self.channels();
        [vec![c], vec![c], vec![c, c], vec![c, c], vec![c, c], vec![c, c]]
    }
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(ModelError::Config(format!("{channels} channels do not split into {heads} heads")));
    }
    if !(channels / heads).is_multiple_of(6) {
        return Err(ModelError::Config(format!(
            "head dimension {} is not a multiple of 6",
            channels / heads
        )));
    }
    Ok(())
}

/// Per-token LayerNorm over channels with one scale/shift shared by every
/// face; `z` is `(B, 6N, C)`.
pub fn shared_layer_norm(z: &Array3<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> Array3<f64> {
    let mut out = z.clone();
    for (b, seq) in z.outer_iter().enumerate() {
        let y = layer_norm(seq).xhat * scale + shift;
        out.index_axis_mut(Axis(0), b).assign(&y);
    }
    out
}

/// Activations of one adapter call on one panorama.
#[derive(Clone, Debug)]
pub struct AdapterCache {
    ln: LayerNormCache,
    y: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: AttentionCache,
    a: Array2<f64>,
}

/// Adapter on one panorama's joint sequence `(6N, C)`.
pub fn adapter_forward_seq(z: &Array2<f64>, rope: &RopeTable, p: &AdapterParams) -> (Array2<f64>, AdapterCache) {
    let ln = layer_norm(z.view());
    let y = &ln.xhat * &p.ln_scale + &p.ln_shift;
    let mut q = y.dot(&p.w_q);
    let mut k = y.dot(&p.w_k);
    let v = y.dot(&p.w_v);
    rope.apply(&mut q, false);
    rope.apply(&mut k, false);
    let (a, attn) = attention(q.view(), k.view(), v.view(), p.heads, 1);
    let out = z + &a.dot(&p.w_o);
    (out, AdapterCache { ln, y, q, k, v, attn, a })
}

/// Backward of [`adapter_forward_seq`]: accumulates parameter gradients
/// into `grads` and returns the gradient w.r.t. `z`.
pub fn adapter_backward_seq(
    cache: &AdapterCache,
    rope: &RopeTable,
    p: &AdapterParams,
    dout: &Array2<f64>,
    grads: &mut AdapterParams,
) -> Array2<f64> {
    grads.w_o += &cache.a.t().dot(dout);
    let da = dout.dot(&p.w_o.t());
    let (mut dq, mut dk, dv) = attention_backward(cache.q.view(), cache.k.view(), cache.v.view(), &cache.attn, da.view());
    rope.apply(&mut dq, true);
    rope.apply(&mut dk, true);
    grads.w_q += &cache.y.t().dot(&dq);
    grads.w_k += &cache.y.t().dot(&dk);
    grads.w_v += &cache.y.t().dot(&dv);
    let dy = dq.dot(&p.w_q.t()) + dk.dot(&p.w_k.t()) + dv.dot(&p.w_v.t());
    grads.ln_scale += &(&dy * &cache.ln.xhat).sum_axis(Axis(0));
    grads.ln_shift += &dy.sum_axis(Axis(0));
    let dxhat = &dy * &p.ln_scale;
    dout + &layer_norm_backward(&cache.ln, dxhat.view())
}

/// Adapter on a batch of face tokens `(B*6, N, C)`; `dirs` holds the
/// `6N` token directions of one panorama.
pub fn adapter_forward(z: &Array3<f64>, dirs: &[Direction3], p: &AdapterParams) -> Result<Array3<f64>> {
    let joint = joint_reshape(z)?;
    if dirs.len() != joint.dim().1 {
        return Err(ModelError::domain(format!("{} directions for {} tokens", dirs.len(), joint.dim().1)));
    }
    if joint.dim().2 != p.channels() {
        return Err(ModelError::domain(format!("{} channels for a {}-channel adapter", joint.dim().2, p.channels())));
    }
    let rope = RopeTable::new(dirs, p.head_dim(), p.rope_base)?;
    let mut out = joint.clone();
    for (b, seq) in joint.outer_iter().enumerate() {
        let (y, _) = adapter_forward_seq(&seq.to_owned(), &rope, p);
        out.index_axis_mut(Axis(0), b).assign(&y);
    }
    joint_unreshape(&out)
}
